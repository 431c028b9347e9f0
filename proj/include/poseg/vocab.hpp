#pragma once

#include <map>
#include <string>
#include <vector>

#include "poseg/errors.hpp"

namespace poseg {

// Closed vocabulary for the synthetic referring expressions. Index 0 is the
// padding token; real tokens start at 1. The word list is fixed so token ids
// are stable across corpora and checkpoints.
class Vocab {
 public:
  static constexpr int kPadId = 0;

  static const Vocab& builtin();

  int size() const { return int(words_.size()); }

  // Throws TokenOutOfVocab for unknown words / ids.
  int id(const std::string& word) const;
  const std::string& word(int id) const;

  // Tokenize a whitespace-separated lowercase expression into ids (no
  // padding applied). Throws ExpressionTooLong when the result exceeds l_max
  // and TokenOutOfVocab for unknown words.
  std::vector<int> encode(const std::string& expression, int l_max) const;
  std::vector<int> encode(const std::vector<std::string>& words, int l_max) const;

  std::string decode(const std::vector<int>& ids) const;

 private:
  explicit Vocab(std::vector<std::string> words);
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

}  // namespace poseg
