#include "poseg/vocab.hpp"

#include <sstream>

namespace poseg {

Vocab::Vocab(std::vector<std::string> words) : words_(std::move(words)) {
  for (size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = int(i);
}

const Vocab& Vocab::builtin() {
  static const Vocab v({
      "<pad>", "the",     "a",       "an",      "all",       "every",  "some",   "no",
      "one",   "two",     "three",   "circle",  "circles",   "square", "squares",
      "triangle", "triangles", "shape", "shapes", "object",  "objects", "thing",
      "things", "item",   "items",   "red",     "green",     "blue",   "yellow",
      "on",    "of",      "at",      "in",      "to",        "left",   "right",
      "top",   "bottom",  "side",    "middle",
  });
  return v;
}

int Vocab::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw TokenOutOfVocab("unknown word '" + word + "'");
  return it->second;
}

const std::string& Vocab::word(int i) const {
  if (i < 0 || i >= size()) throw TokenOutOfVocab("id " + std::to_string(i));
  return words_[size_t(i)];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& words, int l_max) const {
  if (int(words.size()) > l_max)
    throw ExpressionTooLong(std::to_string(words.size()) + " tokens exceed l_max=" +
                            std::to_string(l_max));
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

std::vector<int> Vocab::encode(const std::string& expression, int l_max) const {
  std::istringstream in(expression);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  return encode(words, l_max);
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += word(ids[i]);
  }
  return out;
}

}  // namespace poseg
