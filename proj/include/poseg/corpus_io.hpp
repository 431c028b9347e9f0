#pragma once

#include <map>
#include <string>
#include <vector>

#include "poseg/sample.hpp"

namespace poseg {

// On-disk corpus layout:
//   <dir>/manifest.json
//   <dir>/images/<id>.png          RGB image
//   <dir>/masks/<id>_<k>.png       one grayscale PNG per instance (255 = fg)
// The manifest stores per-sample tokens as words, the no-target flag and the
// generator seed; merged masks are reconstructed on load.
void save_corpus(const std::string& dir, int image_size,
                 const std::map<std::string, std::vector<GresSample>>& splits);

// Loads and fully validates one split. Throws MissingFile, CorruptManifest,
// VersionMismatch, ChecksumMismatch (bad PNG), EmptySplit, plus the
// validate_sample errors for inconsistent contents.
std::vector<GresSample> load_corpus(const std::string& dir, const std::string& split,
                                    int l_max);

// Image size recorded in the manifest.
int corpus_image_size(const std::string& dir);

// Split names present in the manifest.
std::vector<std::string> corpus_splits(const std::string& dir);

}  // namespace poseg
