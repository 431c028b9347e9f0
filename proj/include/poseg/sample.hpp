#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "poseg/tensor.hpp"

namespace poseg {

using Mask = Tensor<uint8_t>;  // [H,W], values 0/1

// One referring-expression segmentation sample. `masks` holds the referent
// instances (possibly several, possibly none); `merged` is their union.
// For a no-target sample the instance list is empty and `merged` is all-zero.
struct GresSample {
  std::string id;
  Tensor<float> image;       // [3,H,W], values in [0,1]
  std::vector<Mask> masks;   // M instance masks, each non-empty
  Mask merged;               // [H,W] union of the instance masks
  std::vector<int> tokens;   // token ids (1..L_max of them, no padding)
  std::string expression;    // the raw expression the tokens came from
  bool no_target = false;
  uint64_t seed = 0;         // generator seed recorded for reproducibility
};

inline Mask merge_masks(const std::vector<Mask>& masks, int h, int w) {
  Mask merged({h, w});
  for (const auto& m : masks)
    for (int64_t i = 0; i < merged.numel(); ++i) merged.v[size_t(i)] |= m.v[size_t(i)];
  return merged;
}

inline int64_t mask_area(const Mask& m) {
  int64_t a = 0;
  for (uint8_t v : m.v) a += v ? 1 : 0;
  return a;
}

// Checks every structural invariant of a sample against the expected
// geometry. Returns normally iff the sample is internally consistent.
inline void validate_sample(const GresSample& s, int image_size, int l_max, int vocab_size) {
  require_shape(s.image, {3, image_size, image_size}, "sample image");
  for (float v : s.image.v)
    if (!(v >= 0.f && v <= 1.f)) throw ShapeMismatch("image values must lie in [0,1]");

  for (const auto& m : s.masks) {
    require_shape(m, {image_size, image_size}, "instance mask");
    for (uint8_t v : m.v)
      if (v > 1) throw ShapeMismatch("instance masks must be binary");
    if (mask_area(m) == 0) throw EmptyInstance("sample " + s.id);
  }
  require_shape(s.merged, {image_size, image_size}, "merged mask");

  Mask want = merge_masks(s.masks, image_size, image_size);
  if (want.v != s.merged.v)
    throw InconsistentTarget("merged mask is not the union of instance masks: " + s.id);
  if (s.no_target != s.masks.empty())
    throw InconsistentTarget("no_target flag disagrees with instance count: " + s.id);
  if (s.no_target && mask_area(s.merged) != 0)
    throw InconsistentTarget("no-target sample with non-empty merged mask: " + s.id);

  if (s.tokens.empty() || int(s.tokens.size()) > l_max)
    throw ShapeMismatch("sample " + s.id + ": token count " + std::to_string(s.tokens.size()) +
                        " outside [1," + std::to_string(l_max) + "]");
  for (int t : s.tokens)
    if (t < 1 || t >= vocab_size) throw TokenOutOfVocab("sample " + s.id + ": id " + std::to_string(t));
}

}  // namespace poseg
