#pragma once

#include <string>
#include <utility>
#include <vector>

#include "poseg/config.hpp"
#include "poseg/rng.hpp"
#include "poseg/sample.hpp"

namespace poseg {

enum class ShapeKind { circle = 0, square = 1, triangle = 2 };
enum class ColorName { red = 0, green = 1, blue = 2, yellow = 3 };
enum class Side { left = 0, right = 1, top = 2, bottom = 3 };

const char* kind_singular(ShapeKind k);
const char* kind_plural(ShapeKind k);
const char* color_word(ColorName c);
const char* side_word(Side s);

struct Rgb {
  uint8_t r, g, b;
};
Rgb color_rgb(ColorName c);
Rgb background_rgb();

// Parameters for one scene. When `forced` is non-empty it fixes the exact
// (kind,color) list; otherwise `num_shapes` random shapes are drawn.
struct SceneSpec {
  int image_size = 64;
  int num_shapes = 3;
  int min_size = 12;  // bounding size in full-resolution pixels
  int max_size = 28;
  bool allow_overlap = false;
  int max_instances = 16;
  std::vector<std::pair<ShapeKind, ColorName>> forced;
};

struct SceneInstance {
  ShapeKind kind;
  ColorName color;
  double cx = 0, cy = 0;  // mask centroid in full-resolution pixels
  Mask mask;              // [H,W]
};

struct Scene {
  int image_size = 0;
  Tensor<float> image;  // [3,H,W] in [0,1]
  std::vector<SceneInstance> instances;
};

// Renders a scene of colored shapes. Shapes are rasterized on a 4-pixel grid
// and upsampled, so every mask is exactly representable at the quarter
// resolution the mask decoder predicts at: segmentation quality is bounded by
// learning, not by grid aliasing. Throws InfeasibleShape for impossible size
// requests, TooManyInstances past the instance cap, and PlacementFailure when
// non-overlapping placement cannot be found.
Scene generate_scene(const SceneSpec& spec, Rng& rng);

// Longest template is 5 words; this bound is what corpus expressions are
// validated against and fits the default text-encoder capacity.
inline constexpr int kCorpusLMax = 12;

// Expression templates and their referent-selection rules.
enum class ExprForm {
  the_color_kind,     // "the red circle"
  all_color_kind,     // "all red circles"
  every_color_kind,   // "every red circle"
  all_kind,           // "all circles"
  all_color_generic,  // "all red shapes" (or things/objects)
  all_generic,        // "all shapes"
  kind_on_side,       // "the circle on the left"
};

struct ExprTemplate {
  ExprForm form = ExprForm::the_color_kind;
  ShapeKind kind = ShapeKind::circle;
  ColorName color = ColorName::red;
  Side side = Side::left;
  int generic_variant = 0;  // 0 shapes, 1 things, 2 objects
};

std::vector<std::string> template_words(const ExprTemplate& t);

// Deterministic selection rule: which scene instances the expression refers
// to. Positional forms break centroid ties by lowest instance index.
std::vector<int> referent_indices(const Scene& scene, const ExprTemplate& t);

// Packages a scene + expression into a validated sample.
GresSample realize_sample(const Scene& scene, const ExprTemplate& t, const std::string& id,
                          uint64_t seed, int l_max);

enum class TargetClass { no_target = 0, single = 1, multi = 2 };

TargetClass classify(const GresSample& s);

// Builds `count` samples with exact class counts (round(frac*count) no-target,
// round(multi_frac*count) multi-target, rest single), deterministically from
// the config seed. `stream` separates splits drawn from the same master seed.
std::vector<GresSample> build_split(const DataConfig& cfg, const std::string& split_name,
                                    int count, uint64_t stream);

struct SplitStats {
  int n = 0, no_target = 0, single = 0, multi = 0;
};
SplitStats split_stats(const std::vector<GresSample>& samples);

}  // namespace poseg
