#include "poseg/synth.hpp"

#include <algorithm>
#include <cmath>

#include "poseg/vocab.hpp"

namespace poseg {

const char* kind_singular(ShapeKind k) {
  switch (k) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    default: return "triangle";
  }
}

const char* kind_plural(ShapeKind k) {
  switch (k) {
    case ShapeKind::circle: return "circles";
    case ShapeKind::square: return "squares";
    default: return "triangles";
  }
}

const char* color_word(ColorName c) {
  switch (c) {
    case ColorName::red: return "red";
    case ColorName::green: return "green";
    case ColorName::blue: return "blue";
    default: return "yellow";
  }
}

const char* side_word(Side s) {
  switch (s) {
    case Side::left: return "left";
    case Side::right: return "right";
    case Side::top: return "top";
    default: return "bottom";
  }
}

Rgb color_rgb(ColorName c) {
  switch (c) {
    case ColorName::red: return {217, 45, 32};
    case ColorName::green: return {52, 168, 83};
    case ColorName::blue: return {26, 115, 232};
    default: return {244, 180, 0};
  }
}

Rgb background_rgb() { return {33, 33, 38}; }

namespace {

using Cell = std::pair<int, int>;  // (x, y) on the quarter grid

double cross(double ax, double ay, double bx, double by) { return ax * by - ay * bx; }

bool point_in_triangle(double px, double py, double ax, double ay, double bx, double by,
                       double cx, double cy) {
  double d1 = cross(bx - ax, by - ay, px - ax, py - ay);
  double d2 = cross(cx - bx, cy - by, px - bx, py - by);
  double d3 = cross(ax - cx, ay - cy, px - cx, py - cy);
  bool has_neg = d1 < -1e-9 || d2 < -1e-9 || d3 < -1e-9;
  bool has_pos = d1 > 1e-9 || d2 > 1e-9 || d3 > 1e-9;
  return !(has_neg && has_pos);
}

// Filled quarter-grid cells of a shape whose bounding box is
// [x0, x0+s) x [y0, y0+s) in cell units.
std::vector<Cell> rasterize(ShapeKind kind, int x0, int y0, int s) {
  std::vector<Cell> cells;
  cells.reserve(size_t(s) * s);
  switch (kind) {
    case ShapeKind::square:
      for (int y = y0; y < y0 + s; ++y)
        for (int x = x0; x < x0 + s; ++x) cells.push_back({x, y});
      break;
    case ShapeKind::circle: {
      double ccx = x0 + s / 2.0, ccy = y0 + s / 2.0, r2 = (s / 2.0) * (s / 2.0) + 1e-9;
      for (int y = y0; y < y0 + s; ++y)
        for (int x = x0; x < x0 + s; ++x) {
          double dx = x + 0.5 - ccx, dy = y + 0.5 - ccy;
          if (dx * dx + dy * dy <= r2) cells.push_back({x, y});
        }
      break;
    }
    case ShapeKind::triangle: {
      double ax = x0 + s / 2.0, ay = y0, bx = x0, by = y0 + s, cx = x0 + s, cy = y0 + s;
      for (int y = y0; y < y0 + s; ++y)
        for (int x = x0; x < x0 + s; ++x)
          if (point_in_triangle(x + 0.5, y + 0.5, ax, ay, bx, by, cx, cy))
            cells.push_back({x, y});
      break;
    }
  }
  return cells;
}

void set_pixel_block(Tensor<float>& image, int size, Cell cell, Rgb rgb) {
  float col[3] = {rgb.r / 255.f, rgb.g / 255.f, rgb.b / 255.f};
  for (int ch = 0; ch < 3; ++ch)
    for (int dy = 0; dy < 4; ++dy)
      for (int dx = 0; dx < 4; ++dx) {
        int y = cell.second * 4 + dy, x = cell.first * 4 + dx;
        image.v[(size_t(ch) * size + y) * size + x] = col[ch];
      }
}

}  // namespace

Scene generate_scene(const SceneSpec& spec, Rng& rng) {
  const int size = spec.image_size;
  if (size < 32 || size % 4 != 0) throw InfeasibleShape("image_size must be a multiple of 4, >= 32");
  const int g = size / 4;

  if (spec.min_size < 4 || spec.min_size > spec.max_size || spec.max_size > size)
    throw InfeasibleShape("size range [" + std::to_string(spec.min_size) + "," +
                          std::to_string(spec.max_size) + "] infeasible for image " +
                          std::to_string(size));
  int min_q = (spec.min_size + 3) / 4;
  int max_q = spec.max_size / 4;
  if (min_q > max_q)
    throw InfeasibleShape("no grid-aligned size inside [" + std::to_string(spec.min_size) + "," +
                          std::to_string(spec.max_size) + "]");

  std::vector<std::pair<ShapeKind, ColorName>> shapes = spec.forced;
  if (shapes.empty()) {
    for (int i = 0; i < spec.num_shapes; ++i)
      shapes.push_back({ShapeKind(rng.uniform_int(3)), ColorName(rng.uniform_int(4))});
  }
  if (int(shapes.size()) > spec.max_instances)
    throw TooManyInstances(std::to_string(shapes.size()) + " > cap " +
                           std::to_string(spec.max_instances));

  Scene scene;
  scene.image_size = size;
  scene.image = Tensor<float>({3, size, size});
  Rgb bg = background_rgb();
  float bgc[3] = {bg.r / 255.f, bg.g / 255.f, bg.b / 255.f};
  for (int ch = 0; ch < 3; ++ch)
    std::fill(scene.image.v.begin() + size_t(ch) * size * size,
              scene.image.v.begin() + size_t(ch + 1) * size * size, bgc[ch]);

  std::vector<uint8_t> occupied(size_t(g) * g, 0);

  for (auto [kind, color] : shapes) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      int s = rng.uniform_int(min_q, max_q);
      int x0 = rng.uniform_int(0, g - s);
      int y0 = rng.uniform_int(0, g - s);
      auto cells = rasterize(kind, x0, y0, s);
      if (!spec.allow_overlap) {
        bool clash = false;
        for (auto [x, y] : cells)
          if (occupied[size_t(y) * g + x]) {
            clash = true;
            break;
          }
        if (clash) continue;
      }

      SceneInstance inst;
      inst.kind = kind;
      inst.color = color;
      inst.mask = Mask({size, size});
      double sx = 0, sy = 0;
      for (auto cell : cells) {
        occupied[size_t(cell.second) * g + cell.first] = 1;
        set_pixel_block(scene.image, size, cell, color_rgb(color));
        for (int dy = 0; dy < 4; ++dy)
          for (int dx = 0; dx < 4; ++dx)
            inst.mask.v[size_t(cell.second * 4 + dy) * size + cell.first * 4 + dx] = 1;
        sx += cell.first * 4 + 1.5;  // mean of the 4 pixel centers in x
        sy += cell.second * 4 + 1.5;
      }
      inst.cx = sx / double(cells.size());
      inst.cy = sy / double(cells.size());
      scene.instances.push_back(std::move(inst));
      placed = true;
    }
    if (!placed)
      throw PlacementFailure("could not place a " + std::string(color_word(color)) + " " +
                             kind_singular(kind) + " after 100 attempts");
  }

  // Later shapes may paint over earlier ones when overlap is allowed, but
  // each instance keeps its full mask; the image shows the z-order.
  return scene;
}

std::vector<std::string> template_words(const ExprTemplate& t) {
  const char* generic[3] = {"shapes", "things", "objects"};
  switch (t.form) {
    case ExprForm::the_color_kind:
      return {"the", color_word(t.color), kind_singular(t.kind)};
    case ExprForm::all_color_kind:
      return {"all", color_word(t.color), kind_plural(t.kind)};
    case ExprForm::every_color_kind:
      return {"every", color_word(t.color), kind_singular(t.kind)};
    case ExprForm::all_kind:
      return {"all", kind_plural(t.kind)};
    case ExprForm::all_color_generic:
      return {"all", color_word(t.color), generic[t.generic_variant % 3]};
    case ExprForm::all_generic:
      return {"all", generic[t.generic_variant % 3]};
    case ExprForm::kind_on_side:
    default:
      return {"the", kind_singular(t.kind), "on", "the", side_word(t.side)};
  }
}

std::vector<int> referent_indices(const Scene& scene, const ExprTemplate& t) {
  std::vector<int> out;
  auto match_kind = [&](const SceneInstance& i) { return i.kind == t.kind; };
  auto match_color = [&](const SceneInstance& i) { return i.color == t.color; };
  switch (t.form) {
    case ExprForm::the_color_kind:
    case ExprForm::all_color_kind:
    case ExprForm::every_color_kind:
      for (size_t i = 0; i < scene.instances.size(); ++i)
        if (match_kind(scene.instances[i]) && match_color(scene.instances[i])) out.push_back(int(i));
      break;
    case ExprForm::all_kind:
      for (size_t i = 0; i < scene.instances.size(); ++i)
        if (match_kind(scene.instances[i])) out.push_back(int(i));
      break;
    case ExprForm::all_color_generic:
      for (size_t i = 0; i < scene.instances.size(); ++i)
        if (match_color(scene.instances[i])) out.push_back(int(i));
      break;
    case ExprForm::all_generic:
      for (size_t i = 0; i < scene.instances.size(); ++i) out.push_back(int(i));
      break;
    case ExprForm::kind_on_side: {
      int best = -1;
      double best_v = 0;
      for (size_t i = 0; i < scene.instances.size(); ++i) {
        const auto& inst = scene.instances[i];
        if (!match_kind(inst)) continue;
        double v = 0;
        switch (t.side) {
          case Side::left: v = -inst.cx; break;
          case Side::right: v = inst.cx; break;
          case Side::top: v = -inst.cy; break;
          case Side::bottom: v = inst.cy; break;
        }
        // Strictly-greater keeps the lowest index on exact centroid ties.
        if (best < 0 || v > best_v) {
          best = int(i);
          best_v = v;
        }
      }
      if (best >= 0) out.push_back(best);
      break;
    }
  }
  return out;
}

GresSample realize_sample(const Scene& scene, const ExprTemplate& t, const std::string& id,
                          uint64_t seed, int l_max) {
  GresSample s;
  s.id = id;
  s.seed = seed;
  s.image = scene.image;
  auto words = template_words(t);
  s.expression.clear();
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) s.expression += ' ';
    s.expression += words[i];
  }
  s.tokens = Vocab::builtin().encode(words, l_max);
  for (int idx : referent_indices(scene, t)) s.masks.push_back(scene.instances[size_t(idx)].mask);
  s.merged = merge_masks(s.masks, scene.image_size, scene.image_size);
  s.no_target = s.masks.empty();
  return s;
}

TargetClass classify(const GresSample& s) {
  if (s.no_target) return TargetClass::no_target;
  return s.masks.size() >= 2 ? TargetClass::multi : TargetClass::single;
}

namespace {

std::pair<ShapeKind, ColorName> draw_combo(Rng& rng) {
  return {ShapeKind(rng.uniform_int(3)), ColorName(rng.uniform_int(4))};
}

// A distractor satisfying "must not be selected by the template".
std::pair<ShapeKind, ColorName> draw_distractor(Rng& rng, const ExprTemplate& t) {
  for (;;) {
    auto cand = draw_combo(rng);
    switch (t.form) {
      case ExprForm::all_kind:
      case ExprForm::kind_on_side:
        if (cand.first != t.kind) return cand;
        break;
      case ExprForm::all_color_generic:
        if (cand.second != t.color) return cand;
        break;
      case ExprForm::all_generic:
        return cand;  // unused: all_generic admits no distractors
      default:
        if (cand.first != t.kind || cand.second != t.color) return cand;
        break;
    }
  }
}

GresSample build_one(const DataConfig& cfg, TargetClass want, const std::string& id,
                     const Rng& sample_rng) {
  for (uint64_t attempt = 0; attempt < 50; ++attempt) {
    Rng rng = sample_rng.fork(attempt);
    auto [kind, color] = draw_combo(rng);

    ExprTemplate t;
    t.kind = kind;
    t.color = color;
    int total = rng.uniform_int(std::max(1, cfg.min_shapes), cfg.max_shapes);
    std::vector<std::pair<ShapeKind, ColorName>> forced;

    switch (want) {
      case TargetClass::no_target: {
        double d = rng.uniform();
        t.form = d < 0.4   ? ExprForm::the_color_kind
                 : d < 0.7 ? ExprForm::all_color_kind
                 : d < 0.85 ? ExprForm::every_color_kind
                            : ExprForm::all_kind;
        for (int i = 0; i < total; ++i) forced.push_back(draw_distractor(rng, t));
        break;
      }
      case TargetClass::single: {
        double d = rng.uniform();
        if (d < 0.6) {
          t.form = ExprForm::the_color_kind;
        } else {
          t.form = ExprForm::kind_on_side;
          t.side = Side(rng.uniform_int(4));
        }
        forced.push_back({kind, color});
        // kind_on_side picks a unique extreme, so distractors can never make
        // it ambiguous; the_color_kind needs the combo itself to stay unique.
        for (int i = 1; i < total; ++i) forced.push_back(draw_distractor(rng, t));
        break;
      }
      case TargetClass::multi: {
        double d = rng.uniform();
        t.form = d < 0.4   ? ExprForm::all_color_kind
                 : d < 0.6 ? ExprForm::every_color_kind
                 : d < 0.8 ? ExprForm::all_kind
                           : ExprForm::all_color_generic;
        t.generic_variant = rng.uniform_int(3);
        int copies = rng.uniform_int(2, std::min(3, std::max(2, cfg.max_shapes)));
        copies = std::min(copies, cfg.max_shapes);
        for (int i = 0; i < copies; ++i) forced.push_back({kind, color});
        total = std::max(total, copies);
        for (int i = copies; i < total; ++i) forced.push_back(draw_distractor(rng, t));
        break;
      }
    }
    rng.shuffle(forced);

    SceneSpec spec;
    spec.image_size = cfg.image_size;
    spec.min_size = cfg.min_size;
    spec.max_size = cfg.max_size;
    spec.allow_overlap = cfg.allow_overlap;
    spec.forced = std::move(forced);

    Scene scene;
    try {
      scene = generate_scene(spec, rng);
    } catch (const PlacementFailure&) {
      continue;  // denser retry with a fresh layout
    }

    GresSample s = realize_sample(scene, t, id, rng.seed(), kCorpusLMax);
    if (classify(s) == want) return s;
  }
  throw PlacementFailure("failed to realize a sample of the requested target class: " + id);
}

}  // namespace

std::vector<GresSample> build_split(const DataConfig& cfg, const std::string& split_name,
                                    int count, uint64_t stream) {
  cfg.validate();
  if (cfg.multi_frac > 0 && cfg.max_shapes < 2)
    throw Error("multi-target samples require max_shapes >= 2");

  Rng master = Rng(cfg.seed).fork(stream);
  int n_nt = int(std::lround(cfg.no_target_frac * count));
  int n_multi = int(std::lround(cfg.multi_frac * count));
  n_multi = std::min(n_multi, count - n_nt);

  std::vector<TargetClass> classes;
  classes.reserve(size_t(count));
  for (int i = 0; i < n_nt; ++i) classes.push_back(TargetClass::no_target);
  for (int i = 0; i < n_multi; ++i) classes.push_back(TargetClass::multi);
  while (int(classes.size()) < count) classes.push_back(TargetClass::single);
  master.shuffle(classes);

  std::vector<GresSample> out;
  out.reserve(size_t(count));
  for (int i = 0; i < count; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d", i);
    std::string id = split_name + "_" + buf;
    out.push_back(build_one(cfg, classes[size_t(i)], id, master.fork(uint64_t(i) + 1000)));
  }
  return out;
}

SplitStats split_stats(const std::vector<GresSample>& samples) {
  SplitStats st;
  st.n = int(samples.size());
  for (const auto& s : samples) {
    switch (classify(s)) {
      case TargetClass::no_target: st.no_target++; break;
      case TargetClass::single: st.single++; break;
      case TargetClass::multi: st.multi++; break;
    }
  }
  return st;
}

}  // namespace poseg
