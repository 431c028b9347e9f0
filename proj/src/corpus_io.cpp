#include "poseg/corpus_io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "poseg/errors.hpp"
#include "poseg/png_io.hpp"
#include "poseg/vocab.hpp"

namespace poseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

json load_manifest(const std::string& dir) {
  fs::path path = fs::path(dir) / "manifest.json";
  std::ifstream in(path);
  if (!in) throw MissingFile(path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CorruptManifest(path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("format_version") || !j.contains("image_size") ||
      !j.contains("splits"))
    throw CorruptManifest(path.string() + ": missing required keys");
  if (j.at("format_version").get<int>() != kFormatVersion)
    throw VersionMismatch("manifest format_version " + j.at("format_version").dump() +
                          ", expected " + std::to_string(kFormatVersion));
  return j;
}

}  // namespace

void save_corpus(const std::string& dir, int image_size,
                 const std::map<std::string, std::vector<GresSample>>& splits) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  const Vocab& vocab = Vocab::builtin();

  json jsplits = json::object();
  for (const auto& [name, samples] : splits) {
    json arr = json::array();
    for (const auto& s : samples) {
      // Image: float [0,1] -> u8 (values originate from u8, so this is exact).
      Tensor<uint8_t> img({3, image_size, image_size});
      for (int64_t i = 0; i < img.numel(); ++i)
        img.v[size_t(i)] = uint8_t(std::lround(s.image.v[size_t(i)] * 255.f));
      std::string img_rel = "images/" + s.id + ".png";
      write_png((fs::path(dir) / img_rel).string(), img);

      json mask_paths = json::array();
      for (size_t k = 0; k < s.masks.size(); ++k) {
        Tensor<uint8_t> m({1, image_size, image_size});
        for (int64_t i = 0; i < m.numel(); ++i) m.v[size_t(i)] = s.masks[k].v[size_t(i)] ? 255 : 0;
        std::string rel = "masks/" + s.id + "_" + std::to_string(k) + ".png";
        write_png((fs::path(dir) / rel).string(), m);
        mask_paths.push_back(rel);
      }

      json words = json::array();
      for (int t : s.tokens) words.push_back(vocab.word(t));

      arr.push_back(json{{"id", s.id},
                         {"image", img_rel},
                         {"masks", mask_paths},
                         {"tokens", words},
                         {"no_target", s.no_target},
                         {"seed", s.seed}});
    }
    jsplits[name] = std::move(arr);
  }

  json manifest{{"format_version", kFormatVersion}, {"image_size", image_size},
                {"splits", jsplits}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw Error("failed to write manifest in " + dir);
}

int corpus_image_size(const std::string& dir) {
  return load_manifest(dir).at("image_size").get<int>();
}

std::vector<std::string> corpus_splits(const std::string& dir) {
  json manifest = load_manifest(dir);
  std::vector<std::string> names;
  for (const auto& [k, v] : manifest.at("splits").items()) names.push_back(k);
  return names;
}

std::vector<GresSample> load_corpus(const std::string& dir, const std::string& split, int l_max) {
  json manifest = load_manifest(dir);
  int image_size = manifest.at("image_size").get<int>();
  const json& splits = manifest.at("splits");
  if (!splits.contains(split)) throw EmptySplit("split '" + split + "' not in manifest");
  const json& records = splits.at(split);
  if (!records.is_array() || records.empty()) throw EmptySplit("split '" + split + "' is empty");

  const Vocab& vocab = Vocab::builtin();
  std::vector<GresSample> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    if (!rec.contains("id") || !rec.contains("image") || !rec.contains("masks") ||
        !rec.contains("tokens") || !rec.contains("no_target") || !rec.contains("seed"))
      throw CorruptManifest("record missing required keys in split '" + split + "'");

    GresSample s;
    s.id = rec.at("id").get<std::string>();
    s.no_target = rec.at("no_target").get<bool>();
    s.seed = rec.at("seed").get<uint64_t>();

    Tensor<uint8_t> img = read_png((fs::path(dir) / rec.at("image").get<std::string>()).string());
    require_shape(img, {3, image_size, image_size}, "corpus image");
    s.image = Tensor<float>({3, image_size, image_size});
    for (int64_t i = 0; i < img.numel(); ++i) s.image.v[size_t(i)] = img.v[size_t(i)] / 255.f;

    for (const auto& rel : rec.at("masks")) {
      Tensor<uint8_t> m = read_png((fs::path(dir) / rel.get<std::string>()).string());
      if (m.shape != std::vector<int>{1, image_size, image_size})
        throw ShapeMismatch("corpus mask " + rel.get<std::string>() + ": " + m.shape_str());
      Mask mask({image_size, image_size});
      for (int64_t i = 0; i < mask.numel(); ++i) mask.v[size_t(i)] = m.v[size_t(i)] >= 128 ? 1 : 0;
      s.masks.push_back(std::move(mask));
    }
    s.merged = merge_masks(s.masks, image_size, image_size);

    std::vector<std::string> words;
    for (const auto& w : rec.at("tokens")) words.push_back(w.get<std::string>());
    s.tokens = vocab.encode(words, l_max);
    s.expression = vocab.decode(s.tokens);

    validate_sample(s, image_size, l_max, vocab.size());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace poseg
