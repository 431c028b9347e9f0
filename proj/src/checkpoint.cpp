#include "poseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace poseg {

namespace {

constexpr char kMagic[] = "POSEGCKPT\n";
constexpr size_t kMagicLen = sizeof(kMagic) - 1;

void write_u64(std::ostream& os, uint64_t x) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (unsigned char)(x >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw CorruptArchive("truncated header length");
  uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= uint64_t(b[i]) << (8 * i);
  return x;
}

void write_f32(std::ostream& os, const std::vector<float>& v) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * 4));
  } else {
    for (float x : v) {
      uint32_t u;
      std::memcpy(&u, &x, 4);
      unsigned char b[4] = {(unsigned char)(u), (unsigned char)(u >> 8), (unsigned char)(u >> 16),
                            (unsigned char)(u >> 24)};
      os.write(reinterpret_cast<const char*>(b), 4);
    }
  }
}

void read_f32(std::istream& is, std::vector<float>& v, const std::string& what) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size() * 4));
  } else {
    for (float& x : v) {
      unsigned char b[4];
      is.read(reinterpret_cast<char*>(b), 4);
      uint32_t u = uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
      std::memcpy(&x, &u, 4);
    }
  }
  if (!is) throw CorruptArchive("truncated blob: " + what);
}

}  // namespace

void save_checkpoint(const TrainState& st, const std::string& path) {
  json params = json::array();
  for (const auto& p : st.model.ps.all())
    params.push_back(json{{"name", p->name}, {"shape", p->value.shape}});
  json header{{"format_version", kCheckpointVersion},
              {"epoch", st.epoch},
              {"seed", st.cfg.train.seed},
              {"adam_step", st.opt.step},
              {"config", st.cfg},
              {"params", params}};
  const std::string hs = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw MissingFile("cannot write checkpoint: " + path);
  os.write(kMagic, std::streamsize(kMagicLen));
  write_u64(os, hs.size());
  os.write(hs.data(), std::streamsize(hs.size()));
  for (const auto& p : st.model.ps.all()) write_f32(os, p->value.v);
  for (const auto& t : st.opt.m) write_f32(os, t.v);
  for (const auto& t : st.opt.v) write_f32(os, t.v);
  if (!os) throw CorruptArchive("write failed: " + path);
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFile("checkpoint: " + path);

  char magic[kMagicLen];
  is.read(magic, std::streamsize(kMagicLen));
  if (!is || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw CorruptArchive("bad magic in " + path);

  const uint64_t hlen = read_u64(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), std::streamsize(hlen));
  if (!is) throw CorruptArchive("truncated header in " + path);

  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw CorruptArchive(std::string("header parse failed: ") + e.what());
  }
  const int version = header.value("format_version", -1);
  if (version != kCheckpointVersion)
    throw VersionMismatch("checkpoint format_version " + std::to_string(version) +
                          ", supported " + std::to_string(kCheckpointVersion));

  Config cfg;
  TrainState st;
  try {
    cfg = header.at("config").get<Config>();
    st.epoch = header.at("epoch").get<int>();
    st.opt.step = header.at("adam_step").get<int64_t>();
  } catch (const json::exception& e) {
    throw CorruptArchive(std::string("header fields: ") + e.what());
  }
  const json& params = header.at("params");
  if (!params.is_array() || params.empty()) throw CorruptArchive("empty parameter index");
  // The text embedding's row count pins the vocabulary the model was built
  // with; everything else about shapes is regenerated from the config.
  int vocab_size = -1;
  for (const auto& p : params)
    if (p.at("name") == "text.embed") vocab_size = p.at("shape")[0].get<int>();
  if (vocab_size < 1) throw CorruptArchive("parameter index lacks text.embed");

  st.cfg = cfg;
  st.model = make_model<float>(cfg.model, vocab_size, cfg.train.seed);
  for (const auto& pr : st.model.ps.all()) {
    st.opt.m.push_back(Tensor<float>::zeros(pr->value.shape));
    st.opt.v.push_back(Tensor<float>::zeros(pr->value.shape));
  }

  const auto& all = st.model.ps.all();
  if (params.size() != all.size())
    throw CorruptArchive("parameter count mismatch: archive " + std::to_string(params.size()) +
                         ", model " + std::to_string(all.size()));
  for (size_t i = 0; i < all.size(); ++i) {
    const std::string name = params[i].at("name").get<std::string>();
    const std::vector<int> shape = params[i].at("shape").get<std::vector<int>>();
    if (name != all[i]->name || shape != all[i]->value.shape)
      throw CorruptArchive("parameter index mismatch at " + all[i]->name);
  }

  for (const auto& pr : all) read_f32(is, pr->value.v, pr->name);
  for (size_t i = 0; i < all.size(); ++i) read_f32(is, st.opt.m[i].v, all[i]->name + ".m");
  for (size_t i = 0; i < all.size(); ++i) read_f32(is, st.opt.v[i].v, all[i]->name + ".v");
  if (is.peek() != std::char_traits<char>::eof())
    throw CorruptArchive("trailing bytes in " + path);
  return st;
}

void require_same_model(const ModelConfig& want, const ModelConfig& got) {
  if (json(want) != json(got))
    throw VersionMismatch("checkpoint model config does not match the requested one");
}

}  // namespace poseg
