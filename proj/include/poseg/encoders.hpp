#pragma once

#include <string>
#include <vector>

#include "poseg/config.hpp"
#include "poseg/nn.hpp"
#include "poseg/tape.hpp"
#include "poseg/tensor.hpp"
#include "poseg/vocab.hpp"

// Input encoders: a small transformer over word embeddings and a strided
// convolutional pyramid over the image. Both are trainable toys that preserve
// the interfaces the decoder needs: word features [L,C] with a validity mask,
// and visual features V1..V4 at strides 32/16/8/4 sharing channel width C.
namespace poseg {

// ---- text ----

// Word features plus which rows are real tokens. Padded rows must never
// influence anything downstream; every consumer masks with `valid`.
struct TextFeatures {
  int t = -1;                  // tape node, [L, C]
  std::vector<uint8_t> valid;  // length L, 1 for non-pad tokens
};

template <class T>
struct TextEncoderP {
  Param<T>* embed = nullptr;  // [vocab, C]
  Param<T>* pos = nullptr;    // [l_max, C]
  struct Block {
    LayerNormP<T> ln1, ln2;
    AttnP<T> attn;
    FfnP<T> ffn;
  };
  std::vector<Block> blocks;
  LayerNormP<T> ln_out;
};

template <class T>
TextEncoderP<T> make_text_encoder(ParamStore<T>& ps, Rng& rng, const ModelConfig& cfg,
                                  int vocab_size) {
  const int c = cfg.channels;
  TextEncoderP<T> e;
  e.embed = &ps.create("text.embed", {vocab_size, c}, true);
  init_uniform(*e.embed, rng, c);
  e.pos = &ps.create("text.pos", {cfg.l_max, c}, true);
  init_uniform(*e.pos, rng, c);
  for (int i = 0; i < cfg.text_layers; ++i) {
    std::string base = "text.block" + std::to_string(i);
    typename TextEncoderP<T>::Block b;
    b.ln1 = make_layer_norm(ps, base + ".ln1", c);
    b.attn = make_attention(ps, rng, base + ".attn", c, cfg.heads);
    b.ln2 = make_layer_norm(ps, base + ".ln2", c);
    b.ffn = make_ffn(ps, rng, base + ".ffn", c, c * cfg.ffn_mult);
    e.blocks.push_back(b);
  }
  e.ln_out = make_layer_norm(ps, "text.ln_out", c);
  return e;
}

// Pre-norm self-attention over the words; padded positions are excluded from
// the key set, so valid rows are bit-identical no matter how many pads trail.
template <class T>
TextFeatures encode_text(Tape<T>& tp, const TextEncoderP<T>& p, const std::vector<int>& tokens,
                         const ModelConfig& cfg) {
  const int l = int(tokens.size());
  if (l == 0) throw AllTokensPadded("encode_text: empty token sequence");
  if (l > cfg.l_max)
    throw ExpressionTooLong("encode_text: " + std::to_string(l) + " tokens, capacity " +
                            std::to_string(cfg.l_max));
  std::vector<uint8_t> valid(tokens.size());
  int nvalid = 0;
  for (int i = 0; i < l; ++i) {
    valid[size_t(i)] = tokens[size_t(i)] != Vocab::kPadId;
    nvalid += valid[size_t(i)];
  }
  if (nvalid == 0) throw AllTokensPadded("encode_text: every token is <pad>");

  int x = tp.add(tp.gather_rows(tp.param(*p.embed), tokens),
                 tp.slice_rows(tp.param(*p.pos), 0, l));
  for (const auto& b : p.blocks) {
    int n1 = layer_norm(tp, x, b.ln1);
    x = tp.add(x, attend(tp, n1, n1, b.attn, valid));
    x = tp.add(x, ffn(tp, layer_norm(tp, x, b.ln2), b.ffn));
  }
  return {layer_norm(tp, x, p.ln_out), valid};
}

// ---- image ----

// Multi-scale visual features; V1 is the coarsest (stride 32), V4 the finest
// (stride 4). V1..V3 feed decoder cross-attention, V4 the mask head.
struct VisualPyramid {
  int v1 = -1, v2 = -1, v3 = -1, v4 = -1;  // tape nodes, [C, S/32..S/4, ...]
  int level(int i) const {
    switch (i) {
      case 1: return v1;
      case 2: return v2;
      case 3: return v3;
      case 4: return v4;
    }
    throw ShapeMismatch("VisualPyramid level index");
  }
};

template <class T>
struct ConvP {
  Param<T>* w = nullptr;  // [cout, cin*k*k]
  Param<T>* b = nullptr;  // [cout]
  int ksize = 0, stride = 0, pad = 0;
};

template <class T>
ConvP<T> make_conv(ParamStore<T>& ps, Rng& rng, const std::string& name, int cin, int cout,
                   int ksize, int stride, int pad) {
  ConvP<T> c;
  c.w = &ps.create(name + ".w", {cout, cin * ksize * ksize}, true);
  init_uniform(*c.w, rng, cin * ksize * ksize);
  c.b = &ps.create(name + ".b", {cout}, false);
  c.ksize = ksize;
  c.stride = stride;
  c.pad = pad;
  return c;
}

template <class T>
int conv(Tape<T>& tp, int x, const ConvP<T>& c) {
  return tp.conv2d(x, tp.param(*c.w), tp.param(*c.b), c.ksize, c.stride, c.pad);
}

template <class T>
struct VisualEncoderP {
  std::vector<ConvP<T>> stages;    // five stride-2 convs: 3 -> C/2 -> C -> C -> C -> C
  std::vector<ConvP<T>> laterals;  // 1x1 at strides 4/8/16/32
  std::vector<ConvP<T>> outputs;   // 3x3, emit V4/V3/V2/V1 (same index order as laterals)
};

template <class T>
VisualEncoderP<T> make_visual_encoder(ParamStore<T>& ps, Rng& rng, const ModelConfig& cfg) {
  const int c = cfg.channels;
  VisualEncoderP<T> e;
  int widths[6] = {3, c / 2, c, c, c, c};
  for (int i = 0; i < 5; ++i)
    e.stages.push_back(
        make_conv(ps, rng, "vis.stage" + std::to_string(i + 1), widths[i], widths[i + 1], 3, 2, 1));
  const char* strides[4] = {"4", "8", "16", "32"};
  for (int i = 0; i < 4; ++i)
    e.laterals.push_back(make_conv(ps, rng, std::string("vis.lat") + strides[i], c, c, 1, 1, 0));
  for (int i = 0; i < 4; ++i)
    e.outputs.push_back(make_conv(ps, rng, std::string("vis.out") + strides[i], c, c, 3, 1, 1));
  return e;
}

// Strided GELU encoder down to stride 32, then a top-down pass with lateral
// 1x1 projections and nearest-neighbour upsampling; a linear 3x3 conv emits
// each pyramid level.
template <class T>
VisualPyramid encode_image(Tape<T>& tp, const VisualEncoderP<T>& p, const Tensor<T>& image,
                           const ModelConfig& cfg) {
  require_shape(image, {3, cfg.image_size, cfg.image_size}, "encode_image input");
  int x = tp.constant(image);
  std::vector<int> feats;  // stride 4/8/16/32 encoder features
  for (int i = 0; i < 5; ++i) {
    x = tp.gelu(conv(tp, x, p.stages[size_t(i)]));
    if (i >= 1) feats.push_back(x);
  }
  int p32 = conv(tp, feats[3], p.laterals[3]);
  int p16 = tp.add(conv(tp, feats[2], p.laterals[2]), tp.upsample2x(p32));
  int p8 = tp.add(conv(tp, feats[1], p.laterals[1]), tp.upsample2x(p16));
  int p4 = tp.add(conv(tp, feats[0], p.laterals[0]), tp.upsample2x(p8));
  VisualPyramid out;
  out.v1 = conv(tp, p32, p.outputs[3]);
  out.v2 = conv(tp, p16, p.outputs[2]);
  out.v3 = conv(tp, p8, p.outputs[1]);
  out.v4 = conv(tp, p4, p.outputs[0]);
  return out;
}

// u8 image/mask [C,H,W] -> float tensor scaled to [0,1].
template <class T>
Tensor<T> to_unit(const Tensor<uint8_t>& img) {
  Tensor<T> out(img.shape);
  for (int64_t i = 0; i < img.numel(); ++i) out.v[size_t(i)] = T(img.v[size_t(i)]) / T(255);
  return out;
}

}  // namespace poseg
