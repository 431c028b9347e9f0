#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "poseg/tape.hpp"

// Layer composites shared by the encoders, the decoder blocks and the heads.
// Each *P struct is a bundle of parameter pointers created once in a
// ParamStore; the matching builder function instantiates the computation on a
// tape. Parameters may be reused across calls within one tape (gradients
// accumulate through every use).
namespace poseg {

template <class T>
struct LinearP {
  Param<T>* w = nullptr;  // [out,in]
  Param<T>* b = nullptr;  // [out]
};

template <class T>
LinearP<T> make_linear(ParamStore<T>& ps, Rng& rng, const std::string& name, int in, int out) {
  LinearP<T> l;
  l.w = &ps.create(name + ".w", {out, in}, true);
  init_uniform(*l.w, rng, in);
  l.b = &ps.create(name + ".b", {out}, false);
  return l;
}

template <class T>
int linear(Tape<T>& tp, int x, const LinearP<T>& l) {
  return tp.add_rowvec(tp.matmul_nt(x, tp.param(*l.w)), tp.param(*l.b));
}

template <class T>
struct LayerNormP {
  Param<T>* gamma = nullptr;
  Param<T>* beta = nullptr;
};

template <class T>
LayerNormP<T> make_layer_norm(ParamStore<T>& ps, const std::string& name, int c) {
  LayerNormP<T> n;
  n.gamma = &ps.create(name + ".g", {c}, false);
  std::fill(n.gamma->value.v.begin(), n.gamma->value.v.end(), T(1));
  n.beta = &ps.create(name + ".b", {c}, false);
  return n;
}

template <class T>
int layer_norm(Tape<T>& tp, int x, const LayerNormP<T>& n) {
  return tp.layer_norm(x, tp.param(*n.gamma), tp.param(*n.beta));
}

// Two-layer GELU MLP used as the transformer feed-forward.
template <class T>
struct FfnP {
  LinearP<T> in, out;
};

template <class T>
FfnP<T> make_ffn(ParamStore<T>& ps, Rng& rng, const std::string& name, int c, int hidden) {
  return {make_linear(ps, rng, name + ".in", c, hidden), make_linear(ps, rng, name + ".out", hidden, c)};
}

template <class T>
int ffn(Tape<T>& tp, int x, const FfnP<T>& f) {
  return linear(tp, tp.gelu(linear(tp, x, f.in)), f.out);
}

// Scaled dot-product attention with learned projections.
template <class T>
struct AttnP {
  LinearP<T> q, k, v, o;
  int heads = 1;
};

template <class T>
AttnP<T> make_attention(ParamStore<T>& ps, Rng& rng, const std::string& name, int c, int heads) {
  AttnP<T> a;
  a.q = make_linear(ps, rng, name + ".q", c, c);
  a.k = make_linear(ps, rng, name + ".k", c, c);
  a.v = make_linear(ps, rng, name + ".v", c, c);
  a.o = make_linear(ps, rng, name + ".o", c, c);
  a.heads = heads;
  return a;
}

// Returns the attention update for q_in attending over kv_in (pre-residual).
// key_mask: empty, [Nk] shared, or [Nq*Nk] per-query key validity.
// key_pos: optional node added to keys before the K projection (queries and
// values stay position-free).
template <class T>
int attend(Tape<T>& tp, int q_in, int kv_in, const AttnP<T>& p,
           const std::vector<uint8_t>& key_mask = {}, int key_pos = -1) {
  int kin = key_pos >= 0 ? tp.add(kv_in, key_pos) : kv_in;
  int q = linear(tp, q_in, p.q);
  int k = linear(tp, kin, p.k);
  int v = linear(tp, kv_in, p.v);
  int c = tp.val(q).cols();
  if (c % p.heads != 0) throw ShapeMismatch("attention: channels not divisible by heads");
  int dh = c / p.heads;
  double inv_sqrt = 1.0 / std::sqrt(double(dh));
  std::vector<int> outs;
  outs.reserve(size_t(p.heads));
  for (int h = 0; h < p.heads; ++h) {
    int qh = p.heads == 1 ? q : tp.slice_cols(q, h * dh, (h + 1) * dh);
    int kh = p.heads == 1 ? k : tp.slice_cols(k, h * dh, (h + 1) * dh);
    int vh = p.heads == 1 ? v : tp.slice_cols(v, h * dh, (h + 1) * dh);
    int scores = tp.scale(tp.matmul_nt(qh, kh), inv_sqrt);
    int probs = tp.softmax_rows(scores, key_mask);
    outs.push_back(tp.matmul(probs, vh));
  }
  int cat = p.heads == 1 ? outs[0] : tp.concat_cols(outs);
  return linear(tp, cat, p.o);
}

// Fixed 2-D sinusoidal position code for an h*w grid, laid out to match
// row-major flattened pixels: first half of channels encodes y, second x.
template <class T>
Tensor<T> sine_position_2d(int h, int w, int c) {
  if (c % 4 != 0) throw ShapeMismatch("sine_position_2d: channels must be divisible by 4");
  int half = c / 2, pairs = half / 2;
  Tensor<T> pe({h * w, c});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      T* row = pe.data() + (int64_t(y) * w + x) * c;
      for (int i = 0; i < pairs; ++i) {
        double omega = std::pow(10000.0, -double(i) / pairs);
        row[2 * i] = T(std::sin(y * omega));
        row[2 * i + 1] = T(std::cos(y * omega));
        row[half + 2 * i] = T(std::sin(x * omega));
        row[half + 2 * i + 1] = T(std::cos(x * omega));
      }
    }
  return pe;
}

// [C,H,W] feature map -> [H*W, C] token rows (row-major pixel order).
template <class T>
int image_to_rows(Tape<T>& tp, int x) {
  const auto& s = tp.val(x).shape;
  if (s.size() != 3) throw ShapeMismatch("image_to_rows");
  return tp.transpose(tp.reshape(x, {s[0], s[1] * s[2]}));
}

}  // namespace poseg
