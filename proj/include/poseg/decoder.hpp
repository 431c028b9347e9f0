#pragma once

#include <functional>
#include <string>
#include <vector>

#include "poseg/config.hpp"
#include "poseg/encoders.hpp"
#include "poseg/nn.hpp"
#include "poseg/tape.hpp"

// Query decoder: K pre-norm blocks refine N learned object queries. Each
// block lets the queries read one pyramid level, exchanges information with
// the word features in both directions, mixes the queries among themselves,
// and applies a feed-forward update. Text rows are updated only by the
// bidirectional exchange; padded rows pass through every block untouched.
namespace poseg {

template <class T>
struct DecoderBlockP {
  LayerNormP<T> ln_vis, ln_q_ot, ln_t_ot, ln_self, ln_ffn;
  AttnP<T> vis;        // queries read the block's pyramid level
  AttnP<T> q_from_t;   // queries read valid words
  AttnP<T> t_from_q;   // words read queries
  AttnP<T> self;       // query self-attention
  FfnP<T> ffn;
};

template <class T>
struct DecoderP {
  Param<T>* q0 = nullptr;  // [N, C] learned initial queries
  std::vector<DecoderBlockP<T>> blocks;
};

template <class T>
DecoderP<T> make_decoder(ParamStore<T>& ps, Rng& rng, const ModelConfig& cfg) {
  const int c = cfg.channels;
  DecoderP<T> d;
  d.q0 = &ps.create("dec.q0", {cfg.num_queries, c}, true);
  init_uniform(*d.q0, rng, c);
  for (int k = 0; k < cfg.num_blocks; ++k) {
    std::string base = "dec.block" + std::to_string(k);
    DecoderBlockP<T> b;
    b.ln_vis = make_layer_norm(ps, base + ".ln_vis", c);
    b.vis = make_attention(ps, rng, base + ".vis", c, cfg.heads);
    b.ln_q_ot = make_layer_norm(ps, base + ".ln_q_ot", c);
    b.ln_t_ot = make_layer_norm(ps, base + ".ln_t_ot", c);
    b.q_from_t = make_attention(ps, rng, base + ".q_from_t", c, cfg.heads);
    b.t_from_q = make_attention(ps, rng, base + ".t_from_q", c, cfg.heads);
    b.ln_self = make_layer_norm(ps, base + ".ln_self", c);
    b.self = make_attention(ps, rng, base + ".self", c, cfg.heads);
    b.ln_ffn = make_layer_norm(ps, base + ".ln_ffn", c);
    b.ffn = make_ffn(ps, rng, base + ".ffn", c, c * cfg.ffn_mult);
    d.blocks.push_back(b);
  }
  return d;
}

// Both directions are computed from the same (Q, T) input pair, so neither
// update sees the other's output. Padded text rows get a zero update: their
// values pass through bit-exactly.
template <class T>
std::pair<int, int> object_text_cross_attention(Tape<T>& tp, int q, int t,
                                                const std::vector<uint8_t>& valid,
                                                const DecoderBlockP<T>& b) {
  int nq = layer_norm(tp, q, b.ln_q_ot);
  int nt = layer_norm(tp, t, b.ln_t_ot);
  int q_upd = attend(tp, nq, nt, b.q_from_t, valid);
  int t_upd = attend(tp, nt, nq, b.t_from_q);
  std::vector<T> keep(valid.size());
  for (size_t i = 0; i < valid.size(); ++i) keep[i] = valid[i] ? T(1) : T(0);
  return {tp.add(q, q_upd), tp.add(t, tp.mul_rows(t_upd, std::move(keep)))};
}

// Per-query key mask for one pyramid level, [N * H_k*W_k] (empty = attend
// everywhere). Lets the caller gate visual attention with its own mask
// predictions without this header knowing about mask heads.
template <class T>
using VisualKeyMask = std::function<std::vector<uint8_t>(Tape<T>&, int q, int level)>;

template <class T>
std::pair<int, int> decoder_block(Tape<T>& tp, int q, int t, int level,
                                  const std::vector<uint8_t>& valid, const DecoderBlockP<T>& b,
                                  const VisualKeyMask<T>& key_mask = {}) {
  // Copy: adding nodes below may reallocate the tape's node storage.
  const std::vector<int> ls = tp.val(level).shape;
  if (ls.size() != 3) throw ShapeMismatch("decoder_block: pyramid level must be [C,H,W]");
  int keys = image_to_rows(tp, level);
  int pe = tp.constant(sine_position_2d<T>(ls[1], ls[2], ls[0]));
  std::vector<uint8_t> vmask;
  if (key_mask) vmask = key_mask(tp, q, level);
  q = tp.add(q, attend(tp, layer_norm(tp, q, b.ln_vis), keys, b.vis, vmask, pe));
  auto [q2, t2] = object_text_cross_attention(tp, q, t, valid, b);
  int ns = layer_norm(tp, q2, b.ln_self);
  q = tp.add(q2, attend(tp, ns, ns, b.self));
  q = tp.add(q, ffn(tp, layer_norm(tp, q, b.ln_ffn), b.ffn));
  return {q, t2};
}

// Per-block refined pairs; q[k]/t[k] hold the outputs of block k+1. q0/t0 are
// the decoder inputs (learned queries bound to the tape, encoded text).
struct DecoderTrace {
  int q0 = -1, t0 = -1;
  std::vector<int> q, t;
  int q_final() const { return q.back(); }
  int t_final() const { return t.back(); }
};

// Block k (1-indexed) reads pyramid level ((k-1) mod 3) + 1; the finest level
// V4 is reserved for the mask head.
inline int block_level(int k) { return (k - 1) % 3 + 1; }

template <class T>
DecoderTrace run_decoder(Tape<T>& tp, const DecoderP<T>& p, const TextFeatures& text,
                         const VisualPyramid& pyr, const VisualKeyMask<T>& key_mask = {}) {
  DecoderTrace tr;
  tr.q0 = tp.param(*p.q0);
  tr.t0 = text.t;
  int q = tr.q0, t = tr.t0;
  for (size_t k = 0; k < p.blocks.size(); ++k) {
    int level = pyr.level(block_level(int(k) + 1));
    std::tie(q, t) = decoder_block(tp, q, t, level, text.valid, p.blocks[k], key_mask);
    tr.q.push_back(q);
    tr.t.push_back(t);
  }
  return tr;
}

}  // namespace poseg
