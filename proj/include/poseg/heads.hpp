#pragma once

#include <string>
#include <vector>

#include "poseg/config.hpp"
#include "poseg/nn.hpp"
#include "poseg/tape.hpp"

// Prediction heads on top of the refined queries: per-query relevance scores,
// per-query mask logits against the fine pyramid level, and the expression-
// level no-target probability.
namespace poseg {

// ---- relevance score ----

template <class T>
struct ScoreHeadP {
  LinearP<T> lin;  // C -> 1
};

template <class T>
ScoreHeadP<T> make_score_head(ParamStore<T>& ps, Rng& rng, const ModelConfig& cfg) {
  return {make_linear(ps, rng, "head.score", cfg.channels, 1)};
}

// p_hat = sigmoid(linear(Q)): [N] in (0,1).
template <class T>
int score_head(Tape<T>& tp, int q, const ScoreHeadP<T>& p) {
  int n = tp.val(q).rows();
  return tp.sigmoid(tp.reshape(linear(tp, q, p.lin), {n}));
}

// ---- instance masks ----

template <class T>
struct MaskHeadP {
  LinearP<T> l1, l2;  // C -> C -> C when embedding is an MLP
  bool mlp = true;
};

template <class T>
MaskHeadP<T> make_mask_head(ParamStore<T>& ps, Rng& rng, const ModelConfig& cfg) {
  MaskHeadP<T> h;
  h.mlp = cfg.mask_embed == "mlp";
  if (h.mlp) {
    h.l1 = make_linear(ps, rng, "head.mask.l1", cfg.channels, cfg.channels);
    h.l2 = make_linear(ps, rng, "head.mask.l2", cfg.channels, cfg.channels);
  }
  return h;
}

template <class T>
int mask_embed(Tape<T>& tp, int q, const MaskHeadP<T>& p) {
  return p.mlp ? linear(tp, tp.gelu(linear(tp, q, p.l1)), p.l2) : q;
}

// Per-query logit maps at the fine scale, kept flat: [N, H*W].
struct MaskLogits {
  int s = -1;
  int h = 0, w = 0;
};

// s[i, x] = <embed(Q[i]), V4[:, x]>; raw logits, no sigmoid.
template <class T>
MaskLogits mask_head(Tape<T>& tp, int q, int v4, const MaskHeadP<T>& p) {
  // Copy: adding nodes below may reallocate the tape's node storage.
  const std::vector<int> vs = tp.val(v4).shape;
  if (vs.size() != 3) throw ShapeMismatch("mask_head: V4 must be [C,H,W]");
  if (vs[0] != tp.val(q).cols()) throw ShapeMismatch("mask_head: channel mismatch");
  int flat = tp.reshape(v4, {vs[0], vs[1] * vs[2]});
  return {tp.matmul(mask_embed(tp, q, p), flat), vs[1], vs[2]};
}

// ---- no-target ----

template <class T>
struct NoTargetHeadP {
  LinearP<T> hidden, out;  // (C or 2C) -> C -> 1
  std::string input = "concat";
};

template <class T>
NoTargetHeadP<T> make_no_target_head(ParamStore<T>& ps, Rng& rng, const ModelConfig& cfg) {
  NoTargetHeadP<T> h;
  h.input = cfg.nt_input;
  int in = cfg.nt_input == "concat" ? 2 * cfg.channels : cfg.channels;
  h.hidden = make_linear(ps, rng, "head.nt.hidden", in, cfg.channels);
  h.out = make_linear(ps, rng, "head.nt.out", cfg.channels, 1);
  return h;
}

struct NoTargetOut {
  int q_global = -1;  // [1, C] score-weighted query summary
  int t_sen = -1;     // [1, C] mean of valid word features
  int logit = -1;     // [1] pre-sigmoid score, for stable BCE training
  int p_nt = -1;      // [1] no-target probability
};

// Q_global = sum_i p_hat_i * Q[i]; T_sen = mean over valid words; the MLP sees
// the summary selected by cfg.nt_input. Score gradients flow through Q_global.
template <class T>
NoTargetOut no_target_head(Tape<T>& tp, int q, int p_hat, int t,
                           const std::vector<uint8_t>& valid, const NoTargetHeadP<T>& p) {
  int n = tp.val(q).rows();
  NoTargetOut o;
  o.q_global = tp.matmul(tp.reshape(p_hat, {1, n}), q);
  o.t_sen = tp.masked_mean_rows(t, valid);
  int x;
  if (p.input == "concat")
    x = tp.concat_cols({o.q_global, o.t_sen});
  else if (p.input == "q_global")
    x = o.q_global;
  else if (p.input == "t_sen")
    x = o.t_sen;
  else  // mean_q
    x = tp.masked_mean_rows(q, std::vector<uint8_t>(size_t(n), 1));
  int z = linear(tp, tp.gelu(linear(tp, x, p.hidden)), p.out);
  o.logit = tp.reshape(z, {1});
  o.p_nt = tp.sigmoid(o.logit);
  return o;
}

template <class T>
struct HeadsP {
  ScoreHeadP<T> score;
  MaskHeadP<T> mask;
  NoTargetHeadP<T> nt;
};

template <class T>
HeadsP<T> make_heads(ParamStore<T>& ps, Rng& rng, const ModelConfig& cfg) {
  return {make_score_head(ps, rng, cfg), make_mask_head(ps, rng, cfg),
          make_no_target_head(ps, rng, cfg)};
}

}  // namespace poseg
