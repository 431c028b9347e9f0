#pragma once

#include <cmath>
#include <vector>

#include "poseg/tape.hpp"

// Phrase-object alignment: each query distributes attention over the valid
// words (its implicit phrase), pools the corresponding text features, and is
// scored by how well its own representation agrees with that pooled phrase.
namespace poseg {

// R = softmax(Q T^t / sqrt(C)) over valid token positions; [N, L], padded
// columns exactly zero, every row sums to 1.
template <class T>
int relevance_scores(Tape<T>& tp, int q, int t, const std::vector<uint8_t>& valid) {
  int c = tp.val(q).cols();
  int logits = tp.scale(tp.matmul_nt(q, t), 1.0 / std::sqrt(double(c)));
  return tp.softmax_rows(logits, valid);
}

// P = R T: each query's phrase feature is a convex combination of word rows.
template <class T>
int phrase_features(Tape<T>& tp, int r, int t) {
  return tp.matmul(r, t);
}

// Per-query loss 1 - cos(P_i, Q_i), in [0, 2]; [N]. Zero vectors read as
// "no phrase": the guarded cosine gives 0, so the loss sits at the neutral 1.
template <class T>
int phrase_alignment_loss(Tape<T>& tp, int pfeat, int q) {
  return tp.ones_minus(tp.cosine_rows(pfeat, q));
}

// Bundle of the three alignment nodes for one (Q, T) pair.
struct Alignment {
  int r = -1;     // [N, L]
  int p = -1;     // [N, C]
  int loss = -1;  // [N]
};

// stop_text_grad detaches the text features inside this computation only: the
// alignment loss then shapes queries but not the text branch.
template <class T>
Alignment align_queries(Tape<T>& tp, int q, int t, const std::vector<uint8_t>& valid,
                        bool stop_text_grad = false) {
  int tt = stop_text_grad ? tp.detach(t) : t;
  Alignment a;
  a.r = relevance_scores(tp, q, tt, valid);
  a.p = phrase_features(tp, a.r, tt);
  a.loss = phrase_alignment_loss(tp, a.p, q);
  return a;
}

}  // namespace poseg
