#pragma once

#include <vector>

#include "poseg/config.hpp"
#include "poseg/heads.hpp"
#include "poseg/sample.hpp"
#include "poseg/tape.hpp"

// Instance aggregation: collapse the N per-query logit maps into one merged
// segmentation map, score its loss against the ground truth, and emit the
// final full-resolution binary mask.
namespace poseg {

template <class T>
struct MergeP {
  Param<T>* slope = nullptr;  // scalar PReLU slope
  bool frozen = false;        // treat the slope as a constant
  bool fixed = false;         // hard p_hat > 0.5 selection instead of weighting
};

// The frozen variant pins the slope at 1 (PReLU = identity), which disables
// negative-logit suppression; the learned variant starts at 0.25. The slope
// stays registered either way so checkpoints keep one parameter set per
// architecture.
template <class T>
MergeP<T> make_merge(ParamStore<T>& ps, const ModelConfig& cfg) {
  MergeP<T> m;
  m.slope = &ps.create("merge.slope", {1}, false);
  m.slope->value.v[0] = cfg.prelu_frozen ? T(1) : T(0.25);
  m.frozen = cfg.prelu_frozen;
  m.fixed = cfg.aggregation == "fixed";
  return m;
}

struct Merged {
  int pre = -1;   // [HW] pre-sigmoid merged map (quarter resolution, flat)
  int prob = -1;  // [HW] sigmoid of the above
  int h = 0, w = 0;
};

// pre(x) = sum_i p_hat_i * PReLU_a(s_i(x)). The fixed baseline replaces the
// soft weights by the indicator p_hat > 0.5 computed outside the graph, so
// only the mask branch trains there.
template <class T>
Merged adaptive_merge(Tape<T>& tp, int p_hat, const MaskLogits& s, const MergeP<T>& mp) {
  int n = tp.val(s.s).rows();
  if (tp.val(p_hat).numel() != n) throw ShapeMismatch("adaptive_merge: p_hat vs mask rows");
  int pre;
  if (mp.fixed) {
    Tensor<T> sel({1, n});
    for (int i = 0; i < n; ++i) sel.v[size_t(i)] = tp.val(p_hat).v[size_t(i)] > T(0.5) ? T(1) : T(0);
    pre = tp.matmul(tp.constant(std::move(sel)), s.s);
  } else {
    int a = mp.frozen ? tp.constant(Tensor<T>::full({1}, mp.slope->value.v[0]))
                      : tp.param(*mp.slope);
    pre = tp.matmul(tp.reshape(p_hat, {1, n}), tp.prelu(s.s, a));
  }
  pre = tp.reshape(pre, {s.h * s.w});
  return {pre, tp.sigmoid(pre), s.h, s.w};
}

// Per-pixel-mean BCE (stable, from the pre-sigmoid map) plus dice on the
// probabilities, against a quarter-resolution {0,1} target.
template <class T>
int merged_loss(Tape<T>& tp, const Merged& m, const Tensor<T>& gt_quarter,
                const LossConfig& loss) {
  if (gt_quarter.numel() != tp.val(m.pre).numel()) throw ShapeMismatch("merged_loss target");
  int bce = tp.mean_all(tp.bce_logits(m.pre, gt_quarter));
  int dice = tp.dice_prob(m.prob, gt_quarter, loss.dice_smooth);
  return tp.add(dice, bce);
}

// Area-average a full-resolution {0,1} mask down to stride 4 and re-binarize
// at 0.5; returned flat [h*w] so it can feed the loss ops directly.
template <class T>
Tensor<T> quarter_mask(const Mask& m) {
  if (m.ndim() != 2 || m.rows() % 4 != 0 || m.cols() % 4 != 0)
    throw ShapeMismatch("quarter_mask expects [H,W] with H,W divisible by 4");
  int h = m.rows() / 4, w = m.cols() / 4;
  Tensor<T> out({h * w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int cnt = 0;
      for (int dy = 0; dy < 4; ++dy)
        for (int dx = 0; dx < 4; ++dx) cnt += m.at(4 * y + dy, 4 * x + dx) != 0;
      out.v[size_t(y * w + x)] = cnt * 2 >= 16 ? T(1) : T(0);
    }
  return out;
}

// Final decision: an all-zero mask when the no-target probability wins,
// otherwise the quarter-res probabilities upsampled nearest x4 and cut at the
// strict mask threshold.
template <class T>
Mask infer_final_mask(const Tensor<T>& prob_quarter, int h, int w, double p_nt,
                      const ModelConfig& cfg) {
  if (prob_quarter.numel() != int64_t(h) * w) throw ShapeMismatch("infer_final_mask prob map");
  Mask out({4 * h, 4 * w});
  if (p_nt > cfg.nt_threshold) return out;
  for (int y = 0; y < 4 * h; ++y)
    for (int x = 0; x < 4 * w; ++x)
      out.at(y, x) =
          prob_quarter.v[size_t((y / 4) * w + x / 4)] > T(cfg.mask_threshold) ? 1 : 0;
  return out;
}

}  // namespace poseg
