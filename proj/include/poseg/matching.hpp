#pragma once

#include <vector>

#include "poseg/config.hpp"
#include "poseg/heads.hpp"
#include "poseg/tape.hpp"
#include "poseg/tensor.hpp"

// Instance supervision: build the query-to-ground-truth cost matrix from
// detached values, solve the optimal one-to-one assignment, then re-express
// the chosen pairs' losses on the tape so gradients flow only through the
// selected terms. Unmatched queries are pushed toward zero relevance.
namespace poseg {

// Per-cell cost with its unweighted components; rows are queries, columns
// ground truths. cost = lambda_score*score + lambda_mask*mask +
// lambda_phrase*phrase. score and phrase are column-constant by construction.
struct CostMatrix {
  Tensor<double> cost;
  Tensor<double> score;
  Tensor<double> mask;
  Tensor<double> phrase;
};

struct MatchResult {
  std::vector<int> omega;  // omega[j] = query matched to ground truth j
  double total_cost = 0.0;
};

// -ln(p + eps): BCE against target 1.
double score_cost(double p_hat, double eps = 1e-8);

// dice(sigmoid(logits), gt) + BCE, the BCE in stable logit form and averaged
// per pixel when mean_bce (summed otherwise).
double mask_cost(const double* logits, const double* gt, int64_t pixels, double dice_smooth,
                 bool mean_bce);

// p_hat [N], s [N,HW] logits, gts M quarter-res {0,1} targets [HW] each,
// phrase [N]. Throws TooManyInstances when M > N and EmptyInstance when M = 0.
CostMatrix build_cost_matrix(const Tensor<double>& p_hat, const Tensor<double>& s,
                             const std::vector<Tensor<double>>& gts,
                             const Tensor<double>& phrase, const LossConfig& lc);

// Minimum-cost injection of ground truths into queries; among (near-)optimal
// assignments (1e-9 slack) returns the lexicographically smallest omega.
MatchResult hungarian_match(const Tensor<double>& cost);

// Tape assembly of L_inst for one sample. Matching runs on detached values;
// the returned scalar node recomputes the matched losses with gradients plus
// an unweighted -ln(1 - p_hat) for every unmatched query. gts may be empty.
template <class T>
int instance_loss(Tape<T>& tp, int p_hat, const MaskLogits& s, int phrase,
                  const std::vector<Tensor<T>>& gts, const LossConfig& lc,
                  MatchResult* match_out = nullptr) {
  const int n = int(tp.val(p_hat).numel());
  const int m = int(gts.size());
  MatchResult mr;
  if (m > 0) {
    std::vector<Tensor<double>> gd;
    gd.reserve(size_t(m));
    for (const auto& g : gts) gd.push_back(g.template cast<double>());
    CostMatrix cm = build_cost_matrix(tp.val(p_hat).template cast<double>(),
                                      tp.val(s.s).template cast<double>(), gd,
                                      tp.val(phrase).template cast<double>(), lc);
    mr = hungarian_match(cm.cost);
  }

  std::vector<char> is_matched(size_t(n), 0);
  int total = -1;
  auto acc = [&](int node) { total = total < 0 ? node : tp.add(total, node); };
  for (int j = 0; j < m; ++j) {
    int i = mr.omega[size_t(j)];
    is_matched[size_t(i)] = 1;
    acc(tp.scale(tp.neg_log(tp.elem(p_hat, i), lc.eps), lc.lambda_score));
    int row = tp.slice_rows(s.s, i, i + 1);
    int dice = tp.dice_prob(tp.sigmoid(row), gts[size_t(j)], lc.dice_smooth);
    int bce = lc.mask_cost_mean_bce ? tp.mean_all(tp.bce_logits(row, gts[size_t(j)]))
                                    : tp.sum_all(tp.bce_logits(row, gts[size_t(j)]));
    acc(tp.scale(tp.add(dice, bce), lc.lambda_mask));
    acc(tp.scale(tp.elem(phrase, i), lc.lambda_phrase));
  }
  for (int i = 0; i < n; ++i)
    if (!is_matched[size_t(i)]) acc(tp.neg_log(tp.ones_minus(tp.elem(p_hat, i)), lc.eps));
  if (match_out) *match_out = mr;
  return total;
}

}  // namespace poseg
