#include "poseg/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace poseg {

namespace {

constexpr double kPadCost = 1e6;   // dummy columns when queries outnumber ground truths
constexpr double kTieSlack = 1e-9;  // assignments within this of optimal count as ties

// Shortest-augmenting-path assignment (Jonker-Volgenant flavour) on a dense
// square matrix, 1-indexed internally. Returns the row assigned to each
// column. O(n^3), exact for any finite costs.
std::vector<int> assign_square(const std::vector<double>& a, int n) {
  const double kInf = std::numeric_limits<double>::max() / 4;
  std::vector<double> u(size_t(n) + 1, 0.0), v(size_t(n) + 1, 0.0);
  std::vector<int> p(size_t(n) + 1, 0), way(size_t(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(size_t(n) + 1, kInf);
    std::vector<char> used(size_t(n) + 1, 0);
    do {
      used[size_t(j0)] = 1;
      int i0 = p[size_t(j0)], j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[size_t(j)]) continue;
        double cur = a[size_t(i0 - 1) * size_t(n) + size_t(j - 1)] - u[size_t(i0)] - v[size_t(j)];
        if (cur < minv[size_t(j)]) {
          minv[size_t(j)] = cur;
          way[size_t(j)] = j0;
        }
        if (minv[size_t(j)] < delta) {
          delta = minv[size_t(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[size_t(j)]) {
          u[size_t(p[size_t(j)])] += delta;
          v[size_t(j)] -= delta;
        } else {
          minv[size_t(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[size_t(j0)] != 0);
    do {
      int j1 = way[size_t(j0)];
      p[size_t(j0)] = p[size_t(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_of_col(size_t(n), 0);
  for (int j = 1; j <= n; ++j) row_of_col[size_t(j - 1)] = p[size_t(j)] - 1;
  return row_of_col;
}

// Optimal completion given a fixed prefix: columns [0, fixed.size()) are
// pinned to the listed queries, the rest are assigned optimally among the
// remaining queries (dummy-padded to square). Returns the full omega; the
// total is recomputed from real cells by the caller so padding constants
// never touch reported costs.
std::vector<int> complete_assignment(const Tensor<double>& cost, const std::vector<int>& fixed) {
  const int n = cost.rows();
  const int m = cost.cols();
  const int jfix = int(fixed.size());
  std::vector<char> taken(size_t(n), 0);
  for (int q : fixed) taken[size_t(q)] = 1;
  std::vector<int> avail;
  for (int q = 0; q < n; ++q)
    if (!taken[size_t(q)]) avail.push_back(q);
  const int k = int(avail.size());
  const int mrem = m - jfix;

  std::vector<int> omega = fixed;
  omega.resize(size_t(m));
  if (mrem > 0) {
    std::vector<double> sq(size_t(k) * size_t(k), kPadCost);
    for (int r = 0; r < k; ++r)
      for (int c = 0; c < mrem; ++c) sq[size_t(r) * size_t(k) + size_t(c)] = cost.at(avail[size_t(r)], jfix + c);
    std::vector<int> row_of_col = assign_square(sq, k);
    for (int c = 0; c < mrem; ++c) omega[size_t(jfix + c)] = avail[size_t(row_of_col[size_t(c)])];
  }
  return omega;
}

double real_total(const Tensor<double>& cost, const std::vector<int>& omega) {
  double t = 0.0;
  for (int j = 0; j < int(omega.size()); ++j) t += cost.at(omega[size_t(j)], j);
  return t;
}

}  // namespace

double score_cost(double p_hat, double eps) { return -std::log(p_hat + eps); }

double mask_cost(const double* logits, const double* gt, int64_t pixels, double dice_smooth,
                 bool mean_bce) {
  double inter = 0.0, psum = 0.0, tsum = 0.0, bce = 0.0;
  for (int64_t x = 0; x < pixels; ++x) {
    double z = logits[x];
    double t = gt[x];
    double p = 1.0 / (1.0 + std::exp(-z));
    inter += p * t;
    psum += p;
    tsum += t;
    bce += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  double dice = 1.0 - (2.0 * inter + dice_smooth) / (psum + tsum + dice_smooth);
  if (mean_bce) bce /= double(pixels);
  return dice + bce;
}

CostMatrix build_cost_matrix(const Tensor<double>& p_hat, const Tensor<double>& s,
                             const std::vector<Tensor<double>>& gts,
                             const Tensor<double>& phrase, const LossConfig& lc) {
  const int n = int(p_hat.numel());
  const int m = int(gts.size());
  if (m == 0) throw EmptyInstance("cost matrix needs at least one ground truth");
  if (m > n) {
    throw TooManyInstances(std::to_string(m) + " ground truths exceed " + std::to_string(n) +
                           " queries");
  }
  if (s.ndim() != 2 || s.rows() != n) throw ShapeMismatch("mask logits " + s.shape_str());
  if (int(phrase.numel()) != n) throw ShapeMismatch("phrase losses " + phrase.shape_str());
  const int64_t pixels = s.cols();
  for (const auto& g : gts)
    if (g.numel() != pixels) throw ShapeMismatch("ground truth " + g.shape_str());

  CostMatrix cm;
  cm.cost = Tensor<double>({n, m});
  cm.score = Tensor<double>({n, m});
  cm.mask = Tensor<double>({n, m});
  cm.phrase = Tensor<double>({n, m});
  for (int i = 0; i < n; ++i) {
    const double sc = score_cost(p_hat.v[size_t(i)], lc.eps);
    const double ph = phrase.v[size_t(i)];
    const double* row = s.data() + int64_t(i) * pixels;
    for (int j = 0; j < m; ++j) {
      const double mk = mask_cost(row, gts[size_t(j)].data(), pixels, lc.dice_smooth,
                                  lc.mask_cost_mean_bce);
      cm.score.at(i, j) = sc;
      cm.mask.at(i, j) = mk;
      cm.phrase.at(i, j) = ph;
      cm.cost.at(i, j) = lc.lambda_score * sc + lc.lambda_mask * mk + lc.lambda_phrase * ph;
    }
  }
  return cm;
}

MatchResult hungarian_match(const Tensor<double>& cost) {
  if (cost.ndim() != 2) throw ShapeMismatch("cost matrix " + cost.shape_str());
  const int n = cost.rows();
  const int m = cost.cols();
  if (m < 1 || m > n) {
    throw InfeasibleShape("cannot inject " + std::to_string(m) + " ground truths into " +
                          std::to_string(n) + " queries");
  }
  for (int64_t i = 0; i < cost.numel(); ++i)
    if (!std::isfinite(cost.v[size_t(i)])) throw InfeasibleShape("non-finite matching cost");

  std::vector<int> omega = complete_assignment(cost, {});
  const double best = real_total(cost, omega);

  // Lexicographic refinement: walk the columns in order, and for each try
  // every smaller query index; keep a swap when the optimal completion stays
  // within the tie slack of the global optimum. Greedy is exact here because
  // each step preserves feasibility of an optimal completion.
  std::vector<int> fixed;
  for (int j = 0; j < m; ++j) {
    std::vector<char> taken(size_t(n), 0);
    for (int q : fixed) taken[size_t(q)] = 1;
    for (int q = 0; q < omega[size_t(j)]; ++q) {
      if (taken[size_t(q)]) continue;
      std::vector<int> trial = fixed;
      trial.push_back(q);
      std::vector<int> candidate = complete_assignment(cost, trial);
      if (real_total(cost, candidate) <= best + kTieSlack) {
        omega = candidate;
        break;
      }
    }
    fixed.push_back(omega[size_t(j)]);
  }

  MatchResult r;
  r.omega = std::move(omega);
  r.total_cost = real_total(cost, r.omega);
  return r;
}

}  // namespace poseg
