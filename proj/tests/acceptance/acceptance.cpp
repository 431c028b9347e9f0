// Acceptance gate: one PASS/FAIL line per criterion, exit 1 if any fail.
// Each criterion is self-contained and pins its tolerances here, next to the
// check that uses them. The heavyweight criteria (overfit, generalization,
// ablation) share trained states so the gate stays inside its time budget
// without weakening any check.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "poseg/checkpoint.hpp"
#include "poseg/matching.hpp"
#include "poseg/metrics.hpp"
#include "poseg/model.hpp"
#include "poseg/rng.hpp"
#include "poseg/synth.hpp"
#include "poseg/train.hpp"
#include "poseg/vocab.hpp"

using namespace poseg;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

double seconds_since(clk::time_point t0) {
  return std::chrono::duration<double>(clk::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------- criterion 1
// Paper-scale benchmark numbers are out of scope by design; the substitution
// is valid only if the shipped defaults really are the pinned training
// weights and toy dimensions the remaining criteria exercise.
Outcome c1_pinned_defaults() {
  LossConfig lc;
  ModelConfig mc;
  bool ok = lc.lambda_score == 2.0 && lc.lambda_mask == 5.0 && lc.lambda_phrase == 1.0 &&
            lc.lambda_merged == 5.0 && lc.lambda_inst == 1.0 && lc.lambda_nt == 0.1 &&
            mc.channels == 64 && mc.num_queries == 16 && mc.num_blocks == 3 &&
            mc.image_size == 64;
  return {ok, "defaults carry the pinned loss weights (2/5/1, 5/1/0.1) and toy dims (C=64, "
              "N=16, K=3, 64 px)"};
}

// ---------------------------------------------------------------- criterion 2
double brute_force_total(const Tensor<double>& cost) {
  const int n = cost.rows(), m = cost.cols();
  std::vector<int> rows(size_t(n), 0);
  std::iota(rows.begin(), rows.end(), 0);
  double best = 1e300;
  std::function<void(int, double, std::vector<bool>&)> rec = [&](int j, double acc,
                                                                 std::vector<bool>& used) {
    if (acc >= best) return;
    if (j == m) {
      best = acc;
      return;
    }
    for (int i = 0; i < n; ++i) {
      if (used[size_t(i)]) continue;
      used[size_t(i)] = true;
      rec(j + 1, acc + cost.at(i, j), used);
      used[size_t(i)] = false;
    }
  };
  std::vector<bool> used(size_t(n), false);
  rec(0, 0.0, used);
  return best;
}

Outcome c2_matching_oracle() {
  constexpr double kTol = 1e-9;
  constexpr double kBudgetSec = 10.0;
  auto t0 = clk::now();
  Rng rng(2024);
  int trials = 0;
  for (int n = 1; n <= 7; ++n) {
    for (int m = 1; m <= std::min(n, 5); ++m) {
      for (int rep = 0; rep < 6 && trials < 210; ++rep, ++trials) {
        Tensor<double> cost({n, m});
        for (auto& c : cost.v) c = rng.uniform() * 10.0 - 2.0;
        auto mr = hungarian_match(cost);
        double want = brute_force_total(cost);
        if (std::abs(mr.total_cost - want) > kTol)
          return {false, "solver total " + std::to_string(mr.total_cost) + " vs brute force " +
                             std::to_string(want)};
      }
    }
  }
  double secs = seconds_since(t0);
  if (secs >= kBudgetSec) return {false, "oracle sweep took " + std::to_string(secs) + "s"};
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d random assignments match brute force within 1e-9 (%.2fs)",
                trials, secs);
  return {true, buf};
}

// ---------------------------------------------------------------- criterion 3
ModelConfig gradcheck_config() {
  ModelConfig c;
  c.image_size = 32;
  c.channels = 8;
  c.num_queries = 3;
  c.num_blocks = 3;
  c.heads = 1;
  c.text_layers = 1;
  c.l_max = 4;
  c.ffn_mult = 2;
  return c;
}

double loss_value(const Model<double>& m, const GresSample& s, const LossConfig& lc) {
  Tape<double> tp;
  auto f = forward(tp, m, s);
  auto sl = total_loss(tp, m, f, s, lc);
  return tp.val(sl.total).v[0];
}

Outcome c3_gradcheck() {
  constexpr double kH = 1e-6;      // FD step, below typical kink distances
  constexpr double kRel = 1e-4;    // relative acceptance band
  constexpr double kAbs = 1e-7;    // absolute floor for near-zero gradients
  constexpr double kBudgetSec = 300.0;
  auto t0 = clk::now();

  DataConfig d;
  d.image_size = 32;
  d.min_size = 8;
  d.max_size = 12;
  d.max_shapes = 2;
  d.seed = 5;
  auto pool = build_split(d, "t", 128, 3);
  std::vector<GresSample> picks;
  for (const auto& s : pool)  // two target samples first, then one no-target
    if (!s.no_target && int(s.tokens.size()) <= 4 && picks.size() < 2) picks.push_back(s);
  for (const auto& s : pool)
    if (s.no_target && int(s.tokens.size()) <= 4 && picks.size() < 3) picks.push_back(s);
  if (picks.size() != 3) return {false, "could not assemble 3 short-expression samples"};

  LossConfig lc;
  int checked = 0;
  for (size_t si = 0; si < picks.size(); ++si) {
    auto m = make_model<double>(gradcheck_config(), Vocab::builtin().size(), 31 + uint64_t(si));
    const GresSample& s = picks[si];
    m.ps.zero_grads();
    {
      Tape<double> tp;
      auto f = forward(tp, m, s);
      auto sl = total_loss(tp, m, f, s, lc);
      tp.backward(sl.total);
      tp.export_param_grads();
    }
    Rng rng(71 + uint64_t(si));
    const auto& all = m.ps.all();
    for (size_t pi = 0; pi < all.size(); ++pi) {
      auto& p = *all[pi];
      std::vector<int64_t> elems = {0};
      if (p.value.numel() > 1) elems.push_back(p.value.numel() - 1);
      if (p.value.numel() > 2) elems.push_back(1 + int64_t(rng.uniform_int(int(p.value.numel() - 2))));
      for (int64_t e : elems) {
        double saved = p.value.v[size_t(e)];
        p.value.v[size_t(e)] = saved + kH;
        double lp = loss_value(m, s, lc);
        p.value.v[size_t(e)] = saved - kH;
        double lm = loss_value(m, s, lc);
        p.value.v[size_t(e)] = saved;
        double fd = (lp - lm) / (2.0 * kH);
        double g = p.grad.v[size_t(e)];
        ++checked;
        if (std::abs(fd - g) > kAbs + kRel * std::max(std::abs(fd), std::abs(g))) {
          char buf[192];
          std::snprintf(buf, sizeof buf, "sample %zu, %s[%lld]: fd %.8g vs analytic %.8g", si,
                        p.name.c_str(), (long long)e, fd, g);
          return {false, buf};
        }
      }
    }
  }
  double secs = seconds_since(t0);
  if (secs >= kBudgetSec) return {false, "gradient check took " + std::to_string(secs) + "s"};
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "%d finite-difference probes across every parameter on 3 samples "
                "(1 no-target) within rel 1e-4 (%.1fs)",
                checked, secs);
  return {true, buf};
}

// ---------------------------------------------------------------- criterion 4
Outcome c4_closed_forms() {
  // Phrase alignment on a single valid token: P equals that token's feature,
  // so the loss is 1 - cos(q, t) exactly.
  auto phrase_loss = [](double qx, double qy, double tx, double ty) {
    Tape<double> tp;
    int q = tp.leaf(Tensor<double>({1, 2}, {qx, qy}));
    int t = tp.leaf(Tensor<double>({1, 2}, {tx, ty}));
    auto a = align_queries(tp, q, t, {1});
    return tp.val(a.loss).v[0];
  };
  double identical = phrase_loss(1, 0, 1, 0);
  double orthogonal = phrase_loss(1, 0, 0, 1);
  double opposite = phrase_loss(1, 0, -1, 0);
  if (std::abs(identical - 0.0) > 1e-6 || std::abs(orthogonal - 1.0) > 1e-6 ||
      std::abs(opposite - 2.0) > 1e-6)
    return {false, "phrase losses " + std::to_string(identical) + "/" +
                       std::to_string(orthogonal) + "/" + std::to_string(opposite) +
                       " not {0,1,2}"};

  // BCE at p = 0.5 is ln 2 regardless of the target.
  double bce;
  {
    Tape<double> tp;
    int p = tp.leaf(Tensor<double>({1}, {0.5}));
    bce = tp.val(tp.mean_all(tp.bce_prob(p, Tensor<double>({1}, {1.0})))).v[0];
  }
  if (std::abs(bce - 0.693147) > 1e-6)
    return {false, "BCE(0.5) = " + std::to_string(bce)};

  // Aggregation closed forms: all-zero scores give sigmoid(0) = 0.5, and the
  // pinned example sigmoid(1 * PReLU_0.25(-1)) = 0.4378.
  ModelConfig cfg;
  double empty_prob, example_prob;
  {
    ParamStore<double> ps;
    auto mp = make_merge(ps, cfg);
    Tape<double> tp;
    int p_hat = tp.leaf(Tensor<double>::zeros({4}));
    int s = tp.leaf(Tensor<double>({4, 2}, {1.0, -2.0, 0.5, 3.0, -1.0, 0.25, 2.0, -0.5}));
    auto mg = adaptive_merge(tp, p_hat, MaskLogits{s, 1, 2}, mp);
    empty_prob = tp.val(mg.prob).v[0];
  }
  {
    ParamStore<double> ps;
    auto mp = make_merge(ps, cfg);
    Tape<double> tp;
    int p_hat = tp.leaf(Tensor<double>({1}, {1.0}));
    int s = tp.leaf(Tensor<double>({1, 1}, {-1.0}));
    auto mg = adaptive_merge(tp, p_hat, MaskLogits{s, 1, 1}, mp);
    example_prob = tp.val(mg.prob).v[0];
  }
  if (std::abs(empty_prob - 0.5) > 1e-9)
    return {false, "empty-sum pixel probability " + std::to_string(empty_prob)};
  if (std::abs(example_prob - 0.4378) > 1e-4)
    return {false, "PReLU example probability " + std::to_string(example_prob)};
  return {true, "phrase {0,1,2}, BCE(0.5)=ln2, empty-sum 0.5, PReLU example 0.4378"};
}

// ---------------------------------------------------------------- criterion 5
Mask mask_with(int h, int w, const std::vector<int>& on) {
  Mask m({h, w});
  for (int i : on) m.v[size_t(i)] = 1;
  return m;
}

EvalRecord rec_iou(int inter, int uni, bool gt_nt = false, bool pred_empty = false) {
  // Build a 1x16 pair with the requested intersection/union in pixels.
  std::vector<int> gt_on, pred_on;
  for (int i = 0; i < inter; ++i) {
    gt_on.push_back(i);
    pred_on.push_back(i);
  }
  int extra = uni - inter;
  for (int i = 0; i < extra; ++i) pred_on.push_back(inter + i);
  if (pred_empty) pred_on.clear();
  return make_eval_record(mask_with(1, 16, pred_on), mask_with(1, 16, gt_on), gt_nt);
}

Outcome c5_metric_oracle() {
  constexpr double kTol = 1e-9;
  // iou: pred 2 px, gt 2 px, overlap 1 -> 1/3.
  double v = iou(mask_with(1, 8, {0, 1}), mask_with(1, 8, {1, 2}));
  if (std::abs(v - 1.0 / 3.0) > kTol) return {false, "iou " + std::to_string(v)};

  // ciou: (1,3) + (1,3) -> 1/3.
  std::vector<EvalRecord> rs = {rec_iou(1, 3), rec_iou(1, 3)};
  if (std::abs(ciou(rs) - 1.0 / 3.0) > kTol) return {false, "ciou " + std::to_string(ciou(rs))};

  // giou: IoUs 0.5 and 1.0 -> 0.75; no-target contributes 1 or 0 by the rule.
  rs = {rec_iou(2, 4), rec_iou(6, 6)};
  if (std::abs(giou(rs) - 0.75) > kTol) return {false, "giou " + std::to_string(giou(rs))};
  rs = {rec_iou(0, 0, true, true)};  // correct no-target
  if (std::abs(giou(rs) - 1.0) > kTol) return {false, "giou nt-correct " + std::to_string(giou(rs))};
  rs = {rec_iou(0, 2, true, false)};  // hallucinated mask on a no-target
  if (std::abs(giou(rs) - 0.0) > kTol) return {false, "giou nt-wrong " + std::to_string(giou(rs))};

  // n_acc: 4 gt no-target, 3 predicted empty -> 0.75.
  rs = {rec_iou(0, 0, true, true), rec_iou(0, 0, true, true), rec_iou(0, 0, true, true),
        rec_iou(0, 2, true, false)};
  if (std::abs(n_acc(rs) - 0.75) > kTol) return {false, "n_acc " + std::to_string(n_acc(rs))};

  // refzom: (2,4) and (6,6) -> mIoU 0.75, oIoU 0.8; a single 0.6 sample gives
  // both, and no-target decisions feed Acc only.
  rs = {rec_iou(2, 4), rec_iou(6, 6)};
  auto rz = refzom_metrics(rs);
  if (!rz.miou || std::abs(*rz.miou - 0.75) > kTol)
    return {false, "refzom mIoU " + std::to_string(rz.miou.value_or(-1))};
  if (!rz.oiou || std::abs(*rz.oiou - 0.8) > kTol)
    return {false, "refzom oIoU " + std::to_string(rz.oiou.value_or(-1))};
  rs = {rec_iou(3, 5)};
  rz = refzom_metrics(rs);
  if (!rz.miou || std::abs(*rz.miou - 0.6) > kTol || std::abs(*rz.oiou - 0.6) > kTol)
    return {false, "refzom single-sample 0.6 failed"};
  return {true, "iou/ciou/giou/n_acc/refzom hand examples exact within 1e-9"};
}

// --------------------------------------------------------- criteria 6, 7, 8
Config toy_config(uint64_t seed) {
  Config c;  // defaults are the toy scale with the pinned loss weights
  c.train.epochs = 300;
  c.train.batch_size = 8;
  c.train.lr_start = 1e-3;
  c.train.lr_end = 1e-4;
  c.train.seed = seed;
  return c;
}

struct OverfitRun {
  TrainState st;
  double train_giou = 0.0, train_nacc = 0.0;
  int epochs = 0;
  double secs = 0.0;
};

// Train until the criterion-6 targets are met or the 300-epoch budget runs
// out, in 10-epoch chunks (the schedule is fixed by the config, so chunking
// does not change the trajectory).
OverfitRun run_overfit(const Config& cfg, const std::vector<GresSample>& corpus) {
  OverfitRun r{make_train_state(cfg, Vocab::builtin().size())};
  auto t0 = clk::now();
  while (r.st.epoch < cfg.train.epochs) {
    auto logs = train(r.st, corpus, "", 10);
    const auto& e = logs.back();
    r.train_giou = e.train_giou;
    r.train_nacc = e.train_nacc;
    r.epochs = e.epoch;
    if (e.train_giou >= 0.90 && e.train_nacc >= 0.95) break;
  }
  r.secs = seconds_since(t0);
  return r;
}

double val_giou(const TrainState& st, const std::vector<GresSample>& val) {
  std::vector<EvalRecord> recs;
  recs.reserve(val.size());
  for (const auto& s : val) recs.push_back(evaluate_sample(st.model, s));
  return giou(recs);
}

double median3(double a, double b, double c) {
  std::vector<double> v = {a, b, c};
  std::sort(v.begin(), v.end());
  return v[1];
}

// ---------------------------------------------------------------- criterion 9
Outcome c9_determinism(const TrainState& trained) {
  Config cfg;
  cfg.model.image_size = 32;
  cfg.model.channels = 8;
  cfg.model.num_queries = 4;
  cfg.model.num_blocks = 3;
  cfg.model.heads = 1;
  cfg.model.text_layers = 1;
  cfg.model.l_max = 6;
  cfg.model.ffn_mult = 2;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 2;
  cfg.train.seed = 13;
  DataConfig d;
  d.image_size = 32;
  d.min_size = 8;
  d.max_size = 12;
  d.max_shapes = 2;
  d.seed = 5;
  auto corpus = build_split(d, "t", 6, 3);

  auto a = make_train_state(cfg, Vocab::builtin().size());
  auto b = make_train_state(cfg, Vocab::builtin().size());
  auto la = train(a, corpus);
  auto lb = train(b, corpus);
  if (la[0].loss_total != lb[0].loss_total || la[1].loss_total != lb[1].loss_total)
    return {false, "repeated runs disagree on epoch losses"};

  // Checkpoint round trip on the real trained state: save -> load -> save
  // must be byte-identical.
  fs::path p1 = fs::temp_directory_path() / "poseg_accept_a.ckpt";
  fs::path p2 = fs::temp_directory_path() / "poseg_accept_b.ckpt";
  save_checkpoint(trained, p1.string());
  auto ld = load_checkpoint(p1.string());
  save_checkpoint(ld, p2.string());
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
  };
  bool same = slurp(p1) == slurp(p2);
  fs::remove(p1);
  fs::remove(p2);
  if (!same) return {false, "checkpoint round trip is not byte-identical"};
  return {true, "identical seeds reproduce epoch losses exactly; checkpoint round-trips bitwise"};
}

// --------------------------------------------------------------- criterion 10
Outcome c10_invariants() {
  Rng rng(555);

  // Masked softmax rows sum to 1 over the valid positions.
  for (int rep = 0; rep < 20; ++rep) {
    Tape<double> tp;
    Tensor<double> a({6, 9});
    for (auto& x : a.v) x = rng.uniform() * 8.0 - 4.0;
    std::vector<uint8_t> valid(9, 0);
    int nv = 1 + int(rng.uniform_int(9));
    for (int i = 0; i < nv; ++i) valid[size_t(i)] = 1;
    int sm = tp.softmax_rows(tp.leaf(std::move(a)), valid);
    const auto& sv = tp.val(sm);
    for (int r = 0; r < 6; ++r) {
      double sum = 0;
      for (int c2 = 0; c2 < 9; ++c2) sum += sv.at(r, c2);
      if (std::abs(sum - 1.0) > 1e-12) return {false, "softmax row sum " + std::to_string(sum)};
    }
  }

  // Phrase loss is invariant to positive rescaling of the queries.
  for (int rep = 0; rep < 20; ++rep) {
    Tensor<double> q({2, 4}), t({3, 4});
    for (auto& x : q.v) x = rng.uniform() * 2.0 - 1.0;
    for (auto& x : t.v) x = rng.uniform() * 2.0 - 1.0;
    Tensor<double> qs = q;
    for (auto& x : qs.v) x *= 3.7;
    // Rescaling changes R = softmax(QK^T), so compare the cosine step alone:
    // P fixed, Q rescaled.
    Tape<double> tp3;
    int p3 = tp3.leaf(t);
    double l1 = tp3.val(phrase_alignment_loss(tp3, p3, tp3.leaf(q))).v[0];
    Tape<double> tp4;
    int p4 = tp4.leaf(t);
    double l2 = tp4.val(phrase_alignment_loss(tp4, p4, tp4.leaf(qs))).v[0];
    if (std::abs(l1 - l2) > 1e-9) return {false, "cosine not scale invariant"};
  }

  // Hungarian assignment is invariant to per-column constant shifts.
  for (int rep = 0; rep < 20; ++rep) {
    Tensor<double> cost({5, 3});
    for (auto& x : cost.v) x = rng.uniform() * 6.0;
    auto base = hungarian_match(cost);
    Tensor<double> shifted = cost;
    double total_shift = 0;
    for (int j = 0; j < 3; ++j) {
      double sft = rng.uniform() * 4.0 - 2.0;
      total_shift += sft;
      for (int i = 0; i < 5; ++i) shifted.at(i, j) += sft;
    }
    auto moved = hungarian_match(shifted);
    if (base.omega != moved.omega) return {false, "column shift changed the assignment"};
    if (std::abs(moved.total_cost - base.total_cost - total_shift) > 1e-9)
      return {false, "column shift broke the total"};
  }

  // Split metrics are order invariant.
  {
    std::vector<EvalRecord> rs = {rec_iou(1, 3), rec_iou(2, 4), rec_iou(6, 6),
                                  rec_iou(0, 0, true, true), rec_iou(0, 2, true, false)};
    double c0 = ciou(rs), g0 = giou(rs);
    std::reverse(rs.begin(), rs.end());
    if (ciou(rs) != c0) return {false, "ciou changed under reordering"};
    if (std::abs(giou(rs) - g0) > 1e-12) return {false, "giou changed under reordering"};
  }

  // adaptive_merge is monotone: raising a query's score moves each pixel's
  // probability in the direction of that query's PReLU'd logit sign.
  {
    ModelConfig cfg;
    ParamStore<double> ps;
    auto mp = make_merge(ps, cfg);
    Tensor<double> s({2, 4}, {1.5, -2.0, 0.5, -0.25, 0.75, 1.0, -1.0, 2.0});
    Tensor<double> p0({2}, {0.3, 0.6});
    Tensor<double> p1 = p0;
    p1.v[0] = 0.8;  // raise query 0 only
    Tape<double> ta;
    auto ma = adaptive_merge(ta, ta.leaf(p0), MaskLogits{ta.leaf(s), 1, 4}, mp);
    Tape<double> tb;
    auto mb = adaptive_merge(tb, tb.leaf(p1), MaskLogits{tb.leaf(s), 1, 4}, mp);
    for (int x = 0; x < 4; ++x) {
      double da = ta.val(ma.prob).v[size_t(x)];
      double db = tb.val(mb.prob).v[size_t(x)];
      bool positive = s.at(0, x) > 0;
      if (positive && db <= da) return {false, "merge not increasing at a positive logit"};
      if (!positive && db >= da) return {false, "merge not decreasing at a negative logit"};
    }
  }

  // Zero output projections make every decoder block an identity on the
  // queries (pre-norm residual form).
  {
    auto m = make_model<double>(gradcheck_config(), Vocab::builtin().size(), 77);
    for (const auto& p : m.ps.all()) {
      bool zero_it = p->name.rfind("dec.", 0) == 0 &&
                     (p->name.find(".o.w") != std::string::npos ||
                      p->name.find(".o.b") != std::string::npos ||
                      p->name.find("ffn.out") != std::string::npos);
      if (zero_it)
        for (auto& x : p->value.v) x = 0.0;
    }
    DataConfig d;
    d.image_size = 32;
    d.min_size = 8;
    d.max_size = 12;
    d.max_shapes = 2;
    d.seed = 5;
    auto pool = build_split(d, "t", 16, 3);
    size_t pick = 0;
    while (pick < pool.size() && int(pool[pick].tokens.size()) > 4) ++pick;
    if (pick == pool.size()) return {false, "no short-expression sample for identity check"};
    const GresSample& sample = pool[pick];
    Tape<double> tp;
    tp.grad_enabled = false;
    auto f = forward(tp, m, sample);
    const auto& q0 = tp.val(f.trace.q0);
    const auto& qk = tp.val(f.trace.q_final());
    for (size_t i = 0; i < q0.v.size(); ++i)
      if (q0.v[i] != qk.v[i]) return {false, "zeroed blocks are not an identity"};
  }

  return {true, "softmax sums, cosine scale invariance, column-shift invariance, metric "
                "permutation invariance, merge monotonicity, residual identity"};
}

void report(int id, const char* label, const Outcome& o, int& failures) {
  std::printf("%s  criterion %2d  %s — %s\n", o.pass ? "PASS" : "FAIL", id, label,
              o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

}  // namespace

int main() {
  int failures = 0;
  report(1, "desk-scale substitution", c1_pinned_defaults(), failures);
  report(2, "matching oracle", c2_matching_oracle(), failures);
  report(3, "end-to-end gradient check", c3_gradcheck(), failures);
  report(4, "closed-form loss values", c4_closed_forms(), failures);
  report(5, "metric oracle", c5_metric_oracle(), failures);

  // Shared corpora for the training criteria.
  DataConfig d;  // toy-scale data: 64 px, 25% no-target, 40% multi
  auto train_split = build_split(d, "train", 50, 1);
  auto val_split = build_split(d, "val", 100, 2);

  // Criterion 6: overfit to the 50-sample train split.
  constexpr double kOverfitBudgetSec = 1800.0;
  auto full1 = run_overfit(toy_config(1), train_split);
  {
    bool ok = full1.train_giou >= 0.90 && full1.train_nacc >= 0.95 &&
              full1.epochs <= 300 && full1.secs < kOverfitBudgetSec;
    char buf[192];
    std::snprintf(buf, sizeof buf,
                  "seed 1: train gIoU %.4f (>= 0.90), N-acc %.4f (>= 0.95) at epoch %d "
                  "(<= 300) in %.0fs (< 1800s)",
                  full1.train_giou, full1.train_nacc, full1.epochs, full1.secs);
    report(6, "toy overfit", {ok, buf}, failures);
  }

  // Criterion 7: held-out generalization, median of 3 seeds.
  auto full2 = run_overfit(toy_config(2), train_split);
  auto full3 = run_overfit(toy_config(3), train_split);
  double v1 = val_giou(full1.st, val_split);
  double v2 = val_giou(full2.st, val_split);
  double v3 = val_giou(full3.st, val_split);
  double full_median = median3(v1, v2, v3);
  {
    bool ok = full_median >= 0.55;
    char buf[160];
    std::snprintf(buf, sizeof buf, "val gIoU %.4f/%.4f/%.4f, median %.4f (>= 0.55)", v1, v2, v3,
                  full_median);
    report(7, "generalization smoke", {ok, buf}, failures);
  }

  // Criterion 8: removing instance supervision must not beat the full model.
  auto ablate = [&](uint64_t seed) {
    Config cfg = toy_config(seed);
    cfg.loss.lambda_inst = 0.0;
    return run_overfit(cfg, train_split);
  };
  auto a1 = ablate(1);
  auto a2 = ablate(2);
  auto a3 = ablate(3);
  double w1 = val_giou(a1.st, val_split);
  double w2 = val_giou(a2.st, val_split);
  double w3 = val_giou(a3.st, val_split);
  double abl_median = median3(w1, w2, w3);
  {
    bool ok = abl_median <= full_median;
    char buf[192];
    std::snprintf(buf, sizeof buf,
                  "lambda_inst=0 val gIoU %.4f/%.4f/%.4f, median %.4f vs full %.4f "
                  "(must not exceed)",
                  w1, w2, w3, abl_median, full_median);
    report(8, "ablation direction", {ok, buf}, failures);
  }

  report(9, "determinism", c9_determinism(full1.st), failures);
  report(10, "invariant suite", c10_invariants(), failures);

  std::printf("%s: %d of 10 criteria passed\n", failures == 0 ? "ACCEPTED" : "REJECTED",
              10 - failures);
  return failures == 0 ? 0 : 1;
}
