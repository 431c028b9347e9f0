#include "poseg/metrics.hpp"

#include <utility>

namespace poseg {

namespace {

// Intersection and union pixel counts for one pair.
std::pair<int64_t, int64_t> overlap(const Mask& pred, const Mask& gt) {
  if (!pred.same_shape(gt))
    throw ShapeMismatch("iou: pred " + pred.shape_str() + " vs gt " + gt.shape_str());
  int64_t inter = 0, uni = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    bool p = pred.v[size_t(i)] != 0;
    bool g = gt.v[size_t(i)] != 0;
    inter += (p && g) ? 1 : 0;
    uni += (p || g) ? 1 : 0;
  }
  return {inter, uni};
}

void require_nonempty(const std::vector<EvalRecord>& records, const char* what) {
  if (records.empty()) throw EmptySplit(what);
}

}  // namespace

EvalRecord make_eval_record(Mask pred, Mask gt, bool gt_no_target) {
  EvalRecord r;
  r.pred_no_target = mask_area(pred) == 0;
  r.pred = std::move(pred);
  r.gt = std::move(gt);
  r.gt_no_target = gt_no_target;
  return r;
}

double iou(const Mask& pred, const Mask& gt) {
  auto [inter, uni] = overlap(pred, gt);
  if (uni == 0) return 1.0;
  return double(inter) / double(uni);
}

double ciou(const std::vector<EvalRecord>& records) {
  require_nonempty(records, "ciou");
  int64_t inter = 0, uni = 0;
  for (const auto& r : records) {
    auto [i, u] = overlap(r.pred, r.gt);
    inter += i;
    uni += u;
  }
  if (uni == 0) return 1.0;
  return double(inter) / double(uni);
}

double giou(const std::vector<EvalRecord>& records) {
  require_nonempty(records, "giou");
  double sum = 0.0;
  for (const auto& r : records) {
    if (r.gt_no_target)
      sum += r.pred_no_target ? 1.0 : 0.0;
    else
      sum += iou(r.pred, r.gt);
  }
  return sum / double(records.size());
}

double n_acc(const std::vector<EvalRecord>& records) {
  int64_t total = 0, correct = 0;
  for (const auto& r : records) {
    if (!r.gt_no_target) continue;
    ++total;
    correct += r.pred_no_target ? 1 : 0;
  }
  if (total == 0) throw NoNoTargetSamples("split has no ground-truth no-target samples");
  return double(correct) / double(total);
}

RefZomResult refzom_metrics(const std::vector<EvalRecord>& records) {
  require_nonempty(records, "refzom_metrics");
  RefZomResult out;
  double iou_sum = 0.0;
  int64_t targets = 0, inter = 0, uni = 0;
  int64_t nt_total = 0, nt_correct = 0;
  for (const auto& r : records) {
    if (r.gt_no_target) {
      ++nt_total;
      nt_correct += r.pred_no_target ? 1 : 0;
      continue;
    }
    ++targets;
    auto [i, u] = overlap(r.pred, r.gt);
    iou_sum += u == 0 ? 1.0 : double(i) / double(u);
    inter += i;
    uni += u;
  }
  if (targets > 0) {
    out.miou = iou_sum / double(targets);
    out.oiou = uni == 0 ? 1.0 : double(inter) / double(uni);
  }
  if (nt_total > 0) out.acc = double(nt_correct) / double(nt_total);
  return out;
}

}  // namespace poseg
