#pragma once

#include <optional>
#include <vector>

#include "poseg/sample.hpp"

// Evaluation suite for generalized referring segmentation. Two protocol
// families share the same per-sample records: cumulative/generalized IoU with
// no-target accuracy, and the target-only mean/overall IoU variant whose
// no-target accuracy may be undefined for a split.
namespace poseg {

// One evaluated sample. "Predicted no-target" is a fact about the emitted
// mask -- it is true exactly when the final mask is all-zero, regardless of
// which mechanism zeroed it.
struct EvalRecord {
  Mask pred;
  Mask gt;
  bool gt_no_target = false;
  bool pred_no_target = false;
};

// Builds a record from the final output mask, deriving pred_no_target.
EvalRecord make_eval_record(Mask pred, Mask gt, bool gt_no_target);

// |pred AND gt| / |pred OR gt|; 1.0 when both masks are empty.
double iou(const Mask& pred, const Mask& gt);

// Total intersection over total union across the split. Both-empty pairs add
// zero to both sums; a split whose total union is zero scores 1.0.
double ciou(const std::vector<EvalRecord>& records);

// Mean per-sample score: IoU for target samples; for ground-truth no-target
// samples, 1.0 when the prediction is empty and 0.0 otherwise.
double giou(const std::vector<EvalRecord>& records);

// Fraction of ground-truth no-target samples predicted as no-target.
double n_acc(const std::vector<EvalRecord>& records);

// Target-only protocol. Fields are empty when their sample population is
// (mIoU/oIoU need a target sample, acc needs a no-target sample).
struct RefZomResult {
  std::optional<double> miou;
  std::optional<double> oiou;
  std::optional<double> acc;
};

RefZomResult refzom_metrics(const std::vector<EvalRecord>& records);

}  // namespace poseg
