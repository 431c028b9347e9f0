#pragma once

#include <string>
#include <vector>

#include "poseg/config.hpp"
#include "poseg/model.hpp"

// Minibatch AdamW training with a linear learning-rate schedule and per-epoch
// JSONL telemetry. Single-threaded by contract: that is what makes runs
// bit-reproducible for a fixed seed.
namespace poseg {

// First/second moments parallel to the parameter registration order.
struct AdamMoments {
  std::vector<Tensor<float>> m, v;
  int64_t step = 0;
};

// Everything a training run owns and a checkpoint round-trips.
struct TrainState {
  Config cfg;
  Model<float> model;
  AdamMoments opt;
  int epoch = 0;  // completed epochs
};

TrainState make_train_state(const Config& cfg, int vocab_size);

// Learning rate for a 0-based epoch index: linear from lr_start at epoch 0 to
// lr_end at the final epoch; a single-epoch run uses lr_start.
double lr_at(const TrainConfig& tc, int epoch);

// One decoupled-decay AdamW step over the gradients accumulated in the
// parameter store. An element whose gradient and both moments are all exactly
// zero is skipped entirely, decay included: parameters outside the batch's
// graph (unused vocabulary rows, frozen ablation constants) stay put, and a
// loss whose weights are all zero is a true no-op.
void adamw_step(Model<float>& model, AdamMoments& opt, const TrainConfig& tc, double lr);

// One epoch's telemetry. Losses are means over the epoch's samples with
// unweighted components; the metrics come from a full inference pass over the
// training corpus after the epoch's updates.
struct EpochLog {
  int epoch = 0;  // 1-based, the epoch just completed
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_merged = 0.0;
  double loss_inst = 0.0;
  double loss_nt = 0.0;
  double train_giou = 0.0;
  double train_nacc = 0.0;  // NaN when the corpus has no no-target samples
};

// {"epoch", "lr", "loss_total", ..., "train_gIoU", "train_Nacc"}; a NaN
// train_nacc serializes as null.
json epoch_log_json(const EpochLog& e);

// Runs epochs [state.epoch, cfg.train.epochs), updating the state in place.
// Appends one JSONL record per epoch to log_path when nonempty (truncating
// first when starting from epoch 0). A nonnegative stop_after caps how many
// epochs this call executes without touching the schedule, so callers can
// train in chunks (for early stopping) and still land on the same bits as an
// uninterrupted run. Throws NonFiniteLoss naming the first component that
// goes non-finite, and EmptySplit for an empty corpus.
std::vector<EpochLog> train(TrainState& state, const std::vector<GresSample>& corpus,
                            const std::string& log_path = "", int stop_after = -1);

}  // namespace poseg
