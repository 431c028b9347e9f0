#include "poseg/train.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "poseg/metrics.hpp"

namespace poseg {

namespace {

// Aborts on the first non-finite loss component so a diverging run fails
// loudly at the offending sample instead of poisoning the parameters.
void require_finite(const char* name, double value, int epoch, const std::string& sample_id) {
  if (std::isfinite(value)) return;
  throw NonFiniteLoss(std::string(name) + " is non-finite at epoch " + std::to_string(epoch + 1) +
                      ", sample " + sample_id);
}

}  // namespace

TrainState make_train_state(const Config& cfg, int vocab_size) {
  cfg.validate();
  TrainState st;
  st.cfg = cfg;
  st.model = make_model<float>(cfg.model, vocab_size, cfg.train.seed);
  for (const auto& p : st.model.ps.all()) {
    st.opt.m.push_back(Tensor<float>::zeros(p->value.shape));
    st.opt.v.push_back(Tensor<float>::zeros(p->value.shape));
  }
  return st;
}

double lr_at(const TrainConfig& tc, int epoch) {
  if (tc.epochs <= 1) return tc.lr_start;
  double f = double(epoch) / double(tc.epochs - 1);
  return tc.lr_start + (tc.lr_end - tc.lr_start) * f;
}

void adamw_step(Model<float>& model, AdamMoments& opt, const TrainConfig& tc, double lr) {
  const auto& params = model.ps.all();
  if (opt.m.size() != params.size() || opt.v.size() != params.size())
    throw Error("optimizer moments do not match the parameter store");
  ++opt.step;
  const double bc1 = 1.0 - std::pow(tc.beta1, double(opt.step));
  const double bc2 = 1.0 - std::pow(tc.beta2, double(opt.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Param<float>& p = *params[i];
    Tensor<float>& mt = opt.m[i];
    Tensor<float>& vt = opt.v[i];
    for (int64_t k = 0; k < p.value.numel(); ++k) {
      const double g = double(p.grad.v[size_t(k)]);
      const double m0 = double(mt.v[size_t(k)]);
      const double v0 = double(vt.v[size_t(k)]);
      if (g == 0.0 && m0 == 0.0 && v0 == 0.0) continue;
      const double m1 = tc.beta1 * m0 + (1.0 - tc.beta1) * g;
      const double v1 = tc.beta2 * v0 + (1.0 - tc.beta2) * g * g;
      mt.v[size_t(k)] = float(m1);
      vt.v[size_t(k)] = float(v1);
      double upd = (m1 / bc1) / (std::sqrt(v1 / bc2) + tc.adam_eps);
      if (p.decay) upd += tc.weight_decay * double(p.value.v[size_t(k)]);
      p.value.v[size_t(k)] = float(double(p.value.v[size_t(k)]) - lr * upd);
    }
  }
}

json epoch_log_json(const EpochLog& e) {
  json j{{"epoch", e.epoch},           {"lr", e.lr},
         {"loss_total", e.loss_total}, {"loss_merged", e.loss_merged},
         {"loss_inst", e.loss_inst},   {"loss_nt", e.loss_nt},
         {"train_gIoU", e.train_giou}};
  j["train_Nacc"] = std::isnan(e.train_nacc) ? json(nullptr) : json(e.train_nacc);
  return j;
}

std::vector<EpochLog> train(TrainState& st, const std::vector<GresSample>& corpus,
                            const std::string& log_path, int stop_after) {
  st.cfg.validate();
  if (corpus.empty()) throw EmptySplit("training corpus");
  const TrainConfig& tc = st.cfg.train;
  const int last_epoch =
      stop_after < 0 ? tc.epochs : std::min(tc.epochs, st.epoch + stop_after);

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, st.epoch == 0 ? std::ios::trunc : std::ios::app);
    if (!log) throw MissingFile("cannot open training log: " + log_path);
  }

  std::vector<EpochLog> out;
  for (int epoch = st.epoch; epoch < last_epoch; ++epoch) {
    const double lr = lr_at(tc, epoch);
    std::vector<int> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = Rng(tc.seed).fork(uint64_t(epoch) + 1);
    shuffle_rng.shuffle(order);

    double sum_total = 0, sum_merged = 0, sum_inst = 0, sum_nt = 0;
    for (size_t b0 = 0; b0 < order.size(); b0 += size_t(tc.batch_size)) {
      const size_t b1 = std::min(order.size(), b0 + size_t(tc.batch_size));
      st.model.ps.zero_grads();
      for (size_t k = b0; k < b1; ++k) {
        const GresSample& s = corpus[size_t(order[k])];
        Tape<float> tp;
        Forward<float> f = forward(tp, st.model, s);
        SampleLoss sl = total_loss(tp, st.model, f, s, st.cfg.loss);
        const double merged = double(tp.val(sl.merged).v[0]);
        const double inst = double(tp.val(sl.inst).v[0]);
        const double nt = double(tp.val(sl.nt).v[0]);
        const double total = double(tp.val(sl.total).v[0]);
        require_finite("loss_merged", merged, epoch, s.id);
        require_finite("loss_inst", inst, epoch, s.id);
        require_finite("loss_nt", nt, epoch, s.id);
        require_finite("loss_total", total, epoch, s.id);
        sum_merged += merged;
        sum_inst += inst;
        sum_nt += nt;
        sum_total += total;
        // Average the batch gradient by scaling each sample's root.
        tp.backward(tp.scale(sl.total, 1.0 / double(b1 - b0)));
        tp.export_param_grads();
      }
      adamw_step(st.model, st.opt, tc, lr);
    }

    EpochLog e;
    e.epoch = epoch + 1;
    e.lr = lr;
    const double n = double(corpus.size());
    e.loss_total = sum_total / n;
    e.loss_merged = sum_merged / n;
    e.loss_inst = sum_inst / n;
    e.loss_nt = sum_nt / n;

    std::vector<EvalRecord> recs;
    recs.reserve(corpus.size());
    bool has_nt = false;
    for (const GresSample& s : corpus) {
      recs.push_back(evaluate_sample(st.model, s));
      has_nt |= s.no_target;
    }
    e.train_giou = giou(recs);
    e.train_nacc = has_nt ? n_acc(recs) : std::nan("");

    if (log.is_open()) log << epoch_log_json(e).dump() << "\n" << std::flush;
    out.push_back(e);
    st.epoch = epoch + 1;
  }
  return out;
}

}  // namespace poseg
