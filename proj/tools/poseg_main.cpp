#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "poseg/checkpoint.hpp"
#include "poseg/corpus_io.hpp"
#include "poseg/metrics.hpp"
#include "poseg/model.hpp"
#include "poseg/png_io.hpp"
#include "poseg/synth.hpp"
#include "poseg/train.hpp"
#include "poseg/vocab.hpp"

// Command-line surface: corpus generation, training, evaluation and
// visualization in one binary. Exit codes: 0 success, 1 runtime failure,
// 2 argument or validation failure. Everything chatty goes to stderr; the
// only stdout contract is cmd_eval's single JSON object.
namespace {

using namespace poseg;
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

struct GenArgs {
  std::string out;
  int num_train = 0;
  int num_val = 0;
  uint64_t seed = 0;
  int image_size = 64;
  double no_target_frac = 0.25;
};

struct TrainArgs {
  std::string data, config, out, log;
  int epochs = -1;  // <0: keep the config's value
};

struct EvalArgs {
  std::string data, ckpt, split = "val", protocol = "grefcoco";
};

struct VisArgs {
  std::string ckpt, data, sample, out;
};

int cmd_gen_data(const GenArgs& a) {
  DataConfig d;
  d.num_train = a.num_train;
  d.num_val = a.num_val;
  d.seed = a.seed;
  d.image_size = a.image_size;
  d.no_target_frac = a.no_target_frac;
  try {
    d.validate();
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  auto report = [](const char* name, const std::vector<GresSample>& split) {
    auto st = split_stats(split);
    std::cerr << name << ": " << st.n << " samples (" << st.single << " single, " << st.multi
              << " multi, " << st.no_target << " no-target)\n";
  };
  std::map<std::string, std::vector<GresSample>> splits;
  splits["train"] = build_split(d, "train", d.num_train, 1);
  splits["val"] = build_split(d, "val", d.num_val, 2);
  report("train", splits["train"]);
  report("val", splits["val"]);
  save_corpus(a.out, d.image_size, splits);
  std::cerr << "corpus written to " << a.out << "\n";
  return 0;
}

int cmd_train(const TrainArgs& a) {
  if (!fs::exists(a.config)) {
    std::cerr << "config file not found: " << a.config << "\n";
    return 2;
  }
  Config cfg;
  try {
    cfg = load_config(a.config);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  if (a.epochs >= 0) cfg.train.epochs = a.epochs;

  int corpus_size = corpus_image_size(a.data);
  if (corpus_size != cfg.model.image_size)
    throw VersionMismatch("corpus image size " + std::to_string(corpus_size) +
                          " does not match model image size " +
                          std::to_string(cfg.model.image_size));
  auto corpus = load_corpus(a.data, "train", cfg.model.l_max);
  std::cerr << "training on " << corpus.size() << " samples for " << cfg.train.epochs
            << " epochs\n";

  std::string log_path = a.log.empty() ? a.out + ".log.jsonl" : a.log;
  auto st = make_train_state(cfg, Vocab::builtin().size());
  auto logs = train(st, corpus, log_path);
  for (const auto& e : logs)
    std::cerr << "epoch " << e.epoch << ": loss " << e.loss_total << ", train gIoU "
              << e.train_giou << "\n";
  save_checkpoint(st, a.out);
  std::cerr << "checkpoint written to " << a.out << " (log: " << log_path << ")\n";
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  auto st = load_checkpoint(a.ckpt);
  int corpus_size = corpus_image_size(a.data);
  if (corpus_size != st.cfg.model.image_size)
    throw VersionMismatch("corpus image size " + std::to_string(corpus_size) +
                          " does not match checkpoint image size " +
                          std::to_string(st.cfg.model.image_size));
  auto corpus = load_corpus(a.data, a.split, st.cfg.model.l_max);

  std::vector<EvalRecord> rs;
  rs.reserve(corpus.size());
  bool any_nt = false;
  for (const auto& s : corpus) {
    rs.push_back(evaluate_sample(st.model, s));
    any_nt = any_nt || s.no_target;
  }
  std::cerr << "evaluated " << rs.size() << " " << a.split << " samples\n";

  ojson out;
  out["split"] = a.split;
  out["n"] = rs.size();
  out["cIoU"] = nullptr;
  out["gIoU"] = nullptr;
  out["N_acc"] = nullptr;
  out["mIoU"] = nullptr;
  out["oIoU"] = nullptr;
  out["Acc"] = nullptr;
  if (a.protocol == "grefcoco") {
    out["cIoU"] = ciou(rs);
    out["gIoU"] = giou(rs);
    if (any_nt) out["N_acc"] = n_acc(rs);
  } else {
    auto rz = refzom_metrics(rs);
    if (rz.miou) out["mIoU"] = *rz.miou;
    if (rz.oiou) out["oIoU"] = *rz.oiou;
    if (rz.acc) out["Acc"] = *rz.acc;
  }
  std::cout << out.dump() << "\n";
  return 0;
}

// Grayscale heatmap: probability 0..1 mapped to 0..255.
Tensor<uint8_t> heat_png(const float* prob, int h, int w) {
  Tensor<uint8_t> img({1, h, w});
  for (int64_t i = 0; i < int64_t(h) * w; ++i) {
    float p = std::clamp(prob[size_t(i)], 0.0f, 1.0f);
    img.v[size_t(i)] = uint8_t(std::lround(p * 255.0));
  }
  return img;
}

int cmd_visualize(const VisArgs& a) {
  auto st = load_checkpoint(a.ckpt);
  const Vocab& vocab = Vocab::builtin();

  GresSample sample;
  bool found = false;
  for (const auto& split : corpus_splits(a.data)) {
    for (auto& s : load_corpus(a.data, split, st.cfg.model.l_max)) {
      if (s.id == a.sample) {
        sample = std::move(s);
        found = true;
        break;
      }
    }
    if (found) break;
  }
  if (!found) throw Error("unknown sample id: " + a.sample);

  Tape<float> tp;
  tp.grad_enabled = false;
  auto f = forward(tp, st.model, sample);
  const Tensor<float> p_hat = tp.val(f.p_hat);
  const Tensor<float> s_logits = tp.val(f.s.s);
  const Tensor<float> relevance = tp.val(f.align.r);
  const Tensor<float> merged_prob = tp.val(f.merged.prob);
  const double p_nt = tp.val(f.nt.p_nt).v[0];
  const bool nt_predicted = p_nt > st.cfg.model.nt_threshold;
  const int n = st.cfg.model.num_queries;
  const int hq = f.s.h, wq = f.s.w;

  fs::create_directories(a.out);

  // Per-query mask probabilities, straight sigmoid of the logits.
  std::vector<float> prob(size_t(hq) * wq);
  for (int i = 0; i < n; ++i) {
    for (int64_t x = 0; x < int64_t(hq) * wq; ++x)
      prob[size_t(x)] = 1.0f / (1.0f + std::exp(-s_logits.at(i, x)));
    char name[32];
    std::snprintf(name, sizeof name, "query_%02d.png", i);
    write_png((fs::path(a.out) / name).string(), heat_png(prob.data(), hq, wq));
  }

  // Merged map, honoring the no-target gate: all black when the gate fires.
  if (nt_predicted) std::fill(prob.begin(), prob.end(), 0.0f);
  else
    std::copy(merged_prob.v.begin(), merged_prob.v.end(), prob.begin());
  write_png((fs::path(a.out) / "merged.png").string(), heat_png(prob.data(), hq, wq));

  // Per-query token alignment: full weight rows plus the top-3 tokens.
  const int n_tok = int(sample.tokens.size());
  ojson queries = ojson::array();
  for (int i = 0; i < n; ++i) {
    ojson q;
    q["index"] = i;
    q["p_hat"] = p_hat.v[size_t(i)];
    std::vector<double> w(size_t(n_tok), 0.0);
    for (int t = 0; t < n_tok; ++t) w[size_t(t)] = relevance.at(i, t);
    q["token_weights"] = w;
    std::vector<int> order(size_t(n_tok), 0);
    for (int t = 0; t < n_tok; ++t) order[size_t(t)] = t;
    std::sort(order.begin(), order.end(), [&](int x, int y) { return w[size_t(x)] > w[size_t(y)]; });
    ojson top = ojson::array();
    for (int r = 0; r < std::min(3, n_tok); ++r)
      top.push_back({{"token", vocab.word(sample.tokens[size_t(order[size_t(r)])])},
                     {"weight", w[size_t(order[size_t(r)])]}});
    q["top_tokens"] = top;
    queries.push_back(std::move(q));
  }

  ojson out;
  out["sample"] = sample.id;
  out["expression"] = sample.expression;
  out["p_nt"] = p_nt;
  out["no_target_predicted"] = nt_predicted;
  out["queries"] = std::move(queries);
  std::ofstream os(fs::path(a.out) / "alignment.json");
  os << out.dump(2) << "\n";
  if (!os) throw Error("failed to write alignment.json");

  std::cerr << n << " query heatmaps, merged map and alignment.json written to " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"referring-expression segmentation on synthetic shape scenes"};
  app.require_subcommand(1);

  GenArgs ga;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  gen->add_option("--out", ga.out, "output corpus directory")->required();
  gen->add_option("--num-train", ga.num_train, "training samples")->required();
  gen->add_option("--num-val", ga.num_val, "validation samples")->required();
  gen->add_option("--seed", ga.seed, "generator seed")->required();
  gen->add_option("--image-size", ga.image_size, "image side in pixels (multiple of 32)");
  gen->add_option("--no-target-frac", ga.no_target_frac, "fraction of no-target samples");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a model on a generated corpus");
  tr->add_option("--data", ta.data, "corpus directory")->required();
  tr->add_option("--config", ta.config, "JSON run configuration")->required();
  tr->add_option("--out", ta.out, "checkpoint output path")->required();
  tr->add_option("--epochs", ta.epochs, "override the configured epoch count");
  tr->add_option("--log", ta.log, "JSONL log path (default: <out>.log.jsonl)");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  ev->add_option("--data", ea.data, "corpus directory")->required();
  ev->add_option("--ckpt", ea.ckpt, "checkpoint path")->required();
  ev->add_option("--split", ea.split, "corpus split")
      ->check(CLI::IsMember({"train", "val"}));
  ev->add_option("--protocol", ea.protocol, "metric protocol")
      ->check(CLI::IsMember({"grefcoco", "refzom"}));

  VisArgs va;
  auto* vi = app.add_subcommand("visualize", "export heatmaps and token alignment");
  vi->add_option("--ckpt", va.ckpt, "checkpoint path")->required();
  vi->add_option("--data", va.data, "corpus directory")->required();
  vi->add_option("--sample", va.sample, "sample id")->required();
  vi->add_option("--out", va.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(ga);
    if (tr->parsed()) return cmd_train(ta);
    if (ev->parsed()) return cmd_eval(ea);
    return cmd_visualize(va);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
}
