#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "poseg/synth.hpp"
#include "poseg/train.hpp"
#include "poseg/vocab.hpp"

using namespace poseg;
namespace fs = std::filesystem;

namespace {

// Micro geometry: the same footprint the model tests use, small enough that a
// dozen epochs stay under a second or two.
Config micro_train_config() {
  Config c;
  c.model.image_size = 32;
  c.model.channels = 8;
  c.model.num_queries = 4;
  c.model.num_blocks = 3;
  c.model.heads = 1;
  c.model.text_layers = 1;
  c.model.l_max = 6;
  c.model.ffn_mult = 2;
  c.train.epochs = 1;
  c.train.batch_size = 2;
  c.train.seed = 7;
  return c;
}

std::vector<GresSample> micro_corpus(int count, int stream = 3) {
  DataConfig d;
  d.image_size = 32;
  d.min_size = 8;
  d.max_size = 12;
  d.max_shapes = 2;
  d.seed = 5;
  return build_split(d, "t", count, stream);
}

std::vector<std::vector<float>> snapshot(const Model<float>& m) {
  std::vector<std::vector<float>> out;
  for (const auto& p : m.ps.all()) out.push_back(p->value.v);
  return out;
}

bool same_params(const Model<float>& a, const Model<float>& b) {
  const auto& pa = a.ps.all();
  const auto& pb = b.ps.all();
  if (pa.size() != pb.size()) return false;
  for (size_t i = 0; i < pa.size(); ++i)
    if (pa[i]->value.v != pb[i]->value.v) return false;
  return true;
}

Param<float>& find_param(Model<float>& m, const std::string& name) {
  for (const auto& p : m.ps.all())
    if (p->name == name) return *p;
  throw std::runtime_error("no param named " + name);
}

fs::path fresh_file(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove(p);
  return p;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream is(p);
  REQUIRE(is.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_CASE("learning rate runs linearly between the pinned endpoints") {
  TrainConfig tc;
  tc.epochs = 20;
  tc.lr_start = 1e-4;
  tc.lr_end = 1e-6;
  CHECK(lr_at(tc, 0) == 1e-4);
  CHECK(lr_at(tc, 19) == doctest::Approx(1e-6).epsilon(1e-12));
  // Interior points interpolate: epoch 10 sits 10/19 of the way down.
  double want = 1e-4 + (1e-6 - 1e-4) * (10.0 / 19.0);
  CHECK(lr_at(tc, 10) == doctest::Approx(want).epsilon(1e-12));
  // Strictly decreasing when lr_end < lr_start.
  for (int e = 1; e < 20; ++e) CHECK(lr_at(tc, e) < lr_at(tc, e - 1));

  tc.epochs = 1;
  CHECK(lr_at(tc, 0) == 1e-4);
}

TEST_CASE("one epoch on two samples is bitwise reproducible") {
  const Vocab& v = Vocab::builtin();
  Config cfg = micro_train_config();
  auto corpus = micro_corpus(2);

  auto st_a = make_train_state(cfg, v.size());
  auto log_a = train(st_a, corpus);
  auto st_b = make_train_state(cfg, v.size());
  auto log_b = train(st_b, corpus);

  REQUIRE(log_a.size() == 1);
  REQUIRE(log_b.size() == 1);
  CHECK(log_a[0].loss_total == log_b[0].loss_total);  // exact, not approximate
  CHECK(log_a[0].train_giou == log_b[0].train_giou);
  CHECK(same_params(st_a.model, st_b.model));
  REQUIRE(st_a.opt.m.size() == st_b.opt.m.size());
  for (size_t i = 0; i < st_a.opt.m.size(); ++i) {
    CHECK(st_a.opt.m[i].v == st_b.opt.m[i].v);
    CHECK(st_a.opt.v[i].v == st_b.opt.v[i].v);
  }
  CHECK(st_a.opt.step == st_b.opt.step);
  CHECK(st_a.epoch == 1);

  // A batch size larger than the corpus clips to one full batch and lands on
  // the same bits.
  Config cfg_big = cfg;
  cfg_big.train.batch_size = 64;
  auto st_c = make_train_state(cfg_big, v.size());
  train(st_c, corpus);
  CHECK(same_params(st_a.model, st_c.model));
}

TEST_CASE("all-zero loss weights leave every parameter untouched") {
  const Vocab& v = Vocab::builtin();
  Config cfg = micro_train_config();
  cfg.loss.lambda_score = 0.0;
  cfg.loss.lambda_mask = 0.0;
  cfg.loss.lambda_phrase = 0.0;
  cfg.loss.lambda_merged = 0.0;
  cfg.loss.lambda_inst = 0.0;
  cfg.loss.lambda_nt = 0.0;

  auto st = make_train_state(cfg, v.size());
  auto before = snapshot(st.model);
  auto logs = train(st, micro_corpus(4));

  REQUIRE(logs.size() == 1);
  CHECK(logs[0].loss_total == 0.0);
  // Optimizer steps happened, yet the zero-gradient skip rule kept weight
  // decay from dragging parameters around.
  CHECK(st.opt.step > 0);
  auto after = snapshot(st.model);
  REQUIRE(before.size() == after.size());
  for (size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("the first adamw step matches the closed form and skips idle elements") {
  const Vocab& v = Vocab::builtin();
  Config cfg = micro_train_config();
  auto st = make_train_state(cfg, v.size());

  st.model.ps.zero_grads();
  auto& p = find_param(st.model, "head.score.w");
  auto& q = find_param(st.model, "head.score.b");
  const double theta0 = p.value.v[0];
  const double theta1_before = p.value.v[1];
  p.grad.v[0] = 1.0f;

  const TrainConfig& tc = cfg.train;
  adamw_step(st.model, st.opt, tc, /*lr=*/1e-2);

  // step 1 with g=1: m_hat = v_hat = 1, so the Adam part of the update is
  // 1/(1+eps); decoupled decay adds wd*theta when the parameter opts in.
  double adam = 1.0 / (1.0 + tc.adam_eps);
  double want = theta0 - 1e-2 * (adam + (p.decay ? tc.weight_decay * theta0 : 0.0));
  CHECK(p.value.v[0] == doctest::Approx(want).epsilon(1e-6));

  // Idle elements (zero grad, zero moments) do not move, decay included.
  CHECK(double(p.value.v[1]) == theta1_before);
  CHECK(q.grad.v[0] == 0.0f);

  auto idx = [&](const std::string& name) {
    const auto& all = st.model.ps.all();
    for (size_t i = 0; i < all.size(); ++i)
      if (all[i]->name == name) return i;
    throw std::runtime_error("missing " + name);
  };
  size_t pi = idx("head.score.w");
  CHECK(st.opt.m[pi].v[0] == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(st.opt.v[pi].v[0] == doctest::Approx(0.001).epsilon(1e-6));
  CHECK(st.opt.m[pi].v[1] == 0.0f);
  CHECK(st.opt.step == 1);

  // A second step with zero grad still moves the warm element: its moments
  // are nonzero, so momentum (and decay) keep acting.
  float warm = p.value.v[0];
  p.grad.v[0] = 0.0f;
  adamw_step(st.model, st.opt, tc, 1e-2);
  CHECK(p.value.v[0] != warm);
  CHECK(st.opt.step == 2);
}

TEST_CASE("a dozen epochs on a micro corpus drive the loss downward") {
  const Vocab& v = Vocab::builtin();
  Config cfg = micro_train_config();
  cfg.train.epochs = 12;
  cfg.train.batch_size = 4;
  cfg.train.lr_start = 1e-3;
  cfg.train.lr_end = 1e-4;
  auto corpus = micro_corpus(16);

  auto st = make_train_state(cfg, v.size());
  auto logs = train(st, corpus);
  REQUIRE(logs.size() == 12);

  // Monotone trend, not strict monotonicity: a few upticks are tolerated.
  int violations = 0;
  for (size_t i = 1; i < logs.size(); ++i)
    if (logs[i].loss_total > logs[i - 1].loss_total) ++violations;
  CHECK(violations <= 3);
  CHECK(logs.back().loss_total < logs.front().loss_total);
  for (const auto& e : logs) {
    CHECK(std::isfinite(e.loss_total));
    CHECK(e.loss_total >= 0.0);
    CHECK(e.train_giou >= 0.0);
    CHECK(e.train_giou <= 1.0);
  }
}

TEST_CASE("epoch telemetry carries the pinned keys and appends across resume") {
  const Vocab& v = Vocab::builtin();
  Config cfg = micro_train_config();
  cfg.train.epochs = 2;
  auto corpus = micro_corpus(4);
  fs::path log_path = fresh_file("poseg_train_log.jsonl");

  auto st = make_train_state(cfg, v.size());
  auto logs = train(st, corpus, log_path.string());
  REQUIRE(logs.size() == 2);

  auto lines = read_lines(log_path);
  REQUIRE(lines.size() == 2);
  const std::vector<std::string> keys = {"epoch",     "lr",        "loss_total",
                                         "loss_merged", "loss_inst", "loss_nt",
                                         "train_gIoU",  "train_Nacc"};
  for (size_t i = 0; i < lines.size(); ++i) {
    json j = json::parse(lines[i]);
    CHECK(j.size() == keys.size());
    for (const auto& k : keys) CHECK(j.contains(k));
    CHECK(j.at("epoch").get<int>() == int(i) + 1);
    CHECK(j.at("lr").get<double>() == lr_at(cfg.train, int(i)));
    CHECK(j.at("loss_total").get<double>() == logs[i].loss_total);
  }

  // Raising the epoch budget and training again appends; earlier lines stay.
  st.cfg.train.epochs = 4;
  auto more = train(st, corpus, log_path.string());
  REQUIRE(more.size() == 2);
  auto lines2 = read_lines(log_path);
  REQUIRE(lines2.size() == 4);
  CHECK(lines2[0] == lines[0]);
  CHECK(lines2[1] == lines[1]);
  CHECK(json::parse(lines2[3]).at("epoch").get<int>() == 4);
  fs::remove(log_path);
}

TEST_CASE("train_Nacc is null when the corpus has no no-target samples") {
  // Direct serialization contract first.
  EpochLog e;
  e.epoch = 3;
  e.train_nacc = std::nan("");
  json j = epoch_log_json(e);
  CHECK(j.at("train_Nacc").is_null());
  e.train_nacc = 0.5;
  CHECK(epoch_log_json(e).at("train_Nacc").get<double>() == 0.5);

  // And end to end: filter the corpus down to target-only samples.
  const Vocab& v = Vocab::builtin();
  Config cfg = micro_train_config();
  std::vector<GresSample> targets_only;
  for (auto& s : micro_corpus(12))
    if (!s.no_target) targets_only.push_back(std::move(s));
  REQUIRE(targets_only.size() >= 2);

  auto st = make_train_state(cfg, v.size());
  auto logs = train(st, targets_only);
  REQUIRE(logs.size() == 1);
  CHECK(std::isnan(logs[0].train_nacc));
  CHECK(epoch_log_json(logs[0]).at("train_Nacc").is_null());
}

TEST_CASE("chunked training lands on the same bits as a straight run") {
  const Vocab& v = Vocab::builtin();
  Config cfg = micro_train_config();
  cfg.train.epochs = 4;
  auto corpus = micro_corpus(4);

  auto straight = make_train_state(cfg, v.size());
  auto full = train(straight, corpus);

  auto chunked = make_train_state(cfg, v.size());
  auto first = train(chunked, corpus, "", 2);
  REQUIRE(first.size() == 2);
  CHECK(chunked.epoch == 2);
  auto second = train(chunked, corpus, "", 2);
  REQUIRE(second.size() == 2);

  // The schedule depends only on cfg.train.epochs, so the two-call run must
  // reproduce the straight run exactly, losses and parameters alike.
  REQUIRE(full.size() == 4);
  CHECK(full[1].loss_total == first[1].loss_total);
  CHECK(full[3].loss_total == second[1].loss_total);
  CHECK(full[3].lr == second[1].lr);
  CHECK(same_params(straight.model, chunked.model));
  CHECK(straight.opt.step == chunked.opt.step);
}

TEST_CASE("a finished run returns an empty log and leaves the state alone") {
  const Vocab& v = Vocab::builtin();
  Config cfg = micro_train_config();
  auto corpus = micro_corpus(2);

  auto st = make_train_state(cfg, v.size());
  train(st, corpus);
  auto before = snapshot(st.model);
  auto logs = train(st, corpus);  // epoch == epochs: nothing left to do
  CHECK(logs.empty());
  CHECK(snapshot(st.model) == before);
  CHECK(st.epoch == 1);

  // epochs == 0 with a log path still creates (and truncates) the file.
  Config zero = micro_train_config();
  zero.train.epochs = 0;
  fs::path log_path = fresh_file("poseg_train_zero.jsonl");
  auto st0 = make_train_state(zero, v.size());
  CHECK(train(st0, corpus, log_path.string()).empty());
  CHECK(fs::exists(log_path));
  CHECK(fs::file_size(log_path) == 0);
  fs::remove(log_path);
}

TEST_CASE("poisoned parameters surface as NonFiniteLoss naming the component") {
  const Vocab& v = Vocab::builtin();
  Config cfg = micro_train_config();
  auto st = make_train_state(cfg, v.size());
  // Poison the no-target head: the loss component goes NaN while matching
  // costs stay finite, so the failure is caught by the loss guard itself.
  auto& p = find_param(st.model, "head.nt.out.w");
  for (auto& x : p.value.v) x = std::nanf("");

  try {
    train(st, micro_corpus(2));
    REQUIRE(false);
  } catch (const NonFiniteLoss& e) {
    std::string msg = e.what();
    CHECK(msg.find("loss_nt") != std::string::npos);
    CHECK(msg.find("non-finite") != std::string::npos);
    CHECK(msg.find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("an empty corpus is rejected") {
  const Vocab& v = Vocab::builtin();
  auto st = make_train_state(micro_train_config(), v.size());
  std::vector<GresSample> empty;
  CHECK_THROWS_AS(train(st, empty), EmptySplit);
}
