#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "poseg/errors.hpp"

namespace poseg {

using json = nlohmann::json;

namespace detail {
template <class T>
void jget(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}
}  // namespace detail

// Architecture switches. Every ablation the trainer supports is a field here,
// so a config file fully determines the model.
struct ModelConfig {
  int image_size = 64;
  int channels = 64;      // shared feature width C
  int num_queries = 16;   // object queries N
  int num_blocks = 3;     // decoder blocks K
  int heads = 1;
  int text_layers = 2;
  int l_max = 12;         // token capacity of the text encoder
  int ffn_mult = 4;
  std::string mask_embed = "mlp";    // "mlp" | "identity": query -> mask-embedding map
  std::string aggregation = "aia";   // "aia" | "fixed": score-weighted PReLU sum vs plain mean
  bool prelu_frozen = false;         // keep the aggregation slope at its init value
  std::string nt_input = "concat";   // "concat" | "q_global" | "t_sen" | "mean_q"
  bool deep_supervision = false;     // instance losses from every block, averaged
  bool masked_visual_attention = false;  // restrict visual attention by previous masks
  bool stop_phrase_text_grad = false;    // detach text features in the phrase alignment loss
  double nt_threshold = 0.5;    // declare no-target above this p_nt
  double mask_threshold = 0.5;  // foreground where prob strictly exceeds this

  void validate() const {
    if (image_size < 32 || image_size % 32 != 0)
      throw Error("model.image_size must be a positive multiple of 32");
    if (channels < 4 || channels % 4 != 0)
      throw Error("model.channels must be a positive multiple of 4");
    if (heads < 1 || channels % heads != 0)
      throw Error("model.heads must divide model.channels");
    if (num_queries < 1) throw Error("model.num_queries must be >= 1");
    if (num_blocks < 1) throw Error("model.num_blocks must be >= 1");
    if (text_layers < 1) throw Error("model.text_layers must be >= 1");
    if (l_max < 1) throw Error("model.l_max must be >= 1");
    if (ffn_mult < 1) throw Error("model.ffn_mult must be >= 1");
    if (mask_embed != "mlp" && mask_embed != "identity")
      throw Error("model.mask_embed must be 'mlp' or 'identity'");
    if (aggregation != "aia" && aggregation != "fixed")
      throw Error("model.aggregation must be 'aia' or 'fixed'");
    if (nt_input != "concat" && nt_input != "q_global" && nt_input != "t_sen" &&
        nt_input != "mean_q")
      throw Error("model.nt_input must be one of concat|q_global|t_sen|mean_q");
    if (nt_threshold < 0 || nt_threshold > 1 || mask_threshold < 0 || mask_threshold > 1)
      throw Error("model thresholds must lie in [0,1]");
  }
};

// Loss weights and numeric guards.
struct LossConfig {
  double lambda_score = 2.0;
  double lambda_mask = 5.0;
  double lambda_phrase = 1.0;
  double lambda_merged = 5.0;
  double lambda_inst = 1.0;
  double lambda_nt = 0.1;
  double eps = 1e-8;          // clamp inside every log on probabilities
  double dice_smooth = 1.0;
  bool mask_cost_mean_bce = true;  // mean (vs sum) over pixels in the matching cost

  void validate() const {
    if (eps <= 0) throw Error("loss.eps must be positive");
    if (dice_smooth <= 0) throw Error("loss.dice_smooth must be positive");
  }
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 8;
  double lr_start = 1e-4;
  double lr_end = 1e-6;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 1;

  void validate() const {
    if (epochs < 0) throw Error("train.epochs must be >= 0");
    if (batch_size < 1) throw Error("train.batch_size must be >= 1");
    if (lr_start <= 0 || lr_end <= 0) throw Error("train learning rates must be positive");
  }
};

struct Config {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;

  void validate() const {
    model.validate();
    loss.validate();
    train.validate();
  }
};

// Synthetic corpus parameters.
struct DataConfig {
  int num_train = 500;
  int num_val = 100;
  int image_size = 64;
  double no_target_frac = 0.25;
  double multi_frac = 0.40;
  int min_shapes = 1;
  int max_shapes = 4;
  int min_size = 12;  // bounding size in pixels (full resolution)
  int max_size = 28;
  bool allow_overlap = false;
  uint64_t seed = 7;

  void validate() const {
    if (num_train < 0 || num_val < 0) throw Error("corpus sizes must be >= 0");
    if (image_size < 32 || image_size % 32 != 0)
      throw Error("image_size must be a positive multiple of 32");
    if (no_target_frac < 0 || no_target_frac > 1)
      throw Error("no_target_frac must be in [0,1]");
    if (multi_frac < 0 || multi_frac > 1 || no_target_frac + multi_frac > 1)
      throw Error("multi_frac must be in [0,1] with no_target_frac+multi_frac <= 1");
    if (min_shapes < 1 || max_shapes < min_shapes) throw Error("bad shape-count range");
  }
};

inline void from_json(const json& j, ModelConfig& m) {
  using detail::jget;
  jget(j, "image_size", m.image_size);
  jget(j, "channels", m.channels);
  jget(j, "num_queries", m.num_queries);
  jget(j, "num_blocks", m.num_blocks);
  jget(j, "heads", m.heads);
  jget(j, "text_layers", m.text_layers);
  jget(j, "l_max", m.l_max);
  jget(j, "ffn_mult", m.ffn_mult);
  jget(j, "mask_embed", m.mask_embed);
  jget(j, "aggregation", m.aggregation);
  jget(j, "prelu_frozen", m.prelu_frozen);
  jget(j, "nt_input", m.nt_input);
  jget(j, "deep_supervision", m.deep_supervision);
  jget(j, "masked_visual_attention", m.masked_visual_attention);
  jget(j, "stop_phrase_text_grad", m.stop_phrase_text_grad);
  jget(j, "nt_threshold", m.nt_threshold);
  jget(j, "mask_threshold", m.mask_threshold);
}

inline void to_json(json& j, const ModelConfig& m) {
  j = json{{"image_size", m.image_size},
           {"channels", m.channels},
           {"num_queries", m.num_queries},
           {"num_blocks", m.num_blocks},
           {"heads", m.heads},
           {"text_layers", m.text_layers},
           {"l_max", m.l_max},
           {"ffn_mult", m.ffn_mult},
           {"mask_embed", m.mask_embed},
           {"aggregation", m.aggregation},
           {"prelu_frozen", m.prelu_frozen},
           {"nt_input", m.nt_input},
           {"deep_supervision", m.deep_supervision},
           {"masked_visual_attention", m.masked_visual_attention},
           {"stop_phrase_text_grad", m.stop_phrase_text_grad},
           {"nt_threshold", m.nt_threshold},
           {"mask_threshold", m.mask_threshold}};
}

inline void from_json(const json& j, LossConfig& l) {
  using detail::jget;
  jget(j, "lambda_score", l.lambda_score);
  jget(j, "lambda_mask", l.lambda_mask);
  jget(j, "lambda_phrase", l.lambda_phrase);
  jget(j, "lambda_merged", l.lambda_merged);
  jget(j, "lambda_inst", l.lambda_inst);
  jget(j, "lambda_nt", l.lambda_nt);
  jget(j, "eps", l.eps);
  jget(j, "dice_smooth", l.dice_smooth);
  jget(j, "mask_cost_mean_bce", l.mask_cost_mean_bce);
}

inline void to_json(json& j, const LossConfig& l) {
  j = json{{"lambda_score", l.lambda_score},   {"lambda_mask", l.lambda_mask},
           {"lambda_phrase", l.lambda_phrase}, {"lambda_merged", l.lambda_merged},
           {"lambda_inst", l.lambda_inst},     {"lambda_nt", l.lambda_nt},
           {"eps", l.eps},                     {"dice_smooth", l.dice_smooth},
           {"mask_cost_mean_bce", l.mask_cost_mean_bce}};
}

inline void from_json(const json& j, TrainConfig& t) {
  using detail::jget;
  jget(j, "epochs", t.epochs);
  jget(j, "batch_size", t.batch_size);
  jget(j, "lr_start", t.lr_start);
  jget(j, "lr_end", t.lr_end);
  jget(j, "weight_decay", t.weight_decay);
  jget(j, "beta1", t.beta1);
  jget(j, "beta2", t.beta2);
  jget(j, "adam_eps", t.adam_eps);
  jget(j, "seed", t.seed);
}

inline void to_json(json& j, const TrainConfig& t) {
  j = json{{"epochs", t.epochs},           {"batch_size", t.batch_size},
           {"lr_start", t.lr_start},       {"lr_end", t.lr_end},
           {"weight_decay", t.weight_decay}, {"beta1", t.beta1},
           {"beta2", t.beta2},             {"adam_eps", t.adam_eps},
           {"seed", t.seed}};
}

inline void from_json(const json& j, Config& c) {
  using detail::jget;
  jget(j, "model", c.model);
  jget(j, "loss", c.loss);
  jget(j, "train", c.train);
}

inline void to_json(json& j, const Config& c) {
  j = json{{"model", c.model}, {"loss", c.loss}, {"train", c.train}};
}

inline void from_json(const json& j, DataConfig& d) {
  using detail::jget;
  jget(j, "num_train", d.num_train);
  jget(j, "num_val", d.num_val);
  jget(j, "image_size", d.image_size);
  jget(j, "no_target_frac", d.no_target_frac);
  jget(j, "multi_frac", d.multi_frac);
  jget(j, "min_shapes", d.min_shapes);
  jget(j, "max_shapes", d.max_shapes);
  jget(j, "min_size", d.min_size);
  jget(j, "max_size", d.max_size);
  jget(j, "allow_overlap", d.allow_overlap);
  jget(j, "seed", d.seed);
}

inline void to_json(json& j, const DataConfig& d) {
  j = json{{"num_train", d.num_train},   {"num_val", d.num_val},
           {"image_size", d.image_size}, {"no_target_frac", d.no_target_frac},
           {"multi_frac", d.multi_frac}, {"min_shapes", d.min_shapes},
           {"max_shapes", d.max_shapes}, {"min_size", d.min_size},
           {"max_size", d.max_size},     {"allow_overlap", d.allow_overlap},
           {"seed", d.seed}};
}

// Load a (possibly partial) config file: absent keys keep their defaults.
inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("config parse failed for " + path + ": " + e.what());
  }
  Config c = j.get<Config>();
  c.validate();
  return c;
}

}  // namespace poseg
