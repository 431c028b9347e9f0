#pragma once

#include <vector>

#include "poseg/alignment.hpp"
#include "poseg/config.hpp"
#include "poseg/decoder.hpp"
#include "poseg/encoders.hpp"
#include "poseg/heads.hpp"
#include "poseg/matching.hpp"
#include "poseg/merge.hpp"
#include "poseg/metrics.hpp"
#include "poseg/sample.hpp"

// Full pipeline assembly: encoders -> decoder -> alignment -> heads -> merge,
// plus the per-sample objective. Parameter registration order is fixed by
// construction order, so checkpoints and optimizer walks are reproducible.
namespace poseg {

template <class T>
struct Model {
  ModelConfig cfg;
  ParamStore<T> ps;
  TextEncoderP<T> text;
  VisualEncoderP<T> visual;
  DecoderP<T> decoder;
  HeadsP<T> heads;
  MergeP<T> merge;
};

template <class T>
Model<T> make_model(const ModelConfig& cfg, int vocab_size, uint64_t seed) {
  cfg.validate();
  Model<T> m;
  m.cfg = cfg;
  Rng rng(seed);
  m.text = make_text_encoder(m.ps, rng, cfg, vocab_size);
  m.visual = make_visual_encoder(m.ps, rng, cfg);
  m.decoder = make_decoder(m.ps, rng, cfg);
  m.heads = make_heads(m.ps, rng, cfg);
  m.merge = make_merge(m.ps, cfg);
  return m;
}

// Everything one training step needs from a sample's forward pass. align,
// p_hat, s and nt describe the final decoder block; the trace keeps earlier
// blocks reachable for deep supervision.
template <class T>
struct Forward {
  TextFeatures text;
  VisualPyramid pyr;
  DecoderTrace trace;
  Alignment align;
  int p_hat = -1;
  MaskLogits s;
  NoTargetOut nt;
  Merged merged;
};

// Per-query key mask for the decoder's visual cross-attention: a query
// attends only where its current quarter-resolution mask prediction is
// positive, pooled down to the level's grid; a query with an empty prediction
// falls back to full attention. The prediction is used as data, so no
// gradient flows through the gate.
template <class T>
VisualKeyMask<T> mask_guided_attention(const VisualPyramid& pyr, const MaskHeadP<T>& head) {
  return [pyr, &head](Tape<T>& tp, int q, int level) -> std::vector<uint8_t> {
    MaskLogits ml = mask_head(tp, q, pyr.v4, head);
    // Copy: adding nodes above may have reallocated node storage already, and
    // val() references must not be held across further op calls anyway.
    const Tensor<T> sv = tp.val(ml.s);
    const std::vector<int> lvs = tp.val(level).shape;
    const int n = sv.rows();
    const int h = lvs[1], w = lvs[2];
    if (ml.h % h != 0 || ml.w % w != 0)
      throw ShapeMismatch("mask-guided attention: level does not tile the mask grid");
    const int fy = ml.h / h, fx = ml.w / w;
    std::vector<uint8_t> keep(size_t(n) * size_t(h) * size_t(w), 0);
    for (int i = 0; i < n; ++i) {
      bool any = false;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          uint8_t on = 0;
          for (int yy = y * fy; yy < (y + 1) * fy && !on; ++yy)
            for (int xx = x * fx; xx < (x + 1) * fx && !on; ++xx)
              if (sv.at(i, yy * ml.w + xx) > T(0)) on = 1;  // sigmoid(s) > 0.5
          keep[size_t(i) * size_t(h) * size_t(w) + size_t(y) * size_t(w) + size_t(x)] = on;
          any |= on != 0;
        }
      }
      if (!any) {
        uint8_t* row = keep.data() + size_t(i) * size_t(h) * size_t(w);
        std::fill(row, row + size_t(h) * size_t(w), uint8_t(1));
      }
    }
    return keep;
  };
}

template <class T>
Forward<T> forward(Tape<T>& tp, const Model<T>& m, const GresSample& sample) {
  Forward<T> f;
  f.text = encode_text(tp, m.text, sample.tokens, m.cfg);
  f.pyr = encode_image(tp, m.visual, sample.image.template cast<T>(), m.cfg);
  VisualKeyMask<T> km;
  if (m.cfg.masked_visual_attention) km = mask_guided_attention(f.pyr, m.heads.mask);
  f.trace = run_decoder(tp, m.decoder, f.text, f.pyr, km);
  const int qk = f.trace.q_final();
  const int tk = f.trace.t_final();
  f.align = align_queries(tp, qk, tk, f.text.valid, m.cfg.stop_phrase_text_grad);
  f.p_hat = score_head(tp, qk, m.heads.score);
  f.s = mask_head(tp, qk, f.pyr.v4, m.heads.mask);
  f.nt = no_target_head(tp, qk, f.p_hat, tk, f.text.valid, m.heads.nt);
  f.merged = adaptive_merge(tp, f.p_hat, f.s, m.merge);
  return f;
}

// Scalar loss nodes for one sample; components are unweighted, total carries
// the lambdas. match reports the final block's assignment (empty for a
// no-target sample).
struct SampleLoss {
  int total = -1;
  int merged = -1;
  int inst = -1;
  int nt = -1;
  MatchResult match;
};

template <class T>
SampleLoss total_loss(Tape<T>& tp, const Model<T>& m, const Forward<T>& f,
                      const GresSample& sample, const LossConfig& lc) {
  SampleLoss out;
  Tensor<T> gt_merged = quarter_mask<T>(sample.merged);
  std::vector<Tensor<T>> gt_inst;
  gt_inst.reserve(sample.masks.size());
  for (const Mask& mk : sample.masks) gt_inst.push_back(quarter_mask<T>(mk));

  out.merged = merged_loss(tp, f.merged, gt_merged, lc);

  if (!m.cfg.deep_supervision) {
    out.inst = instance_loss(tp, f.p_hat, f.s, f.align.loss, gt_inst, lc, &out.match);
  } else {
    // Every block's queries get their own alignment, head readouts and
    // matching; the heads' weights are shared. The final block's terms reuse
    // the main forward nodes so inference and supervision agree exactly.
    int acc = -1;
    const int blocks = int(f.trace.q.size());
    for (int k = 0; k < blocks; ++k) {
      int ph, phrase;
      MaskLogits sk;
      if (k == blocks - 1) {
        ph = f.p_hat;
        sk = f.s;
        phrase = f.align.loss;
      } else {
        int qk = f.trace.q[size_t(k)];
        int tk = f.trace.t[size_t(k)];
        Alignment ak = align_queries(tp, qk, tk, f.text.valid, m.cfg.stop_phrase_text_grad);
        ph = score_head(tp, qk, m.heads.score);
        sk = mask_head(tp, qk, f.pyr.v4, m.heads.mask);
        phrase = ak.loss;
      }
      MatchResult* mr = k == blocks - 1 ? &out.match : nullptr;
      int li = instance_loss(tp, ph, sk, phrase, gt_inst, lc, mr);
      acc = acc < 0 ? li : tp.add(acc, li);
    }
    out.inst = tp.scale(acc, 1.0 / double(blocks));
  }

  Tensor<T> nt_target({1});
  nt_target.v[0] = sample.no_target ? T(1) : T(0);
  out.nt = tp.mean_all(tp.bce_logits(f.nt.logit, nt_target));

  out.total = tp.add(tp.add(tp.scale(out.merged, lc.lambda_merged), tp.scale(out.inst, lc.lambda_inst)),
                     tp.scale(out.nt, lc.lambda_nt));
  return out;
}

// Inference products for one sample, computed on a private no-grad tape.
template <class T>
struct Prediction {
  Tensor<T> prob_quarter;  // [hq*wq] merged probabilities
  int hq = 0, wq = 0;
  double p_nt = 0.0;
  Mask final_mask;  // [H,W], all-zero when the no-target gate fires
};

template <class T>
Prediction<T> predict(const Model<T>& m, const GresSample& sample) {
  Tape<T> tp;
  tp.grad_enabled = false;
  Forward<T> f = forward(tp, m, sample);
  Prediction<T> p;
  p.prob_quarter = tp.val(f.merged.prob);
  p.hq = f.merged.h;
  p.wq = f.merged.w;
  p.p_nt = double(tp.val(f.nt.p_nt).v[0]);
  p.final_mask = infer_final_mask(p.prob_quarter, f.merged.h, f.merged.w, p.p_nt, m.cfg);
  return p;
}

// Record for the metric suite: prediction vs ground truth.
template <class T>
EvalRecord evaluate_sample(const Model<T>& m, const GresSample& sample) {
  Prediction<T> p = predict(m, sample);
  return make_eval_record(p.final_mask, sample.merged, sample.no_target);
}

}  // namespace poseg
