#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tebi/data.hpp"
#include "tebi/decoder.hpp"
#include "tebi/encoders.hpp"
#include "tebi/eval.hpp"
#include "tebi/fusion.hpp"
#include "tebi/graph.hpp"

namespace tebi {

struct NumericalError : std::runtime_error {
  int step;
  NumericalError(const std::string& what, int s) : std::runtime_error(what), step(s) {}
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  int t = 0;
  std::map<Parameter*, std::pair<Tensor, Tensor>> moments;
};

inline void adam_step(const std::vector<Parameter*>& params, AdamState& state,
                      const AdamConfig& cfg) {
  ++state.t;
  double bc1 = 1.0 - std::pow(cfg.beta1, state.t);
  double bc2 = 1.0 - std::pow(cfg.beta2, state.t);
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    auto it = state.moments.find(p);
    if (it == state.moments.end()) {
      it = state.moments
               .emplace(p, std::make_pair(Tensor(p->value.rows, p->value.cols),
                                          Tensor(p->value.rows, p->value.cols)))
               .first;
    }
    Tensor& m = it->second.first;
    Tensor& v = it->second.second;
    if (!m.same_shape(p->value))
      throw std::invalid_argument("adam_step: state shape " + m.shape_str() +
                                  " does not match parameter " + p->name + " " +
                                  p->value.shape_str());
    if (!p->grad.same_shape(p->value))
      throw std::invalid_argument("adam_step: gradient shape mismatch for " + p->name);
    for (size_t k = 0; k < p->value.size(); ++k) {
      double g = p->grad.data[k];
      m.data[k] = cfg.beta1 * m.data[k] + (1.0 - cfg.beta1) * g;
      v.data[k] = cfg.beta2 * v.data[k] + (1.0 - cfg.beta2) * g * g;
      double mhat = m.data[k] / bc1;
      double vhat = v.data[k] / bc2;
      p->value.data[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

inline void zero_grads(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->zero_grad();
}

inline void clip_global_norm(const std::vector<Parameter*>& params, double max_norm) {
  double sq = 0.0;
  for (Parameter* p : params)
    if (p->trainable)
      for (double g : p->grad.data) sq += g * g;
  double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  double s = max_norm / norm;
  for (Parameter* p : params)
    if (p->trainable)
      for (double& g : p->grad.data) g *= s;
}

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double lr = 1e-3;
  uint64_t seed = 0;
  double grad_clip = 1.0;
  bool freeze_encoder = true;  // stage 2 only
  bool freeze_gates = false;   // stage 2 control runs
};

struct EpochMetrics {
  int epoch = 0;
  std::string split;
  double loss = 0.0;
  double top1 = 0.0, top5 = 0.0;
  double retrieval_top1 = 0.0, retrieval_top5 = 0.0;
};

inline void write_metrics_csv(const std::vector<EpochMetrics>& rows,
                              const std::string& path) {
  std::ofstream f(path);
  f << "epoch,split,loss,top1,top5,retrieval_top1,retrieval_top5\n";
  f.precision(6);
  f << std::fixed;
  for (const auto& r : rows)
    f << r.epoch << "," << r.split << "," << r.loss << "," << r.top1 << "," << r.top5 << ","
      << r.retrieval_top1 << "," << r.retrieval_top5 << "\n";
}

namespace detail {

inline std::vector<std::vector<const TemporalSample*>> make_batches(
    const std::vector<TemporalSample>& samples, int batch_size, std::mt19937_64& rng) {
  std::vector<const TemporalSample*> order;
  for (const auto& s : samples) order.push_back(&s);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<const TemporalSample*>> batches;
  for (size_t i = 0; i < order.size(); i += batch_size) {
    batches.emplace_back(order.begin() + i,
                         order.begin() + std::min(i + batch_size, order.size()));
  }
  return batches;
}

// loss = CE(class logits) + 0.5 * symmetric InfoNCE over the batch
inline Graph::V pretrain_loss(Graph& g, const PretrainForward& fwd,
                              const std::vector<int>& classes) {
  Graph::V cls = g.cross_entropy(fwd.class_logits, classes);
  std::vector<int> diag(classes.size());
  for (size_t i = 0; i < diag.size(); ++i) diag[i] = static_cast<int>(i);
  Graph::V nce_t2i = g.cross_entropy(fwd.similarity, diag);
  Graph::V nce_i2t = g.cross_entropy(g.transpose(fwd.similarity), diag);
  Graph::V nce = g.scale(g.add(nce_t2i, nce_i2t), 0.5);
  return g.add(cls, g.scale(nce, 0.5));
}

}  // namespace detail

struct PretrainEval {
  double loss = 0.0;
  double top1 = 0.0, top5 = 0.0;
  double retrieval_top1 = 0.0, retrieval_top5 = 0.0;
};

// Forward-only pass over a sample set, batched for the in-batch retrieval
// metric. Deterministic order.
inline PretrainEval evaluate_pretrain(EncoderParams& enc,
                                      const std::vector<TemporalSample>& samples,
                                      int batch_size) {
  PretrainEval ev;
  if (samples.empty()) return ev;
  Tensor all_logits(static_cast<int>(samples.size()), enc.cfg.n_classes);
  std::vector<int> all_targets;
  double r1 = 0, r5 = 0, loss_sum = 0;
  int n_batches = 0;
  for (size_t i = 0; i < samples.size(); i += batch_size) {
    std::vector<const TemporalSample*> batch;
    std::vector<int> classes;
    for (size_t j = i; j < std::min(i + batch_size, samples.size()); ++j) {
      batch.push_back(&samples[j]);
      classes.push_back(samples[j].class_id);
    }
    Graph g;
    auto fwd = pretrain_forward(g, enc, batch);
    Graph::V loss = detail::pretrain_loss(g, fwd, classes);
    loss_sum += g.value(loss).data[0];
    const Tensor& logits = g.value(fwd.class_logits);
    for (size_t j = 0; j < batch.size(); ++j) {
      for (int c = 0; c < logits.cols; ++c)
        all_logits.at(static_cast<int>(i + j), c) = logits.at(static_cast<int>(j), c);
      all_targets.push_back(classes[j]);
    }
    const Tensor& sim = g.value(fwd.similarity);
    r1 += retrieval_accuracy(sim, 1);
    r5 += retrieval_accuracy(sim, std::min(5, sim.cols));
    ++n_batches;
  }
  ev.loss = loss_sum / n_batches;
  ev.top1 = topk_accuracy(all_logits, all_targets, 1);
  ev.top5 = topk_accuracy(all_logits, all_targets, std::min(5, enc.cfg.n_classes));
  ev.retrieval_top1 = r1 / n_batches;
  ev.retrieval_top5 = r5 / n_batches;
  return ev;
}

struct PretrainResult {
  EncoderParams encoder;
  std::vector<EpochMetrics> history;
  PretrainEval final_train;
  PretrainEval final_test;
};

// Stage 1: joint classification + contrastive alignment training of the
// encoder (LSTM or single-frame Base, per cfg.use_lstm).
inline PretrainResult pretrain(const std::vector<TemporalSample>& train,
                               const std::vector<TemporalSample>& test,
                               const EncoderConfig& ecfg, const TrainConfig& tcfg) {
  if (train.empty()) throw std::invalid_argument("pretrain: empty training set");
  {
    std::vector<bool> seen(ecfg.n_classes, false);
    int distinct = 0;
    for (const auto& s : train)
      if (!seen[s.class_id]) {
        seen[s.class_id] = true;
        ++distinct;
      }
    if (distinct < 2)
      throw std::invalid_argument("pretrain: need at least 2 classes in the training set");
  }
  PretrainResult res;
  res.encoder = EncoderParams(ecfg, tcfg.seed);
  auto params = res.encoder.all();
  AdamState adam;
  AdamConfig acfg{tcfg.lr};
  std::mt19937_64 rng(detail::mix_seed(0x7ea1ull, tcfg.seed));
  int step = 0;
  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    auto batches = detail::make_batches(train, tcfg.batch_size, rng);
    double loss_sum = 0, t1 = 0, t5 = 0, r1 = 0, r5 = 0;
    for (auto& batch : batches) {
      std::vector<int> classes;
      for (auto* s : batch) classes.push_back(s->class_id);
      Graph g;
      auto fwd = pretrain_forward(g, res.encoder, batch);
      Graph::V loss = detail::pretrain_loss(g, fwd, classes);
      double lv = g.value(loss).data[0];
      if (!std::isfinite(lv))
        throw NumericalError("pretrain: loss diverged (non-finite) at step " +
                                 std::to_string(step),
                             step);
      loss_sum += lv;
      t1 += topk_accuracy(g.value(fwd.class_logits), classes, 1);
      t5 += topk_accuracy(g.value(fwd.class_logits), classes, std::min(5, ecfg.n_classes));
      const Tensor& sim = g.value(fwd.similarity);
      r1 += retrieval_accuracy(sim, 1);
      r5 += retrieval_accuracy(sim, std::min(5, sim.cols));
      zero_grads(params);
      g.backward(loss);
      clip_global_norm(params, tcfg.grad_clip);
      adam_step(params, adam, acfg);
      ++step;
    }
    double nb = static_cast<double>(batches.size());
    res.history.push_back({epoch, "train", loss_sum / nb, t1 / nb, t5 / nb, r1 / nb, r5 / nb});
    if (!test.empty()) {
      auto ev = evaluate_pretrain(res.encoder, test, tcfg.batch_size);
      res.history.push_back({epoch, "test", ev.loss, ev.top1, ev.top5, ev.retrieval_top1,
                             ev.retrieval_top5});
    }
  }
  res.final_train = evaluate_pretrain(res.encoder, train, tcfg.batch_size);
  if (!test.empty()) res.final_test = evaluate_pretrain(res.encoder, test, tcfg.batch_size);
  return res;
}

// Precomputed conditioning tensors for one sample (frozen-encoder path).
struct ConditioningTensors {
  std::vector<Tensor> image;
  std::vector<Tensor> tactile;
};

inline ConditioningTensors precompute_conditioning(EncoderParams& enc,
                                                   const TemporalSample& sample,
                                                   Variant variant) {
  Graph g;
  ConditioningTensors out;
  if (variant == Variant::Base) {
    auto [fi, ft] = encode_frame(g, enc, *sample.frames.back());
    out.image.push_back(g.value(fi));
    out.tactile.push_back(g.value(ft));
  } else {
    auto seq = encode_hidden_sequence(g, enc, sample);
    for (auto v : seq.image) out.image.push_back(g.value(v));
    for (auto v : seq.tactile) out.tactile.push_back(g.value(v));
  }
  return out;
}

inline ConditioningSeq conditioning_constants(Graph& g, const ConditioningTensors& ct) {
  ConditioningSeq seq;
  for (const auto& t : ct.image) seq.image.push_back(g.constant(t));
  for (const auto& t : ct.tactile) seq.tactile.push_back(g.constant(t));
  return seq;
}

// Teacher-forcing tokens and per-position targets for one sample: the
// prompt, then the keyword tokens; targets shift by one and end with EOS.
inline std::pair<std::vector<int>, std::vector<int>> keyword_targets(
    const TemporalSample& sample, const ModelConfig& mcfg,
    const std::vector<std::string>& vocab) {
  std::vector<int> tokens = prompt_tokens(mcfg);
  std::vector<int> kw;
  for (const auto& w : sample.keywords) kw.push_back(keyword_token(w, vocab));
  int prompt_len = static_cast<int>(tokens.size());
  for (int t : kw) tokens.push_back(t);
  std::vector<int> targets(tokens.size(), -1);
  for (size_t i = 0; i < kw.size(); ++i) targets[prompt_len - 1 + i] = kw[i];
  targets[tokens.size() - 1] = kEos;
  return {tokens, targets};
}

struct FinetuneResult {
  DecoderParams decoder;
  FusionPlan plan;
  std::vector<EpochMetrics> history;
};

// Stage 2: temporal-binding finetuning. Frame encoders and LSTMs are frozen
// by default (conditioning is then precomputed once); gates, projections,
// and the decoder train with next-token cross-entropy on keyword targets.
inline FinetuneResult finetune(const std::vector<TemporalSample>& train, EncoderParams& enc,
                               Variant variant, Group group, const ModelConfig& mcfg,
                               const TrainConfig& tcfg,
                               const std::vector<std::string>& vocab) {
  if (train.empty()) throw std::invalid_argument("finetune: empty training set");
  int T = static_cast<int>(train[0].frames.size());
  FinetuneResult res;
  res.decoder = DecoderParams(mcfg, tcfg.seed);
  int cond_dim = variant == Variant::Base ? enc.cfg.feature_dim : enc.cfg.model_dim;
  res.plan = build_plan(variant, group, mcfg.n_layers, T, cond_dim, mcfg.width, tcfg.seed);

  std::vector<Parameter*> trainable = res.decoder.all();
  for (Parameter* p : res.plan.all()) trainable.push_back(p);
  if (tcfg.freeze_gates)
    for (auto& gp : res.plan.gate_image) gp.trainable = false;
  if (tcfg.freeze_gates)
    for (auto& gp : res.plan.gate_tactile) gp.trainable = false;
  if (!tcfg.freeze_encoder)
    for (Parameter* p : enc.all()) trainable.push_back(p);

  // Frozen encoders: run them once per sample outside the tape.
  std::map<const TemporalSample*, ConditioningTensors> cache;
  if (tcfg.freeze_encoder)
    for (const auto& s : train) cache.emplace(&s, precompute_conditioning(enc, s, variant));

  AdamState adam;
  AdamConfig acfg{tcfg.lr};
  std::mt19937_64 rng(detail::mix_seed(0x7ea1ull, tcfg.seed ^ 0xf17eull));
  int step = 0;
  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    auto batches = detail::make_batches(train, tcfg.batch_size, rng);
    double loss_sum = 0;
    for (auto& batch : batches) {
      zero_grads(trainable);
      double batch_loss = 0;
      for (const TemporalSample* s : batch) {
        Graph g;
        ConditioningSeq cond;
        if (tcfg.freeze_encoder) {
          cond = conditioning_constants(g, cache.at(s));
        } else if (variant == Variant::Base) {
          auto [fi, ft] = encode_frame(g, enc, *s->frames.back());
          cond.image = {fi};
          cond.tactile = {ft};
        } else {
          auto seq = encode_hidden_sequence(g, enc, *s);
          cond.image = seq.image;
          cond.tactile = seq.tactile;
        }
        auto [tokens, targets] = keyword_targets(*s, mcfg, vocab);
        Graph::V logits = decoder_forward(g, tokens, &res.plan, &cond, res.decoder);
        Graph::V loss = g.scale(g.cross_entropy(logits, targets),
                                1.0 / static_cast<double>(batch.size()));
        double lv = g.value(loss).data[0] * batch.size();
        if (!std::isfinite(lv))
          throw NumericalError("finetune: loss diverged (non-finite) at step " +
                                   std::to_string(step),
                               step);
        batch_loss += lv;
        g.backward(loss);
      }
      clip_global_norm(trainable, tcfg.grad_clip);
      adam_step(trainable, adam, acfg);
      loss_sum += batch_loss / batch.size();
      ++step;
    }
    res.history.push_back({epoch, "train", loss_sum / batches.size(), 0, 0, 0, 0});
  }
  return res;
}

// Test-time keyword generation for one sample under a finetuned model.
inline std::set<std::string> predict_keywords(EncoderParams& enc, FusionPlan& plan,
                                              DecoderParams& dec, const TemporalSample& sample,
                                              const std::vector<std::string>& vocab,
                                              int max_len = 6) {
  auto ct = precompute_conditioning(enc, sample, plan.variant);
  Graph g;
  auto cond = conditioning_constants(g, ct);
  auto tokens = generate_keywords(&plan, &cond, dec, max_len, &g);
  std::set<std::string> words;
  for (int t : tokens) {
    int wi = t - kNumSpecials;
    if (wi >= 0 && wi < static_cast<int>(vocab.size())) words.insert(vocab[wi]);
  }
  return words;
}

}  // namespace tebi
