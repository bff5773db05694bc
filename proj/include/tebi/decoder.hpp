#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tebi/fusion.hpp"
#include "tebi/graph.hpp"

namespace tebi {

struct ModelConfig {
  int n_layers = 8;
  int width = 64;
  int heads = 4;
  int vocab_size = 13;  // specials + keywords
  int max_positions = 16;
  int ffn_hidden = 128;
  int n_query_tokens = 2;

  int head_dim() const {
    if (width % heads != 0)
      throw std::invalid_argument("ModelConfig: width " + std::to_string(width) +
                                  " not divisible by heads " + std::to_string(heads));
    return width / heads;
  }
};

struct DecoderLayerParams {
  Parameter wq, wk, wv, wo;          // width x width
  Parameter attn_norm, ffn_norm;     // 1 x width, init ones
  Parameter w1, b1, w2, b2;          // feed-forward
};

struct DecoderParams {
  ModelConfig cfg;
  Parameter tok_emb;       // vocab x width
  Parameter pos_emb;       // max_positions x width, learned absolute
  Parameter query_tokens;  // n_query_tokens x width
  Parameter final_norm;    // 1 x width
  Parameter out_proj;      // width x vocab (untied)
  std::vector<DecoderLayerParams> layers;

  DecoderParams() = default;

  DecoderParams(const ModelConfig& c, uint64_t seed) : cfg(c) {
    c.head_dim();  // validates width/heads
    std::mt19937_64 rng(seed ^ 0xdec0deull);
    int w = c.width;
    tok_emb = Parameter("dec.tok_emb", Tensor::init_uniform(c.vocab_size, w, w, rng));
    pos_emb = Parameter("dec.pos_emb", Tensor::init_uniform(c.max_positions, w, w, rng));
    query_tokens = Parameter("dec.query_tokens", Tensor::init_uniform(c.n_query_tokens, w, w, rng));
    final_norm = Parameter("dec.final_norm", Tensor::full(1, w, 1.0));
    out_proj = Parameter("dec.out_proj", Tensor::init_uniform(w, c.vocab_size, w, rng));
    for (int l = 0; l < c.n_layers; ++l) {
      std::string p = "dec.layer" + std::to_string(l);
      DecoderLayerParams lp;
      lp.wq = Parameter(p + ".wq", Tensor::init_uniform(w, w, w, rng));
      lp.wk = Parameter(p + ".wk", Tensor::init_uniform(w, w, w, rng));
      lp.wv = Parameter(p + ".wv", Tensor::init_uniform(w, w, w, rng));
      lp.wo = Parameter(p + ".wo", Tensor::init_uniform(w, w, w, rng));
      lp.attn_norm = Parameter(p + ".attn_norm", Tensor::full(1, w, 1.0));
      lp.ffn_norm = Parameter(p + ".ffn_norm", Tensor::full(1, w, 1.0));
      lp.w1 = Parameter(p + ".w1", Tensor::init_uniform(w, c.ffn_hidden, w, rng));
      lp.b1 = Parameter(p + ".b1", Tensor(1, c.ffn_hidden));
      lp.w2 = Parameter(p + ".w2", Tensor::init_uniform(c.ffn_hidden, w, c.ffn_hidden, rng));
      lp.b2 = Parameter(p + ".b2", Tensor(1, w));
      layers.push_back(std::move(lp));
    }
  }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> out = {&tok_emb, &pos_emb, &query_tokens, &final_norm, &out_proj};
    for (auto& l : layers)
      for (Parameter* p : {&l.wq, &l.wk, &l.wv, &l.wo, &l.attn_norm, &l.ffn_norm, &l.w1, &l.b1,
                           &l.w2, &l.b2})
        out.push_back(p);
    return out;
  }

  size_t parameter_count() {
    size_t n = 0;
    for (auto* p : all()) n += p->value.size();
    return n;
  }
};

// Conditioning features for one forward pass. For Even/Aware these are the
// per-timestep hidden pairs; for Base both vectors hold the single-frame
// features (plan.time_for_layer always selects the last entry).
struct ConditioningSeq {
  std::vector<Graph::V> image;
  std::vector<Graph::V> tactile;
};

namespace detail {

inline Graph::V causal_mask(Graph& g, int s) {
  Tensor m(s, s);
  for (int i = 0; i < s; ++i)
    for (int j = i + 1; j < s; ++j) m.at(i, j) = -std::numeric_limits<double>::infinity();
  return g.constant(std::move(m));
}

inline Graph::V attention(Graph& g, const DecoderLayerParams& lp, Graph::V x,
                          const ModelConfig& cfg) {
  auto& l = const_cast<DecoderLayerParams&>(lp);
  int s = g.value(x).rows;
  int d = cfg.head_dim();
  Graph::V q = g.matmul(x, g.leaf(l.wq));
  Graph::V k = g.matmul(x, g.leaf(l.wk));
  Graph::V v = g.matmul(x, g.leaf(l.wv));
  Graph::V mask = causal_mask(g, s);
  std::vector<Graph::V> head_outs;
  for (int h = 0; h < cfg.heads; ++h) {
    Graph::V qh = g.slice_cols(q, h * d, (h + 1) * d);
    Graph::V kh = g.slice_cols(k, h * d, (h + 1) * d);
    Graph::V vh = g.slice_cols(v, h * d, (h + 1) * d);
    Graph::V scores = g.scale(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(double(d)));
    Graph::V attn = g.softmax_rows(g.add(scores, mask));
    head_outs.push_back(g.matmul(attn, vh));
  }
  return g.matmul(g.concat_cols(head_outs), g.leaf(l.wo));
}

}  // namespace detail

// Full forward: token + position embeddings (the first n_query_tokens rows
// after BOS come from the learned query table, marked by token id -1), then
// per layer: rms_norm -> causal attention -> gated fusion -> residual ->
// rms_norm -> GELU feed-forward -> residual. Returns logits per position.
inline Graph::V decoder_forward(Graph& g, const std::vector<int>& tokens, FusionPlan* plan,
                                const ConditioningSeq* cond, DecoderParams& params) {
  const ModelConfig& cfg = params.cfg;
  int s = static_cast<int>(tokens.size());
  if (s < 1) throw std::invalid_argument("decoder_forward: empty token sequence");
  if (s > cfg.max_positions)
    throw std::invalid_argument("decoder_forward: sequence length " + std::to_string(s) +
                                " exceeds max_positions " + std::to_string(cfg.max_positions));
  std::vector<Graph::V> rows;
  int qi = 0;
  for (int i = 0; i < s; ++i) {
    if (tokens[i] == -1) {
      if (qi >= cfg.n_query_tokens)
        throw std::invalid_argument("decoder_forward: too many query-token placeholders");
      rows.push_back(g.embed(g.leaf(params.query_tokens), {qi}));
      ++qi;
    } else {
      if (tokens[i] < 0 || tokens[i] >= cfg.vocab_size)
        throw std::invalid_argument("decoder_forward: token " + std::to_string(tokens[i]) +
                                    " out of range [0," + std::to_string(cfg.vocab_size) + ")");
      rows.push_back(g.embed(g.leaf(params.tok_emb), {tokens[i]}));
    }
  }
  Graph::V x = g.concat_rows(rows);
  std::vector<int> positions(s);
  for (int i = 0; i < s; ++i) positions[i] = i;
  x = g.add(x, g.embed(g.leaf(params.pos_emb), positions));

  if (plan && !cond)
    throw std::invalid_argument("decoder_forward: fusion plan given without conditioning");
  if (plan && cond) {
    int need = plan->variant == Variant::Aware || plan->variant == Variant::Even ? plan->T : 1;
    if (static_cast<int>(cond->tactile.size()) < need)
      throw std::invalid_argument("decoder_forward: conditioning sequence shorter than plan T");
  }

  for (int l = 0; l < cfg.n_layers; ++l) {
    DecoderLayerParams& lp = params.layers[l];
    Graph::V a = g.row_scale(g.rms_norm(x), g.leaf(lp.attn_norm));
    Graph::V attn = detail::attention(g, lp, a, cfg);
    if (plan && cond) {
      int t = plan->variant == Variant::Base ? static_cast<int>(cond->tactile.size())
                                             : plan->time_for_layer(l);
      attn = fuse_into_layer(g, attn, cond->image[t - 1], cond->tactile[t - 1], *plan, l);
    }
    x = g.add(x, attn);
    Graph::V f = g.row_scale(g.rms_norm(x), g.leaf(lp.ffn_norm));
    Graph::V ffn = g.add(g.matmul(g.gelu(g.add(g.matmul(f, g.leaf(lp.w1)), g.leaf(lp.b1))),
                                  g.leaf(lp.w2)),
                         g.leaf(lp.b2));
    x = g.add(x, ffn);
  }
  Graph::V y = g.row_scale(g.rms_norm(x), g.leaf(params.final_norm));
  return g.matmul(y, g.leaf(params.out_proj));
}

// The fixed conditioning prompt: [BOS, q1, .., qn]; -1 marks query slots.
inline std::vector<int> prompt_tokens(const ModelConfig& cfg) {
  std::vector<int> t = {0};  // BOS
  for (int i = 0; i < cfg.n_query_tokens; ++i) t.push_back(-1);
  return t;
}

// Greedy decode from the prompt; stops at EOS (token 1) or max_len tokens.
inline std::vector<int> generate_keywords(FusionPlan* plan, const ConditioningSeq* cond,
                                          DecoderParams& params, int max_len,
                                          Graph* graph = nullptr) {
  std::vector<int> tokens = prompt_tokens(params.cfg);
  std::vector<int> out;
  for (int step = 0; step < max_len; ++step) {
    if (static_cast<int>(tokens.size()) >= params.cfg.max_positions) break;
    Graph local;
    Graph& g = graph ? *graph : local;
    Graph::V logits = decoder_forward(g, tokens, plan, cond, params);
    const Tensor& L = g.value(logits);
    int last = L.rows - 1;
    int best = 0;
    for (int j = 1; j < L.cols; ++j)
      if (L.at(last, j) > L.at(last, best)) best = j;
    if (best == 1) break;  // EOS
    out.push_back(best);
    tokens.push_back(best);
  }
  return out;
}

}  // namespace tebi
