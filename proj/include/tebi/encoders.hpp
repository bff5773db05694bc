#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tebi/data.hpp"
#include "tebi/graph.hpp"

namespace tebi {

struct EncoderConfig {
  int grid_h = 8;
  int grid_w = 8;
  int feature_dim = 64;  // D_f, per-frame feature width
  int lstm_hidden = 64;
  int model_dim = 64;  // D_h, equals the decoder width
  int n_classes = 8;
  double temperature = 0.1;
  bool use_lstm = true;  // false: the single-frame Base encoder
};

struct Linear {
  Parameter w;  // in x out
  Parameter b;  // 1 x out

  Linear() = default;
  Linear(const std::string& name, int in, int out, std::mt19937_64& rng)
      : w(name + ".w", Tensor::init_uniform(in, out, in, rng)),
        b(name + ".b", Tensor(1, out)) {}

  Graph::V apply(Graph& g, Graph::V x) const {
    return g.add(g.matmul(x, g.leaf(const_cast<Parameter&>(w))),
                 g.leaf(const_cast<Parameter&>(b)));
  }
};

// linear -> GELU -> linear
struct Mlp2 {
  Linear l1, l2;

  Mlp2() = default;
  Mlp2(const std::string& name, int in, int mid, int out, std::mt19937_64& rng)
      : l1(name + ".l1", in, mid, rng), l2(name + ".l2", mid, out, rng) {}

  Graph::V apply(Graph& g, Graph::V x) const { return l2.apply(g, g.gelu(l1.apply(g, x))); }
};

// One LSTM layer with fused gate matrices, gate order [input, forget,
// candidate, output]. Forget-gate bias initializes to 1.
struct LstmLayerParams {
  Parameter w;  // in x 4H
  Parameter u;  // H x 4H
  Parameter b;  // 1 x 4H
  int hidden = 0;

  LstmLayerParams() = default;
  LstmLayerParams(const std::string& name, int in, int h, std::mt19937_64& rng)
      : w(name + ".w", Tensor::init_uniform(in, 4 * h, in, rng)),
        u(name + ".u", Tensor::init_uniform(h, 4 * h, h, rng)),
        b(name + ".b", Tensor(1, 4 * h)),
        hidden(h) {
    for (int j = h; j < 2 * h; ++j) b.value.at(0, j) = 1.0;
  }

  // One recurrence step: returns (h, c).
  std::pair<Graph::V, Graph::V> step(Graph& g, Graph::V x, Graph::V h_prev,
                                     Graph::V c_prev) const {
    auto& self = const_cast<LstmLayerParams&>(*this);
    Graph::V pre = g.add(g.add(g.matmul(x, g.leaf(self.w)), g.matmul(h_prev, g.leaf(self.u))),
                         g.leaf(self.b));
    int h = hidden;
    Graph::V gi = g.sigmoid(g.slice_cols(pre, 0, h));
    Graph::V gf = g.sigmoid(g.slice_cols(pre, h, 2 * h));
    Graph::V gc = g.tanh(g.slice_cols(pre, 2 * h, 3 * h));
    Graph::V go = g.sigmoid(g.slice_cols(pre, 3 * h, 4 * h));
    Graph::V c = g.add(g.mul(gf, c_prev), g.mul(gi, gc));
    Graph::V hh = g.mul(go, g.tanh(c));
    return {hh, c};
  }
};

struct ModalityEncoderParams {
  Mlp2 frame;  // flattened frame -> D_f
  LstmLayerParams lstm1, lstm2;
  Mlp2 proj;  // lstm output (or frame feature, Base) -> D_h
};

struct EncoderParams {
  EncoderConfig cfg;
  ModalityEncoderParams image, tactile;
  Linear head;  // concat(h_image, h_tactile) -> class logits

  EncoderParams() = default;

  EncoderParams(const EncoderConfig& c, uint64_t seed) : cfg(c) {
    std::mt19937_64 rng(seed ^ 0xe2c0de5ull);
    auto build = [&](const std::string& name, int in_dim) {
      ModalityEncoderParams m;
      m.frame = Mlp2(name + ".frame", in_dim, c.feature_dim, c.feature_dim, rng);
      if (c.use_lstm) {
        m.lstm1 = LstmLayerParams(name + ".lstm1", c.feature_dim, c.lstm_hidden, rng);
        m.lstm2 = LstmLayerParams(name + ".lstm2", c.lstm_hidden, c.lstm_hidden, rng);
        m.proj = Mlp2(name + ".proj", c.lstm_hidden, c.model_dim, c.model_dim, rng);
      } else {
        m.proj = Mlp2(name + ".proj", c.feature_dim, c.model_dim, c.model_dim, rng);
      }
      return m;
    };
    image = build("image", c.grid_h * c.grid_w * 3);
    tactile = build("tactile", c.grid_h * c.grid_w);
    head = Linear("head", 2 * c.model_dim, c.n_classes, rng);
  }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> out;
    for (ModalityEncoderParams* m : {&image, &tactile}) {
      for (Linear* l : {&m->frame.l1, &m->frame.l2, &m->proj.l1, &m->proj.l2}) {
        out.push_back(&l->w);
        out.push_back(&l->b);
      }
      if (cfg.use_lstm) {
        for (LstmLayerParams* l : {&m->lstm1, &m->lstm2}) {
          out.push_back(&l->w);
          out.push_back(&l->u);
          out.push_back(&l->b);
        }
      }
    }
    out.push_back(&head.w);
    out.push_back(&head.b);
    return out;
  }
};

inline Graph::V frame_constant(Graph& g, const Tensor& grid) {
  Tensor flat(1, static_cast<int>(grid.size()), grid.data);
  return g.constant(std::move(flat));
}

// Per-frame features (f_image, f_tactile), each 1 x D_f.
inline std::pair<Graph::V, Graph::V> encode_frame(Graph& g, const EncoderParams& p,
                                                  const FramePair& frame) {
  const auto& c = p.cfg;
  if (frame.tactile.rows != c.grid_h || frame.tactile.cols != c.grid_w ||
      frame.visual.rows != c.grid_h || frame.visual.cols != c.grid_w * 3) {
    throw std::invalid_argument("encode_frame: frame grids " + frame.visual.shape_str() + "/" +
                                frame.tactile.shape_str() + " do not match configured " +
                                std::to_string(c.grid_h) + "x" + std::to_string(c.grid_w));
  }
  Graph::V fi = p.image.frame.apply(g, frame_constant(g, frame.visual));
  Graph::V ft = p.tactile.frame.apply(g, frame_constant(g, frame.tactile));
  return {fi, ft};
}

// Two stacked LSTM layers over the feature sequence, then the MLP
// projection per step. Initial hidden and cell states are zero.
inline std::vector<Graph::V> lstm_encode(Graph& g, const ModalityEncoderParams& m,
                                         const std::vector<Graph::V>& features,
                                         int lstm_hidden) {
  if (features.empty()) throw std::invalid_argument("lstm_encode: empty feature sequence");
  Graph::V h1 = g.constant(Tensor(1, lstm_hidden));
  Graph::V c1 = h1;
  Graph::V h2 = g.constant(Tensor(1, lstm_hidden));
  Graph::V c2 = h2;
  std::vector<Graph::V> out;
  for (Graph::V f : features) {
    std::tie(h1, c1) = m.lstm1.step(g, f, h1, c1);
    std::tie(h2, c2) = m.lstm2.step(g, h1, h2, c2);
    out.push_back(m.proj.apply(g, h2));
  }
  return out;
}

struct HiddenPairSeq {
  std::vector<Graph::V> image;    // h_image^1..T, each 1 x D_h
  std::vector<Graph::V> tactile;  // h_tactile^1..T
};

// LSTM path: per-timestep projected hidden states for both modalities.
inline HiddenPairSeq encode_hidden_sequence(Graph& g, const EncoderParams& p,
                                            const TemporalSample& sample) {
  std::vector<Graph::V> fi, ft;
  for (const FramePair* f : sample.frames) {
    auto [a, b] = encode_frame(g, p, *f);
    fi.push_back(a);
    ft.push_back(b);
  }
  HiddenPairSeq seq;
  seq.image = lstm_encode(g, p.image, fi, p.cfg.lstm_hidden);
  seq.tactile = lstm_encode(g, p.tactile, ft, p.cfg.lstm_hidden);
  return seq;
}

// Base path: projected single-frame features of the last frame only.
inline std::pair<Graph::V, Graph::V> encode_single_frame(Graph& g, const EncoderParams& p,
                                                         const TemporalSample& sample) {
  auto [fi, ft] = encode_frame(g, p, *sample.frames.back());
  return {p.image.proj.apply(g, fi), p.tactile.proj.apply(g, ft)};
}

struct PretrainForward {
  Graph::V class_logits;  // B x K
  Graph::V similarity;    // B x B, cosine(h_tactile_i, h_image_j) / temperature
};

// Stage-1 forward over a batch: classification logits from the final
// hidden pair and the in-batch tactile-to-image similarity matrix.
inline PretrainForward pretrain_forward(Graph& g, const EncoderParams& p,
                                        const std::vector<const TemporalSample*>& batch) {
  std::vector<Graph::V> img_rows, tac_rows;
  for (const TemporalSample* s : batch) {
    Graph::V hi, ht;
    if (p.cfg.use_lstm) {
      auto seq = encode_hidden_sequence(g, p, *s);
      hi = seq.image.back();
      ht = seq.tactile.back();
    } else {
      std::tie(hi, ht) = encode_single_frame(g, p, *s);
    }
    img_rows.push_back(hi);
    tac_rows.push_back(ht);
  }
  Graph::V H_img = g.concat_rows(img_rows);
  Graph::V H_tac = g.concat_rows(tac_rows);
  PretrainForward out;
  out.class_logits = p.head.apply(g, g.concat_cols({H_img, H_tac}));
  // cosine via rms-normalized rows: a.b / (|a||b|) = (a/rms_a).(b/rms_b) / D
  Graph::V sim = g.matmul(g.rms_norm(H_tac), g.transpose(g.rms_norm(H_img)));
  out.similarity = g.scale(sim, 1.0 / (p.cfg.model_dim * p.cfg.temperature));
  return out;
}

}  // namespace tebi
