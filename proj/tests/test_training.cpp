#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <algorithm>

#include "tebi/training.hpp"

using namespace tebi;

namespace {

EncoderConfig tiny_encoder(bool use_lstm = true) {
  EncoderConfig c;
  c.grid_h = 3;
  c.grid_w = 3;
  c.feature_dim = 6;
  c.lstm_hidden = 6;
  c.model_dim = 6;
  c.n_classes = 4;
  c.use_lstm = use_lstm;
  return c;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.n_layers = 2;
  m.width = 8;
  m.heads = 2;
  m.vocab_size = 13;
  m.max_positions = 10;
  m.ffn_hidden = 12;
  m.n_query_tokens = 2;
  return m;
}

std::vector<TemporalSample> tiny_samples(std::vector<TrajectoryRecord>& store, int n_traj,
                                         int T, uint64_t seed) {
  auto mats = default_materials();
  store.clear();
  store.reserve(n_traj);
  for (int i = 0; i < n_traj; ++i)
    store.push_back(generate_trajectory(mats[i % 4], 8, seed, i, 3, 3));
  std::vector<TemporalSample> out;
  for (auto& t : store) {
    auto w = build_temporal_samples(t, T);
    out.insert(out.end(), w.begin(), w.end());
  }
  return out;
}

std::vector<double> snapshot(const std::vector<Parameter*>& ps) {
  std::vector<double> out;
  for (auto* p : ps) out.insert(out.end(), p->value.data.begin(), p->value.data.end());
  return out;
}

}  // namespace

TEST_CASE("adam leaves parameters untouched when gradients are zero") {
  Parameter p("p", Tensor(1, 3, {1, 2, 3}));
  AdamState st;
  adam_step({&p}, st, {.lr = 0.1});
  CHECK((p.value.data == std::vector<double>{1, 2, 3}));
}

TEST_CASE("adam with zero learning rate changes nothing") {
  Parameter p("p", Tensor(1, 3, {1, 2, 3}));
  p.grad = Tensor(1, 3, {4, -5, 6});
  AdamState st;
  adam_step({&p}, st, {.lr = 0.0});
  CHECK((p.value.data == std::vector<double>{1, 2, 3}));
}

TEST_CASE("adam skips frozen parameters") {
  Parameter p("p", Tensor(1, 2, {1, 2}));
  p.trainable = false;
  p.grad = Tensor(1, 2, {3, 3});
  AdamState st;
  adam_step({&p}, st, {.lr = 0.5});
  CHECK((p.value.data == std::vector<double>{1, 2}));
}

TEST_CASE("adam minimizes a quadratic in a few hundred steps") {
  Parameter x("x", Tensor::scalar(-4.0));
  AdamState st;
  AdamConfig cfg{.lr = 0.1};
  for (int i = 0; i < 500; ++i) {
    x.zero_grad();
    Graph g;
    auto d = g.add(g.leaf(x), g.constant(Tensor::scalar(-3.0)));
    auto loss = g.mul(d, d);
    g.backward(loss);
    adam_step({&x}, st, cfg);
  }
  CHECK(std::abs(x.value.data[0] - 3.0) < 1e-3);
}

TEST_CASE("global-norm clipping rescales exactly to the bound") {
  Parameter a("a", Tensor(1, 2)), b("b", Tensor(1, 2));
  a.grad = Tensor(1, 2, {3, 0});
  b.grad = Tensor(1, 2, {0, 4});  // global norm 5
  clip_global_norm({&a, &b}, 1.0);
  double norm = std::sqrt(a.grad.data[0] * a.grad.data[0] + b.grad.data[1] * b.grad.data[1]);
  CHECK(norm == Catch::Approx(1.0).epsilon(1e-12));

  a.grad = Tensor(1, 2, {0.1, 0.2});
  b.grad = Tensor(1, 2, {0.0, 0.1});
  Tensor before_a = a.grad, before_b = b.grad;
  clip_global_norm({&a, &b}, 1.0);
  CHECK(a.grad.data == before_a.data);
  CHECK(b.grad.data == before_b.data);
}

TEST_CASE("pretraining is deterministic in the seed") {
  std::vector<TrajectoryRecord> store1, store2;
  auto s1 = tiny_samples(store1, 8, 3, 5);
  auto s2 = tiny_samples(store2, 8, 3, 5);
  TrainConfig t{.epochs = 2, .batch_size = 4, .lr = 1e-3, .seed = 1};
  auto r1 = pretrain(s1, {}, tiny_encoder(), t);
  auto r2 = pretrain(s2, {}, tiny_encoder(), t);
  REQUIRE(r1.history.size() == r2.history.size());
  for (size_t i = 0; i < r1.history.size(); ++i)
    CHECK(r1.history[i].loss == r2.history[i].loss);
  auto p1 = r1.encoder.all(), p2 = r2.encoder.all();
  for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i]->value.data == p2[i]->value.data);
  CHECK(r1.final_train.top1 >= 0.0);
  CHECK(r1.final_train.top1 <= r1.final_train.top5);
}

TEST_CASE("pretraining rejects degenerate inputs") {
  std::vector<TrajectoryRecord> store;
  auto samples = tiny_samples(store, 4, 3, 5);
  TrainConfig t{.epochs = 1, .batch_size = 4};
  CHECK_THROWS_AS(pretrain({}, {}, tiny_encoder(), t), std::invalid_argument);
  std::vector<TemporalSample> one_class;
  for (const auto& s : samples)
    if (s.class_id == 0) one_class.push_back(s);
  CHECK_THROWS_AS(pretrain(one_class, {}, tiny_encoder(), t), std::invalid_argument);
}

TEST_CASE("keyword targets are the shifted keywords plus EOS") {
  std::vector<TrajectoryRecord> store;
  auto samples = tiny_samples(store, 1, 3, 2);
  auto vocab = default_vocabulary();
  auto [tokens, targets] = keyword_targets(samples[0], tiny_model(), vocab);
  // material 0 has keywords {solid, rough}
  int solid = keyword_token("solid", vocab), rough = keyword_token("rough", vocab);
  CHECK((tokens == std::vector<int>{0, -1, -1, solid, rough}));
  CHECK((targets == std::vector<int>{-1, -1, solid, rough, kEos}));
}

TEST_CASE("frozen encoders are bit-identical after finetuning") {
  std::vector<TrajectoryRecord> store;
  auto samples = tiny_samples(store, 4, 2, 7);
  EncoderParams enc(tiny_encoder(), 3);
  auto before = snapshot(enc.all());
  TrainConfig t{.epochs = 1, .batch_size = 4, .lr = 1e-3, .seed = 2};
  auto res = finetune(samples, enc, Variant::Aware, Group::TactileAndVision, tiny_model(), t,
                      default_vocabulary());
  CHECK(snapshot(enc.all()) == before);
  CHECK(res.history.size() == 1);
  CHECK(std::isfinite(res.history[0].loss));
}

TEST_CASE("frozen gates stay at zero and all variants then share one loss curve") {
  std::vector<TrajectoryRecord> store;
  auto samples = tiny_samples(store, 4, 2, 9);
  TrainConfig t{.epochs = 2, .batch_size = 4, .lr = 1e-3, .seed = 4};
  t.freeze_gates = true;
  auto vocab = default_vocabulary();

  std::vector<std::vector<double>> curves;
  for (Variant v : {Variant::Base, Variant::Even, Variant::Aware}) {
    EncoderConfig ec = tiny_encoder(v != Variant::Base);
    EncoderParams enc(ec, 3);
    auto res = finetune(samples, enc, v, Group::TactileAndVision, tiny_model(), t, vocab);
    for (auto& gp : res.plan.gate_image) CHECK(gp.value.data[0] == 0.0);
    for (auto& gp : res.plan.gate_tactile) CHECK(gp.value.data[0] == 0.0);
    std::vector<double> curve;
    for (auto& h : res.history) curve.push_back(h.loss);
    curves.push_back(curve);
  }
  // with the injection pinned to zero the conditioning cannot matter
  CHECK(curves[0] == curves[1]);
  CHECK(curves[1] == curves[2]);
}

TEST_CASE("trainable gates move away from zero during finetuning") {
  std::vector<TrajectoryRecord> store;
  auto samples = tiny_samples(store, 4, 2, 9);
  TrainConfig t{.epochs = 2, .batch_size = 4, .lr = 1e-3, .seed = 4};
  EncoderParams enc(tiny_encoder(), 3);
  auto res = finetune(samples, enc, Variant::Aware, Group::TactileOnly, tiny_model(), t,
                      default_vocabulary());
  bool moved = false;
  for (auto& gp : res.plan.gate_tactile) moved = moved || gp.value.data[0] != 0.0;
  CHECK(moved);
}

TEST_CASE("Base conditioning depends only on the final frame") {
  EncoderParams enc(tiny_encoder(false), 6);
  auto traj_a = generate_trajectory(default_materials()[2], 8, 4, 0, 3, 3);
  auto traj_b = traj_a;
  for (auto& v : traj_b.frames[0].tactile.data) v = std::min(1.0, v + 0.3);
  auto sa = build_temporal_samples(traj_a, 3)[0];
  auto sb = build_temporal_samples(traj_b, 3)[0];
  auto ca = precompute_conditioning(enc, sa, Variant::Base);
  auto cb = precompute_conditioning(enc, sb, Variant::Base);
  REQUIRE(ca.tactile.size() == 1);
  CHECK(ca.tactile[0].data == cb.tactile[0].data);
  CHECK(ca.image[0].data == cb.image[0].data);

  // the recurrent path does see the perturbed early frame
  EncoderParams lstm_enc(tiny_encoder(true), 6);
  auto la = precompute_conditioning(lstm_enc, sa, Variant::Aware);
  auto lb = precompute_conditioning(lstm_enc, sb, Variant::Aware);
  REQUIRE(la.tactile.size() == 3);
  CHECK(la.tactile[2].data != lb.tactile[2].data);
}

TEST_CASE("predicted keyword sets contain only vocabulary words") {
  std::vector<TrajectoryRecord> store;
  auto samples = tiny_samples(store, 4, 2, 11);
  EncoderParams enc(tiny_encoder(), 3);
  TrainConfig t{.epochs = 1, .batch_size = 4, .lr = 1e-3, .seed = 5};
  auto vocab = default_vocabulary();
  auto res = finetune(samples, enc, Variant::Even, Group::TactileAndVision, tiny_model(), t,
                      vocab);
  auto words = predict_keywords(enc, res.plan, res.decoder, samples[0], vocab);
  for (const auto& w : words)
    CHECK(std::find(vocab.begin(), vocab.end(), w) != vocab.end());
}

TEST_CASE("metrics csv has the documented header and one line per row") {
  auto path = std::filesystem::temp_directory_path() / "tebi_metrics_test.csv";
  write_metrics_csv({{1, "train", 0.5, 10, 20, 30, 40}, {1, "test", 0.6, 9, 19, 29, 39}},
                    path.string());
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "epoch,split,loss,top1,top5,retrieval_top1,retrieval_top5");
  int rows = 0;
  while (std::getline(f, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
}
