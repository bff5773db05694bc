#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "tebi/decoder.hpp"

using namespace tebi;

namespace {

ModelConfig small_model() {
  ModelConfig m;
  m.n_layers = 2;
  m.width = 8;
  m.heads = 2;
  m.vocab_size = 13;
  m.max_positions = 8;
  m.ffn_hidden = 12;
  m.n_query_tokens = 2;
  return m;
}

ConditioningSeq random_cond(Graph& g, int T, int dim, uint64_t seed) {
  std::mt19937_64 rng(seed);
  ConditioningSeq c;
  for (int t = 0; t < T; ++t) {
    c.image.push_back(g.constant(Tensor::randn(1, dim, rng)));
    c.tactile.push_back(g.constant(Tensor::randn(1, dim, rng)));
  }
  return c;
}

}  // namespace

TEST_CASE("decoder logits have one row per token and are deterministic") {
  DecoderParams dec(small_model(), 3);
  std::vector<int> tokens = {0, -1, -1, 5, 7};
  Graph ga, gb;
  auto la = decoder_forward(ga, tokens, nullptr, nullptr, dec);
  auto lb = decoder_forward(gb, tokens, nullptr, nullptr, dec);
  CHECK(ga.value(la).rows == 5);
  CHECK(ga.value(la).cols == 13);
  CHECK(ga.value(la).data == gb.value(lb).data);
  CHECK(ga.value(la).all_finite());
}

TEST_CASE("a zero-gated fusion plan leaves the logits bit-identical") {
  DecoderParams dec(small_model(), 4);
  auto plan = build_plan(Variant::Aware, Group::TactileAndVision, 2, 2, 6, 8, 9);
  std::vector<int> tokens = {0, -1, -1, 4};
  Graph ga, gb;
  auto cond = random_cond(ga, 2, 6, 17);
  auto la = decoder_forward(ga, tokens, &plan, &cond, dec);
  auto lb = decoder_forward(gb, tokens, nullptr, nullptr, dec);
  CHECK(ga.value(la).data == gb.value(lb).data);

  // opening one gate breaks the identity
  plan.gate_tactile[0].value.data[0] = 0.5;
  Graph gc;
  auto cond_c = random_cond(gc, 2, 6, 17);
  auto lc = decoder_forward(gc, tokens, &plan, &cond_c, dec);
  CHECK(gc.value(lc).data != gb.value(lb).data);
}

TEST_CASE("causal masking: earlier logits ignore later tokens") {
  DecoderParams dec(small_model(), 5);
  auto plan = build_plan(Variant::Aware, Group::TactileAndVision, 2, 2, 6, 8, 9);
  plan.gate_tactile[0].value.data[0] = 0.3;
  plan.gate_image[1].value.data[0] = -0.4;
  for (int swap : {3, 4, 5, 6, 7, 8, 9, 10, 11, 12}) {
    std::vector<int> a = {0, -1, -1, 5, 7};
    std::vector<int> b = a;
    b.back() = swap;
    Graph ga, gb;
    auto ca = random_cond(ga, 2, 6, 21);
    auto cb = random_cond(gb, 2, 6, 21);
    auto la = decoder_forward(ga, a, &plan, &ca, dec);
    auto lb = decoder_forward(gb, b, &plan, &cb, dec);
    const Tensor& A = ga.value(la);
    const Tensor& B = gb.value(lb);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < A.cols; ++j) REQUIRE(A.at(i, j) == B.at(i, j));
    if (swap != 7) {
      bool last_differs = false;
      for (int j = 0; j < A.cols; ++j) last_differs = last_differs || A.at(4, j) != B.at(4, j);
      CHECK(last_differs);
    }
  }
}

TEST_CASE("decoder_forward validates its inputs") {
  DecoderParams dec(small_model(), 6);
  Graph g;
  CHECK_THROWS_AS(decoder_forward(g, {}, nullptr, nullptr, dec), std::invalid_argument);
  CHECK_THROWS_AS(decoder_forward(g, {0, 1, 2, 3, 4, 5, 6, 7, 8}, nullptr, nullptr, dec),
                  std::invalid_argument);  // longer than max_positions
  CHECK_THROWS_AS(decoder_forward(g, {0, 13}, nullptr, nullptr, dec), std::invalid_argument);
  CHECK_THROWS_AS(decoder_forward(g, {0, -2}, nullptr, nullptr, dec), std::invalid_argument);
  CHECK_THROWS_AS(decoder_forward(g, {0, -1, -1, -1}, nullptr, nullptr, dec),
                  std::invalid_argument);  // more placeholders than query tokens

  auto plan = build_plan(Variant::Even, Group::TactileOnly, 2, 2, 6, 8, 1);
  CHECK_THROWS_AS(decoder_forward(g, {0, -1}, &plan, nullptr, dec), std::invalid_argument);
  ConditioningSeq short_cond = random_cond(g, 1, 6, 3);
  CHECK_THROWS_AS(decoder_forward(g, {0, -1}, &plan, &short_cond, dec), std::invalid_argument);
}

TEST_CASE("the parameter count is a pure function of the configuration") {
  ModelConfig m = small_model();
  DecoderParams a(m, 1), b(m, 999);
  CHECK(a.parameter_count() == b.parameter_count());

  // independent count from the layout
  size_t w = m.width, v = m.vocab_size, f = m.ffn_hidden;
  size_t per_layer = 4 * w * w + 2 * w + w * f + f + f * w + w;
  size_t expect = v * w + m.max_positions * w + m.n_query_tokens * w + w + w * v +
                  m.n_layers * per_layer;
  CHECK(a.parameter_count() == expect);
}

TEST_CASE("greedy generation is deterministic, bounded, and stops at EOS") {
  DecoderParams dec(small_model(), 8);
  auto g1 = generate_keywords(nullptr, nullptr, dec, 4);
  auto g2 = generate_keywords(nullptr, nullptr, dec, 4);
  CHECK(g1 == g2);
  CHECK(g1.size() <= 4);
  for (int t : g1) {
    CHECK(t >= 0);
    CHECK(t < 13);
    CHECK(t != 1);
  }
  // never runs past max_positions even with a huge budget
  auto g3 = generate_keywords(nullptr, nullptr, dec, 100);
  CHECK(static_cast<int>(g3.size()) <= small_model().max_positions - 3);

  // rig the output projection so EOS wins the very first step
  Graph g;
  auto logits = decoder_forward(g, prompt_tokens(dec.cfg), nullptr, nullptr, dec);
  const Tensor& L = g.value(logits);
  int last = L.rows - 1, best = 0;
  for (int j = 1; j < L.cols; ++j)
    if (L.at(last, j) > L.at(last, best)) best = j;
  double scale = L.at(last, best) > 0 ? 1.1 : 0.9;
  for (int r = 0; r < dec.out_proj.value.rows; ++r)
    dec.out_proj.value.at(r, 1) = scale * dec.out_proj.value.at(r, best);
  CHECK(generate_keywords(nullptr, nullptr, dec, 4).empty());
}

TEST_CASE("decoder loss gradients match finite differences on probed weights") {
  DecoderParams dec(small_model(), 10);
  auto plan = build_plan(Variant::Aware, Group::TactileAndVision, 2, 2, 6, 8, 11);
  plan.gate_tactile[0].value.data[0] = 0.2;
  std::vector<int> tokens = {0, -1, -1, 5, 7};
  std::vector<int> targets = {-1, -1, 5, 7, 1};
  std::mt19937_64 rng(13);
  std::vector<Tensor> cond_img, cond_tac;
  for (int t = 0; t < 2; ++t) {
    cond_img.push_back(Tensor::randn(1, 6, rng));
    cond_tac.push_back(Tensor::randn(1, 6, rng));
  }

  auto run = [&](bool backward) {
    Graph g;
    ConditioningSeq cond;
    for (int t = 0; t < 2; ++t) {
      cond.image.push_back(g.constant(cond_img[t]));
      cond.tactile.push_back(g.constant(cond_tac[t]));
    }
    auto logits = decoder_forward(g, tokens, &plan, &cond, dec);
    auto loss = g.cross_entropy(logits, targets);
    double v = g.value(loss).data[0];
    if (backward) g.backward(loss);
    return v;
  };

  std::vector<Parameter*> probe = {&dec.layers[0].wq, &dec.layers[1].w1, &dec.tok_emb,
                                   &dec.query_tokens, &dec.final_norm, &plan.gate_tactile[0],
                                   &plan.gate_image[1], &plan.proj_tactile};
  for (auto* p : probe) p->zero_grad();
  run(true);
  const double h = 1e-6;
  double worst = 0.0;
  for (auto* p : probe) {
    for (size_t k = 0; k < p->value.size(); k += 5) {
      double saved = p->value.data[k];
      p->value.data[k] = saved + h;
      double up = run(false);
      p->value.data[k] = saved - h;
      double dn = run(false);
      p->value.data[k] = saved;
      double fd = (up - dn) / (2.0 * h);
      double an = p->grad.data[k];
      worst = std::max(worst, std::abs(an - fd) /
                                  std::max({1.0, std::abs(an), std::abs(fd)}));
    }
  }
  CHECK(worst <= 1e-5);
}
