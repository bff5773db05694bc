#pragma once

#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tebi/graph.hpp"

namespace tebi {

enum class Variant { Base, Even, Aware };
enum class Group { TactileAndVision, TactileOnly };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Base: return "base";
    case Variant::Even: return "even";
    case Variant::Aware: return "aware";
  }
  return "?";
}

inline const char* group_name(Group g) {
  return g == Group::TactileAndVision ? "tactile_and_vision" : "tactile_only";
}

// Partition of n attention layers into T contiguous, ordered blocks, sizes
// differing by at most 1. Hidden state h^t feeds block t.
struct LayerAssignment {
  int n_layers = 0;
  int T = 0;
  std::vector<std::pair<int, int>> blocks;  // inclusive [first, last] per t
};

// When T does not divide n, the extra layers go to the deepest blocks:
// T - r blocks of floor(n/T) first, then r blocks of floor(n/T) + 1.
inline LayerAssignment assign_layers(int n_layers, int T) {
  if (n_layers < 1 || T < 1)
    throw std::invalid_argument("assign_layers: n_layers and T must be >= 1");
  if (T > n_layers)
    throw std::invalid_argument("assign_layers: T=" + std::to_string(T) + " exceeds n_layers=" +
                                std::to_string(n_layers));
  LayerAssignment a;
  a.n_layers = n_layers;
  a.T = T;
  int base = n_layers / T;
  int extra = n_layers % T;
  int next = 0;
  for (int t = 0; t < T; ++t) {
    int size = base + (t >= T - extra ? 1 : 0);
    a.blocks.emplace_back(next, next + size - 1);
    next += size;
  }
  return a;
}

// The 1-based time index t whose block contains the given layer.
inline int select_hidden_for_layer(const LayerAssignment& a, int layer_index) {
  if (layer_index < 0 || layer_index >= a.n_layers)
    throw std::invalid_argument("select_hidden_for_layer: layer " +
                                std::to_string(layer_index) + " out of range [0," +
                                std::to_string(a.n_layers) + ")");
  for (int t = 0; t < a.T; ++t)
    if (layer_index >= a.blocks[t].first && layer_index <= a.blocks[t].second) return t + 1;
  throw std::logic_error("select_hidden_for_layer: assignment is not a partition");
}

// Per-layer zero-initialized scalar gates (through tanh) plus one linear
// injection projection per modality, shared across layers.
struct FusionPlan {
  Variant variant = Variant::Aware;
  Group group = Group::TactileAndVision;
  int n_layers = 0;
  int T = 0;
  LayerAssignment assignment;           // Aware only
  std::vector<Parameter> gate_image;    // one 1x1 per layer, init 0
  std::vector<Parameter> gate_tactile;  // one 1x1 per layer, init 0
  Parameter proj_image;                 // D_h x width
  Parameter proj_tactile;

  // 1-based time index injected at this layer. Base reads the single last
  // frame, reported as T for uniformity.
  int time_for_layer(int layer_index) const {
    if (layer_index < 0 || layer_index >= n_layers)
      throw std::invalid_argument("time_for_layer: layer " + std::to_string(layer_index) +
                                  " out of range [0," + std::to_string(n_layers) + ")");
    if (variant == Variant::Aware) return select_hidden_for_layer(assignment, layer_index);
    return T;
  }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> out;
    for (auto& p : gate_image) out.push_back(&p);
    for (auto& p : gate_tactile) out.push_back(&p);
    out.push_back(&proj_image);
    out.push_back(&proj_tactile);
    return out;
  }

  std::string describe() const {
    std::ostringstream os;
    os << "variant=" << variant_name(variant) << " group=" << group_name(group)
       << " n_layers=" << n_layers << " T=" << T << "\n";
    for (int l = 0; l < n_layers; ++l) os << "layer " << l << " <- h^" << time_for_layer(l) << "\n";
    return os.str();
  }
};

inline FusionPlan build_plan(Variant variant, Group group, int n_layers, int T, int hidden_dim,
                             int width, uint64_t seed) {
  if (n_layers < 1 || T < 1 || T > n_layers)
    throw std::invalid_argument("build_plan: need 1 <= T <= n_layers, got T=" +
                                std::to_string(T) + ", n_layers=" + std::to_string(n_layers));
  FusionPlan plan;
  plan.variant = variant;
  plan.group = group;
  plan.n_layers = n_layers;
  plan.T = T;
  if (variant == Variant::Aware) plan.assignment = assign_layers(n_layers, T);
  std::mt19937_64 rng(seed ^ 0xf051ull);
  for (int l = 0; l < n_layers; ++l) {
    plan.gate_image.emplace_back("fusion.gate_image." + std::to_string(l), Tensor(1, 1));
    plan.gate_tactile.emplace_back("fusion.gate_tactile." + std::to_string(l), Tensor(1, 1));
  }
  plan.proj_image = Parameter("fusion.proj_image",
                              Tensor::init_uniform(hidden_dim, width, hidden_dim, rng));
  plan.proj_tactile = Parameter("fusion.proj_tactile",
                                Tensor::init_uniform(hidden_dim, width, hidden_dim, rng));
  return plan;
}

// layer_output + tanh(g_img) * (h_image proj) + tanh(g_tac) * (h_tactile
// proj), each injected vector broadcast over token rows. The image term is
// omitted entirely in the tactile-only group. With all gates at 0 this is
// an exact identity.
inline Graph::V fuse_into_layer(Graph& g, Graph::V layer_output, Graph::V h_image,
                                Graph::V h_tactile, FusionPlan& plan, int layer_index) {
  if (layer_index < 0 || layer_index >= plan.n_layers)
    throw std::invalid_argument("fuse_into_layer: layer " + std::to_string(layer_index) +
                                " out of range [0," + std::to_string(plan.n_layers) + ")");
  int width = plan.proj_tactile.value.cols;
  if (g.value(layer_output).cols != width) {
    std::ostringstream os;
    os << "fuse_into_layer: activations " << g.value(layer_output).shape_str()
       << " do not match decoder width " << width;
    throw std::invalid_argument(os.str());
  }
  Graph::V out = layer_output;
  Graph::V tac = g.scalar_mul(g.tanh(g.leaf(plan.gate_tactile[layer_index])),
                              g.matmul(h_tactile, g.leaf(plan.proj_tactile)));
  out = g.add(out, tac);
  if (plan.group == Group::TactileAndVision) {
    Graph::V img = g.scalar_mul(g.tanh(g.leaf(plan.gate_image[layer_index])),
                                g.matmul(h_image, g.leaf(plan.proj_image)));
    out = g.add(out, img);
  }
  return out;
}

}  // namespace tebi
