#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tebi/graph.hpp"

namespace tebi {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int worst_param = -1;
  int worst_index = -1;
  bool pass = false;
};

// Central finite differences (step 1e-6, double) against the tape gradient.
// fn must build a scalar loss on the given graph from leaves of the given
// parameters; it is re-invoked for every probe, so it must be a pure
// function of the parameter values.
inline GradCheckReport grad_check(
    const std::function<Graph::V(Graph&, std::vector<Parameter>&)>& fn,
    std::vector<Parameter>& params, double tolerance, double step = 1e-6) {
  auto eval = [&]() {
    Graph g;
    Graph::V loss = fn(g, params);
    return g.value(loss).data[0];
  };

  for (auto& p : params) p.zero_grad();
  {
    Graph g;
    Graph::V loss = fn(g, params);
    g.backward(loss);
  }

  GradCheckReport rep;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = params[pi];
    if (!p.trainable) continue;
    for (size_t k = 0; k < p.value.size(); ++k) {
      double saved = p.value.data[k];
      p.value.data[k] = saved + step;
      double up = eval();
      p.value.data[k] = saved - step;
      double down = eval();
      p.value.data[k] = saved;
      double fd = (up - down) / (2.0 * step);
      double an = p.grad.data[k];
      double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = static_cast<int>(pi);
        rep.worst_index = static_cast<int>(k);
      }
    }
  }
  rep.pass = rep.max_rel_err <= tolerance;
  return rep;
}

}  // namespace tebi
