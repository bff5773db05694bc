#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tebi {

// Dense row-major matrix of doubles. Scalars are 1x1, row vectors 1xn.
// Verification runs in double throughout; files store float32 (see io.hpp).
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {
    if (r < 0 || c < 0) throw std::invalid_argument("Tensor: negative shape");
  }
  Tensor(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
    if (static_cast<size_t>(r) * c != data.size())
      throw std::invalid_argument("Tensor: element count does not match shape");
  }

  static Tensor scalar(double v) {
    Tensor t(1, 1);
    t.data[0] = v;
    return t;
  }

  static Tensor zeros(int r, int c) { return Tensor(r, c); }

  static Tensor full(int r, int c, double v) {
    Tensor t(r, c);
    for (auto& x : t.data) x = v;
    return t;
  }

  // Uniform(-s, s) with s = 1/sqrt(fan_in); the standard small-net init.
  static Tensor init_uniform(int r, int c, int fan_in, std::mt19937_64& rng) {
    double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-s, s);
    Tensor t(r, c);
    for (auto& x : t.data) x = dist(rng);
    return t;
  }

  static Tensor randn(int r, int c, std::mt19937_64& rng, double sigma = 1.0) {
    std::normal_distribution<double> dist(0.0, sigma);
    Tensor t(r, c);
    for (auto& x : t.data) x = dist(rng);
    return t;
  }

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return data.size(); }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << rows << "x" << cols;
    return os.str();
  }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    std::ostringstream os;
    os << op << ": shape mismatch " << a.shape_str() << " vs " << b.shape_str();
    throw std::invalid_argument(os.str());
  }
}

}  // namespace tebi
