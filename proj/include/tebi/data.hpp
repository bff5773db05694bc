#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tebi/tensor.hpp"

namespace tebi {

// Special token ids; keyword tokens follow in vocabulary order.
inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kPad = 2;
inline constexpr int kNumSpecials = 3;

struct MaterialClass {
  int class_id = 0;
  std::vector<std::string> keywords;
  double hardness = 0.0;           // peak contact pressure, [0,1]
  double texture_frequency = 1.0;  // cycles per frame width
  double relaxation_time = 1.0;    // frames; viscoelastic creep constant
};

struct FramePair {
  Tensor visual;   // H x (W*3), channel-interleaved, [0,1]
  Tensor tactile;  // H x W deformation grid, [0,1]
  int time_index = 0;
};

struct StageMarks {
  int approach_start = 1;
  int contact_start = 0;
  int slide_start = 0;
  int withdraw_start = 0;
};

struct TrajectoryRecord {
  int trajectory_id = 0;
  MaterialClass material;
  int length = 0;
  std::vector<FramePair> frames;
  StageMarks stages;
};

struct TemporalSample {
  int sample_id = 0;
  std::vector<const FramePair*> frames;  // exactly T, consecutive time indices
  std::vector<std::string> keywords;
  int source_trajectory = 0;
  int window_start = 0;  // 1-based
  int class_id = 0;
};

struct DataConfig {
  int grid_h = 8;
  int grid_w = 8;
  int n_classes = 8;
  int traj_length = 12;
  int T = 4;
  int n_trajectories = 200;
  double noise_sigma = 0.02;
};

// The default vocabulary; index in this list + kNumSpecials = token id.
inline std::vector<std::string> default_vocabulary() {
  return {"solid", "soft",     "firm",   "hard",     "smooth",
          "rough", "textured", "ridged", "springy",  "creeping"};
}

// Eight materials. Pairs (4,5) and (6,7) share hardness and texture
// frequency and differ only in relaxation time, so they are separable only
// through the temporal shape of the pressure signal.
inline std::vector<MaterialClass> default_materials() {
  return {
      {0, {"solid", "rough"}, 0.9, 4.0, 0.2},
      {1, {"solid", "smooth"}, 0.9, 1.0, 0.2},
      {2, {"soft", "rough"}, 0.3, 4.0, 0.2},
      {3, {"soft", "smooth"}, 0.3, 1.0, 0.2},
      {4, {"firm", "textured", "springy"}, 0.6, 2.0, 0.2},
      {5, {"firm", "textured", "creeping"}, 0.6, 2.0, 0.5},
      {6, {"hard", "ridged", "springy"}, 0.8, 3.0, 0.2},
      {7, {"hard", "ridged", "creeping"}, 0.8, 3.0, 0.5},
  };
}

inline int keyword_token(const std::string& word, const std::vector<std::string>& vocab) {
  for (size_t i = 0; i < vocab.size(); ++i)
    if (vocab[i] == word) return static_cast<int>(i) + kNumSpecials;
  throw std::invalid_argument("keyword_token: word not in vocabulary: " + word);
}

// Stage starts at fixed fractions 20% / 40% / 80% of the trajectory length.
inline StageMarks stage_marks(int length) {
  StageMarks m;
  m.approach_start = 1;
  m.contact_start = static_cast<int>(0.2 * length) + 1;
  m.slide_start = static_cast<int>(0.4 * length) + 1;
  m.withdraw_start = static_cast<int>(0.8 * length) + 1;
  return m;
}

// Closed-form contact pressure amplitude, dt frames after first contact
// (dt >= 1): hardness * (1 - exp(-dt / relaxation_time)).
inline double contact_amplitude(const MaterialClass& m, int dt) {
  return m.hardness * (1.0 - std::exp(-static_cast<double>(dt) / m.relaxation_time));
}

// Amplitude at absolute frame t (1-based) within a trajectory of the given
// stage layout. Approach and withdraw are silent (the sensor is off the
// surface), so a single frame never exposes the relaxation constant through
// a decay tail; only the contact-onset transient separates materials that
// share hardness and texture.
inline double frame_amplitude(const MaterialClass& m, int t, const StageMarks& s) {
  if (t < s.contact_start || t >= s.withdraw_start) return 0.0;
  return contact_amplitude(m, t - s.contact_start + 1);
}

namespace detail {

inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4b009ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Gaussian noise truncated at +-3 sigma so the quiet-trajectory noise
// floor is a hard bound, then the value is clipped to [0,1].
inline double noisy01(double v, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, sigma);
  double n = std::clamp(dist(rng), -3.0 * sigma, 3.0 * sigma);
  return std::clamp(v + n, 0.0, 1.0);
}

// Store every element as the nearest float32 so dataset files round-trip
// bit-exactly.
inline double quantize(double v) { return static_cast<double>(static_cast<float>(v)); }

// Tint derives from the visible static surface properties only, never the
// class id, so materials that share hardness and texture share a tint and a
// single visual frame cannot separate them.
inline void material_tint(const MaterialClass& m, double rgb[3]) {
  double hue = 2.0 * std::numbers::pi *
               (4.0 * m.hardness + m.texture_frequency) * 0.618033988749895;
  rgb[0] = 0.5 + 0.45 * std::cos(hue);
  rgb[1] = 0.5 + 0.45 * std::cos(hue - 2.0);
  rgb[2] = 0.5 + 0.45 * std::cos(hue + 2.0);
}

}  // namespace detail

inline TrajectoryRecord generate_trajectory(const MaterialClass& material, int length,
                                            uint64_t seed, int trajectory_id = 0,
                                            int grid_h = 8, int grid_w = 8,
                                            double noise_sigma = 0.02) {
  if (length < 8)
    throw std::invalid_argument("generate_trajectory: length must be >= 8, got " +
                                std::to_string(length));
  TrajectoryRecord rec;
  rec.trajectory_id = trajectory_id;
  rec.material = material;
  rec.length = length;
  rec.stages = stage_marks(length);

  std::mt19937_64 rng(detail::mix_seed(seed, static_cast<uint64_t>(trajectory_id)));
  double tint[3];
  detail::material_tint(material, tint);

  double cy = 0.5 * (grid_h - 1), cx = 0.5 * (grid_w - 1);
  double radius = 0.35 * std::min(grid_h, grid_w);

  for (int t = 1; t <= length; ++t) {
    double amp = frame_amplitude(material, t, rec.stages);
    bool sliding = t >= rec.stages.slide_start && t < rec.stages.withdraw_start;
    double phase = sliding ? 0.7 * (t - rec.stages.slide_start + 1) : 0.0;

    FramePair fp;
    fp.time_index = t;
    fp.tactile = Tensor(grid_h, grid_w);
    fp.visual = Tensor(grid_h, grid_w * 3);
    for (int y = 0; y < grid_h; ++y) {
      for (int x = 0; x < grid_w; ++x) {
        double d = std::hypot(y - cy, x - cx);
        double mask = d <= radius ? 1.0 : std::exp(-(d - radius) * (d - radius) * 2.0);
        double tex = 1.0;
        if (sliding) {
          tex = 0.8 + 0.2 * std::sin(2.0 * std::numbers::pi * material.texture_frequency * x /
                                         grid_w +
                                     phase);
        }
        double tac = amp * mask * tex;
        fp.tactile.at(y, x) = detail::quantize(detail::noisy01(tac, noise_sigma, rng));

        // blurred, tinted view of the contact patch
        double blur = std::exp(-d * d / (2.0 * radius * radius));
        double lum = 0.25 + 0.5 * amp * blur;
        for (int c = 0; c < 3; ++c) {
          double v = tint[c] * lum;
          fp.visual.at(y, x * 3 + c) = detail::quantize(detail::noisy01(v, noise_sigma, rng));
        }
      }
    }
    rec.frames.push_back(std::move(fp));
  }
  return rec;
}

// Sliding windows of Eq-style temporal samples: L_traj - T + 1 windows,
// window i covering frames [i, i+T-1] (1-based).
inline std::vector<TemporalSample> build_temporal_samples(const TrajectoryRecord& traj, int T) {
  if (T < 1) throw std::invalid_argument("build_temporal_samples: T must be >= 1");
  if (T > traj.length)
    throw std::invalid_argument("build_temporal_samples: T=" + std::to_string(T) +
                                " exceeds trajectory length " + std::to_string(traj.length));
  std::vector<TemporalSample> out;
  for (int start = 1; start + T - 1 <= traj.length; ++start) {
    TemporalSample s;
    s.sample_id = static_cast<int>(out.size());
    s.source_trajectory = traj.trajectory_id;
    s.window_start = start;
    s.keywords = traj.material.keywords;
    s.class_id = traj.material.class_id;
    for (int t = start; t <= start + T - 1; ++t) s.frames.push_back(&traj.frames[t - 1]);
    out.push_back(std::move(s));
  }
  return out;
}

struct DatasetSplit {
  std::vector<TemporalSample> train;
  std::vector<TemporalSample> test;
  std::vector<int> train_trajectories;
  std::vector<int> test_trajectories;
};

// Split by trajectory id so overlapping windows never straddle the split.
inline DatasetSplit split_dataset(const std::vector<TemporalSample>& samples,
                                  double test_fraction, uint64_t seed) {
  if (test_fraction <= 0.0 || test_fraction >= 1.0)
    throw std::invalid_argument("split_dataset: test_fraction must be in (0,1)");
  std::vector<int> ids;
  for (const auto& s : samples)
    if (std::find(ids.begin(), ids.end(), s.source_trajectory) == ids.end())
      ids.push_back(s.source_trajectory);
  if (ids.size() < 2)
    throw std::invalid_argument("split_dataset: need at least 2 trajectories, got " +
                                std::to_string(ids.size()));
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(detail::mix_seed(seed, 0xda7a));
  std::shuffle(ids.begin(), ids.end(), rng);
  auto n_test = static_cast<size_t>(std::llround(test_fraction * ids.size()));
  DatasetSplit split;
  split.test_trajectories.assign(ids.begin(), ids.begin() + n_test);
  split.train_trajectories.assign(ids.begin() + n_test, ids.end());
  std::sort(split.test_trajectories.begin(), split.test_trajectories.end());
  std::sort(split.train_trajectories.begin(), split.train_trajectories.end());
  for (const auto& s : samples) {
    bool is_test = std::binary_search(split.test_trajectories.begin(),
                                      split.test_trajectories.end(), s.source_trajectory);
    (is_test ? split.test : split.train).push_back(s);
  }
  return split;
}

// Full synthetic dataset: trajectories round-robin over the material table.
inline std::vector<TrajectoryRecord> generate_dataset(const DataConfig& cfg, uint64_t seed) {
  auto materials = default_materials();
  if (cfg.n_classes != static_cast<int>(materials.size()))
    materials.resize(cfg.n_classes);
  std::vector<TrajectoryRecord> out;
  for (int i = 0; i < cfg.n_trajectories; ++i) {
    const auto& m = materials[i % materials.size()];
    out.push_back(generate_trajectory(m, cfg.traj_length, seed, i, cfg.grid_h, cfg.grid_w,
                                      cfg.noise_sigma));
  }
  return out;
}

}  // namespace tebi
