#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tebi/data.hpp"
#include "tebi/eval.hpp"
#include "tebi/training.hpp"

namespace tebi {

struct AblationConfig {
  DataConfig data;
  EncoderConfig encoder;
  ModelConfig model;
  TrainConfig pretrain_cfg{.epochs = 10, .lr = 1e-3};
  TrainConfig finetune_cfg{.epochs = 15, .lr = 3e-4};
  double test_fraction = 0.1;
  int jobs = 1;
};

struct SummaryStat {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> per_seed;

  void finalize() {
    if (per_seed.empty()) return;
    double s = 0;
    for (double v : per_seed) s += v;
    mean = s / per_seed.size();
    double sq = 0;
    for (double v : per_seed) sq += (v - mean) * (v - mean);
    stddev = per_seed.size() > 1 ? std::sqrt(sq / (per_seed.size() - 1)) : 0.0;
  }
};

struct MetricsReport {
  struct Cell {
    SummaryStat score;  // mean keyword score in [0,5]
    SummaryStat nonempty_fraction;
    bool failed = false;
    std::string error;
  };
  // indexed [variant][group]
  Cell cells[3][2];
  struct Stage1 {
    SummaryStat top1, top5, retrieval_top1, retrieval_top5;
  };
  Stage1 stage1_base, stage1_lstm;
  std::vector<uint64_t> seeds;
  std::string config_fingerprint;
};

// Full-scale results from the source experiments, for side-by-side context
// only. Magnitudes depend on a 7B backbone and the original dataset and are
// explicitly not reproduced at this scale.
struct ReferenceValues {
  static constexpr double base_top1 = 51.12, base_top5 = 74.41;
  static constexpr double lstm_top1 = 62.75, lstm_top5 = 91.37;
  static constexpr double score[3][2] = {
      {3.736, 1.414},  // base: tactile&vision, tactile-only
      {3.582, 2.480},  // even
      {4.031, 2.605},  // aware
  };
};

namespace detail {

inline std::string fingerprint(const AblationConfig& cfg, const std::vector<uint64_t>& seeds) {
  std::ostringstream os;
  os << cfg.data.grid_h << "," << cfg.data.grid_w << "," << cfg.data.n_classes << ","
     << cfg.data.traj_length << "," << cfg.data.T << "," << cfg.data.n_trajectories << ","
     << cfg.model.n_layers << "," << cfg.model.width << "," << cfg.model.heads << ","
     << cfg.pretrain_cfg.epochs << "," << cfg.pretrain_cfg.lr << ","
     << cfg.finetune_cfg.epochs << "," << cfg.finetune_cfg.lr << ","
     << cfg.finetune_cfg.batch_size << "," << cfg.test_fraction;
  for (auto s : seeds) os << ";" << s;
  std::string str = os.str();
  uint64_t h = 1469598103934665603ull;
  for (char c : str) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  std::ostringstream hex;
  hex << std::hex << h;
  return hex.str();
}

inline void run_tasks(std::vector<std::function<void()>>& tasks, int jobs) {
  if (jobs <= 1) {
    for (auto& t : tasks) t();
    return;
  }
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      tasks[i]();
    }
  };
  std::vector<std::thread> pool;
  for (int i = 0; i < jobs && i < static_cast<int>(tasks.size()); ++i)
    pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

}  // namespace detail

struct CellOutcome {
  double mean_score = 0.0;
  double nonempty_fraction = 0.0;
  bool failed = false;
  std::string error;
};

// One finetune + keyword-score evaluation cell. Uses its own copy of the
// pretrained encoder so cells can run in parallel.
inline CellOutcome run_cell(EncoderParams enc, Variant variant, Group group,
                            const std::vector<TemporalSample>& train,
                            const std::vector<TemporalSample>& test,
                            const AblationConfig& cfg, uint64_t seed,
                            const std::vector<std::string>& vocab) {
  CellOutcome out;
  try {
    TrainConfig ft = cfg.finetune_cfg;
    ft.seed = seed;
    auto res = finetune(train, enc, variant, group, cfg.model, ft, vocab);
    double score_sum = 0;
    int nonempty = 0;
    for (const auto& s : test) {
      auto pred = predict_keywords(enc, res.plan, res.decoder, s, vocab);
      std::set<std::string> truth(s.keywords.begin(), s.keywords.end());
      score_sum += keyword_score(pred, truth);
      if (!pred.empty()) ++nonempty;
    }
    out.mean_score = test.empty() ? 0.0 : score_sum / test.size();
    out.nonempty_fraction = test.empty() ? 0.0 : static_cast<double>(nonempty) / test.size();
  } catch (const std::exception& e) {
    out.failed = true;
    out.error = e.what();
  }
  return out;
}

// The full experimental grid: per seed, stage-1 pretraining of the LSTM and
// Base encoders, then stage-2 finetuning and evaluation of all six
// (variant x group) cells. Failures mark their cell and the rest proceed.
inline MetricsReport run_ablation(const std::vector<TrajectoryRecord>& records,
                                  const std::vector<uint64_t>& seeds,
                                  const AblationConfig& cfg) {
  auto vocab = default_vocabulary();
  std::vector<TemporalSample> samples;
  std::vector<std::vector<TemporalSample>> per_traj;
  for (const auto& rec : records) per_traj.push_back(build_temporal_samples(rec, cfg.data.T));
  for (const auto& v : per_traj) samples.insert(samples.end(), v.begin(), v.end());

  MetricsReport report;
  report.seeds = seeds;
  report.config_fingerprint = detail::fingerprint(cfg, seeds);

  struct SeedOutcome {
    PretrainEval base_eval, lstm_eval;
    CellOutcome cells[3][2];
  };
  std::vector<SeedOutcome> outcomes(seeds.size());

  std::vector<std::function<void()>> tasks;
  for (size_t si = 0; si < seeds.size(); ++si) {
    tasks.push_back([&, si] {
      uint64_t seed = seeds[si];
      auto split = split_dataset(samples, cfg.test_fraction, seed);

      EncoderConfig lstm_cfg = cfg.encoder;
      lstm_cfg.use_lstm = true;
      EncoderConfig base_cfg = cfg.encoder;
      base_cfg.use_lstm = false;
      TrainConfig pt = cfg.pretrain_cfg;
      pt.seed = seed;
      auto lstm_pre = pretrain(split.train, split.test, lstm_cfg, pt);
      auto base_pre = pretrain(split.train, split.test, base_cfg, pt);
      outcomes[si].lstm_eval = lstm_pre.final_test;
      outcomes[si].base_eval = base_pre.final_test;

      std::vector<std::function<void()>> cell_tasks;
      for (Variant v : {Variant::Base, Variant::Even, Variant::Aware}) {
        for (Group grp : {Group::TactileAndVision, Group::TactileOnly}) {
          EncoderParams& enc = v == Variant::Base ? base_pre.encoder : lstm_pre.encoder;
          cell_tasks.push_back([&, v, grp, enc] {
            outcomes[si].cells[static_cast<int>(v)][static_cast<int>(grp)] =
                run_cell(enc, v, grp, split.train, split.test, cfg, seed, vocab);
          });
        }
      }
      detail::run_tasks(cell_tasks, cfg.jobs);
    });
  }
  // seeds run sequentially; cells within a seed honor cfg.jobs
  for (auto& t : tasks) t();

  for (size_t si = 0; si < seeds.size(); ++si) {
    const auto& o = outcomes[si];
    report.stage1_base.top1.per_seed.push_back(o.base_eval.top1);
    report.stage1_base.top5.per_seed.push_back(o.base_eval.top5);
    report.stage1_base.retrieval_top1.per_seed.push_back(o.base_eval.retrieval_top1);
    report.stage1_base.retrieval_top5.per_seed.push_back(o.base_eval.retrieval_top5);
    report.stage1_lstm.top1.per_seed.push_back(o.lstm_eval.top1);
    report.stage1_lstm.top5.per_seed.push_back(o.lstm_eval.top5);
    report.stage1_lstm.retrieval_top1.per_seed.push_back(o.lstm_eval.retrieval_top1);
    report.stage1_lstm.retrieval_top5.per_seed.push_back(o.lstm_eval.retrieval_top5);
    for (int v = 0; v < 3; ++v)
      for (int grp = 0; grp < 2; ++grp) {
        const CellOutcome& c = o.cells[v][grp];
        auto& cell = report.cells[v][grp];
        if (c.failed) {
          cell.failed = true;
          cell.error = c.error;
        } else {
          cell.score.per_seed.push_back(c.mean_score);
          cell.nonempty_fraction.per_seed.push_back(c.nonempty_fraction);
        }
      }
  }
  for (auto* s : {&report.stage1_base, &report.stage1_lstm}) {
    s->top1.finalize();
    s->top5.finalize();
    s->retrieval_top1.finalize();
    s->retrieval_top5.finalize();
  }
  for (int v = 0; v < 3; ++v)
    for (int grp = 0; grp < 2; ++grp) {
      report.cells[v][grp].score.finalize();
      report.cells[v][grp].nonempty_fraction.finalize();
    }

  // top-1 can never exceed top-5 under the metric definition
  for (const auto* s : {&report.stage1_base, &report.stage1_lstm})
    for (size_t i = 0; i < s->top1.per_seed.size(); ++i)
      if (s->top1.per_seed[i] > s->top5.per_seed[i] + 1e-12)
        throw std::logic_error("run_ablation: top-1 exceeds top-5 in report");
  return report;
}

inline const char* variant_label(int v) {
  return v == 0 ? "base" : v == 1 ? "even" : "aware";
}
inline const char* group_label(int g) { return g == 0 ? "tactile_and_vision" : "tactile_only"; }

inline void write_report_csv(const MetricsReport& r, const std::filesystem::path& path) {
  std::ofstream f(path);
  f.precision(6);
  f << std::fixed;
  f << "variant,group,seed,score,nonempty_fraction\n";
  for (int v = 0; v < 3; ++v)
    for (int grp = 0; grp < 2; ++grp) {
      const auto& c = r.cells[v][grp];
      for (size_t i = 0; i < c.score.per_seed.size(); ++i)
        f << variant_label(v) << "," << group_label(grp) << "," << r.seeds[i] << ","
          << c.score.per_seed[i] << "," << c.nonempty_fraction.per_seed[i] << "\n";
    }
}

inline void write_report_text(const MetricsReport& r, const std::filesystem::path& path) {
  std::ofstream f(path);
  f.precision(6);
  f << std::fixed;
  f << "config_fingerprint " << r.config_fingerprint << "\n";
  f << "seeds";
  for (auto s : r.seeds) f << " " << s;
  f << "\n";
  auto stage1 = [&](const char* name, const MetricsReport::Stage1& s) {
    f << "stage1." << name << ".top1.mean " << s.top1.mean << "\n";
    f << "stage1." << name << ".top1.stddev " << s.top1.stddev << "\n";
    f << "stage1." << name << ".top5.mean " << s.top5.mean << "\n";
    f << "stage1." << name << ".top5.stddev " << s.top5.stddev << "\n";
    f << "stage1." << name << ".retrieval_top1.mean " << s.retrieval_top1.mean << "\n";
    f << "stage1." << name << ".retrieval_top5.mean " << s.retrieval_top5.mean << "\n";
  };
  stage1("base", r.stage1_base);
  stage1("lstm", r.stage1_lstm);
  for (int v = 0; v < 3; ++v)
    for (int grp = 0; grp < 2; ++grp) {
      const auto& c = r.cells[v][grp];
      std::string key = std::string(variant_label(v)) + "." + group_label(grp);
      if (c.failed) {
        f << key << ".failed " << c.error << "\n";
        continue;
      }
      f << key << ".score.mean " << c.score.mean << "\n";
      f << key << ".score.stddev " << c.score.stddev << "\n";
      f << key << ".nonempty.mean " << c.nonempty_fraction.mean << "\n";
    }
  f << "# full-scale reference values (NOT reproduced at this scale):\n";
  f << "reference.stage1.base.top1 " << ReferenceValues::base_top1 << "\n";
  f << "reference.stage1.base.top5 " << ReferenceValues::base_top5 << "\n";
  f << "reference.stage1.lstm.top1 " << ReferenceValues::lstm_top1 << "\n";
  f << "reference.stage1.lstm.top5 " << ReferenceValues::lstm_top5 << "\n";
  for (int v = 0; v < 3; ++v)
    for (int grp = 0; grp < 2; ++grp)
      f << "reference." << variant_label(v) << "." << group_label(grp) << ".score "
        << ReferenceValues::score[v][grp] << "\n";
}

// Standalone vector-graphics bar chart of the six score cells.
inline void write_report_svg(const MetricsReport& r, const std::filesystem::path& path) {
  std::ofstream f(path);
  int w = 640, h = 360, margin = 50;
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  double plot_h = h - 2 * margin;
  for (int tick = 0; tick <= 5; ++tick) {
    double y = h - margin - plot_h * tick / 5.0;
    f << "<line x1=\"" << margin << "\" y1=\"" << y << "\" x2=\"" << w - margin << "\" y2=\""
      << y << "\" stroke=\"#ddd\"/>\n";
    f << "<text x=\"" << margin - 28 << "\" y=\"" << y + 4 << "\" font-size=\"12\">" << tick
      << "</text>\n";
  }
  const char* colors[2] = {"#4477aa", "#ee6677"};
  double bw = (w - 2.0 * margin) / 6.0;
  int i = 0;
  for (int v = 0; v < 3; ++v)
    for (int grp = 0; grp < 2; ++grp, ++i) {
      const auto& c = r.cells[v][grp];
      double x = margin + i * bw + bw * 0.15;
      double bh = plot_h * c.score.mean / 5.0;
      f << "<rect x=\"" << x << "\" y=\"" << h - margin - bh << "\" width=\"" << bw * 0.7
        << "\" height=\"" << bh << "\" fill=\"" << colors[grp] << "\"/>\n";
      f << "<text x=\"" << x << "\" y=\"" << h - margin + 16 << "\" font-size=\"11\">"
        << variant_label(v) << (grp ? "/t" : "/tv") << "</text>\n";
    }
  f << "<text x=\"" << margin << "\" y=\"24\" font-size=\"14\">mean keyword score (0-5) per "
       "variant and modality group</text>\n";
  f << "</svg>\n";
}

}  // namespace tebi
