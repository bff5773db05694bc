// Command-line front end: dataset generation, two-stage training, ablation
// grid, gradient checks, and the layer-assignment table.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tebi/ablation.hpp"
#include "tebi/data.hpp"
#include "tebi/decoder.hpp"
#include "tebi/encoders.hpp"
#include "tebi/eval.hpp"
#include "tebi/fusion.hpp"
#include "tebi/gradcheck.hpp"
#include "tebi/io.hpp"
#include "tebi/training.hpp"

namespace fs = std::filesystem;
using namespace tebi;

namespace {

// Flat key-value run configuration. Every key has a flag; a --config file
// of key=value lines may set them first, explicit flags win.
struct RunConfig {
  std::map<std::string, std::string> kv = {
      {"grid-h", "8"},          {"grid-w", "8"},
      {"classes", "8"},         {"traj-length", "12"},
      {"t", "4"},               {"trajectories", "200"},
      {"noise-sigma", "0.02"},  {"feature-dim", "64"},
      {"lstm-hidden", "64"},    {"model-dim", "64"},
      {"temperature", "0.1"},   {"n-layers", "8"},
      {"width", "64"},          {"heads", "4"},
      {"ffn-hidden", "128"},    {"max-positions", "16"},
      {"pretrain-epochs", "10"},{"pretrain-lr", "0.001"},
      {"finetune-epochs", "15"},{"finetune-lr", "0.0003"},
      {"batch-size", "16"},     {"grad-clip", "1.0"},
      {"test-fraction", "0.1"}, {"freeze-encoder", "1"},
      {"freeze-gates", "0"},    {"jobs", "1"},
  };

  int geti(const std::string& k) const { return std::stoi(kv.at(k)); }
  double getd(const std::string& k) const { return std::stod(kv.at(k)); }
  bool getb(const std::string& k) const { return kv.at(k) != "0"; }

  void load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file " + path);
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty() || line[0] == '#') continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config file: expected key=value, got: " + line);
      std::string key = line.substr(0, eq);
      if (!kv.count(key)) throw std::invalid_argument("config file: unknown key: " + key);
      kv[key] = line.substr(eq + 1);
    }
  }

  DataConfig data() const {
    DataConfig d;
    d.grid_h = geti("grid-h");
    d.grid_w = geti("grid-w");
    d.n_classes = geti("classes");
    d.traj_length = geti("traj-length");
    d.T = geti("t");
    d.n_trajectories = geti("trajectories");
    d.noise_sigma = getd("noise-sigma");
    return d;
  }

  EncoderConfig encoder() const {
    EncoderConfig e;
    e.grid_h = geti("grid-h");
    e.grid_w = geti("grid-w");
    e.feature_dim = geti("feature-dim");
    e.lstm_hidden = geti("lstm-hidden");
    e.model_dim = geti("model-dim");
    e.n_classes = geti("classes");
    e.temperature = getd("temperature");
    return e;
  }

  ModelConfig model() const {
    ModelConfig m;
    m.n_layers = geti("n-layers");
    m.width = geti("width");
    m.heads = geti("heads");
    m.ffn_hidden = geti("ffn-hidden");
    m.max_positions = geti("max-positions");
    m.vocab_size = kNumSpecials + static_cast<int>(default_vocabulary().size());
    return m;
  }

  void echo(const fs::path& out_dir, const std::string& command, uint64_t seed) const {
    fs::create_directories(out_dir);
    std::ofstream f(out_dir / "config.txt");
    f << "command=" << command << "\n";
    f << "seed=" << seed << "\n";
    for (const auto& [k, v] : kv) f << k << "=" << v << "\n";
  }
};

void attach_config_flags(CLI::App* cmd, RunConfig& cfg, std::string& config_file) {
  cmd->add_option("--config", config_file, "key=value config file (flags win)");
  for (auto& [key, value] : cfg.kv)
    cmd->add_option("--" + key, value, "config key (default " + value + ")");
}

std::vector<TemporalSample> load_samples(const std::string& data_dir,
                                         std::vector<TrajectoryRecord>& records, int T) {
  records = read_dataset(data_dir);
  std::vector<TemporalSample> samples;
  for (const auto& rec : records) {
    auto w = build_temporal_samples(rec, T);
    samples.insert(samples.end(), w.begin(), w.end());
  }
  return samples;
}

void write_meta(const fs::path& dir, const std::map<std::string, std::string>& meta) {
  std::ofstream f(dir / "meta.txt");
  for (const auto& [k, v] : meta) f << k << " " << v << "\n";
}

std::map<std::string, std::string> read_meta(const fs::path& dir) {
  std::ifstream f(dir / "meta.txt");
  if (!f) throw IoError("cannot open " + (dir / "meta.txt").string());
  std::map<std::string, std::string> meta;
  std::string k, v;
  while (f >> k >> v) meta[k] = v;
  return meta;
}

int run_gradcheck() {
  bool all_pass = true;
  auto report = [&](const std::string& name, const GradCheckReport& r) {
    std::cout << (r.pass ? "PASS" : "FAIL") << " " << name
              << " max_rel_err=" << r.max_rel_err << "\n";
    all_pass = all_pass && r.pass;
  };
  std::mt19937_64 rng(0);
  auto randp = [&](const std::string& n, int r, int c) {
    return Parameter(n, Tensor::randn(r, c, rng, 0.5));
  };

  {
    std::vector<Parameter> ps = {randp("a", 3, 4), randp("b", 4, 2)};
    report("matmul", grad_check(
                         [](Graph& g, std::vector<Parameter>& p) {
                           return g.mean(g.matmul(g.leaf(p[0]), g.leaf(p[1])));
                         },
                         ps, 1e-5));
  }
  {
    std::vector<Parameter> ps = {randp("a", 3, 4), randp("b", 1, 4)};
    report("add_bias", grad_check(
                           [](Graph& g, std::vector<Parameter>& p) {
                             return g.mean(g.mul(g.add(g.leaf(p[0]), g.leaf(p[1])),
                                                 g.add(g.leaf(p[0]), g.leaf(p[1]))));
                           },
                           ps, 1e-5));
  }
  for (auto [name, fn] : std::initializer_list<
           std::pair<const char*, Graph::V (*)(Graph&, Graph::V)>>{
           {"tanh", [](Graph& g, Graph::V x) { return g.tanh(x); }},
           {"sigmoid", [](Graph& g, Graph::V x) { return g.sigmoid(x); }},
           {"gelu", [](Graph& g, Graph::V x) { return g.gelu(x); }},
           {"softmax_rows", [](Graph& g, Graph::V x) { return g.softmax_rows(x); }},
           {"rms_norm", [](Graph& g, Graph::V x) { return g.rms_norm(x); }}}) {
    std::vector<Parameter> ps = {randp(name, 3, 5)};
    auto f = fn;
    report(name, grad_check(
                     [f](Graph& g, std::vector<Parameter>& p) {
                       Graph::V y = f(g, g.leaf(p[0]));
                       return g.mean(g.mul(y, g.constant(Tensor::full(3, 5, 1.7))));
                     },
                     ps, 1e-5));
  }
  {
    std::vector<Parameter> ps = {randp("table", 5, 3)};
    report("embedding_lookup", grad_check(
                                   [](Graph& g, std::vector<Parameter>& p) {
                                     return g.mean(g.embed(g.leaf(p[0]), {1, 3, 1}));
                                   },
                                   ps, 1e-5));
  }
  {
    std::vector<Parameter> ps = {randp("logits", 4, 6)};
    report("cross_entropy", grad_check(
                                [](Graph& g, std::vector<Parameter>& p) {
                                  return g.cross_entropy(g.leaf(p[0]), {2, 0, -1, 5});
                                },
                                ps, 1e-5));
  }
  {
    std::vector<Parameter> ps = {randp("a", 2, 3), randp("b", 2, 3)};
    report("concat_slice", grad_check(
                               [](Graph& g, std::vector<Parameter>& p) {
                                 Graph::V c = g.concat_cols({g.leaf(p[0]), g.leaf(p[1])});
                                 return g.mean(g.slice_cols(c, 1, 5));
                               },
                               ps, 1e-5));
  }
  {
    // one LSTM cell step; the cell owns its parameters, so probe them with a
    // manual central-difference loop
    std::mt19937_64 r2(0);
    LstmLayerParams cell("cell", 5, 4, r2);
    Parameter x = randp("x", 1, 5), h0 = randp("h0", 1, 4), c0 = randp("c0", 1, 4);
    std::vector<Parameter*> probes = {&cell.w, &cell.u, &cell.b, &x, &h0, &c0};
    auto run = [&](bool backward) {
      Graph g;
      auto [h, c] = cell.step(g, g.leaf(x), g.leaf(h0), g.leaf(c0));
      Graph::V loss = g.mean(g.concat_cols({h, c}));
      double v = g.value(loss).data[0];
      if (backward) g.backward(loss);
      return v;
    };
    for (Parameter* p : probes) p->zero_grad();
    run(true);
    GradCheckReport rep;
    const double h = 1e-6;
    for (size_t pi = 0; pi < probes.size(); ++pi) {
      Parameter* p = probes[pi];
      for (size_t k = 0; k < p->value.size(); ++k) {
        double saved = p->value.data[k];
        p->value.data[k] = saved + h;
        double up = run(false);
        p->value.data[k] = saved - h;
        double dn = run(false);
        p->value.data[k] = saved;
        double fd = (up - dn) / (2.0 * h);
        double an = p->grad.data[k];
        double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
        if (rel > rep.max_rel_err) {
          rep.max_rel_err = rel;
          rep.worst_param = static_cast<int>(pi);
          rep.worst_index = static_cast<int>(k);
        }
      }
    }
    rep.pass = rep.max_rel_err <= 1e-5;
    report("lstm_cell", rep);
  }
  return all_pass ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"temporal-binding material recognition toolkit"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_file;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  std::string gen_out;
  uint64_t gen_seed = 0;
  bool gen_seed_set = false;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "generation seed")->required()->each([&](auto) {
    gen_seed_set = true;
  });
  attach_config_flags(gen, cfg, config_file);

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "stage-1 encoder pretraining");
  std::string pre_data, pre_out;
  uint64_t pre_seed = 0;
  bool pre_base = false;
  pre->add_option("--data", pre_data, "dataset directory")->required();
  pre->add_option("--out", pre_out, "output directory")->required();
  pre->add_option("--seed", pre_seed, "training seed")->required();
  pre->add_flag("--base", pre_base, "train the single-frame Base encoder");
  attach_config_flags(pre, cfg, config_file);

  // finetune
  auto* ft = app.add_subcommand("finetune", "stage-2 temporal-binding finetuning");
  std::string ft_data, ft_enc, ft_out, ft_variant = "aware", ft_group = "tactile_and_vision";
  uint64_t ft_seed = 0;
  ft->add_option("--data", ft_data, "dataset directory")->required();
  ft->add_option("--encoder", ft_enc, "pretrained encoder checkpoint directory")->required();
  ft->add_option("--out", ft_out, "output directory")->required();
  ft->add_option("--seed", ft_seed, "training seed")->required();
  ft->add_option("--variant", ft_variant, "base|even|aware");
  ft->add_option("--group", ft_group, "tactile_and_vision|tactile_only");
  attach_config_flags(ft, cfg, config_file);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a finetuned checkpoint on the test split");
  std::string ev_data, ev_ckpt, ev_out;
  uint64_t ev_seed = 0;
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--ckpt", ev_ckpt, "finetune output directory")->required();
  ev->add_option("--out", ev_out, "output directory")->required();
  ev->add_option("--seed", ev_seed, "split seed (must match training)")->required();
  attach_config_flags(ev, cfg, config_file);

  // ablate
  auto* ab = app.add_subcommand("ablate", "run the full variant x group ablation grid");
  std::string ab_data, ab_out, ab_seeds = "0";
  ab->add_option("--data", ab_data, "dataset directory")->required();
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->add_option("--seeds", ab_seeds, "comma-separated seed list")->required();
  attach_config_flags(ab, cfg, config_file);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks for every primitive");

  // plan
  auto* pl = app.add_subcommand("plan", "print the layer-assignment table");
  int pl_n = 32, pl_t = 4;
  pl->add_option("--n-layers", pl_n, "attention layer count")->required();
  pl->add_option("--t", pl_t, "sequence length")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (!config_file.empty()) {
      RunConfig file_cfg;
      file_cfg.load_file(config_file);
      // flags already applied on top of defaults; merge file values only
      // where the flag kept its default
      RunConfig defaults;
      for (auto& [k, v] : cfg.kv)
        if (v == defaults.kv.at(k)) v = file_cfg.kv.at(k);
    }

    if (*gen) {
      (void)gen_seed_set;
      DataConfig d = cfg.data();
      auto records = generate_dataset(d, gen_seed);
      write_dataset(records, gen_out);
      cfg.echo(gen_out, "gen-data", gen_seed);
      std::cout << "wrote " << records.size() << " trajectories to " << gen_out << "\n";
    } else if (*pre) {
      std::vector<TrajectoryRecord> records;
      auto samples = load_samples(pre_data, records, cfg.geti("t"));
      auto split = split_dataset(samples, cfg.getd("test-fraction"), pre_seed);
      EncoderConfig ecfg = cfg.encoder();
      ecfg.use_lstm = !pre_base;
      TrainConfig tcfg;
      tcfg.epochs = cfg.geti("pretrain-epochs");
      tcfg.batch_size = cfg.geti("batch-size");
      tcfg.lr = cfg.getd("pretrain-lr");
      tcfg.grad_clip = cfg.getd("grad-clip");
      tcfg.seed = pre_seed;
      auto res = pretrain(split.train, split.test, ecfg, tcfg);
      fs::create_directories(pre_out);
      write_checkpoint(res.encoder.all(), pre_out);
      write_meta(pre_out, {{"use_lstm", pre_base ? "0" : "1"}});
      write_metrics_csv(res.history, (fs::path(pre_out) / "metrics.csv").string());
      cfg.echo(pre_out, "pretrain", pre_seed);
      std::cout << "test top1=" << res.final_test.top1 << " top5=" << res.final_test.top5
                << " retrieval_top1=" << res.final_test.retrieval_top1 << "\n";
    } else if (*ft) {
      std::vector<TrajectoryRecord> records;
      auto samples = load_samples(ft_data, records, cfg.geti("t"));
      auto split = split_dataset(samples, cfg.getd("test-fraction"), ft_seed);
      auto meta = read_meta(ft_enc);
      EncoderConfig ecfg = cfg.encoder();
      ecfg.use_lstm = meta.at("use_lstm") == "1";
      EncoderParams enc(ecfg, ft_seed);
      read_checkpoint(enc.all(), ft_enc);

      Variant variant = ft_variant == "base"   ? Variant::Base
                        : ft_variant == "even" ? Variant::Even
                        : ft_variant == "aware"
                            ? Variant::Aware
                            : throw std::invalid_argument("unknown variant: " + ft_variant);
      Group group = ft_group == "tactile_and_vision" ? Group::TactileAndVision
                    : ft_group == "tactile_only"
                        ? Group::TactileOnly
                        : throw std::invalid_argument("unknown group: " + ft_group);
      if (variant == Variant::Base && ecfg.use_lstm)
        throw std::invalid_argument("Base variant requires a --base encoder checkpoint");
      if (variant != Variant::Base && !ecfg.use_lstm)
        throw std::invalid_argument(ft_variant + " variant requires an LSTM encoder checkpoint");

      TrainConfig tcfg;
      tcfg.epochs = cfg.geti("finetune-epochs");
      tcfg.batch_size = cfg.geti("batch-size");
      tcfg.lr = cfg.getd("finetune-lr");
      tcfg.grad_clip = cfg.getd("grad-clip");
      tcfg.seed = ft_seed;
      tcfg.freeze_encoder = cfg.getb("freeze-encoder");
      tcfg.freeze_gates = cfg.getb("freeze-gates");
      auto res = finetune(split.train, enc, variant, group, cfg.model(), tcfg,
                          default_vocabulary());
      fs::create_directories(ft_out);
      auto params = res.decoder.all();
      for (Parameter* p : res.plan.all()) params.push_back(p);
      write_checkpoint(params, ft_out);
      write_meta(ft_out, {{"variant", ft_variant}, {"group", ft_group},
                          {"T", std::to_string(res.plan.T)},
                          {"use_lstm", meta.at("use_lstm")}});
      write_metrics_csv(res.history, (fs::path(ft_out) / "metrics.csv").string());
      std::ofstream pf(fs::path(ft_out) / "plan.txt");
      pf << res.plan.describe();
      std::ofstream ef(fs::path(ft_out) / "encoder.txt");
      ef << ft_enc << "\n";
      cfg.echo(ft_out, "finetune", ft_seed);
      std::cout << "final train loss=" << res.history.back().loss << "\n";
    } else if (*ev) {
      std::vector<TrajectoryRecord> records;
      auto samples = load_samples(ev_data, records, cfg.geti("t"));
      auto split = split_dataset(samples, cfg.getd("test-fraction"), ev_seed);
      auto meta = read_meta(ev_ckpt);
      EncoderConfig ecfg = cfg.encoder();
      ecfg.use_lstm = meta.at("use_lstm") == "1";
      Variant variant = meta.at("variant") == "base"   ? Variant::Base
                        : meta.at("variant") == "even" ? Variant::Even
                                                       : Variant::Aware;
      Group group = meta.at("group") == "tactile_only" ? Group::TactileOnly
                                                       : Group::TactileAndVision;
      ModelConfig mcfg = cfg.model();
      DecoderParams dec(mcfg, ev_seed);
      int T = std::stoi(meta.at("T"));
      int cond_dim = variant == Variant::Base ? ecfg.feature_dim : ecfg.model_dim;
      FusionPlan plan = build_plan(variant, group, mcfg.n_layers, T, cond_dim, mcfg.width,
                                   ev_seed);
      auto params = dec.all();
      for (Parameter* p : plan.all()) params.push_back(p);
      read_checkpoint(params, ev_ckpt);
      // the finetune directory records which encoder checkpoint it used
      std::ifstream ef(fs::path(ev_ckpt) / "encoder.txt");
      std::string enc_dir;
      if (!ef || !std::getline(ef, enc_dir) || enc_dir.empty())
        throw IoError("cannot read encoder path from " +
                      (fs::path(ev_ckpt) / "encoder.txt").string());
      EncoderParams enc(ecfg, ev_seed);
      read_checkpoint(enc.all(), enc_dir);

      auto vocab = default_vocabulary();
      double score_sum = 0;
      int nonempty = 0;
      for (const auto& s : split.test) {
        auto pred = predict_keywords(enc, plan, dec, s, vocab);
        std::set<std::string> truth(s.keywords.begin(), s.keywords.end());
        score_sum += keyword_score(pred, truth);
        if (!pred.empty()) ++nonempty;
      }
      fs::create_directories(ev_out);
      std::ofstream rf(fs::path(ev_out) / "eval.txt");
      rf.precision(6);
      rf << std::fixed;
      rf << "test_samples " << split.test.size() << "\n";
      rf << "mean_keyword_score " << (split.test.empty() ? 0 : score_sum / split.test.size())
         << "\n";
      rf << "nonempty_fraction "
         << (split.test.empty() ? 0 : double(nonempty) / split.test.size()) << "\n";
      cfg.echo(ev_out, "eval", ev_seed);
      std::cout << "mean keyword score "
                << (split.test.empty() ? 0 : score_sum / split.test.size()) << "\n";
    } else if (*ab) {
      auto records = read_dataset(ab_data);
      std::vector<uint64_t> seeds;
      std::istringstream ss(ab_seeds);
      std::string tok;
      while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
      if (seeds.empty()) throw std::invalid_argument("ablate: empty seed list");
      AblationConfig acfg;
      acfg.data = cfg.data();
      acfg.encoder = cfg.encoder();
      acfg.model = cfg.model();
      acfg.pretrain_cfg.epochs = cfg.geti("pretrain-epochs");
      acfg.pretrain_cfg.lr = cfg.getd("pretrain-lr");
      acfg.pretrain_cfg.batch_size = cfg.geti("batch-size");
      acfg.pretrain_cfg.grad_clip = cfg.getd("grad-clip");
      acfg.finetune_cfg.epochs = cfg.geti("finetune-epochs");
      acfg.finetune_cfg.lr = cfg.getd("finetune-lr");
      acfg.finetune_cfg.batch_size = cfg.geti("batch-size");
      acfg.finetune_cfg.grad_clip = cfg.getd("grad-clip");
      acfg.finetune_cfg.freeze_encoder = cfg.getb("freeze-encoder");
      acfg.finetune_cfg.freeze_gates = cfg.getb("freeze-gates");
      acfg.test_fraction = cfg.getd("test-fraction");
      acfg.jobs = cfg.geti("jobs");
      auto report = run_ablation(records, seeds, acfg);
      fs::create_directories(ab_out);
      write_report_csv(report, fs::path(ab_out) / "report.csv");
      write_report_text(report, fs::path(ab_out) / "report.txt");
      write_report_svg(report, fs::path(ab_out) / "report.svg");
      cfg.echo(ab_out, "ablate", seeds[0]);
      std::cout << "wrote 6-cell report to " << ab_out << "\n";
    } else if (*gc) {
      return run_gradcheck();
    } else if (*pl) {
      LayerAssignment a = assign_layers(pl_n, pl_t);
      for (int t = 0; t < a.T; ++t)
        std::cout << "h^" << t + 1 << " -> layers [" << a.blocks[t].first << ".."
                  << a.blocks[t].second << "]\n";
    }
  } catch (const NumericalError& e) {
    std::cerr << "error: numerical: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 2;
  } catch (const std::logic_error& e) {
    std::cerr << "error: invariant: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
