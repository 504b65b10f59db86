// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "echo/diagnostics.hpp"
#include "echo/errors.hpp"
#include "echo/gradcheck.hpp"
#include "experiment.hpp"

namespace echo::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out << text;
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::size_t> parse_positions(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
      throw UsageError("bad position '" + item + "'");
    out.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  if (out.empty()) throw UsageError("empty position list");
  return out;
}

// Config-key flags shared by every subcommand. `renames` maps a flag to a
// different key than its spelling suggests, or adds a short alias.
class ConfigOptions {
 public:
  void attach(CLI::App* sub, const std::map<std::string, std::string>& renames = {}) {
    sub->add_option("--config", config_file_, "flat key = value config file");
    sub->add_flag("--desk-scale", desk_scale_,
                  "reduced dataset sizes and epoch budget for single-core runs");
    std::map<std::string, std::string> flags;
    for (const auto& key : config_keys())
      if (key != "schema_version") flags["--" + dashed(key)] = key;
    for (const auto& [flag, key] : renames) flags[flag] = key;
    for (const auto& [flag, key] : flags) {
      CLI::Option* opt = sub->add_option(flag, storage_[flag], "sets " + key);
      bound_.push_back({key, flag, opt});
    }
  }

  ExperimentConfig resolve() const {
    std::map<std::string, std::string> file_values;
    if (!config_file_.empty()) file_values = read_config_file(config_file_);
    std::map<std::string, std::string> flag_values;
    for (const auto& b : bound_)
      if (b.opt->count() > 0) flag_values[b.key] = storage_.at(b.flag);
    const char* env = std::getenv("ECHO_RNN_OUT");
    return resolve_config(file_values, flag_values, desk_scale_, env ? env : "");
  }

 private:
  struct Bound {
    std::string key, flag;
    CLI::Option* opt;
  };
  std::string config_file_;
  bool desk_scale_ = false;
  std::map<std::string, std::string> storage_;
  std::vector<Bound> bound_;
};

Splits slice(Dataset all, std::size_t n_train, std::size_t n_val) {
  Splits s;
  s.train = Dataset{all.task, all.vocab_size, all.num_classes, {}};
  s.val = s.train;
  s.test = s.train;
  for (std::size_t k = 0; k < all.samples.size(); ++k) {
    Dataset& dst = k < n_train ? s.train : (k < n_train + n_val ? s.val : s.test);
    dst.samples.push_back(std::move(all.samples[k]));
  }
  return s;
}

json spec_json(const ExperimentConfig& cfg) {
  json j = json::object();
  if (cfg.task == "distractor") {
    for (const char* k : {"seq_len", "window_lo", "window_hi", "num_classes", "num_distractors",
                          "noise_vocab_size"})
      j[k] = get_key(cfg, k);
  } else {
    for (const char* k : {"max_depth", "max_args", "min_length", "max_length", "nest_probability"})
      j[k] = get_key(cfg, k);
  }
  return j;
}

Splits load_splits(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.data_path();
  const json manifest = json::parse(read_text(dir / "manifest.json"), nullptr, false);
  if (manifest.is_discarded()) throw DataError("malformed manifest in " + dir.string());
  if (manifest.value("format_version", -1) != kDatasetFormatVersion)
    throw DataError("dataset format version " + manifest.value("format_version", json()).dump() +
                    " in " + dir.string() + " does not match supported version " +
                    std::to_string(kDatasetFormatVersion));
  if (manifest.value("task", "") != cfg.task)
    throw DataError("dataset in " + dir.string() + " is for task '" + manifest.value("task", "") +
                    "', config asks for '" + cfg.task + "'");
  Splits s{load_dataset(dir / "train.txt"), load_dataset(dir / "val.txt"),
           load_dataset(dir / "test.txt")};
  return s;
}

struct TrainedRun {
  RunResult result;
  Model model;
};

TrainedRun train_one(const ExperimentConfig& cfg, Variant variant, std::uint64_t seed,
                     const Splits& data, const std::vector<std::string>& invocation,
                     std::ostream* log) {
  ExperimentConfig run_cfg = cfg;
  run_cfg.model = variant;
  run_cfg.train.seed = seed;
  const ModelConfig mc =
      run_cfg.model_config(variant, data.train.vocab_size, data.train.num_classes);
  Model model = Model::create(mc, seed);
  std::function<void(const EpochLog&)> on_epoch;
  if (log)
    on_epoch = [log](const EpochLog& e) {
      *log << "epoch " << e.epoch << " loss " << std::fixed << std::setprecision(4) << e.train_loss
           << " val_acc " << e.val_accuracy << (e.improved ? " *" : "") << '\n'
           << std::defaultfloat;
    };
  RunResult r = train(model, data.train, data.val, &data.test, run_cfg.train, on_epoch);
  r.config = json{{"experiment", to_json(run_cfg)},
                  {"model", to_json(model.config)},
                  {"invocation", invocation}};
  const fs::path dir = run_cfg.run_path(variant, seed);
  fs::create_directories(dir);
  write_text_atomic(dir / "result.json", to_json(r).dump(2) + "\n");
  std::ostringstream curves;
  write_curves_csv(curves, r);
  write_text_atomic(dir / "curves.csv", curves.str());
  save_weights(model, dir / "weights.bin");
  return {std::move(r), std::move(model)};
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {std::nan(""), std::nan("")};
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  return {m, std::sqrt(v / static_cast<double>(xs.size()))};
}

struct NamedLoaded {
  std::string name;
  Model model;
};

std::vector<NamedLoaded> resolve_models(const ExperimentConfig& cfg,
                                        const std::vector<std::string>& weight_specs,
                                        bool untrained) {
  std::vector<std::pair<std::string, std::string>> specs;
  for (const auto& w : weight_specs) {
    const auto eq = w.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == w.size())
      throw UsageError("--weights expects name=path, got '" + w + "'");
    specs.emplace_back(w.substr(0, eq), w.substr(eq + 1));
  }
  if (specs.empty())
    for (Variant v : {Variant::echo, Variant::baseline})
      specs.emplace_back(std::string(variant_name(v)),
                         (cfg.run_path(v, cfg.train.seed) / "weights.bin").string());

  std::vector<NamedLoaded> out;
  for (const auto& [name, path] : specs) {
    if (untrained) {
      Variant v;
      try {
        v = parse_variant(name);
      } catch (const std::exception&) {
        throw UsageError("--untrained needs variant names, got '" + name + "'");
      }
      const ModelConfig mc =
          cfg.model_config(v, cfg.distractor.vocab_size(), cfg.distractor.num_classes);
      out.push_back({name, Model::create(mc, cfg.train.seed)});
    } else {
      out.push_back({name, load_weights(path)});
    }
  }
  return out;
}

Dataset eval_batch(const ExperimentConfig& cfg, std::uint64_t eval_seed, std::size_t n) {
  DistractorSpec spec = cfg.distractor;
  spec.seed = eval_seed;
  return gen_distractor(spec, n);
}

void require_distractor(const ExperimentConfig& cfg, const char* what) {
  if (cfg.task != "distractor")
    throw ConfigError(std::string(what) + " is defined for the distractor task only");
}

// --- subcommands ---------------------------------------------------------------

int cmd_gen(const ExperimentConfig& cfg, bool force, const std::vector<std::string>& args,
            std::ostream& out) {
  const fs::path dir = cfg.data_path();
  const std::vector<std::string> names{"train.txt", "val.txt", "test.txt", "manifest.json"};
  if (!force)
    for (const auto& n : names)
      if (fs::exists(dir / n))
        throw UsageError("refusing to overwrite " + (dir / n).string() + " (use --force)");
  fs::create_directories(dir);

  const std::size_t total = cfg.n_train + cfg.n_val + cfg.n_test;
  Dataset all;
  if (cfg.task == "distractor") {
    DistractorSpec spec = cfg.distractor;
    spec.seed = cfg.data_seed;
    all = gen_distractor(spec, total);
  } else {
    ListOpsSpec spec = cfg.listops;
    spec.seed = cfg.data_seed;
    all = gen_listops(spec, total);
  }
  const Splits s = slice(std::move(all), cfg.n_train, cfg.n_val);
  save_dataset(s.train, dir / "train.txt");
  save_dataset(s.val, dir / "val.txt");
  save_dataset(s.test, dir / "test.txt");
  const json manifest{
      {"format_version", kDatasetFormatVersion},
      {"task", cfg.task},
      {"seed", cfg.data_seed},
      {"spec", spec_json(cfg)},
      {"counts", {{"train", s.train.size()}, {"val", s.val.size()}, {"test", s.test.size()}}},
      {"vocab_size", s.train.vocab_size},
      {"num_classes", s.train.num_classes},
      {"invocation", args}};
  write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  out << "wrote " << s.train.size() << "/" << s.val.size() << "/" << s.test.size() << " samples to "
      << dir.string() << '\n';
  return kOk;
}

int cmd_train(const ExperimentConfig& cfg, bool quiet, const std::vector<std::string>& args,
              std::ostream& out) {
  const Splits data = load_splits(cfg);
  const TrainedRun run =
      train_one(cfg, cfg.model, cfg.train.seed, data, args, quiet ? nullptr : &out);
  out << variant_name(cfg.model) << " seed " << cfg.train.seed << ": best val "
      << run.result.best_val_accuracy << " (epoch " << run.result.best_epoch << "), test "
      << run.result.test_accuracy << " -> " << cfg.run_path(cfg.model, cfg.train.seed).string()
      << '\n';
  return kOk;
}

int cmd_ablate(const ExperimentConfig& cfg, std::size_t jobs, const std::vector<std::string>& args,
               std::ostream& out) {
  if (jobs == 0) throw UsageError("--jobs must be positive");
  const Splits data = load_splits(cfg);

  struct Cell {
    Variant variant;
    std::uint64_t seed;
    std::optional<RunResult> result;
    std::string error;
  };
  std::vector<Cell> cells;
  for (Variant v : kAllVariants)
    for (std::uint64_t s : cfg.seeds) cells.push_back({v, s, std::nullopt, {}});

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < cells.size();) {
      Cell& c = cells[k];
      try {
        c.result = train_one(cfg, c.variant, c.seed, data, args, nullptr).result;
      } catch (const NumericError& e) {
        c.error = std::string("diverged: ") + e.what();
      } catch (const std::exception& e) {
        c.error = std::string("failed: ") + e.what();
      }
      std::lock_guard lock(log_mutex);
      out << variant_name(c.variant) << " seed " << c.seed << ": ";
      if (c.result)
        out << "test " << c.result->test_accuracy << " (best val " << c.result->best_val_accuracy
            << ", epoch " << c.result->best_epoch << ")\n";
      else
        out << c.error << '\n';
    }
  };
  const std::size_t n_threads = std::min(jobs, cells.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  json rows = json::array();
  std::ostringstream text;
  text << std::left << std::setw(12) << "model" << std::setw(20) << "test accuracy (%)"
       << "runs\n";
  std::size_t ok_total = 0;
  for (Variant v : kAllVariants) {
    std::vector<double> accs;
    json runs = json::array();
    for (const auto& c : cells) {
      if (c.variant != v) continue;
      if (c.result) {
        accs.push_back(c.result->test_accuracy);
        runs.push_back({{"seed", c.seed},
                        {"status", "ok"},
                        {"test_accuracy", c.result->test_accuracy},
                        {"best_val_accuracy", c.result->best_val_accuracy},
                        {"best_epoch", c.result->best_epoch}});
      } else {
        runs.push_back({{"seed", c.seed}, {"status", "error"}, {"error", c.error}});
      }
    }
    ok_total += accs.size();
    const auto [m, sd] = mean_std(accs);
    json row{{"model", variant_name(v)},
             {"use_ocg", variant_uses_ocg(v)},
             {"use_attention", variant_uses_attention(v)},
             {"completed", accs.size()},
             {"runs", runs}};
    row["mean"] = accs.empty() ? json(nullptr) : json(m);
    row["std"] = accs.empty() ? json(nullptr) : json(sd);
    rows.push_back(row);
    std::ostringstream cell;
    if (accs.empty())
      cell << "n/a";
    else
      cell << std::fixed << std::setprecision(2) << 100.0 * m << " +- " << 100.0 * sd;
    text << std::left << std::setw(12) << variant_name(v) << std::setw(20) << cell.str()
         << accs.size() << "/" << cfg.seeds.size() << '\n';
  }
  const json report{{"task", cfg.task},
                    {"seeds", cfg.seeds},
                    {"rows", rows},
                    {"config", to_json(cfg)},
                    {"invocation", args}};
  fs::create_directories(cfg.task_path());
  write_text_atomic(cfg.task_path() / "ablation.json", report.dump(2) + "\n");
  write_text_atomic(cfg.task_path() / "ablation.txt", text.str());
  out << text.str();
  return ok_total == 0 ? kNumericError : kOk;
}

struct DiagnoseOptions {
  bool all = false, gates = false, variance = false, attention = false, gradients = false,
       half_life = false, untrained = false;
  std::vector<std::string> weights;
  std::size_t eval_n = 200;
  std::uint64_t eval_seed = 12345;
  std::string window = "10,50";
  std::size_t permutations = 10000;
};

int cmd_diagnose(const ExperimentConfig& cfg, DiagnoseOptions o, std::ostream& out) {
  require_distractor(cfg, "diagnose");
  if (o.all) o.gates = o.variance = o.attention = o.gradients = o.half_life = true;
  if (!(o.gates || o.variance || o.attention || o.gradients || o.half_life))
    throw UsageError("select at least one diagnostic (or --all)");
  const auto bounds = parse_positions(o.window);
  if (bounds.size() != 2) throw UsageError("--window expects lo,hi");
  const GateWindow window{bounds[0], bounds[1]};

  const auto models = resolve_models(cfg, o.weights, o.untrained);
  const Dataset eval = eval_batch(cfg, o.eval_seed, o.eval_n);
  const fs::path dir = cfg.task_path() / (o.untrained ? "diagnostics-untrained" : "diagnostics");
  fs::create_directories(dir);
  json summary{{"eval_seed", o.eval_seed}, {"eval_n", o.eval_n}, {"untrained", o.untrained}};
  for (const auto& m : models) summary["models"].push_back(m.name);

  if (o.gates || o.variance) {
    std::vector<GateTimeline> timelines;
    std::vector<VarianceEntry> entries;
    for (const auto& m : models) {
      const auto records = record_gates(m.model, eval.samples);
      timelines.push_back(gate_timeline(records, m.name));
      if (o.variance)
        entries.push_back(
            {m.name, gate_variance(records, window), timeline_variance(timelines.back(), window)});
    }
    if (o.gates) {
      std::ostringstream csv;
      write_gate_timeline_csv(csv, timelines);
      write_text_atomic(dir / "gate_timeline.csv", csv.str());
      for (const auto& tl : timelines) {
        double post = 0.0;
        for (std::size_t t = cfg.distractor.window_hi; t < tl.mean.size(); ++t) post += tl.mean[t];
        post /= static_cast<double>(tl.mean.size() - cfg.distractor.window_hi);
        summary["gates"][tl.model]["mean_f_after_window"] = post;
      }
    }
    if (o.variance) {
      if (entries.size() != 2) throw UsageError("the variance report compares exactly two models");
      std::ostringstream csv;
      write_variance_csv(csv, entries);
      write_text_atomic(dir / "gate_variance.csv", csv.str());
      for (const auto& e : entries) summary["variance"][e.model] = e.variance;
      summary["variance"]["ratio"] = entries[0].variance / entries[1].variance;
      summary["variance"]["window"] = {window.lo, window.hi};
      out << "gate variance " << entries[0].model << " " << entries[0].variance << ", "
          << entries[1].model << " " << entries[1].variance << ", ratio "
          << entries[0].variance / entries[1].variance << '\n';
    }
  }

  if (o.attention) {
    const auto& m = models.front();
    const AttentionExport ex = attention_export(m.model, eval.samples);
    std::ostringstream csv;
    write_attention_csv(csv, ex);
    write_text_atomic(dir / "attention.csv", csv.str());
    double worst = 0.0;
    for (const auto& row : ex.alpha) {
      double s = 0.0;
      for (double a : row) s += a;
      worst = std::max(worst, std::abs(s - 1.0));
    }
    summary["attention"] = {
        {"model", m.name}, {"window_mass", ex.window_mass}, {"max_row_sum_error", worst}};
    out << "attention mass on steps " << ex.window_lo << "-" << ex.window_hi << " (" << m.name
        << "): " << ex.window_mass << '\n';
  }

  if (o.gradients) {
    std::vector<GradProfile> profiles;
    for (const auto& m : models) profiles.push_back(grad_profile(m.model, eval.samples, m.name));
    std::ostringstream csv;
    write_grad_profile_csv(csv, profiles);
    write_text_atomic(dir / "grad_profile.csv", csv.str());
    for (const auto& p : profiles) summary["gradients"][p.model]["norm_t3"] = p.norms.at(2);
    if (profiles.size() >= 2) {
      const double ratio = early_gradient_ratio(profiles[0], profiles[1]);
      summary["gradients"]["early_ratio"] = ratio;
      out << "gradient norm ratio " << profiles[0].model << "/" << profiles[1].model
          << " over t<=5: " << ratio << '\n';
    }
  }

  if (o.half_life) {
    const auto& m = models.front();
    const Dataset stripped = strip_triggers(eval, cfg.distractor, derive_seed(o.eval_seed, 1));
    const HalfLifeReport r = half_life_check(m.model, eval, stripped, cfg.distractor.window_hi + 1,
                                             o.permutations, derive_seed(o.eval_seed, 2));
    std::ostringstream csv;
    write_half_life_csv(csv, m.name, r);
    write_text_atomic(dir / "half_life.csv", csv.str());
    summary["half_life"] = {{"model", m.name},
                            {"mean_f_trigger", r.mean_trigger},
                            {"mean_f_no_trigger", r.mean_no_trigger},
                            {"difference", r.difference},
                            {"null_std", r.null_std},
                            {"p_value", r.p_value},
                            {"pairs", r.pairs}};
    out << "half-life premise (" << m.name << "): E[f|trigger] - E[f|no trigger] = " << r.difference
        << ", p = " << r.p_value << '\n';
  }

  write_text_atomic(dir / "diagnostics.json", summary.dump(2) + "\n");
  out << "diagnostics written to " << dir.string() << '\n';
  return kOk;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::vector<std::string>& weights,
              const std::string& positions_text, std::size_t n_per_position,
              std::uint64_t eval_seed, std::ostream& out) {
  require_distractor(cfg, "sweep");
  const auto loaded = resolve_models(cfg, weights, false);
  if (loaded.size() < 2) throw UsageError("sweep needs at least two models");
  std::vector<NamedModel> models;
  for (const auto& m : loaded) models.push_back({m.name, &m.model});
  DistractorSpec spec = cfg.distractor;
  spec.seed = eval_seed;
  const auto positions = parse_positions(positions_text);
  const SweepResult r = sensitivity_sweep(models, spec, positions, n_per_position);
  std::ostringstream csv;
  write_sweep_csv(csv, r);
  fs::create_directories(cfg.task_path());
  write_text_atomic(cfg.task_path() / "sweep.csv", csv.str());
  out << csv.str();
  return kOk;
}

int cmd_verify_gradients(const ExperimentConfig& cfg, const std::string& only, double epsilon,
                         double tolerance, std::size_t samples, std::ostream& out) {
  std::vector<Variant> variants(std::begin(kAllVariants), std::end(kAllVariants));
  if (!only.empty()) variants = {parse_variant(only)};
  DistractorSpec spec;
  spec.seq_len = 5;
  spec.window_lo = 1;
  spec.window_hi = 2;
  spec.num_classes = 4;
  spec.num_distractors = 1;
  spec.seed = cfg.train.seed;
  const Dataset data = gen_distractor(spec, samples);

  bool all_ok = true;
  for (Variant v : variants) {
    ModelConfig mc;
    mc.hidden_size = 4;
    mc.num_classes = spec.num_classes;
    mc.vocab_size = spec.vocab_size();
    mc = config_for_variant(mc, v);
    const Model model = Model::create(mc, cfg.train.seed);
    const GradCheckReport rep = finite_diff_check(model, data.samples, epsilon);
    bool ok = rep.max_rel_err < tolerance;
    std::string note;
    if (mc.use_ocg)
      for (const char* p : {"W_of", "W_oi", "W_ho"}) {
        const std::string name = layer_prefix(0) + p;
        if (!(rep.grad_norms.at(name) > 0.0)) {
          ok = false;
          note += " zero gradient for " + name + ";";
        }
      }
    all_ok = all_ok && ok;
    out << std::left << std::setw(12) << variant_name(v) << (ok ? "PASS" : "FAIL")
        << "  max_rel_err " << std::scientific << std::setprecision(3) << rep.max_rel_err
        << std::defaultfloat << "  worst " << rep.worst_param << "[" << rep.worst_index << "]  "
        << rep.coordinates << " coordinates" << note << '\n';
  }
  return all_ok ? kOk : kNumericError;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Output-conditioned LSTM experiments", "echo-rnn"};
  app.require_subcommand(1);

  ConfigOptions gen_cfg, train_cfg, ablate_cfg, diag_cfg, sweep_cfg, grad_cfg;

  auto* gen = app.add_subcommand("gen", "generate train/val/test dataset files");
  gen_cfg.attach(gen, {{"--seed", "data_seed"}, {"--n", "n_train"}});
  bool force = false;
  gen->add_flag("--force", force, "overwrite existing dataset files");

  auto* train_cmd = app.add_subcommand("train", "train one (model, seed) pair");
  train_cfg.attach(train_cmd);
  bool quiet = false;
  train_cmd->add_flag("--quiet", quiet, "suppress per-epoch lines");

  auto* ablate = app.add_subcommand("ablate", "train all four variants over several seeds");
  ablate_cfg.attach(ablate);
  std::size_t jobs = 1;
  ablate->add_option("--jobs", jobs, "concurrent training runs");

  auto* diag = app.add_subcommand("diagnose", "gate, attention, gradient and half-life analyses");
  diag_cfg.attach(diag);
  DiagnoseOptions dopt;
  diag->add_flag("--all", dopt.all, "run every diagnostic");
  diag->add_flag("--gates", dopt.gates, "forget-gate timeline");
  diag->add_flag("--variance", dopt.variance, "forget-gate variance report");
  diag->add_flag("--attention", dopt.attention, "attention weights of the first model");
  diag->add_flag("--gradients", dopt.gradients, "hidden-state gradient norms");
  diag->add_flag("--half-life", dopt.half_life, "paired trigger / no-trigger forget gates");
  diag->add_flag("--untrained", dopt.untrained, "use freshly initialised models");
  diag->add_option("--weights", dopt.weights, "name=path of a weight file (repeatable)");
  diag->add_option("--eval-n", dopt.eval_n, "evaluation batch size");
  diag->add_option("--eval-seed", dopt.eval_seed, "evaluation data seed");
  diag->add_option("--window", dopt.window, "inclusive gate window lo,hi");
  diag->add_option("--permutations", dopt.permutations, "sign-flip permutations");

  auto* sweep = app.add_subcommand("sweep", "accuracy at shifted trigger positions");
  sweep_cfg.attach(sweep);
  std::vector<std::string> sweep_weights;
  std::string positions = "5,15,25,35,45";
  std::size_t n_per_position = 200;
  std::uint64_t sweep_seed = 12345;
  sweep->add_option("--weights", sweep_weights, "name=path of a weight file (repeatable)");
  sweep->add_option("--positions", positions, "comma-separated trigger positions");
  sweep->add_option("--n-per-position", n_per_position, "samples per position");
  sweep->add_option("--eval-seed", sweep_seed, "evaluation data seed");

  auto* grad = app.add_subcommand("verify-gradients",
                                  "finite-difference check of every variant (hidden 4, T 5)");
  grad_cfg.attach(grad);
  std::string only;
  double epsilon = 1e-5, tolerance = 1e-4;
  std::size_t samples = 4;
  grad->add_option("--variant", only, "check a single variant");
  grad->add_option("--epsilon", epsilon, "central-difference step");
  grad->add_option("--tolerance", tolerance, "largest accepted relative error");
  grad->add_option("--samples", samples, "batch size");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_cfg.resolve(), force, args, out);
    if (train_cmd->parsed()) return cmd_train(train_cfg.resolve(), quiet, args, out);
    if (ablate->parsed()) return cmd_ablate(ablate_cfg.resolve(), jobs, args, out);
    if (diag->parsed()) return cmd_diagnose(diag_cfg.resolve(), dopt, out);
    if (sweep->parsed())
      return cmd_sweep(sweep_cfg.resolve(), sweep_weights, positions, n_per_position, sweep_seed,
                       out);
    if (grad->parsed())
      return cmd_verify_gradients(grad_cfg.resolve(), only, epsilon, tolerance, samples, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const ParseError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

}  // namespace echo::cli
