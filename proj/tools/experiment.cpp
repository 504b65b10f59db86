// SPDX-License-Identifier: Apache-2.0
#include "experiment.hpp"

#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>

#include "echo/errors.hpp"

namespace echo::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": integer out of range: '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  if (used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return d;
}

std::vector<std::uint64_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename Member>
Field size_field(Member member) {
  return {[member](ExperimentConfig& c, const std::string& k, const std::string& v) {
            member(c) = static_cast<std::size_t>(parse_u64(k, v));
          },
          [member](const ExperimentConfig& c) { return std::to_string(member(c)); }};
}

template <typename Member>
Field double_field(Member member) {
  return {[member](ExperimentConfig& c, const std::string& k, const std::string& v) {
            member(c) = parse_double(k, v);
          },
          [member](const ExperimentConfig& c) { return format_double(member(c)); }};
}

const std::vector<std::pair<std::string, Field>>& field_table() {
  using C = ExperimentConfig;
  static const std::vector<std::pair<std::string, Field>> table = {
      {"schema_version",
       {[](C& c, const std::string& k, const std::string& v) {
          c.schema_version = static_cast<int>(parse_u64(k, v));
        },
        [](const C& c) { return std::to_string(c.schema_version); }}},
      {"task",
       {[](C& c, const std::string&, const std::string& v) {
          if (v != "distractor" && v != "listops")
            throw ConfigError("task must be distractor or listops, got '" + v + "'");
          c.task = v;
        },
        [](const C& c) { return c.task; }}},
      {"model",
       {[](C& c, const std::string&, const std::string& v) {
          try {
            c.model = parse_variant(v);
          } catch (const std::exception& e) {
            throw ConfigError(e.what());
          }
        },
        [](const C& c) { return std::string(variant_name(c.model)); }}},
      {"seeds",
       {[](C& c, const std::string& k, const std::string& v) { c.seeds = parse_list(k, v); },
        [](const C& c) {
          std::string s;
          for (std::size_t i = 0; i < c.seeds.size(); ++i)
            s += (i ? "," : "") + std::to_string(c.seeds[i]);
          return s;
        }}},
      {"output_dir",
       {[](C& c, const std::string&, const std::string& v) { c.output_dir = v; },
        [](const C& c) { return c.output_dir; }}},
      {"data_dir",
       {[](C& c, const std::string&, const std::string& v) { c.data_dir = v; },
        [](const C& c) { return c.data_dir; }}},
      {"data_seed",
       {[](C& c, const std::string& k, const std::string& v) { c.data_seed = parse_u64(k, v); },
        [](const C& c) { return std::to_string(c.data_seed); }}},
      {"n_train", size_field([](auto& c) -> auto& { return c.n_train; })},
      {"n_val", size_field([](auto& c) -> auto& { return c.n_val; })},
      {"n_test", size_field([](auto& c) -> auto& { return c.n_test; })},
      {"seed",
       {[](C& c, const std::string& k, const std::string& v) { c.train.seed = parse_u64(k, v); },
        [](const C& c) { return std::to_string(c.train.seed); }}},
      {"batch_size", size_field([](auto& c) -> auto& { return c.train.batch_size; })},
      {"lr", double_field([](auto& c) -> auto& { return c.train.lr; })},
      {"weight_decay", double_field([](auto& c) -> auto& { return c.train.weight_decay; })},
      {"dropout", double_field([](auto& c) -> auto& { return c.train.dropout; })},
      {"max_epochs", size_field([](auto& c) -> auto& { return c.train.max_epochs; })},
      {"patience", size_field([](auto& c) -> auto& { return c.train.patience; })},
      {"eval_every", size_field([](auto& c) -> auto& { return c.train.eval_every; })},
      {"clip_norm", double_field([](auto& c) -> auto& { return c.train.clip_norm; })},
      {"chunk_size", size_field([](auto& c) -> auto& { return c.train.chunk_size; })},
      {"hidden_size", size_field([](auto& c) -> auto& { return c.hidden_size; })},
      {"embed_dim", size_field([](auto& c) -> auto& { return c.embed_dim; })},
      {"forget_bias", double_field([](auto& c) -> auto& { return c.forget_bias; })},
      {"attention_scoring",
       {[](C& c, const std::string&, const std::string& v) {
          if (v == "additive")
            c.scoring = AttentionScoring::additive;
          else if (v == "dot")
            c.scoring = AttentionScoring::dot;
          else
            throw ConfigError("attention_scoring must be additive or dot, got '" + v + "'");
        },
        [](const C& c) {
          return std::string(c.scoring == AttentionScoring::dot ? "dot" : "additive");
        }}},
      {"seq_len", size_field([](auto& c) -> auto& { return c.distractor.seq_len; })},
      {"window_lo", size_field([](auto& c) -> auto& { return c.distractor.window_lo; })},
      {"window_hi", size_field([](auto& c) -> auto& { return c.distractor.window_hi; })},
      {"num_classes", size_field([](auto& c) -> auto& { return c.distractor.num_classes; })},
      {"num_distractors",
       size_field([](auto& c) -> auto& { return c.distractor.num_distractors; })},
      {"noise_vocab_size",
       size_field([](auto& c) -> auto& { return c.distractor.noise_vocab_size; })},
      {"max_depth", size_field([](auto& c) -> auto& { return c.listops.max_depth; })},
      {"max_args", size_field([](auto& c) -> auto& { return c.listops.max_args; })},
      {"min_length", size_field([](auto& c) -> auto& { return c.listops.min_length; })},
      {"max_length", size_field([](auto& c) -> auto& { return c.listops.max_length; })},
      {"nest_probability",
       double_field([](auto& c) -> auto& { return c.listops.nest_probability; })},
  };
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& [k, f] : field_table())
    if (k == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

ModelConfig ExperimentConfig::model_config(Variant variant, std::size_t vocab_size,
                                           std::size_t num_classes) const {
  ModelConfig mc;
  mc.hidden_size = hidden_size;
  mc.embed_dim = embed_dim;
  mc.input_dim = embed_dim;
  mc.vocab_size = vocab_size;
  mc.num_classes = num_classes;
  mc.dropout_rate = train.dropout;
  mc.forget_bias = forget_bias;
  mc.scoring = scoring;
  return config_for_variant(mc, variant);
}

std::filesystem::path ExperimentConfig::data_path() const {
  if (!data_dir.empty()) return data_dir;
  return std::filesystem::path(output_dir) / "data" / task;
}

std::filesystem::path ExperimentConfig::task_path() const {
  return std::filesystem::path(output_dir) / task;
}

std::filesystem::path ExperimentConfig::run_path(Variant variant, std::uint64_t seed) const {
  return task_path() / std::string(variant_name(variant)) / ("seed" + std::to_string(seed));
}

void ExperimentConfig::validate() const {
  if (schema_version != kConfigSchemaVersion)
    throw ConfigError("config schema_version " + std::to_string(schema_version) +
                      " is not supported (expected " + std::to_string(kConfigSchemaVersion) + ")");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (n_train == 0 || n_val == 0 || n_test == 0)
    throw ConfigError("n_train, n_val and n_test must be positive");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  try {
    train.validate();
    if (task == "distractor")
      distractor.validate();
    else
      listops.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

bool ExperimentConfig::operator==(const ExperimentConfig& other) const {
  for (const auto& [k, f] : field_table())
    if (f.get(*this) != f.get(other)) return false;
  return true;
}

ExperimentConfig defaults_for(const std::string& task) {
  ExperimentConfig c;
  set_key(c, "task", task);
  if (task == "listops") {
    c.train = TrainConfig::listops_defaults();
    c.hidden_size = 128;
    c.n_train = 8000;
    c.n_val = 1000;
    c.n_test = 1000;
  }
  return c;
}

void apply_desk_scale(ExperimentConfig& cfg) {
  if (cfg.task == "listops") {
    cfg.listops.max_depth = 2;
    cfg.n_train = 4000;
    cfg.n_val = 500;
    cfg.n_test = 500;
    cfg.train.max_epochs = 12;
    cfg.train.patience = 4;
  } else {
    cfg.n_train = 2000;
    cfg.n_val = 250;
    cfg.n_test = 500;
    cfg.train.max_epochs = 15;
    cfg.train.patience = 5;
  }
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : field_table()) k.push_back(name);
    return k;
  }();
  return keys;
}

void set_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  field(key).set(cfg, key, value);
}

std::string get_key(const ExperimentConfig& cfg, const std::string& key) {
  return field(key).get(cfg);
}

std::map<std::string, std::string> parse_config_text(std::istream& in) {
  std::map<std::string, std::string> values;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    field(key);  // rejects unknown keys
    if (!values.emplace(key, value).second)
      throw ConfigError("config line " + std::to_string(lineno) + ": repeated key '" + key + "'");
  }
  const auto it = values.find("schema_version");
  if (it == values.end()) throw ConfigError("config file lacks schema_version");
  if (it->second != std::to_string(kConfigSchemaVersion))
    throw ConfigError("config schema_version " + it->second + " is not supported (expected " +
                      std::to_string(kConfigSchemaVersion) + ")");
  return values;
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config_text(in);
}

void write_config(std::ostream& out, const ExperimentConfig& cfg) {
  for (const auto& [k, f] : field_table()) out << k << " = " << f.get(cfg) << '\n';
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, f] : field_table()) j[k] = f.get(cfg);
  return j;
}

ExperimentConfig resolve_config(const std::map<std::string, std::string>& file_values,
                                const std::map<std::string, std::string>& flag_values,
                                bool desk_scale, const std::string& env_output_dir) {
  std::string task = "distractor";
  if (auto it = file_values.find("task"); it != file_values.end()) task = it->second;
  if (auto it = flag_values.find("task"); it != flag_values.end()) task = it->second;
  ExperimentConfig cfg = defaults_for(task);
  if (desk_scale) apply_desk_scale(cfg);
  for (const auto& [k, v] : file_values) set_key(cfg, k, v);
  if (!env_output_dir.empty()) cfg.output_dir = env_output_dir;
  for (const auto& [k, v] : flag_values) set_key(cfg, k, v);
  cfg.validate();
  return cfg;
}

}  // namespace echo::cli
