// SPDX-License-Identifier: Apache-2.0
#include "echo/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

namespace echo {

TrainConfig TrainConfig::distractor_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::listops_defaults() {
  TrainConfig c;
  c.batch_size = 32;
  c.max_epochs = 80;
  c.chunk_size = 32;
  return c;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (patience > max_epochs) throw ConfigError("patience must not exceed max_epochs");
  if (eval_every == 0) throw ConfigError("eval_every must be positive");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be non-negative");
  if (chunk_size == 0) throw ConfigError("chunk_size must be positive");
}

double cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size())
    throw DataError("label " + std::to_string(label) + " out of range for " +
                    std::to_string(logits.size()) + " classes");
  return log_sum_exp(logits) - logits[label];
}

void adam_step(ParamStore& params, const GradientSet& grads, AdamState& state,
               const TrainConfig& cfg) {
  for (const auto& [name, g] : grads) {
    if (!all_finite(g)) throw NumericError("non-finite gradient for parameter " + name);
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("gradient for unknown parameter " + name);
    if (!it->second.same_shape(g))
      throw ShapeError("gradient shape " + g.shape_string() + " does not match parameter " + name +
                       " " + it->second.shape_string());
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (const auto& [name, g] : grads) {
    Matrix& p = params.at(name);
    auto [mit, m_new] = state.m.try_emplace(name, g.rows(), g.cols());
    auto [vit, v_new] = state.v.try_emplace(name, g.rows(), g.cols());
    auto pd = p.data();
    auto md = mit->second.data();
    auto vd = vit->second.data();
    auto gd = g.data();
    const double decay = cfg.lr * cfg.weight_decay;
    for (std::size_t k = 0; k < pd.size(); ++k) {
      pd[k] -= decay * pd[k];
      md[k] = state.beta1 * md[k] + (1.0 - state.beta1) * gd[k];
      vd[k] = state.beta2 * vd[k] + (1.0 - state.beta2) * gd[k] * gd[k];
      const double mhat = md[k] / c1;
      const double vhat = vd[k] / c2;
      pd[k] -= cfg.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double clip_gradients(GradientSet& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& v : g.data()) v *= f;
  }
  return norm;
}

BatchGradients batch_gradients(const Model& model, std::span<const Sample* const> batch,
                               bool training, std::uint64_t dropout_seed, std::size_t chunk_size) {
  if (batch.empty()) throw DomainError("empty batch");
  // Group by length, then cut groups into chunks. The chunk list depends only
  // on the batch, so the reduction below is thread-count independent.
  std::map<std::size_t, std::vector<const Sample*>> groups;
  for (const Sample* s : batch) groups[s->tokens.size()].push_back(s);
  std::vector<std::vector<const Sample*>> chunks;
  for (auto& [len, members] : groups)
    for (std::size_t k = 0; k < members.size(); k += chunk_size)
      chunks.emplace_back(
          members.begin() + static_cast<std::ptrdiff_t>(k),
          members.begin() + static_cast<std::ptrdiff_t>(std::min(members.size(), k + chunk_size)));

  const double factor = 1.0 / static_cast<double>(batch.size());
  std::vector<GradientSet> partial(chunks.size());
  std::vector<double> losses(chunks.size());
  std::vector<std::exception_ptr> errors(chunks.size());

  const bool par = chunks.size() > 1 && default_exec() == Exec::parallel;
#pragma omp parallel for schedule(dynamic) if (par)
  for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(chunks.size()); ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    try {
      Tape tape;
      const ParamVars vars = bind_params(tape, model.params);
      std::vector<const TokenSeq*> seqs;
      std::vector<std::size_t> labels;
      for (const Sample* s : chunks[c]) {
        seqs.push_back(&s->tokens);
        labels.push_back(s->label);
      }
      Rng rng(derive_seed(dropout_seed, c));
      ForwardOptions opt{training, &rng};
      const BatchGraph g = forward_batch(tape, vars, model.config, seqs, opt);
      const Var loss = tape.softmax_xent(g.logits, std::move(labels), factor);
      tape.set_output(loss);
      losses[c] = tape.value(loss)[0];
      partial[c] = backward(tape);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  BatchGradients out;
  out.grads = std::move(partial[0]);
  out.loss = losses[0];
  for (std::size_t c = 1; c < chunks.size(); ++c) {
    out.loss += losses[c];
    for (auto& [name, g] : out.grads) {
      auto dst = g.data();
      auto src = partial[c].at(name).data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
  return out;
}

std::size_t argmax(std::span<const double> v) noexcept {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

double evaluate(const Model& model, const Dataset& data) {
  if (data.empty()) throw DomainError("evaluate on an empty dataset");
  std::vector<TokenSeq> seqs;
  seqs.reserve(data.size());
  for (const auto& s : data.samples) seqs.push_back(s.tokens);
  const auto logits = predict_logits(model, seqs);
  std::size_t correct = 0;
  for (std::size_t k = 0; k < data.size(); ++k)
    if (argmax(logits[k]) == data.samples[k].label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

RunResult train(Model& model, const Dataset& train_set, const Dataset& val_set,
                const Dataset* test_set, const TrainConfig& cfg,
                const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (train_set.empty() || val_set.empty())
    throw DomainError("training needs non-empty train and validation sets");
  model.config.dropout_rate = cfg.dropout;
  model.config.validate();
  train_set.validate();
  val_set.validate();
  if (train_set.vocab_size > model.config.vocab_size)
    throw DataError("dataset vocabulary exceeds the model's");

  const auto started = std::chrono::steady_clock::now();
  RunResult result;
  result.seed = cfg.seed;
  result.config = {{"train", to_json(cfg)}, {"model", to_json(model.config)}};

  AdamState adam;
  ParamStore best = model.params;
  double best_val = -1.0;
  double last_val = 0.0;
  std::size_t stale = 0;

  std::vector<const Sample*> order;
  for (const auto& s : train_set.samples) order.push_back(&s);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, epoch));
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const Sample* const> batch(order.data() + start, end - start);
      auto bg = batch_gradients(model, batch, true,
                                derive_seed(cfg.seed ^ 0xD40B0u, epoch * 1'000'003u + batch_index),
                                cfg.chunk_size);
      if (!std::isfinite(bg.loss))
        throw NumericError("training loss diverged at epoch " + std::to_string(epoch));
      loss_sum += bg.loss * static_cast<double>(batch.size());
      if (cfg.clip_norm > 0.0) clip_gradients(bg.grads, cfg.clip_norm);
      adam_step(model.params, bg.grads, adam, cfg);
    }
    const double train_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(train_loss))
      throw NumericError("training loss diverged at epoch " + std::to_string(epoch));

    const bool measure = epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs;
    if (measure) last_val = evaluate(model, val_set);
    EpochLog log{epoch, train_loss, last_val, false};
    if (measure && last_val > best_val) {
      best_val = last_val;
      best = model.params;
      result.best_epoch = epoch;
      stale = 0;
      log.improved = true;
    } else {
      ++stale;
    }
    result.loss_curve.push_back(train_loss);
    result.accuracy_curve.push_back(last_val);
    result.stopped_epoch = epoch;
    if (on_epoch) on_epoch(log);
    if (stale > cfg.patience) break;
  }

  model.params = std::move(best);
  result.best_val_accuracy = best_val;
  if (test_set && !test_set->empty()) {
    result.test_accuracy = evaluate(model, *test_set);
    result.has_test = true;
  }
  result.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

// --- serialization ---------------------------------------------------------

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"dropout", c.dropout},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"clip_norm", c.clip_norm},
          {"chunk_size", c.chunk_size}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.eval_every = j.at("eval_every").get<std::size_t>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.chunk_size = j.at("chunk_size").get<std::size_t>();
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"input_dim", c.input_dim},
          {"hidden_size", c.hidden_size},
          {"num_classes", c.num_classes},
          {"vocab_size", c.vocab_size},
          {"embed_dim", c.embed_dim},
          {"use_ocg", c.use_ocg},
          {"use_attention", c.use_attention},
          {"num_layers", c.num_layers},
          {"dropout_rate", c.dropout_rate},
          {"scoring", c.scoring == AttentionScoring::additive ? "additive" : "dot"},
          {"forget_bias", c.forget_bias},
          {"variant", std::string(variant_name(variant_of(c)))}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden_size = j.at("hidden_size").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.use_ocg = j.at("use_ocg").get<bool>();
  c.use_attention = j.at("use_attention").get<bool>();
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.scoring = j.at("scoring").get<std::string>() == "dot" ? AttentionScoring::dot
                                                          : AttentionScoring::additive;
  c.forget_bias = j.at("forget_bias").get<double>();
  return c;
}

nlohmann::json to_json(const RunResult& r) {
  nlohmann::json j = {{"best_val_accuracy", r.best_val_accuracy},
                      {"loss_curve", r.loss_curve},
                      {"accuracy_curve", r.accuracy_curve},
                      {"stopped_epoch", r.stopped_epoch},
                      {"best_epoch", r.best_epoch},
                      {"config", r.config},
                      {"seed", r.seed},
                      {"wall_time", r.wall_time}};
  j["test_accuracy"] = r.has_test ? nlohmann::json(r.test_accuracy) : nlohmann::json(nullptr);
  return j;
}

RunResult run_result_from_json(const nlohmann::json& j) {
  RunResult r;
  r.best_val_accuracy = j.at("best_val_accuracy").get<double>();
  r.has_test = !j.at("test_accuracy").is_null();
  if (r.has_test) r.test_accuracy = j.at("test_accuracy").get<double>();
  r.loss_curve = j.at("loss_curve").get<std::vector<double>>();
  r.accuracy_curve = j.at("accuracy_curve").get<std::vector<double>>();
  r.stopped_epoch = j.at("stopped_epoch").get<std::size_t>();
  r.best_epoch = j.at("best_epoch").get<std::size_t>();
  r.config = j.at("config");
  r.seed = j.at("seed").get<std::uint64_t>();
  r.wall_time = j.at("wall_time").get<double>();
  return r;
}

void write_curves_csv(std::ostream& out, const RunResult& r) {
  out << "epoch,train_loss,val_acc\n";
  for (std::size_t e = 0; e < r.loss_curve.size(); ++e)
    out << (e + 1) << ',' << format_double(r.loss_curve[e]) << ','
        << format_double(r.accuracy_curve[e]) << '\n';
}

}  // namespace echo
