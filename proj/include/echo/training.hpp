// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <json.hpp>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "echo/autodiff.hpp"
#include "echo/cells.hpp"
#include "echo/tasks.hpp"

namespace echo {

struct TrainConfig {
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 5e-4;
  double dropout = 0.3;
  std::size_t max_epochs = 120;
  std::size_t patience = 15;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  /// Global gradient-norm clip; 0 disables clipping.
  double clip_norm = 5.0;
  /// Largest sub-batch recorded on one tape. Sub-batches are differentiated
  /// concurrently and reduced in a fixed order.
  std::size_t chunk_size = 16;

  static TrainConfig distractor_defaults();
  static TrainConfig listops_defaults();
  void validate() const;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::map<std::string, Matrix> m, v;
};

/// -log softmax(logits)[label] via log-sum-exp. Throws DataError when the
/// label is out of range.
double cross_entropy(std::span<const double> logits, std::size_t label);

/// One Adam update with bias correction. Weight decay is decoupled:
/// param -= lr * weight_decay * param, then the Adam step. Throws
/// NumericError naming the first parameter whose gradient is not finite.
void adam_step(ParamStore& params, const GradientSet& grads, AdamState& state,
               const TrainConfig& cfg);

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_gradients(GradientSet& grads, double max_norm);

struct BatchGradients {
  GradientSet grads;
  double loss = 0.0;  // mean cross-entropy over the batch
};

/// Mean cross-entropy gradient over `batch`. Sequences of different lengths
/// go on separate tapes; `dropout_seed` fixes the dropout masks.
BatchGradients batch_gradients(const Model& model, std::span<const Sample* const> batch,
                               bool training, std::uint64_t dropout_seed,
                               std::size_t chunk_size = 16);

/// Argmax accuracy; ties go to the lowest class id.
double evaluate(const Model& model, const Dataset& data);
std::size_t argmax(std::span<const double> v) noexcept;

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  bool improved = false;
};

struct RunResult {
  double best_val_accuracy = 0.0;
  double test_accuracy = 0.0;
  bool has_test = false;
  std::vector<double> loss_curve;
  std::vector<double> accuracy_curve;
  std::size_t stopped_epoch = 0;
  std::size_t best_epoch = 0;
  nlohmann::json config;
  std::uint64_t seed = 0;
  double wall_time = 0.0;
};

/// Epoch loop with seeded shuffling, validation every eval_every epochs and
/// early stopping on validation accuracy (strict improvement; ties keep the
/// earlier epoch). Leaves `model` holding the best-validation parameters.
/// Throws NumericError if the training loss becomes non-finite.
RunResult train(Model& model, const Dataset& train_set, const Dataset& val_set,
                const Dataset* test_set, const TrainConfig& cfg,
                const std::function<void(const EpochLog&)>& on_epoch = {});

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunResult& r);
RunResult run_result_from_json(const nlohmann::json& j);

/// CSV with header "epoch,train_loss,val_acc".
void write_curves_csv(std::ostream& out, const RunResult& r);

}  // namespace echo
