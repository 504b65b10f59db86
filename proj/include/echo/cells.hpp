// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "echo/autodiff.hpp"
#include "echo/tensor.hpp"

namespace echo {

// --- parameters ------------------------------------------------------------

/// Weights of one LSTM layer. T is Matrix for concrete values or Var for
/// values bound on a Tape. Input-to-gate matrices are hidden x input_dim,
/// hidden-to-gate are hidden x hidden, biases are hidden x 1.
/// W_ho_gate is the output *gate* weight; the output projection of the echo
/// cell is EchoWeights::W_ho.
template <typename T>
struct LstmWeights {
  T W_xi, W_hi, W_xf, W_hf, W_xg, W_hg, W_xo, W_ho_gate;
  T b_i, b_f, b_g, b_o;
};

/// LSTM weights plus output conditioning: W_of and W_oi feed the projected
/// previous output o_{t-1} = W_ho h_{t-1} into the forget and input gates.
template <typename T>
struct EchoWeights : LstmWeights<T> {
  T W_of, W_oi, W_ho;
};

using LstmParams = LstmWeights<Matrix>;
using EchoParams = EchoWeights<Matrix>;

/// Named parameter storage. std::map keeps iteration order stable, which the
/// optimizer and the weight file rely on.
using ParamStore = std::map<std::string, Matrix>;

enum class AttentionScoring : std::uint8_t { additive, dot };

struct ModelConfig {
  std::size_t input_dim = 16;
  std::size_t hidden_size = 64;
  std::size_t num_classes = 4;
  std::size_t vocab_size = 12;
  std::size_t embed_dim = 16;
  bool use_ocg = true;
  bool use_attention = true;
  std::size_t num_layers = 1;
  double dropout_rate = 0.3;
  AttentionScoring scoring = AttentionScoring::additive;
  double forget_bias = 1.0;

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// The four ablation rows: (use_ocg, use_attention).
enum class Variant { baseline, attentive, hybrid_ocg, echo };

inline constexpr Variant kAllVariants[] = {Variant::baseline, Variant::attentive,
                                           Variant::hybrid_ocg, Variant::echo};

std::string_view variant_name(Variant v) noexcept;
Variant parse_variant(std::string_view name);
bool variant_uses_ocg(Variant v) noexcept;
bool variant_uses_attention(Variant v) noexcept;
Variant variant_of(const ModelConfig& cfg) noexcept;
/// Copies `base`, sets the two flags for `v`, and sets num_layers to 1 for
/// output-conditioned variants and 2 for the plain-LSTM ones.
ModelConfig config_for_variant(ModelConfig base, Variant v);

/// Freshly initialised parameters: Xavier-uniform weights, zero biases
/// except the forget-gate bias (cfg.forget_bias).
ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

struct Model {
  ModelConfig config;
  ParamStore params;

  static Model create(const ModelConfig& cfg, std::uint64_t seed);
  std::size_t parameter_count() const;
};

std::string layer_prefix(std::size_t layer);
LstmParams lstm_params_of(const ParamStore& store, std::size_t layer);
EchoParams echo_params_of(const ParamStore& store, std::size_t layer);

// --- single steps (concrete values) -------------------------------------------

struct Gates {
  Matrix i, f, g, o;
};

struct LstmStep {
  Matrix h, c;
  Gates gates;
};

struct EchoStep {
  Matrix h, c, o;
  Gates gates;
};

/// i, f, o = sigmoid(W_x* x + W_h* h + b_*); g = tanh(...);
/// c = f*c_prev + i*g; h = o*tanh(c). Vectors may carry several columns.
LstmStep lstm_step(const LstmParams& p, const Matrix& x, const Matrix& h_prev,
                   const Matrix& c_prev);

/// As lstm_step, with W_of o_prev added to the forget pre-activation and
/// W_oi o_prev to the input pre-activation; returns o = W_ho h as well.
EchoStep echo_step(const EchoParams& p, const Matrix& x, const Matrix& h_prev, const Matrix& c_prev,
                   const Matrix& o_prev);

struct AttentionParams {
  Matrix W_q, W_k, v;  // v is 1 x attn_dim
};

struct AttentionResult {
  Matrix context;  // hidden x 1
  Vector alpha;    // length T
};

/// Pools hidden states h_1..h_T (each hidden x 1) queried by h_T.
AttentionResult attention_pool(std::span<const Matrix> hidden, const AttentionParams& p,
                               AttentionScoring scoring = AttentionScoring::additive);

// --- sequence forward -------------------------------------------------------

/// Per-timestep record of the top recurrent layer.
struct StepTrace {
  std::vector<Vector> forget, input, hidden, cell, projection;
  Vector alpha;  // empty unless use_attention
  std::size_t steps() const noexcept { return hidden.size(); }
};

struct ForwardOptions {
  bool training = false;
  Rng* dropout_rng = nullptr;  // required when training with dropout > 0
};

/// Tape nodes produced by forward_batch. Every per-step entry holds a
/// hidden x B block for the top layer.
struct BatchGraph {
  Var logits;
  std::vector<Var> hidden, cell, forget, input, projection;
  std::optional<Var> alpha;  // T x B
};

using ParamVars = std::map<std::string, Var>;

/// Registers every parameter of `store` on the tape.
ParamVars bind_params(Tape& tape, const ParamStore& store);

/// Builds the forward graph for a batch of equal-length token sequences.
/// Throws DataError on an out-of-vocabulary token.
BatchGraph forward_batch(Tape& tape, const ParamVars& params, const ModelConfig& cfg,
                         std::span<const std::vector<std::size_t>* const> sequences,
                         const ForwardOptions& options = {});

struct SequenceOutput {
  Matrix logits;  // num_classes x 1
  StepTrace trace;
};

SequenceOutput forward_sequence(const Model& model, std::span<const std::size_t> tokens);

/// Inference-mode logits for many sequences; equal-length sequences are
/// batched together. Result column k belongs to sequences[k].
std::vector<Vector> predict_logits(const Model& model,
                                   std::span<const std::vector<std::size_t>> sequences,
                                   std::size_t batch_size = 64);

/// Inference-mode forward for many sequences with full traces, batched by
/// length. Element k belongs to sequences[k].
std::vector<SequenceOutput> forward_many(const Model& model,
                                         std::span<const std::vector<std::size_t>> sequences,
                                         std::size_t batch_size = 64);

/// Extracts column `col` of a per-step list of tape values.
StepTrace extract_trace(const Tape& tape, const BatchGraph& graph, std::size_t col);

// --- persistence ------------------------------------------------------------

inline constexpr char kWeightMagic[8] = {'E', 'C', 'H', 'O', 'W', 'G', 'T', '\0'};
inline constexpr std::uint32_t kWeightFormatVersion = 1;

std::vector<std::uint8_t> encode_weights(const Model& model);
Model decode_weights(std::span<const std::uint8_t> bytes);
/// Writes to a temporary sibling then renames, so readers never observe a
/// partially-written file.
void save_weights(const Model& model, const std::filesystem::path& path);
Model load_weights(const std::filesystem::path& path);

}  // namespace echo
