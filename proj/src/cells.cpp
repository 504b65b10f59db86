// SPDX-License-Identifier: Apache-2.0
#include "echo/cells.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

namespace echo {

// --- configuration ---------------------------------------------------------

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(input_dim, "input_dim");
  positive(hidden_size, "hidden_size");
  positive(num_classes, "num_classes");
  positive(vocab_size, "vocab_size");
  positive(embed_dim, "embed_dim");
  positive(num_layers, "num_layers");
  if (input_dim != embed_dim)
    throw ConfigError("input_dim (" + std::to_string(input_dim) + ") must equal embed_dim (" +
                      std::to_string(embed_dim) + ") for token inputs");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw ConfigError("dropout_rate must lie in [0, 1)");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
}

std::string_view variant_name(Variant v) noexcept {
  switch (v) {
    case Variant::baseline:
      return "baseline";
    case Variant::attentive:
      return "attentive";
    case Variant::hybrid_ocg:
      return "hybrid-ocg";
    case Variant::echo:
      return "echo";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (variant_name(v) == name) return v;
  throw ConfigError("unknown model '" + std::string(name) +
                    "' (expected baseline, attentive, hybrid-ocg or echo)");
}

bool variant_uses_ocg(Variant v) noexcept { return v == Variant::hybrid_ocg || v == Variant::echo; }

bool variant_uses_attention(Variant v) noexcept {
  return v == Variant::attentive || v == Variant::echo;
}

Variant variant_of(const ModelConfig& cfg) noexcept {
  if (cfg.use_ocg) return cfg.use_attention ? Variant::echo : Variant::hybrid_ocg;
  return cfg.use_attention ? Variant::attentive : Variant::baseline;
}

ModelConfig config_for_variant(ModelConfig base, Variant v) {
  base.use_ocg = variant_uses_ocg(v);
  base.use_attention = variant_uses_attention(v);
  base.num_layers = base.use_ocg ? 1 : 2;
  return base;
}

std::string layer_prefix(std::size_t layer) { return "layer" + std::to_string(layer) + "."; }

namespace {

template <typename T, typename Lookup>
LstmWeights<T> gather_lstm(Lookup&& get, const std::string& prefix) {
  return {get(prefix + "W_xi"), get(prefix + "W_hi"),      get(prefix + "W_xf"),
          get(prefix + "W_hf"), get(prefix + "W_xg"),      get(prefix + "W_hg"),
          get(prefix + "W_xo"), get(prefix + "W_ho_gate"), get(prefix + "b_i"),
          get(prefix + "b_f"),  get(prefix + "b_g"),       get(prefix + "b_o")};
}

template <typename T, typename Lookup>
EchoWeights<T> gather_echo(Lookup&& get, const std::string& prefix) {
  EchoWeights<T> w;
  static_cast<LstmWeights<T>&>(w) = gather_lstm<T>(get, prefix);
  w.W_of = get(prefix + "W_of");
  w.W_oi = get(prefix + "W_oi");
  w.W_ho = get(prefix + "W_ho");
  return w;
}

const Matrix& find_param(const ParamStore& store, const std::string& name) {
  auto it = store.find(name);
  if (it == store.end()) throw ConfigError("missing parameter " + name);
  return it->second;
}

}  // namespace

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamStore p;
  const std::size_t h = cfg.hidden_size;
  auto xavier = [&](std::size_t r, std::size_t c) {
    return rand_init(rng, r, c, InitScheme::xavier_uniform);
  };
  p["embed"] = xavier(cfg.embed_dim, cfg.vocab_size);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string pre = layer_prefix(l);
    const std::size_t in = l == 0 ? cfg.input_dim : h;
    for (const char* gate : {"i", "f", "g", "o"}) {
      const std::string g = gate;
      p[pre + "W_x" + g] = xavier(h, in);
      p[pre + (g == "o" ? std::string("W_ho_gate") : "W_h" + g)] = xavier(h, h);
      p[pre + "b_" + g] = Matrix(h, 1, g == "f" ? cfg.forget_bias : 0.0);
    }
    if (cfg.use_ocg) {
      p[pre + "W_of"] = xavier(h, h);
      p[pre + "W_oi"] = xavier(h, h);
      p[pre + "W_ho"] = xavier(h, h);
    }
  }
  if (cfg.use_attention && cfg.scoring == AttentionScoring::additive) {
    p["attn.W_q"] = xavier(h, h);
    p["attn.W_k"] = xavier(h, h);
    p["attn.v"] = xavier(1, h);
  }
  p["head.W"] = xavier(cfg.num_classes, h);
  p["head.b"] = Matrix(cfg.num_classes, 1, 0.0);
  return p;
}

Model Model::create(const ModelConfig& cfg, std::uint64_t seed) {
  return Model{cfg, init_params(cfg, seed)};
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : params) n += m.size();
  return n;
}

LstmParams lstm_params_of(const ParamStore& store, std::size_t layer) {
  auto get = [&](const std::string& n) { return find_param(store, n); };
  return gather_lstm<Matrix>(get, layer_prefix(layer));
}

EchoParams echo_params_of(const ParamStore& store, std::size_t layer) {
  auto get = [&](const std::string& n) { return find_param(store, n); };
  return gather_echo<Matrix>(get, layer_prefix(layer));
}

// --- backends --------------------------------------------------------------
//
// The cell, attention and sequence code below is written once against a
// backend. ValueBackend evaluates eagerly on matrices; TapeBackend records
// onto a Tape. Both execute the same primitive sequence, so the two paths
// agree bit for bit.

namespace {

struct ValueBackend {
  using Value = Matrix;

  Matrix constant(Matrix m) { return m; }
  Matrix mm(const Matrix& a, const Matrix& b) { return echo::matmul(a, b); }
  Matrix add(const Matrix& a, const Matrix& b) { return echo::add(a, b); }
  Matrix mul(const Matrix& a, const Matrix& b) { return echo::hadamard(a, b); }
  Matrix sigmoid(const Matrix& a) { return echo::sigmoid(a); }
  Matrix tanh(const Matrix& a) { return echo::tanh(a); }
  Matrix bias(const Matrix& x, const Matrix& b) {
    if (b.cols() != 1 || b.rows() != x.rows())
      throw ShapeError("bias " + b.shape_string() + " does not fit " + x.shape_string());
    Matrix out = x;
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) += b[i];
    return out;
  }
  Matrix embed(const Matrix& table, std::vector<std::size_t> ids) {
    Matrix out(table.rows(), ids.size());
    for (std::size_t j = 0; j < ids.size(); ++j)
      for (std::size_t i = 0; i < table.rows(); ++i) out(i, j) = table(i, ids[j]);
    return out;
  }
  Matrix stack_rows(const std::vector<Matrix>& rows) {
    Matrix out(rows.size(), rows.front().cols());
    for (std::size_t t = 0; t < rows.size(); ++t)
      for (std::size_t j = 0; j < out.cols(); ++j) out(t, j) = rows[t][j];
    return out;
  }
  Matrix softmax_cols(const Matrix& a) { return echo::softmax_columns(a); }
  Matrix row(const Matrix& a, std::size_t r) {
    Matrix out(1, a.cols());
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] = a(r, j);
    return out;
  }
  Matrix scale_cols(const Matrix& x, const Matrix& w) {
    Matrix out = x;
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) *= w[j];
    return out;
  }
  Matrix col_dot(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("column_dot: shape mismatch");
    Matrix out(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) out[j] += a(i, j) * b(i, j);
    return out;
  }
  void mark_hidden(std::size_t, const Matrix&) {}
};

struct TapeBackend {
  using Value = Var;
  Tape& tape;

  Var constant(Matrix m) { return tape.constant(std::move(m)); }
  Var mm(Var a, Var b) { return tape.matmul(a, b); }
  Var add(Var a, Var b) { return tape.add(a, b); }
  Var mul(Var a, Var b) { return tape.hadamard(a, b); }
  Var sigmoid(Var a) { return tape.sigmoid(a); }
  Var tanh(Var a) { return tape.tanh(a); }
  Var bias(Var x, Var b) { return tape.add_bias(x, b); }
  Var embed(Var table, std::vector<std::size_t> ids) {
    return tape.embedding(table, std::move(ids));
  }
  Var stack_rows(const std::vector<Var>& rows) { return tape.stack_rows(rows); }
  Var softmax_cols(Var a) { return tape.softmax_columns(a); }
  Var row(Var a, std::size_t r) { return tape.row(a, r); }
  Var scale_cols(Var x, Var w) { return tape.scale_columns(x, w); }
  Var col_dot(Var a, Var b) { return tape.column_dot(a, b); }
  void mark_hidden(std::size_t t, Var h) { tape.mark_hidden(t, h); }
};

template <typename T>
struct CellOut {
  T h, c, i, f, g, o;
};

// Shared LSTM arithmetic. extra_f / extra_i are the output-conditioning
// terms (null for a plain LSTM step).
template <typename B, typename T = typename B::Value>
CellOut<T> cell_core(B& be, const LstmWeights<T>& p, const T& x, const T& h, const T& c,
                     const T* extra_f, const T* extra_i) {
  auto pre = [&](const T& wx, const T& wh, const T* extra, const T& b) {
    T z = be.add(be.mm(wx, x), be.mm(wh, h));
    if (extra) z = be.add(z, *extra);
    return be.bias(z, b);
  };
  CellOut<T> out;
  out.i = be.sigmoid(pre(p.W_xi, p.W_hi, extra_i, p.b_i));
  out.f = be.sigmoid(pre(p.W_xf, p.W_hf, extra_f, p.b_f));
  out.g = be.tanh(pre(p.W_xg, p.W_hg, nullptr, p.b_g));
  out.o = be.sigmoid(pre(p.W_xo, p.W_ho_gate, nullptr, p.b_o));
  out.c = be.add(be.mul(out.f, c), be.mul(out.i, out.g));
  out.h = be.mul(out.o, be.tanh(out.c));
  return out;
}

template <typename B, typename T = typename B::Value>
std::pair<CellOut<T>, T> echo_core(B& be, const EchoWeights<T>& p, const T& x, const T& h,
                                   const T& c, const T& o_prev) {
  const T extra_f = be.mm(p.W_of, o_prev);
  const T extra_i = be.mm(p.W_oi, o_prev);
  CellOut<T> out =
      cell_core(be, static_cast<const LstmWeights<T>&>(p), x, h, c, &extra_f, &extra_i);
  T proj = be.mm(p.W_ho, out.h);
  return {std::move(out), std::move(proj)};
}

template <typename T>
struct AttentionWeightsT {
  T W_q, W_k, v;
};

template <typename B, typename T = typename B::Value>
std::pair<T, T> attention_core(B& be, const std::vector<T>& hidden, const AttentionWeightsT<T>* w,
                               AttentionScoring scoring) {
  if (hidden.empty()) throw DomainError("attention over an empty sequence");
  const T& query = hidden.back();
  std::vector<T> scores;
  scores.reserve(hidden.size());
  if (scoring == AttentionScoring::additive) {
    const T q = be.mm(w->W_q, query);
    for (const T& h : hidden) scores.push_back(be.mm(w->v, be.tanh(be.add(q, be.mm(w->W_k, h)))));
  } else {
    for (const T& h : hidden) scores.push_back(be.col_dot(query, h));
  }
  T alpha = be.softmax_cols(be.stack_rows(scores));
  T context = be.scale_cols(hidden[0], be.row(alpha, 0));
  for (std::size_t t = 1; t < hidden.size(); ++t)
    context = be.add(context, be.scale_cols(hidden[t], be.row(alpha, t)));
  return {std::move(context), std::move(alpha)};
}

template <typename T>
struct Graph {
  T logits;
  std::vector<T> hidden, cell, forget, input, projection;
  std::optional<T> alpha;
};

template <typename B, typename T = typename B::Value, typename Lookup>
Graph<T> forward_impl(B& be, Lookup&& get, const ModelConfig& cfg,
                      std::span<const std::vector<std::size_t>* const> seqs,
                      const ForwardOptions& opt) {
  cfg.validate();
  if (seqs.empty()) throw DomainError("forward over an empty batch");
  const std::size_t batch = seqs.size();
  const std::size_t steps = seqs[0]->size();
  if (steps == 0) throw DomainError("forward over an empty sequence");
  for (std::size_t j = 0; j < batch; ++j) {
    if (seqs[j]->size() != steps)
      throw ShapeError("forward_batch: sequences must share one length");
    for (std::size_t t = 0; t < steps; ++t)
      if ((*seqs[j])[t] >= cfg.vocab_size)
        throw DataError("token " + std::to_string((*seqs[j])[t]) + " at position " +
                        std::to_string(t + 1) + " is outside the vocabulary of size " +
                        std::to_string(cfg.vocab_size));
  }

  const std::size_t hs = cfg.hidden_size;
  const T table = get("embed");
  std::vector<LstmWeights<T>> plain;
  std::vector<EchoWeights<T>> echo;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    if (cfg.use_ocg)
      echo.push_back(gather_echo<T>(get, layer_prefix(l)));
    else
      plain.push_back(gather_lstm<T>(get, layer_prefix(l)));
  }

  const T zeros = be.constant(Matrix(hs, batch));
  std::vector<T> h(cfg.num_layers, zeros), c(cfg.num_layers, zeros), o(cfg.num_layers, zeros);

  Graph<T> g;
  std::vector<std::size_t> ids(batch);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t j = 0; j < batch; ++j) ids[j] = (*seqs[j])[t];
    T x = be.embed(table, ids);
    CellOut<T> top;
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      if (cfg.use_ocg) {
        auto [out, proj] = echo_core(be, echo[l], x, h[l], c[l], o[l]);
        o[l] = proj;
        top = std::move(out);
      } else {
        top = cell_core(be, plain[l], x, h[l], c[l], static_cast<const T*>(nullptr),
                        static_cast<const T*>(nullptr));
      }
      h[l] = top.h;
      c[l] = top.c;
      x = top.h;
    }
    g.hidden.push_back(top.h);
    g.cell.push_back(top.c);
    g.forget.push_back(top.f);
    g.input.push_back(top.i);
    if (cfg.use_ocg) g.projection.push_back(o.back());
    be.mark_hidden(t, top.h);
  }

  T pooled = g.hidden.back();
  if (cfg.use_attention) {
    std::optional<AttentionWeightsT<T>> w;
    if (cfg.scoring == AttentionScoring::additive)
      w = AttentionWeightsT<T>{get("attn.W_q"), get("attn.W_k"), get("attn.v")};
    auto [context, alpha] = attention_core(be, g.hidden, w ? &*w : nullptr, cfg.scoring);
    pooled = context;
    g.alpha = alpha;
  }
  if (opt.training && cfg.dropout_rate > 0.0) {
    if (!opt.dropout_rng) throw ContractError("training forward with dropout needs an Rng");
    const double keep = 1.0 - cfg.dropout_rate;
    Matrix mask(hs, batch);
    for (auto& m : mask.data()) m = opt.dropout_rng->bernoulli(keep) ? 1.0 / keep : 0.0;
    pooled = be.mul(pooled, be.constant(std::move(mask)));
  }
  g.logits = be.bias(be.mm(get("head.W"), pooled), get("head.b"));
  return g;
}

Vector column_of(const Matrix& m, std::size_t col) {
  Vector v(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) v[i] = m(i, col);
  return v;
}

}  // namespace

// --- single steps ----------------------------------------------------------

LstmStep lstm_step(const LstmParams& p, const Matrix& x, const Matrix& h_prev,
                   const Matrix& c_prev) {
  ValueBackend be;
  auto out = cell_core(be, p, x, h_prev, c_prev, static_cast<const Matrix*>(nullptr),
                       static_cast<const Matrix*>(nullptr));
  return {std::move(out.h),
          std::move(out.c),
          {std::move(out.i), std::move(out.f), std::move(out.g), std::move(out.o)}};
}

EchoStep echo_step(const EchoParams& p, const Matrix& x, const Matrix& h_prev, const Matrix& c_prev,
                   const Matrix& o_prev) {
  ValueBackend be;
  auto [out, proj] = echo_core(be, p, x, h_prev, c_prev, o_prev);
  return {std::move(out.h),
          std::move(out.c),
          std::move(proj),
          {std::move(out.i), std::move(out.f), std::move(out.g), std::move(out.o)}};
}

AttentionResult attention_pool(std::span<const Matrix> hidden, const AttentionParams& p,
                               AttentionScoring scoring) {
  if (hidden.empty()) throw DomainError("attention_pool: empty sequence");
  ValueBackend be;
  std::vector<Matrix> hs(hidden.begin(), hidden.end());
  AttentionWeightsT<Matrix> w{p.W_q, p.W_k, p.v};
  auto [context, alpha] = attention_core(be, hs, &w, scoring);
  return {std::move(context), column_of(alpha, 0)};
}

// --- sequence forward ------------------------------------------------------

ParamVars bind_params(Tape& tape, const ParamStore& store) {
  ParamVars vars;
  for (const auto& [name, m] : store) vars.emplace(name, tape.parameter(name, m));
  return vars;
}

BatchGraph forward_batch(Tape& tape, const ParamVars& params, const ModelConfig& cfg,
                         std::span<const std::vector<std::size_t>* const> sequences,
                         const ForwardOptions& options) {
  TapeBackend be{tape};
  auto get = [&](const std::string& n) {
    auto it = params.find(n);
    if (it == params.end()) throw ConfigError("missing parameter " + n);
    return it->second;
  };
  auto g = forward_impl(be, get, cfg, sequences, options);
  return {g.logits,
          std::move(g.hidden),
          std::move(g.cell),
          std::move(g.forget),
          std::move(g.input),
          std::move(g.projection),
          g.alpha};
}

SequenceOutput forward_sequence(const Model& model, std::span<const std::size_t> tokens) {
  if (tokens.empty()) throw DomainError("forward_sequence: empty token sequence");
  const std::vector<std::vector<std::size_t>> seqs{{tokens.begin(), tokens.end()}};
  return std::move(forward_many(model, seqs, 1).front());
}

namespace {

// Runs the value path over length-bucketed batches and hands each result
// column to `emit(sequence_index, graph, column)`.
template <typename Emit>
void for_each_batched(const Model& model, std::span<const std::vector<std::size_t>> sequences,
                      std::size_t batch_size, Emit&& emit) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t k = 0; k < sequences.size(); ++k) by_length[sequences[k].size()].push_back(k);
  ValueBackend be;
  auto get = [&](const std::string& n) { return find_param(model.params, n); };
  for (const auto& [len, idx] : by_length) {
    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
      const std::size_t end = std::min(idx.size(), start + batch_size);
      std::vector<const std::vector<std::size_t>*> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(&sequences[idx[k]]);
      const auto g = forward_impl(be, get, model.config, batch, ForwardOptions{});
      for (std::size_t k = start; k < end; ++k) emit(idx[k], g, k - start);
    }
  }
}

StepTrace trace_of(const Graph<Matrix>& g, std::size_t col) {
  StepTrace tr;
  for (std::size_t t = 0; t < g.hidden.size(); ++t) {
    tr.hidden.push_back(column_of(g.hidden[t], col));
    tr.cell.push_back(column_of(g.cell[t], col));
    tr.forget.push_back(column_of(g.forget[t], col));
    tr.input.push_back(column_of(g.input[t], col));
    if (!g.projection.empty()) tr.projection.push_back(column_of(g.projection[t], col));
  }
  if (g.alpha) tr.alpha = column_of(*g.alpha, col);
  return tr;
}

}  // namespace

std::vector<Vector> predict_logits(const Model& model,
                                   std::span<const std::vector<std::size_t>> sequences,
                                   std::size_t batch_size) {
  std::vector<Vector> out(sequences.size());
  for_each_batched(model, sequences, batch_size,
                   [&](std::size_t k, const Graph<Matrix>& g, std::size_t col) {
                     out[k] = column_of(g.logits, col);
                   });
  return out;
}

std::vector<SequenceOutput> forward_many(const Model& model,
                                         std::span<const std::vector<std::size_t>> sequences,
                                         std::size_t batch_size) {
  std::vector<SequenceOutput> out(sequences.size());
  for_each_batched(model, sequences, batch_size,
                   [&](std::size_t k, const Graph<Matrix>& g, std::size_t col) {
                     out[k].logits = Matrix::column(column_of(g.logits, col));
                     out[k].trace = trace_of(g, col);
                   });
  return out;
}

StepTrace extract_trace(const Tape& tape, const BatchGraph& graph, std::size_t col) {
  StepTrace tr;
  for (std::size_t t = 0; t < graph.hidden.size(); ++t) {
    tr.hidden.push_back(column_of(tape.value(graph.hidden[t]), col));
    tr.cell.push_back(column_of(tape.value(graph.cell[t]), col));
    tr.forget.push_back(column_of(tape.value(graph.forget[t]), col));
    tr.input.push_back(column_of(tape.value(graph.input[t]), col));
    if (!graph.projection.empty())
      tr.projection.push_back(column_of(tape.value(graph.projection[t]), col));
  }
  if (graph.alpha) tr.alpha = column_of(tape.value(*graph.alpha), col);
  return tr;
}

// --- persistence -----------------------------------------------------------

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * k);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * k);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) {
    if (in_.size() - pos_ < n)
      throw DataError("weight file truncated at byte " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_weights(const Model& model) {
  Writer w;
  w.bytes(std::string_view(kWeightMagic, sizeof kWeightMagic));
  w.u32(kWeightFormatVersion);
  const ModelConfig& c = model.config;
  w.u64(c.input_dim);
  w.u64(c.hidden_size);
  w.u64(c.num_classes);
  w.u64(c.vocab_size);
  w.u64(c.embed_dim);
  w.u8(c.use_ocg ? 1 : 0);
  w.u8(c.use_attention ? 1 : 0);
  w.u64(c.num_layers);
  w.f64(c.dropout_rate);
  w.u8(static_cast<std::uint8_t>(c.scoring));
  w.f64(c.forget_bias);
  w.u32(static_cast<std::uint32_t>(model.params.size()));
  for (const auto& [name, m] : model.params) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u64(m.rows());
    w.u64(m.cols());
    for (double v : m.data()) w.f64(v);
  }
  return w.take();
}

Model decode_weights(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof kWeightMagic) != std::string(kWeightMagic, sizeof kWeightMagic))
    throw DataError("not a weight file (bad magic)");
  const auto version = r.u32();
  if (version != kWeightFormatVersion)
    throw DataError("unsupported weight format version " + std::to_string(version));
  Model m;
  ModelConfig& c = m.config;
  c.input_dim = r.u64();
  c.hidden_size = r.u64();
  c.num_classes = r.u64();
  c.vocab_size = r.u64();
  c.embed_dim = r.u64();
  c.use_ocg = r.u8() != 0;
  c.use_attention = r.u8() != 0;
  c.num_layers = r.u64();
  c.dropout_rate = r.f64();
  const auto scoring = r.u8();
  if (scoring > 1) throw DataError("unknown attention scoring id " + std::to_string(scoring));
  c.scoring = static_cast<AttentionScoring>(scoring);
  c.forget_bias = r.f64();
  c.validate();
  const auto count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = r.bytes(r.u32());
    const auto rows = r.u64();
    const auto cols = r.u64();
    std::vector<double> data(rows * cols);
    for (auto& v : data) v = r.f64();
    m.params.emplace(std::move(name), Matrix(rows, cols, std::move(data)));
  }
  if (!r.done()) throw DataError("trailing bytes after weight records");
  const ParamStore expected = init_params(c, 0);
  for (const auto& [name, ref] : expected) {
    auto it = m.params.find(name);
    if (it == m.params.end()) throw DataError("weight file lacks parameter " + name);
    if (!it->second.same_shape(ref))
      throw DataError("parameter " + name + " has shape " + it->second.shape_string() +
                      ", expected " + ref.shape_string());
  }
  if (m.params.size() != expected.size()) throw DataError("weight file has unexpected parameters");
  return m;
}

void save_weights(const Model& model, const std::filesystem::path& path) {
  const auto bytes = encode_weights(model);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Model load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open weight file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_weights(bytes);
}

}  // namespace echo
