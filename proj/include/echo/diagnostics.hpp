// SPDX-License-Identifier: Apache-2.0
//
// Read-only analyses of trained models: forget-gate statistics, attention
// placement, the trigger-position sweep, hidden-state gradient profiles and
// the paired trigger / no-trigger forget-gate comparison. None of these
// functions modify the model they inspect.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "echo/cells.hpp"
#include "echo/tasks.hpp"

namespace echo {

/// Top-layer gate activations of one sample, one row per timestep.
struct GateRecord {
  Matrix forget;  // T x hidden
  Matrix input;   // T x hidden, or empty
  std::optional<std::size_t> trigger_position;

  std::size_t steps() const noexcept { return forget.rows(); }
};

/// Runs the model over every sample and collects forget (and input) gates.
std::vector<GateRecord> record_gates(const Model& model, std::span<const Sample> samples);

/// Inclusive, 1-based timestep window.
struct GateWindow {
  std::size_t lo = 10;
  std::size_t hi = 50;
};

/// Population variance of f_t over the window, taken per sample and hidden
/// unit, then averaged over units and samples. Throws SpecError when the
/// window is empty or extends past a record's length.
double gate_variance(std::span<const GateRecord> records, GateWindow window = {});

struct GateTimeline {
  std::string model;
  Vector mean;    // mean over samples and units at each t
  Vector stddev;  // population std over samples and units at each t
};

/// Requires at least one record; all records must share T and width.
GateTimeline gate_timeline(std::span<const GateRecord> records, std::string model);

/// Population variance of the mean curve over the window. Unlike
/// gate_variance this can be recomputed from gate_timeline.csv alone.
double timeline_variance(const GateTimeline& timeline, GateWindow window = {});

void write_gate_timeline_csv(std::ostream& out, std::span<const GateTimeline> timelines);
std::vector<GateTimeline> read_gate_timeline_csv(std::istream& in);

struct VarianceEntry {
  std::string model;
  double variance = 0.0;
  double timeline_variance = 0.0;
};

/// Writes one row per entry followed by a "ratio" row holding
/// entries[0] / entries[1] for both columns (requires exactly two entries).
void write_variance_csv(std::ostream& out, std::span<const VarianceEntry> entries);

struct HalfLifeReport {
  double mean_trigger = 0.0;     // E[f | trigger]
  double mean_no_trigger = 0.0;  // E[f | no trigger]
  double difference = 0.0;
  /// Standard deviation of the sign-flip null distribution of the mean
  /// paired difference.
  double null_std = 0.0;
  /// One-sided p-value for difference > 0.
  double p_value = 1.0;
  std::size_t pairs = 0;
  std::size_t permutations = 0;
  std::size_t t_from = 0;
};

/// Mean forget activation over timesteps t_from..T (1-based) and all units,
/// compared across paired samples that differ only in the trigger. Throws
/// SpecError when the datasets are not paired sample-for-sample.
HalfLifeReport half_life_check(const Model& model, const Dataset& with_trigger,
                               const Dataset& without_trigger, std::size_t t_from = 11,
                               std::size_t permutations = 10000, std::uint64_t seed = 0);

void write_half_life_csv(std::ostream& out, const std::string& model, const HalfLifeReport& r);

struct AttentionExport {
  std::vector<Vector> alpha;  // one row per sample
  /// Mean over samples of the attention mass on steps window_lo..window_hi.
  double window_mass = 0.0;
  std::size_t window_lo = 1;
  std::size_t window_hi = 10;
};

/// Throws ConfigError when the model has no attention.
AttentionExport attention_export(const Model& model, std::span<const Sample> samples,
                                 std::size_t window_lo = 1, std::size_t window_hi = 10);

void write_attention_csv(std::ostream& out, const AttentionExport& a);

struct SweepEntry {
  std::size_t position = 0;
  std::string model;
  double accuracy = 0.0;
  std::size_t n_samples = 0;
  bool operator==(const SweepEntry&) const = default;
};

struct SweepResult {
  std::vector<std::size_t> positions;
  std::vector<SweepEntry> entries;  // position-major, models in input order
  std::uint64_t seed = 0;

  /// Positions strictly increasing, accuracies in [0, 1], every entry's
  /// position listed. Throws SpecError otherwise.
  void validate() const;
  bool operator==(const SweepResult&) const = default;
};

struct NamedModel {
  std::string name;
  const Model* model = nullptr;
};

/// Evaluates every model on gen_distractor_shifted data at each position.
/// All models see the same samples at a given position.
SweepResult sensitivity_sweep(std::span<const NamedModel> models, const DistractorSpec& spec,
                              std::span<const std::size_t> positions, std::size_t n_per_position);

void write_sweep_csv(std::ostream& out, const SweepResult& r);
/// Rebuilds positions from the rows; the seed is not part of the CSV.
SweepResult read_sweep_csv(std::istream& in);

struct GradProfile {
  std::string model;
  Vector norms;  // t = 1..T
};

/// ||dL/dh_t|| for the top layer, averaged over the batch, where L sums the
/// per-sample cross-entropies. All samples must have the same length.
GradProfile grad_profile(const Model& model, std::span<const Sample> samples, std::string name);

void write_grad_profile_csv(std::ostream& out, std::span<const GradProfile> profiles);

/// mean(num.norms[0..t_max)) / mean(den.norms[0..t_max)).
double early_gradient_ratio(const GradProfile& num, const GradProfile& den, std::size_t t_max = 5);

}  // namespace echo
