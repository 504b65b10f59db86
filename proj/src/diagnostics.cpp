// SPDX-License-Identifier: Apache-2.0
#include "echo/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "echo/autodiff.hpp"
#include "echo/errors.hpp"
#include "echo/training.hpp"

namespace echo {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

void expect_header(std::istream& in, const std::string& header) {
  std::string line;
  if (!std::getline(in, line) || line != header)
    throw DataError("expected CSV header '" + header + "'");
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw DataError("bad number '" + s + "'");
  }
  if (used != s.size()) throw DataError("bad number '" + s + "'");
  return v;
}

std::size_t to_size(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw DataError("bad count '" + s + "'");
  return static_cast<std::size_t>(std::stoull(s));
}

std::vector<TokenSeq> token_lists(std::span<const Sample> samples) {
  std::vector<TokenSeq> seqs;
  seqs.reserve(samples.size());
  for (const auto& s : samples) seqs.push_back(s.tokens);
  return seqs;
}

// Two-pass variance of values shifted by the first one, so a constant
// signal gives exactly zero.
template <typename Get>
double population_variance(std::size_t n, Get&& get) {
  const double origin = get(0);
  double mean = 0.0;
  for (std::size_t k = 0; k < n; ++k) mean += get(k) - origin;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double d = (get(k) - origin) - mean;
    var += d * d;
  }
  return var / static_cast<double>(n);
}

void check_window(GateWindow w, std::size_t steps) {
  if (w.lo == 0 || w.lo > w.hi) throw SpecError("gate window is empty");
  if (w.hi > steps)
    throw SpecError("gate window ends at " + std::to_string(w.hi) + " but sequences have " +
                    std::to_string(steps) + " steps");
}

}  // namespace

// --- gates -------------------------------------------------------------------

std::vector<GateRecord> record_gates(const Model& model, std::span<const Sample> samples) {
  const auto outputs = forward_many(model, token_lists(samples));
  std::vector<GateRecord> records(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const StepTrace& tr = outputs[k].trace;
    const std::size_t T = tr.steps();
    const std::size_t H = model.config.hidden_size;
    GateRecord& r = records[k];
    r.forget = Matrix(T, H);
    r.input = Matrix(T, H);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t u = 0; u < H; ++u) {
        r.forget(t, u) = tr.forget[t][u];
        r.input(t, u) = tr.input[t][u];
      }
    r.trigger_position = samples[k].meta.trigger_position;
  }
  return records;
}

double gate_variance(std::span<const GateRecord> records, GateWindow window) {
  if (window.lo == 0 || window.lo > window.hi) throw SpecError("gate window is empty");
  if (records.empty()) throw DomainError("gate_variance needs at least one record");
  const std::size_t n = window.hi - window.lo + 1;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& r : records) {
    check_window(window, r.steps());
    for (std::size_t u = 0; u < r.forget.cols(); ++u) {
      total += population_variance(n, [&](std::size_t k) { return r.forget(window.lo - 1 + k, u); });
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

GateTimeline gate_timeline(std::span<const GateRecord> records, std::string model) {
  if (records.empty()) throw DomainError("gate_timeline needs at least one record");
  const std::size_t T = records.front().steps();
  const std::size_t H = records.front().forget.cols();
  for (const auto& r : records)
    if (r.steps() != T || r.forget.cols() != H)
      throw ShapeError("gate_timeline: records differ in shape");
  GateTimeline tl{std::move(model), Vector(T, 0.0), Vector(T, 0.0)};
  const std::size_t n = records.size() * H;
  for (std::size_t t = 0; t < T; ++t) {
    auto at = [&](std::size_t k) { return records[k / H].forget(t, k % H); };
    double mean = 0.0;
    for (std::size_t k = 0; k < n; ++k) mean += at(k);
    tl.mean[t] = mean / static_cast<double>(n);
    tl.stddev[t] = std::sqrt(population_variance(n, at));
  }
  return tl;
}

double timeline_variance(const GateTimeline& timeline, GateWindow window) {
  check_window(window, timeline.mean.size());
  return population_variance(window.hi - window.lo + 1,
                             [&](std::size_t k) { return timeline.mean[window.lo - 1 + k]; });
}

void write_gate_timeline_csv(std::ostream& out, std::span<const GateTimeline> timelines) {
  out << "t,mean_f,std_f,model\n";
  for (const auto& tl : timelines)
    for (std::size_t t = 0; t < tl.mean.size(); ++t)
      out << t + 1 << ',' << format_double(tl.mean[t]) << ',' << format_double(tl.stddev[t]) << ','
          << tl.model << '\n';
}

std::vector<GateTimeline> read_gate_timeline_csv(std::istream& in) {
  expect_header(in, "t,mean_f,std_f,model");
  std::vector<GateTimeline> out;
  std::map<std::string, std::size_t> index;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 4) throw DataError("gate timeline row needs 4 fields: " + line);
    auto [it, fresh] = index.try_emplace(f[3], out.size());
    if (fresh) out.push_back(GateTimeline{f[3], {}, {}});
    GateTimeline& tl = out[it->second];
    if (to_size(f[0]) != tl.mean.size() + 1)
      throw DataError("gate timeline rows for " + f[3] + " are not consecutive");
    tl.mean.push_back(to_double(f[1]));
    tl.stddev.push_back(to_double(f[2]));
  }
  return out;
}

void write_variance_csv(std::ostream& out, std::span<const VarianceEntry> entries) {
  if (entries.size() != 2) throw DomainError("variance report compares exactly two models");
  out << "model,variance,timeline_variance\n";
  for (const auto& e : entries)
    out << e.model << ',' << format_double(e.variance) << ',' << format_double(e.timeline_variance)
        << '\n';
  out << "ratio," << format_double(entries[0].variance / entries[1].variance) << ','
      << format_double(entries[0].timeline_variance / entries[1].timeline_variance) << '\n';
}

// --- half-life ---------------------------------------------------------------

HalfLifeReport half_life_check(const Model& model, const Dataset& with_trigger,
                               const Dataset& without_trigger, std::size_t t_from,
                               std::size_t permutations, std::uint64_t seed) {
  if (with_trigger.size() != without_trigger.size())
    throw SpecError("half_life_check: datasets hold " + std::to_string(with_trigger.size()) +
                    " and " + std::to_string(without_trigger.size()) + " samples");
  if (with_trigger.empty()) throw SpecError("half_life_check: no pairs");
  if (t_from == 0) throw SpecError("half_life_check: t_from is 1-based");
  if (permutations == 0) throw SpecError("half_life_check: permutations must be positive");
  for (std::size_t k = 0; k < with_trigger.size(); ++k) {
    const std::size_t T = with_trigger.samples[k].tokens.size();
    if (without_trigger.samples[k].tokens.size() != T)
      throw SpecError("half_life_check: pair " + std::to_string(k) + " differs in length");
    if (t_from > T) throw SpecError("half_life_check: t_from beyond sequence length");
  }

  auto post_means = [&](const Dataset& d) {
    const auto records = record_gates(model, d.samples);
    std::vector<double> m(records.size());
    for (std::size_t k = 0; k < records.size(); ++k) {
      const Matrix& f = records[k].forget;
      double s = 0.0;
      for (std::size_t t = t_from - 1; t < f.rows(); ++t)
        for (std::size_t u = 0; u < f.cols(); ++u) s += f(t, u);
      m[k] = s / static_cast<double>((f.rows() - t_from + 1) * f.cols());
    }
    return m;
  };
  const auto a = post_means(with_trigger);
  const auto b = post_means(without_trigger);

  HalfLifeReport r;
  r.pairs = a.size();
  r.permutations = permutations;
  r.t_from = t_from;
  const double n = static_cast<double>(r.pairs);
  std::vector<double> d(r.pairs);
  for (std::size_t k = 0; k < r.pairs; ++k) {
    r.mean_trigger += a[k];
    r.mean_no_trigger += b[k];
    d[k] = a[k] - b[k];
  }
  r.mean_trigger /= n;
  r.mean_no_trigger /= n;
  double observed = 0.0;
  for (double x : d) observed += x;
  observed /= n;
  r.difference = observed;

  // Sign-flip permutation null for the mean paired difference.
  Rng rng(seed);
  std::size_t at_least = 0;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t p = 0; p < permutations; ++p) {
    double m = 0.0;
    for (double x : d) m += rng.bernoulli(0.5) ? x : -x;
    m /= n;
    sum += m;
    sum_sq += m * m;
    if (m >= observed) ++at_least;
  }
  const double pn = static_cast<double>(permutations);
  const double mean_null = sum / pn;
  r.null_std = std::sqrt(std::max(0.0, sum_sq / pn - mean_null * mean_null));
  r.p_value = static_cast<double>(at_least + 1) / (pn + 1.0);
  return r;
}

void write_half_life_csv(std::ostream& out, const std::string& model, const HalfLifeReport& r) {
  out << "model,mean_f_trigger,mean_f_no_trigger,difference,null_std,p_value,pairs,t_from\n";
  out << model << ',' << format_double(r.mean_trigger) << ',' << format_double(r.mean_no_trigger)
      << ',' << format_double(r.difference) << ',' << format_double(r.null_std) << ','
      << format_double(r.p_value) << ',' << r.pairs << ',' << r.t_from << '\n';
}

// --- attention ---------------------------------------------------------------

AttentionExport attention_export(const Model& model, std::span<const Sample> samples,
                                 std::size_t window_lo, std::size_t window_hi) {
  if (!model.config.use_attention)
    throw ConfigError("attention export requires a model with attention");
  if (samples.empty()) throw DomainError("attention_export needs at least one sample");
  if (window_lo == 0 || window_lo > window_hi) throw SpecError("attention window is empty");
  const auto outputs = forward_many(model, token_lists(samples));
  AttentionExport ex;
  ex.window_lo = window_lo;
  ex.window_hi = window_hi;
  for (const auto& o : outputs) {
    const Vector& a = o.trace.alpha;
    double mass = 0.0;
    for (std::size_t t = window_lo - 1; t < std::min(window_hi, a.size()); ++t) mass += a[t];
    ex.window_mass += mass;
    ex.alpha.push_back(a);
  }
  ex.window_mass /= static_cast<double>(outputs.size());
  return ex;
}

void write_attention_csv(std::ostream& out, const AttentionExport& a) {
  out << "sample_id,t,alpha\n";
  for (std::size_t s = 0; s < a.alpha.size(); ++s)
    for (std::size_t t = 0; t < a.alpha[s].size(); ++t)
      out << s << ',' << t + 1 << ',' << format_double(a.alpha[s][t]) << '\n';
}

// --- sensitivity sweep -------------------------------------------------------

void SweepResult::validate() const {
  for (std::size_t k = 1; k < positions.size(); ++k)
    if (positions[k] <= positions[k - 1])
      throw SpecError("sweep positions must be strictly increasing");
  for (const auto& e : entries) {
    if (!(e.accuracy >= 0.0 && e.accuracy <= 1.0))
      throw SpecError("sweep accuracy outside [0, 1] for " + e.model);
    if (!std::binary_search(positions.begin(), positions.end(), e.position))
      throw SpecError("sweep entry at unlisted position " + std::to_string(e.position));
  }
}

SweepResult sensitivity_sweep(std::span<const NamedModel> models, const DistractorSpec& spec,
                              std::span<const std::size_t> positions, std::size_t n_per_position) {
  if (models.empty()) throw DomainError("sensitivity_sweep needs at least one model");
  if (n_per_position == 0) throw DomainError("sensitivity_sweep needs samples per position");
  SweepResult r;
  r.positions.assign(positions.begin(), positions.end());
  r.seed = spec.seed;
  r.validate();
  for (std::size_t pos : positions) {
    DistractorSpec at = spec;
    at.seed = derive_seed(spec.seed, pos);
    const Dataset data = gen_distractor_shifted(at, pos, n_per_position);
    for (const auto& m : models)
      r.entries.push_back(SweepEntry{pos, m.name, evaluate(*m.model, data), data.size()});
  }
  r.validate();
  return r;
}

void write_sweep_csv(std::ostream& out, const SweepResult& r) {
  out << "position,model,accuracy,n_samples\n";
  for (const auto& e : r.entries)
    out << e.position << ',' << e.model << ',' << format_double(e.accuracy) << ',' << e.n_samples
        << '\n';
}

SweepResult read_sweep_csv(std::istream& in) {
  expect_header(in, "position,model,accuracy,n_samples");
  SweepResult r;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 4) throw DataError("sweep row needs 4 fields: " + line);
    SweepEntry e{to_size(f[0]), f[1], to_double(f[2]), to_size(f[3])};
    if (r.positions.empty() || r.positions.back() != e.position) r.positions.push_back(e.position);
    r.entries.push_back(std::move(e));
  }
  r.validate();
  return r;
}

// --- gradient profile --------------------------------------------------------

GradProfile grad_profile(const Model& model, std::span<const Sample> samples, std::string name) {
  if (samples.empty()) throw DomainError("grad_profile needs at least one sample");
  std::vector<const TokenSeq*> seqs;
  std::vector<std::size_t> labels;
  for (const auto& s : samples) {
    if (s.tokens.size() != samples.front().tokens.size())
      throw ShapeError("grad_profile: samples must share one length");
    seqs.push_back(&s.tokens);
    labels.push_back(s.label);
  }
  Tape tape(true);
  const ParamVars vars = bind_params(tape, model.params);
  const BatchGraph g = forward_batch(tape, vars, model.config, seqs, ForwardOptions{});
  tape.set_output(tape.softmax_xent(g.logits, std::move(labels), 1.0));
  tape.run_backward();
  return GradProfile{std::move(name), hidden_grad_norms(tape)};
}

void write_grad_profile_csv(std::ostream& out, std::span<const GradProfile> profiles) {
  out << "t,grad_norm,model\n";
  for (const auto& p : profiles)
    for (std::size_t t = 0; t < p.norms.size(); ++t)
      out << t + 1 << ',' << format_double(p.norms[t]) << ',' << p.model << '\n';
}

double early_gradient_ratio(const GradProfile& num_profile, const GradProfile& den_profile,
                            std::size_t t_max) {
  const std::size_t n = std::min({t_max, num_profile.norms.size(), den_profile.norms.size()});
  if (n == 0) throw DomainError("early_gradient_ratio: empty profile");
  double a = 0.0, b = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    a += num_profile.norms[t];
    b += den_profile.norms[t];
  }
  return a / b;
}

}  // namespace echo
