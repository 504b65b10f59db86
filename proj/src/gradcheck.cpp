// SPDX-License-Identifier: Apache-2.0
#include "echo/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "echo/errors.hpp"
#include "echo/training.hpp"

namespace echo {

namespace {

std::vector<Vector> batch_logits(const Model& model, std::span<const Sample> batch) {
  std::vector<TokenSeq> seqs;
  for (const auto& s : batch) seqs.push_back(s.tokens);
  return predict_logits(model, seqs);
}

}  // namespace

double loss_difference(std::span<const Vector> logits_a, std::span<const Vector> logits_b,
                       std::span<const Sample> batch) {
  if (logits_a.size() != batch.size() || logits_b.size() != batch.size())
    throw ShapeError("loss_difference: logits and batch differ in size");
  double total = 0.0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Vector& a = logits_a[s];
    const Vector& b = logits_b[s];
    if (a.size() != b.size()) throw ShapeError("loss_difference: logit widths differ");
    const std::size_t y = batch[s].label;
    if (y >= a.size()) throw DataError("loss_difference: label out of range");
    const double m = *std::max_element(b.begin(), b.end());
    // log(sum e^a / sum e^b) written as log1p of the relative change, so the
    // result keeps the precision of a - b instead of that of the two losses.
    double sum_b = 0.0, delta = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double eb = std::exp(b[k] - m);
      sum_b += eb;
      delta += eb * std::expm1(a[k] - b[k]);
    }
    total += std::log1p(delta / sum_b) - (a[y] - b[y]);
  }
  return total / static_cast<double>(batch.size());
}

double mean_loss(const Model& model, std::span<const Sample> batch) {
  if (batch.empty()) throw DomainError("mean_loss on an empty batch");
  std::vector<TokenSeq> seqs;
  for (const auto& s : batch) seqs.push_back(s.tokens);
  const auto logits = predict_logits(model, seqs);
  double total = 0.0;
  for (std::size_t k = 0; k < batch.size(); ++k) total += cross_entropy(logits[k], batch[k].label);
  return total / static_cast<double>(batch.size());
}

GradCheckReport finite_diff_check(const Model& model, std::span<const Sample> batch,
                                  double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2))
    throw DomainError("finite_diff_check: epsilon must lie in (0, 1e-2]");
  if (batch.empty()) throw DomainError("finite_diff_check: empty batch");

  std::vector<const Sample*> ptrs;
  for (const auto& s : batch) ptrs.push_back(&s);
  const BatchGradients analytic = batch_gradients(model, ptrs, false, 0, batch.size());

  GradCheckReport report;
  Model probe = model;
  for (const auto& [name, grad] : analytic.grads) {
    report.grad_norms[name] = frobenius_norm(grad);
    double& worst_here = report.per_param[name];
    Matrix& p = probe.params.at(name);
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double saved = p[k];
      p[k] = saved + epsilon;
      const auto up = batch_logits(probe, batch);
      p[k] = saved - epsilon;
      const auto down = batch_logits(probe, batch);
      p[k] = saved;
      const double diff = loss_difference(up, down, batch);
      if (!std::isfinite(diff))
        throw NumericError("non-finite loss while perturbing " + name + "[" + std::to_string(k) +
                           "]");
      const double numeric = diff / (2.0 * epsilon);
      const double err = relative_error(grad[k], numeric);
      ++report.coordinates;
      worst_here = std::max(worst_here, err);
      if (err > report.max_rel_err || report.worst_param.empty()) {
        report.max_rel_err = err;
        report.worst_param = name;
        report.worst_index = k;
      }
    }
  }
  return report;
}

}  // namespace echo
