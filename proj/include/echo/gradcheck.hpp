// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>

#include "echo/cells.hpp"
#include "echo/tasks.hpp"

namespace echo {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
  /// Largest relative error seen in each parameter.
  std::map<std::string, double> per_param;
  /// Frobenius norm of each analytic gradient.
  std::map<std::string, double> grad_norms;
};

/// Compares reverse-mode gradients of the mean batch cross-entropy against
/// central differences (L(theta+eps) - L(theta-eps)) / 2eps on every
/// coordinate. The numerator comes from loss_difference, so gradients near
/// 1e-8 are still resolved at eps = 1e-5. Evaluation runs in inference mode (no dropout).
/// epsilon must lie in (0, 1e-2]. Throws NumericError naming the perturbed
/// parameter if a perturbed loss is not finite.
GradCheckReport finite_diff_check(const Model& model, std::span<const Sample> batch,
                                  double epsilon = 1e-5);

/// Mean over the batch of CE(logits_a) - CE(logits_b), computed from the
/// logit differences without forming either loss.
double loss_difference(std::span<const Vector> logits_a, std::span<const Vector> logits_b,
                       std::span<const Sample> batch);

/// Mean cross-entropy of `batch` under `model` (inference mode).
double mean_loss(const Model& model, std::span<const Sample> batch);

}  // namespace echo
