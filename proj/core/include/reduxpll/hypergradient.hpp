// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>

#include "reduxpll/matrix.hpp"
#include "reduxpll/mlp.hpp"

namespace reduxpll {

/// Differentiable map from meta-learner parameters to soft targets for the
/// inner batch. `targets` evaluates V(gamma); `pullback` returns the
/// vector-Jacobian product d(sum_ij G_ij V_ij)/d(gamma) for a cotangent G with
/// the targets' shape.
struct PseudoLabelMap {
  std::function<Matrix(const MlpParams& gamma)> targets;
  std::function<Gradient(const MlpParams& gamma, const Matrix& cotangent)> pullback;
};

struct HypergradientResult {
  Gradient grad;          ///< d(outer loss)/d(gamma)
  double outer_loss = 0;  ///< outer loss at the trial parameters
  MlpParams trial_theta;  ///< theta - beta2 * grad_theta L_inner(theta, V(gamma))
};

/// Exact gradient of
///   L_outer(theta - beta2 * grad_theta L_inner(theta, V(gamma)))
/// with respect to gamma, through one plain SGD step.
///
/// The inner gradient is linear in the targets,
///   grad_theta L_inner = 1/m sum_i J_i^T (p_i - v_i),
/// so d(outer)/d(v_i) = (beta2 / m) * J_i g with g = grad L_outer at the trial
/// point. J_i g is a forward-mode product through the predictor at theta, which
/// carries the mixed second-order term; the result is then pulled back through
/// V(gamma).
///
/// `context` is prefixed to NumericError messages (e.g. "epoch 3 batch 7").
HypergradientResult hypergradient(const MlpParams& theta, const MlpParams& gamma,
                                  const Matrix& inner_x, const Matrix& outer_x,
                                  const Matrix& outer_targets, double beta2,
                                  const PseudoLabelMap& labels,
                                  const std::string& context = {});

/// Outer loss as a function of gamma, evaluated by explicitly taking the inner
/// step. Shares no code with the analytic path beyond forward/backward_ce.
double outer_loss_after_step(const MlpParams& theta, const MlpParams& gamma,
                             const Matrix& inner_x, const Matrix& outer_x,
                             const Matrix& outer_targets, double beta2,
                             const PseudoLabelMap& labels);

}  // namespace reduxpll
