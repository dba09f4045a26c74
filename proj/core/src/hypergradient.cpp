// SPDX-License-Identifier: Apache-2.0
#include "reduxpll/hypergradient.hpp"

#include "reduxpll/errors.hpp"

namespace reduxpll {

namespace {

void check_finite(const Matrix& m, const std::string& context, const char* what) {
  if (!all_finite(m.flat())) {
    throw NumericError((context.empty() ? std::string() : context + ": ") +
                       "non-finite values in " + what);
  }
}

void check_finite(const MlpParams& p, const std::string& context, const char* what) {
  const Vector flat = p.flatten();
  if (!all_finite(flat)) {
    throw NumericError((context.empty() ? std::string() : context + ": ") +
                       "non-finite values in " + what);
  }
}

}  // namespace

HypergradientResult hypergradient(const MlpParams& theta, const MlpParams& gamma,
                                  const Matrix& inner_x, const Matrix& outer_x,
                                  const Matrix& outer_targets, double beta2,
                                  const PseudoLabelMap& labels, const std::string& context) {
  if (!labels.targets || !labels.pullback) {
    throw ConfigError("hypergradient: pseudo-label map is incomplete");
  }
  if (outer_x.rows() != outer_targets.rows()) {
    throw DimensionError("hypergradient: outer batch and targets differ in rows");
  }

  const Matrix v = labels.targets(gamma);
  check_finite(v, context, "inner targets");

  auto inner = forward(theta, inner_x);
  const Matrix inner_probs = inner.probs;
  check_finite(inner_probs, context, "inner predictions");

  // Keep the tape alive for the forward-mode product below.
  Matrix d_logits(inner_probs.rows(), inner_probs.cols());
  require_simplex_rows(v, "hypergradient inner targets");
  {
    const double inv_m = 1.0 / static_cast<double>(inner_probs.rows());
    auto d = d_logits.flat();
    const auto p = inner_probs.flat();
    const auto t = v.flat();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = (p[k] - t[k]) * inv_m;
  }
  const Gradient inner_grad = backward_logits(inner.tape, d_logits);

  HypergradientResult out;
  out.trial_theta = sgd_step(theta, inner_grad, beta2);
  check_finite(out.trial_theta, context, "trial parameters");

  auto outer = forward(out.trial_theta, outer_x);
  auto outer_ce = backward_ce(std::move(outer.tape), outer.probs, outer_targets);
  out.outer_loss = outer_ce.loss;
  check_finite(outer_ce.grad, context, "outer gradient");

  // d(outer)/d(v_i) = beta2/m * J_i g
  Matrix cotangent = jvp_logits(inner.tape, outer_ce.grad);
  const double scale = beta2 / static_cast<double>(inner_probs.rows());
  for (double& x : cotangent.flat()) x *= scale;
  check_finite(cotangent, context, "target cotangent");

  out.grad = labels.pullback(gamma, cotangent);
  if (!out.grad.same_shape(gamma)) {
    throw DimensionError("hypergradient: pullback returned a gradient of the wrong shape");
  }
  check_finite(out.grad, context, "hypergradient");
  return out;
}

double outer_loss_after_step(const MlpParams& theta, const MlpParams& gamma,
                             const Matrix& inner_x, const Matrix& outer_x,
                             const Matrix& outer_targets, double beta2,
                             const PseudoLabelMap& labels) {
  const Matrix v = labels.targets(gamma);
  auto inner = forward(theta, inner_x);
  const Matrix probs = inner.probs;
  const auto step = backward_ce(std::move(inner.tape), probs, v);
  const MlpParams trial = sgd_step(theta, step.grad, beta2);
  return cross_entropy(predict(trial, outer_x), outer_targets);
}

}  // namespace reduxpll
