// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "reduxpll/hypergradient.hpp"
#include "reduxpll/label_set.hpp"
#include "reduxpll/matrix.hpp"
#include "reduxpll/mlp.hpp"

namespace reduxpll {

inline constexpr double kDefaultAlpha = 0.3;

/// Uniform distribution over `support` as a length-c vector.
Vector uniform_over(LabelSet support, int num_classes);

/// Predictor output renormalized over the candidate set:
///   mu_j = f_j / sum_{k in S} f_k for j in S, else 0.
/// A zero candidate mass falls back to uniform over S and emits a warning.
Vector basic_pseudo(std::span<const double> probs, LabelSet candidates);

/// Row j of the reduction matrix: branch-j output renormalized over S \ {j}.
/// Throws ContractViolation when S \ {j} is empty.
Vector reduction_row(std::span<const double> branch_probs, LabelSet candidates, int excluded);

/// Uniform rows over S \ {j}: the reduction matrix before any branch output
/// exists. A singleton S = {y} keeps row y = e_y.
Matrix initial_reduction_matrix(LabelSet candidates, int num_classes);

/// v = w * U (row vector times c x c matrix).
Vector reduction_pseudo(std::span<const double> weights, const Matrix& reduction);

/// q = alpha * mu + (1 - alpha) * v. Throws ConfigError for alpha outside [0, 1].
Vector combine(std::span<const double> mu, std::span<const double> v, double alpha);

/// Branch weights w = g(x; gamma), a softmax output.
Vector meta_weights(const MlpParams& gamma, std::span<const double> x);

/// Batched v_i = w_i U_i.
Matrix reduction_pseudo_batch(const Matrix& weights, std::span<const Matrix> reductions);

/// Targets V(gamma) = g(X; gamma) U for a fixed batch, with its exact
/// pullback to gamma (softmax head included). Feeds hypergradient().
PseudoLabelMap make_reduction_label_map(Matrix inputs, std::vector<Matrix> reductions);

/// Per-instance pseudo-label bookkeeping for one training set.
class PseudoLabelState {
 public:
  PseudoLabelState() = default;
  /// Uniform initialization: mu_i and every row of U_i uniform over their
  /// legal support, w_i uniform, v and q derived.
  PseudoLabelState(std::span<const LabelSet> candidates, int num_classes, double alpha);

  std::size_t size() const noexcept { return mu.rows(); }
  int num_classes() const noexcept { return num_classes_; }
  double alpha() const noexcept { return alpha_; }

  /// Recomputes q_i from the stored mu_i and v_i.
  void refresh_q(std::size_t i);

  /// Throws ContractViolation describing the first broken invariant.
  void check_invariants(std::span<const LabelSet> candidates, double tol = kSimplexTolerance) const;

  std::string to_json() const;

  Matrix mu;
  std::vector<Matrix> reduction;
  Matrix w;
  Matrix v;
  Matrix q;

 private:
  int num_classes_ = 0;
  double alpha_ = kDefaultAlpha;
};

/// Argmax with lowest-index tie breaking.
int argmax(std::span<const double> values);

}  // namespace reduxpll
