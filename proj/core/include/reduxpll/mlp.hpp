// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "reduxpll/matrix.hpp"

namespace reduxpll {

enum class Activation { kTanh, kIdentity };

std::string_view to_string(Activation a) noexcept;
Activation activation_from_string(std::string_view name);

/// One affine layer. `weight` is (in x out) so a batch maps as X * W + b.
struct DenseLayer {
  Matrix weight;
  Vector bias;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Parameters of a feedforward net: affine layers with a shared hidden
/// nonlinearity and a softmax head. Also used as the gradient container,
/// since a gradient has exactly the parameters' shape.
class MlpParams {
 public:
  MlpParams() = default;

  /// `widths` = {input, hidden..., output}; at least two entries.
  static MlpParams zeros(std::span<const std::size_t> widths,
                         Activation hidden = Activation::kTanh);

  /// Glorot-uniform weights, zero biases.
  static MlpParams glorot(std::span<const std::size_t> widths, std::mt19937_64& rng,
                          Activation hidden = Activation::kTanh);

  std::size_t input_width() const;
  std::size_t output_width() const;
  std::size_t num_params() const noexcept;
  std::vector<std::size_t> widths() const;

  Activation hidden_activation() const noexcept { return hidden_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

  /// Layer-major: each layer's weights row by row, then its bias.
  Vector flatten() const;
  /// Copy of this shape filled from `values` (inverse of flatten).
  MlpParams with_flat(std::span<const double> values) const;
  MlpParams zeros_like() const;

  bool same_shape(const MlpParams& other) const noexcept;

  friend bool operator==(const MlpParams&, const MlpParams&) = default;

 private:
  std::vector<DenseLayer> layers_;
  Activation hidden_ = Activation::kTanh;
};

using Gradient = MlpParams;

struct ForwardResult;
ForwardResult forward(const MlpParams& params, const Matrix& batch);

/// Cached activations of one forward pass. activations()[0] is the input
/// batch, the rest are hidden-layer outputs; the last one is the penultimate
/// representation fed to the output layer.
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;
  GradTape(GradTape&&) noexcept = default;
  GradTape& operator=(GradTape&&) noexcept = default;

  bool valid() const noexcept { return !activations_.empty(); }
  const MlpParams& params() const noexcept { return params_; }
  const std::vector<Matrix>& activations() const noexcept { return activations_; }
  const Matrix& penultimate() const;

 private:
  friend ForwardResult forward(const MlpParams&, const Matrix&);
  MlpParams params_;
  std::vector<Matrix> activations_;
};

struct ForwardResult {
  Matrix probs;
  GradTape tape;
};

/// Softmax outputs, one row per input row. Rows sum to one and every entry is
/// at least 1e-300.
ForwardResult forward(const MlpParams& params, const Matrix& batch);

/// Forward pass without keeping a tape.
Matrix predict(const MlpParams& params, const Matrix& batch);

inline constexpr double kProbabilityFloor = 1e-300;
inline constexpr double kLogClamp = 1e-12;
inline constexpr double kSimplexTolerance = 1e-9;

/// Mean soft-target cross-entropy, -1/m sum_i sum_j t_ij log(max(p_ij, 1e-12)).
double cross_entropy(const Matrix& probs, const Matrix& targets);

/// Throws ContractViolation if some row is not a probability vector within
/// `tol`.
void require_simplex_rows(const Matrix& m, std::string_view what,
                          double tol = kSimplexTolerance);

struct CeGradient {
  double loss = 0.0;
  Gradient grad;
};

/// Loss and parameter gradient of the mean soft-target cross-entropy. Consumes
/// the tape. The gradient uses d(loss)/d(logits) = (p - t)/m, which is exact
/// whenever every p_ij with t_ij > 0 exceeds the log clamp.
CeGradient backward_ce(GradTape tape, const Matrix& probs, const Matrix& targets);

/// Reverse pass from a gradient with respect to the pre-softmax logits.
Gradient backward_logits(const GradTape& tape, const Matrix& d_logits);

/// Maps d(loss)/d(probs) to d(loss)/d(logits) through the softmax Jacobian.
Matrix softmax_pullback(const Matrix& probs, const Matrix& d_probs);

/// Forward-mode directional derivative of the logits at the taped point along
/// the parameter direction `tangent`: row i is J_i * tangent.
Matrix jvp_logits(const GradTape& tape, const Gradient& tangent);

/// params - step_size * grad, as a new value. Throws ContractViolation for a
/// negative or non-finite step.
MlpParams sgd_step(const MlpParams& params, const Gradient& grad, double step_size);

/// Heavy-ball SGD with the update v <- momentum * v + g, p <- p - lr * v.
class MomentumSgd {
 public:
  MomentumSgd() = default;
  MomentumSgd(const MlpParams& like, double momentum);

  MlpParams step(const MlpParams& params, const Gradient& grad, double step_size);

  double momentum() const noexcept { return momentum_; }
  const Gradient& velocity() const noexcept { return velocity_; }
  void set_velocity(Gradient v);

 private:
  double momentum_ = 0.0;
  Gradient velocity_;
};

}  // namespace reduxpll
