// SPDX-License-Identifier: Apache-2.0
#include "reduxpll/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "reduxpll/errors.hpp"

namespace reduxpll {

namespace {

double activate(Activation a, double z) noexcept {
  return a == Activation::kTanh ? std::tanh(z) : z;
}

// Derivative expressed through the activation's output.
double activate_grad_from_output(Activation a, double out) noexcept {
  return a == Activation::kTanh ? 1.0 - out * out : 1.0;
}

void add_bias(Matrix& z, const Vector& bias) {
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto r = z.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
}

void softmax_rows_inplace(Matrix& logits) {
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto r = logits.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : r) v = std::max(v / sum, kProbabilityFloor);
  }
}

void check_widths(std::span<const std::size_t> widths) {
  if (widths.size() < 2) throw DimensionError("an MLP needs at least input and output widths");
  for (std::size_t w : widths) {
    if (w == 0) throw DimensionError("MLP layer width must be positive");
  }
}

void require_same_shape(const MlpParams& a, const MlpParams& b, std::string_view what) {
  if (!a.same_shape(b)) throw DimensionError(std::string(what) + ": parameter shapes differ");
}

}  // namespace

std::string_view to_string(Activation a) noexcept {
  return a == Activation::kTanh ? "tanh" : "identity";
}

Activation activation_from_string(std::string_view name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "identity") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

MlpParams MlpParams::zeros(std::span<const std::size_t> widths, Activation hidden) {
  check_widths(widths);
  MlpParams p;
  p.hidden_ = hidden;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    p.layers_.push_back({Matrix(widths[l], widths[l + 1]), Vector(widths[l + 1], 0.0)});
  }
  return p;
}

MlpParams MlpParams::glorot(std::span<const std::size_t> widths, std::mt19937_64& rng,
                            Activation hidden) {
  MlpParams p = zeros(widths, hidden);
  for (auto& layer : p.layers_) {
    const double fan_in = static_cast<double>(layer.weight.rows());
    const double fan_out = static_cast<double>(layer.weight.cols());
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : layer.weight.flat()) w = dist(rng);
  }
  return p;
}

std::size_t MlpParams::input_width() const {
  if (layers_.empty()) throw DimensionError("empty MLP");
  return layers_.front().weight.rows();
}

std::size_t MlpParams::output_width() const {
  if (layers_.empty()) throw DimensionError("empty MLP");
  return layers_.back().weight.cols();
}

std::size_t MlpParams::num_params() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

std::vector<std::size_t> MlpParams::widths() const {
  std::vector<std::size_t> w;
  if (layers_.empty()) return w;
  w.push_back(layers_.front().weight.rows());
  for (const auto& l : layers_) w.push_back(l.weight.cols());
  return w;
}

Vector MlpParams::flatten() const {
  Vector out;
  out.reserve(num_params());
  for (const auto& l : layers_) {
    out.insert(out.end(), l.weight.flat().begin(), l.weight.flat().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

MlpParams MlpParams::with_flat(std::span<const double> values) const {
  if (values.size() != num_params()) {
    throw DimensionError("with_flat: expected " + std::to_string(num_params()) +
                         " values, got " + std::to_string(values.size()));
  }
  MlpParams p = *this;
  std::size_t pos = 0;
  for (auto& l : p.layers_) {
    auto w = l.weight.flat();
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(pos), w.size(), w.begin());
    pos += w.size();
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(pos), l.bias.size(), l.bias.begin());
    pos += l.bias.size();
  }
  return p;
}

MlpParams MlpParams::zeros_like() const {
  const auto w = widths();
  return zeros(w, hidden_);
}

bool MlpParams::same_shape(const MlpParams& other) const noexcept {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& a = layers_[l];
    const auto& b = other.layers_[l];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
        a.bias.size() != b.bias.size()) {
      return false;
    }
  }
  return true;
}

const Matrix& GradTape::penultimate() const {
  if (!valid()) throw ContractViolation("penultimate(): tape is empty or already consumed");
  return activations_.back();
}

ForwardResult forward(const MlpParams& params, const Matrix& batch) {
  if (batch.cols() != params.input_width()) {
    throw DimensionError("forward: batch has " + std::to_string(batch.cols()) +
                         " columns, network expects " + std::to_string(params.input_width()));
  }
  ForwardResult out;
  out.tape.params_ = params;
  out.tape.activations_.reserve(params.layers().size());
  out.tape.activations_.push_back(batch);

  const auto& layers = params.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix z = matmul(out.tape.activations_.back(), layers[l].weight);
    add_bias(z, layers[l].bias);
    if (l + 1 < layers.size()) {
      for (double& v : z.flat()) v = activate(params.hidden_activation(), v);
      out.tape.activations_.push_back(std::move(z));
    } else {
      softmax_rows_inplace(z);
      out.probs = std::move(z);
    }
  }
  return out;
}

Matrix predict(const MlpParams& params, const Matrix& batch) {
  return forward(params, batch).probs;
}

void require_simplex_rows(const Matrix& m, std::string_view what, double tol) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double sum = 0.0;
    for (double v : m.row(i)) {
      if (!(v >= -tol)) {
        throw ContractViolation(std::string(what) + ": row " + std::to_string(i) +
                                " has a negative or non-finite entry");
      }
      sum += v;
    }
    if (!(std::abs(sum - 1.0) <= tol)) {
      throw ContractViolation(std::string(what) + ": row " + std::to_string(i) + " sums to " +
                              std::to_string(sum));
    }
  }
}

double cross_entropy(const Matrix& probs, const Matrix& targets) {
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols()) {
    throw DimensionError("cross_entropy: probs and targets differ in shape");
  }
  if (probs.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const auto p = probs.row(i);
    const auto t = targets.row(i);
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (t[j] != 0.0) total -= t[j] * std::log(std::max(p[j], kLogClamp));
    }
  }
  return total / static_cast<double>(probs.rows());
}

Gradient backward_logits(const GradTape& tape, const Matrix& d_logits) {
  if (!tape.valid()) throw ContractViolation("backward: tape is empty or already consumed");
  const MlpParams& params = tape.params();
  const auto& acts = tape.activations();
  const auto& layers = params.layers();
  if (d_logits.rows() != acts.front().rows() || d_logits.cols() != params.output_width()) {
    throw DimensionError("backward: logit gradient shape does not match the taped batch");
  }

  Gradient grad = params.zeros_like();
  Matrix dz = d_logits;
  for (std::size_t l = layers.size(); l-- > 0;) {
    grad.layers()[l].weight = matmul_tn(acts[l], dz);
    auto& db = grad.layers()[l].bias;
    for (std::size_t i = 0; i < dz.rows(); ++i) {
      const auto r = dz.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) db[j] += r[j];
    }
    if (l == 0) break;
    Matrix da = matmul_nt(dz, layers[l].weight);
    const Matrix& a = acts[l];
    auto daf = da.flat();
    const auto af = a.flat();
    for (std::size_t k = 0; k < daf.size(); ++k) {
      daf[k] *= activate_grad_from_output(params.hidden_activation(), af[k]);
    }
    dz = std::move(da);
  }
  return grad;
}

CeGradient backward_ce(GradTape tape, const Matrix& probs, const Matrix& targets) {
  if (!tape.valid()) throw ContractViolation("backward_ce: tape is empty or already consumed");
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols()) {
    throw DimensionError("backward_ce: probs and targets differ in shape");
  }
  require_simplex_rows(targets, "backward_ce targets");

  CeGradient out;
  out.loss = cross_entropy(probs, targets);
  const double inv_m = 1.0 / static_cast<double>(probs.rows());
  Matrix d_logits(probs.rows(), probs.cols());
  auto d = d_logits.flat();
  const auto p = probs.flat();
  const auto t = targets.flat();
  for (std::size_t k = 0; k < d.size(); ++k) d[k] = (p[k] - t[k]) * inv_m;
  out.grad = backward_logits(tape, d_logits);
  return out;
}

Matrix softmax_pullback(const Matrix& probs, const Matrix& d_probs) {
  if (probs.rows() != d_probs.rows() || probs.cols() != d_probs.cols()) {
    throw DimensionError("softmax_pullback: shape mismatch");
  }
  Matrix out(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const auto p = probs.row(i);
    const auto g = d_probs.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) dot += p[j] * g[j];
    auto o = out.row(i);
    for (std::size_t j = 0; j < p.size(); ++j) o[j] = p[j] * (g[j] - dot);
  }
  return out;
}

Matrix jvp_logits(const GradTape& tape, const Gradient& tangent) {
  if (!tape.valid()) throw ContractViolation("jvp: tape is empty or already consumed");
  const MlpParams& params = tape.params();
  require_same_shape(params, tangent, "jvp_logits");
  const auto& acts = tape.activations();
  const auto& layers = params.layers();

  Matrix da(acts.front().rows(), acts.front().cols());  // input does not move
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix dz = matmul(acts[l], tangent.layers()[l].weight);
    add_bias(dz, tangent.layers()[l].bias);
    if (l > 0) {
      const Matrix through = matmul(da, layers[l].weight);
      auto dzf = dz.flat();
      const auto tf = through.flat();
      for (std::size_t k = 0; k < dzf.size(); ++k) dzf[k] += tf[k];
    }
    if (l + 1 == layers.size()) return dz;
    const auto af = acts[l + 1].flat();
    auto dzf = dz.flat();
    for (std::size_t k = 0; k < dzf.size(); ++k) {
      dzf[k] *= activate_grad_from_output(params.hidden_activation(), af[k]);
    }
    da = std::move(dz);
  }
  return {};
}

MlpParams sgd_step(const MlpParams& params, const Gradient& grad, double step_size) {
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) {
    throw ContractViolation("sgd_step: step size must be finite and non-negative");
  }
  require_same_shape(params, grad, "sgd_step");
  MlpParams out = params;
  for (std::size_t l = 0; l < out.layers().size(); ++l) {
    auto w = out.layers()[l].weight.flat();
    const auto gw = grad.layers()[l].weight.flat();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= step_size * gw[k];
    auto& b = out.layers()[l].bias;
    const auto& gb = grad.layers()[l].bias;
    for (std::size_t k = 0; k < b.size(); ++k) b[k] -= step_size * gb[k];
  }
  return out;
}

MomentumSgd::MomentumSgd(const MlpParams& like, double momentum)
    : momentum_(momentum), velocity_(like.zeros_like()) {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
}

MlpParams MomentumSgd::step(const MlpParams& params, const Gradient& grad, double step_size) {
  require_same_shape(params, grad, "MomentumSgd::step");
  require_same_shape(velocity_, grad, "MomentumSgd::step velocity");
  for (std::size_t l = 0; l < grad.layers().size(); ++l) {
    auto v = velocity_.layers()[l].weight.flat();
    const auto g = grad.layers()[l].weight.flat();
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = momentum_ * v[k] + g[k];
    auto& vb = velocity_.layers()[l].bias;
    const auto& gb = grad.layers()[l].bias;
    for (std::size_t k = 0; k < vb.size(); ++k) vb[k] = momentum_ * vb[k] + gb[k];
  }
  return sgd_step(params, velocity_, step_size);
}

void MomentumSgd::set_velocity(Gradient v) {
  if (!velocity_.same_shape(v)) throw DimensionError("set_velocity: shape mismatch");
  velocity_ = std::move(v);
}

}  // namespace reduxpll
