// SPDX-License-Identifier: Apache-2.0
#include "reduxpll/pseudo_label.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>

#include "json.hpp"
#include "reduxpll/errors.hpp"
#include "reduxpll/log.hpp"

namespace reduxpll {

int argmax(std::span<const double> values) {
  int best = 0;
  for (std::size_t j = 1; j < values.size(); ++j) {
    if (values[j] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  }
  return best;
}

Vector uniform_over(LabelSet support, int num_classes) {
  Vector out(static_cast<std::size_t>(num_classes), 0.0);
  const int k = support.size();
  if (k == 0) throw ContractViolation("uniform_over: empty support");
  for (int l : support.labels()) {
    if (l >= num_classes) throw ContractViolation("uniform_over: label outside the label space");
    out[static_cast<std::size_t>(l)] = 1.0 / k;
  }
  return out;
}

namespace {

// probs restricted to `support` and renormalized; nullopt when the mass is zero.
std::optional<Vector> renormalize_on(std::span<const double> probs, LabelSet support) {
  Vector out(probs.size(), 0.0);
  double mass = 0.0;
  for (int l : support.labels()) {
    if (static_cast<std::size_t>(l) >= probs.size()) {
      throw ContractViolation("candidate label outside the label space");
    }
    mass += probs[static_cast<std::size_t>(l)];
  }
  if (!(mass > 0.0) || !std::isfinite(mass)) return std::nullopt;
  for (int l : support.labels()) {
    const auto k = static_cast<std::size_t>(l);
    out[k] = probs[k] / mass;
  }
  return out;
}

}  // namespace

Vector basic_pseudo(std::span<const double> probs, LabelSet candidates) {
  if (candidates.empty()) throw ContractViolation("basic_pseudo: empty candidate set");
  if (auto mu = renormalize_on(probs, candidates)) return *mu;
  warn("basic_pseudo: zero predicted mass on candidates {" + candidates.to_string() +
       "}; using uniform");
  return uniform_over(candidates, static_cast<int>(probs.size()));
}

Vector reduction_row(std::span<const double> branch_probs, LabelSet candidates, int excluded) {
  const LabelSet support = candidates.without(excluded);
  if (support.empty()) {
    throw ContractViolation("reduction_row: no candidates remain after excluding label " +
                            std::to_string(excluded));
  }
  if (auto row = renormalize_on(branch_probs, support)) return *row;
  warn("reduction_row: zero branch mass on {" + support.to_string() + "}; using uniform");
  return uniform_over(support, static_cast<int>(branch_probs.size()));
}

Matrix initial_reduction_matrix(LabelSet candidates, int num_classes) {
  const auto c = static_cast<std::size_t>(num_classes);
  Matrix u(c, c);
  for (int j = 0; j < num_classes; ++j) {
    const LabelSet rest = candidates.without(j);
    const Vector row = uniform_over(rest.empty() ? candidates : rest, num_classes);
    std::copy(row.begin(), row.end(), u.row(static_cast<std::size_t>(j)).begin());
  }
  return u;
}

Vector reduction_pseudo(std::span<const double> weights, const Matrix& reduction) {
  if (weights.size() != reduction.rows()) {
    throw DimensionError("reduction_pseudo: weights and reduction matrix disagree");
  }
  Vector v(reduction.cols(), 0.0);
  for (std::size_t j = 0; j < weights.size(); ++j) {
    const auto row = reduction.row(j);
    for (std::size_t r = 0; r < v.size(); ++r) v[r] += weights[j] * row[r];
  }
  return v;
}

Vector combine(std::span<const double> mu, std::span<const double> v, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (mu.size() != v.size()) throw DimensionError("combine: length mismatch");
  Vector q(mu.size());
  for (std::size_t j = 0; j < q.size(); ++j) q[j] = alpha * mu[j] + (1.0 - alpha) * v[j];
  return q;
}

Vector meta_weights(const MlpParams& gamma, std::span<const double> x) {
  const Matrix batch = Matrix::from_flat(1, x.size(), Vector(x.begin(), x.end()));
  const Matrix w = predict(gamma, batch);
  return Vector(w.row(0).begin(), w.row(0).end());
}

Matrix reduction_pseudo_batch(const Matrix& weights, std::span<const Matrix> reductions) {
  if (weights.rows() != reductions.size()) {
    throw DimensionError("reduction_pseudo_batch: one reduction matrix per row expected");
  }
  Matrix v(weights.rows(), weights.cols());
  for (std::size_t i = 0; i < weights.rows(); ++i) {
    const Vector row = reduction_pseudo(weights.row(i), reductions[i]);
    std::copy(row.begin(), row.end(), v.row(i).begin());
  }
  return v;
}

PseudoLabelMap make_reduction_label_map(Matrix inputs, std::vector<Matrix> reductions) {
  if (inputs.rows() != reductions.size()) {
    throw DimensionError("make_reduction_label_map: one reduction matrix per input row expected");
  }
  struct Batch {
    Matrix x;
    std::vector<Matrix> u;
  };
  auto batch = std::make_shared<const Batch>(Batch{std::move(inputs), std::move(reductions)});

  PseudoLabelMap map;
  map.targets = [batch](const MlpParams& gamma) {
    return reduction_pseudo_batch(predict(gamma, batch->x), batch->u);
  };
  map.pullback = [batch](const MlpParams& gamma, const Matrix& cotangent) {
    auto fwd = forward(gamma, batch->x);
    if (cotangent.rows() != fwd.probs.rows() || cotangent.cols() != fwd.probs.cols()) {
      throw DimensionError("reduction pullback: cotangent has the wrong shape");
    }
    // dL/dw_ij = sum_r U_i[j][r] * G_ir
    Matrix d_weights(fwd.probs.rows(), fwd.probs.cols());
    for (std::size_t i = 0; i < d_weights.rows(); ++i) {
      const Matrix& u = batch->u[i];
      const auto g = cotangent.row(i);
      for (std::size_t j = 0; j < d_weights.cols(); ++j) {
        const auto urow = u.row(j);
        double acc = 0.0;
        for (std::size_t r = 0; r < g.size(); ++r) acc += urow[r] * g[r];
        d_weights(i, j) = acc;
      }
    }
    return backward_logits(fwd.tape, softmax_pullback(fwd.probs, d_weights));
  };
  return map;
}

PseudoLabelState::PseudoLabelState(std::span<const LabelSet> candidates, int num_classes,
                                   double alpha)
    : num_classes_(num_classes), alpha_(alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  const std::size_t n = candidates.size();
  const auto c = static_cast<std::size_t>(num_classes);
  mu = Matrix(n, c);
  w = Matrix(n, c, 1.0 / static_cast<double>(c));
  v = Matrix(n, c);
  q = Matrix(n, c);
  reduction.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector m = uniform_over(candidates[i], num_classes);
    std::copy(m.begin(), m.end(), mu.row(i).begin());
    reduction.push_back(initial_reduction_matrix(candidates[i], num_classes));
    const Vector vi = reduction_pseudo(w.row(i), reduction.back());
    std::copy(vi.begin(), vi.end(), v.row(i).begin());
    refresh_q(i);
  }
}

void PseudoLabelState::refresh_q(std::size_t i) {
  const Vector qi = combine(mu.row(i), v.row(i), alpha_);
  std::copy(qi.begin(), qi.end(), q.row(i).begin());
}

void PseudoLabelState::check_invariants(std::span<const LabelSet> candidates, double tol) const {
  const std::size_t n = size();
  if (candidates.size() != n) throw DimensionError("check_invariants: candidate count mismatch");
  auto fail = [](std::size_t i, const std::string& what) {
    throw ContractViolation("pseudo-label invariant broken at instance " + std::to_string(i) +
                            ": " + what);
  };
  auto check_row = [&](std::size_t i, std::span<const double> row, LabelSet support,
                       const char* name) {
    double sum = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (!(row[j] >= -tol)) fail(i, std::string(name) + " has a negative entry");
      if (!support.contains(static_cast<int>(j)) && std::abs(row[j]) > tol) {
        fail(i, std::string(name) + " has mass outside its support");
      }
      sum += row[j];
    }
    if (!(std::abs(sum - 1.0) <= tol)) fail(i, std::string(name) + " does not sum to 1");
  };

  const LabelSet all = LabelSet::full(num_classes_);
  for (std::size_t i = 0; i < n; ++i) {
    const LabelSet s = candidates[i];
    check_row(i, mu.row(i), s, "mu");
    check_row(i, v.row(i), s, "v");
    check_row(i, q.row(i), s, "q");
    check_row(i, w.row(i), all, "w");
    for (int j = 0; j < num_classes_; ++j) {
      const LabelSet rest = s.without(j);
      check_row(i, reduction[i].row(static_cast<std::size_t>(j)), rest.empty() ? s : rest,
                "U row");
    }
    for (std::size_t j = 0; j < q.cols(); ++j) {
      const double expect = alpha_ * mu(i, j) + (1.0 - alpha_) * v(i, j);
      if (std::abs(q(i, j) - expect) > tol) fail(i, "q is not alpha*mu + (1-alpha)*v");
    }
  }
}

std::string PseudoLabelState::to_json() const {
  auto rows = [](const Matrix& m) {
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
      out.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
    }
    return out;
  };
  nlohmann::ordered_json j;
  j["n"] = size();
  j["c"] = num_classes_;
  j["alpha"] = alpha_;
  j["mu"] = rows(mu);
  j["w"] = rows(w);
  j["v"] = rows(v);
  j["q"] = rows(q);
  nlohmann::json u = nlohmann::json::array();
  for (const auto& m : reduction) u.push_back(rows(m));
  j["U"] = std::move(u);
  return j.dump();
}

}  // namespace reduxpll
