// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "reduxpll/errors.hpp"
#include "reduxpll/hypergradient.hpp"
#include "reduxpll/mlp.hpp"
#include "reduxpll/pseudo_label.hpp"
#include "reduxpll/random.hpp"
#include "test_util.hpp"

using namespace reduxpll;
using testutil::random_matrix;
using testutil::random_simplex_rows;
using testutil::rel_error;

namespace {

double ce_at(const MlpParams& p, const Matrix& x, const Matrix& t) {
  return cross_entropy(predict(p, x), t);
}

Vector fd_ce(const MlpParams& p, const Matrix& x, const Matrix& t, double h = 1e-5) {
  Vector flat = p.flatten();
  Vector g(flat.size());
  for (std::size_t k = 0; k < flat.size(); ++k) {
    const double keep = flat[k];
    flat[k] = keep + h;
    const double up = ce_at(p.with_flat(flat), x, t);
    flat[k] = keep - h;
    const double down = ce_at(p.with_flat(flat), x, t);
    flat[k] = keep;
    g[k] = (up - down) / (2 * h);
  }
  return g;
}

std::vector<Matrix> random_reductions(std::size_t n, int c, std::mt19937_64& rng) {
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < n; ++i) {
    const LabelSet s = LabelSet::full(c);
    Matrix u(c, c);
    for (int j = 0; j < c; ++j) {
      const Vector phi = testutil::random_simplex(c, rng);
      const Vector row = reduction_row(phi, s, j);
      std::copy(row.begin(), row.end(), u.row(j).begin());
    }
    out.push_back(u);
  }
  return out;
}

}  // namespace

TEST_CASE("matmul shapes") {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{5}, {6}};
  const Matrix c = matmul(a, b);
  CHECK(c == Matrix{{17}, {39}});
  CHECK(matmul_tn(a, a) == matmul(Matrix{{1, 3}, {2, 4}}, a));
  CHECK(matmul_nt(a, a) == matmul(a, Matrix{{1, 3}, {2, 4}}));
  CHECK_THROWS_AS(matmul(b, b), DimensionError);
  CHECK_THROWS_AS(Matrix::from_flat(2, 2, Vector(3)), DimensionError);
}

TEST_CASE("forward: zero net gives uniform rows") {
  const std::vector<std::size_t> w{3, 4};
  const auto p = MlpParams::zeros(w);
  std::mt19937_64 rng(1);
  const Matrix probs = predict(p, random_matrix(5, 3, rng));
  for (double v : probs.flat()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("forward: identity-like net picks the hot index") {
  const std::vector<std::size_t> w{3, 3};
  auto p = MlpParams::zeros(w);
  for (int k = 0; k < 3; ++k) p.layers()[0].weight(k, k) = 5.0;
  const Matrix probs = predict(p, Matrix{{0, 1, 0}, {0, 0, 1}, {1, 0, 0}});
  CHECK(argmax(probs.row(0)) == 1);
  CHECK(argmax(probs.row(1)) == 2);
  CHECK(argmax(probs.row(2)) == 0);
}

TEST_CASE("forward: seeded net rows sum to one and stay positive") {
  auto rng = stream_rng(7, 0);
  const std::vector<std::size_t> w{2, 8, 8, 5};
  const auto p = MlpParams::glorot(w, rng);
  const Matrix probs = predict(p, random_matrix(4, 2, rng, 30.0));
  for (std::size_t i = 0; i < 4; ++i) {
    const auto r = probs.row(i);
    CHECK(std::abs(std::accumulate(r.begin(), r.end(), 0.0) - 1.0) <= 1e-12);
    for (double v : r) CHECK(v >= kProbabilityFloor);
  }
  CHECK_THROWS_AS(predict(p, Matrix(4, 3)), DimensionError);
}

TEST_CASE("forward: extreme logits are floored, never zero") {
  const std::vector<std::size_t> w{1, 2};
  auto p = MlpParams::zeros(w);
  p.layers()[0].weight(0, 0) = 1e6;
  const Matrix probs = predict(p, Matrix{{1.0}});
  CHECK(probs(0, 1) >= kProbabilityFloor);
  CHECK(std::isfinite(cross_entropy(probs, Matrix{{0.0, 1.0}})));
}

TEST_CASE("cross-entropy: frozen value") {
  // probs [0.7, 0.2, 0.1], target [0.5, 0.5, 0] -> -(0.5 ln 0.7 + 0.5 ln 0.2)
  const Matrix probs{{0.7, 0.2, 0.1}};
  const Matrix t{{0.5, 0.5, 0.0}};
  CHECK(cross_entropy(probs, t) == doctest::Approx(0.9830564281864164).epsilon(1e-10));
}

TEST_CASE("backward_ce: stationary at matching uniform") {
  const std::vector<std::size_t> w{3, 4};
  const auto p = MlpParams::zeros(w);
  std::mt19937_64 rng(2);
  auto fr = forward(p, random_matrix(6, 3, rng));
  const Matrix t(6, 4, 0.25);
  const auto g = backward_ce(std::move(fr.tape), fr.probs, t);
  for (double v : g.grad.flatten()) CHECK(v == 0.0);
  CHECK(g.loss == doctest::Approx(std::log(4.0)));
}

TEST_CASE("backward_ce: near one-hot prediction has tiny loss") {
  const std::vector<std::size_t> w{1, 3};
  auto p = MlpParams::zeros(w);
  p.layers()[0].bias = {20.0, 0.0, 0.0};
  auto fr = forward(p, Matrix{{0.0}});
  const auto g = backward_ce(std::move(fr.tape), fr.probs, Matrix{{1, 0, 0}});
  CHECK(g.loss <= 1e-6);
}

TEST_CASE("backward_ce: rejects off-simplex targets and shape mismatch") {
  const std::vector<std::size_t> w{2, 3};
  const auto p = MlpParams::zeros(w);
  {
    auto fr = forward(p, Matrix{{0.0, 0.0}});
    CHECK_THROWS_AS(backward_ce(std::move(fr.tape), fr.probs, Matrix{{0.5, 0.5, 1e-8}}),
                    ContractViolation);
  }
  {
    auto fr = forward(p, Matrix{{0.0, 0.0}});
    CHECK_THROWS_AS(backward_ce(std::move(fr.tape), fr.probs, Matrix{{0.5, 0.5}}), DimensionError);
  }
}

TEST_CASE("backward_ce matches central finite differences on random nets") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto rng = stream_rng(s, 11);
    const std::vector<std::size_t> w{3, 4, 3};
    const auto p = MlpParams::glorot(w, rng);
    const Matrix x = random_matrix(5, 3, rng);
    const Matrix t = random_simplex_rows(5, 3, rng);
    auto fr = forward(p, x);
    const auto g = backward_ce(std::move(fr.tape), fr.probs, t);
    CHECK(rel_error(g.grad.flatten(), fd_ce(p, x, t)) < 1e-6);
  }
}

TEST_CASE("jvp_logits matches a finite difference of the logits") {
  auto rng = stream_rng(3, 0);
  const std::vector<std::size_t> w{3, 5, 4};
  const auto p = MlpParams::glorot(w, rng);
  const Matrix x = random_matrix(3, 3, rng);
  const Matrix dm = random_matrix(1, p.num_params(), rng);
  const Vector dir(dm.flat().begin(), dm.flat().end());
  const auto tangent = p.with_flat(dir);
  auto fr = forward(p, x);
  const Matrix j = jvp_logits(fr.tape, tangent);
  // log-probabilities differ from logits by a per-row constant, so compare
  // centred differences.
  const double h = 1e-6;
  Vector up = p.flatten(), down = p.flatten();
  for (std::size_t k = 0; k < dir.size(); ++k) {
    up[k] += h * dir[k];
    down[k] -= h * dir[k];
  }
  const Matrix pu = predict(p.with_flat(up), x), pd = predict(p.with_flat(down), x);
  for (std::size_t i = 0; i < 3; ++i) {
    Vector fd(4), an(4);
    double fd_mean = 0, an_mean = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      fd[c] = (std::log(pu(i, c)) - std::log(pd(i, c))) / (2 * h);
      an[c] = j(i, c);
      fd_mean += fd[c] / 4;
      an_mean += an[c] / 4;
    }
    for (std::size_t c = 0; c < 4; ++c) {
      fd[c] -= fd_mean;
      an[c] -= an_mean;
    }
    CHECK(rel_error(an, fd) < 1e-6);
  }
}

TEST_CASE("sgd_step") {
  auto rng = stream_rng(4, 0);
  const std::vector<std::size_t> w{2, 3, 2};
  const auto p = MlpParams::glorot(w, rng);
  const auto before = p.flatten();
  CHECK(sgd_step(p, p.zeros_like(), 0.3) == p);
  for (double v : sgd_step(p, p, 1.0).flatten()) CHECK(v == 0.0);
  CHECK(p.flatten() == before);  // input untouched
  const auto g = p.with_flat(random_matrix(1, p.num_params(), rng).flat());
  const auto two = sgd_step(sgd_step(p, g, 0.25), g, 0.25).flatten();
  const auto one = sgd_step(p, g, 0.5).flatten();
  for (std::size_t k = 0; k < one.size(); ++k) CHECK(two[k] == doctest::Approx(one[k]).epsilon(1e-14));
  CHECK_THROWS_AS(sgd_step(p, g, -0.1), ContractViolation);
  CHECK_THROWS_AS(sgd_step(p, g, std::nan("")), ContractViolation);
}

TEST_CASE("momentum sgd follows the heavy-ball recursion") {
  const std::vector<std::size_t> w{1, 1};
  auto p = MlpParams::zeros(w);
  MomentumSgd opt(p, 0.5);
  const auto g = p.with_flat(Vector{1.0, 2.0});
  p = opt.step(p, g, 0.1);  // v = g
  p = opt.step(p, g, 0.1);  // v = 1.5 g
  CHECK(p.flatten()[0] == doctest::Approx(-0.25));
  CHECK(p.flatten()[1] == doctest::Approx(-0.5));
  CHECK(opt.velocity().flatten()[1] == doctest::Approx(3.0));
}

TEST_CASE("hypergradient: beta2 = 0 and a gamma-free label map give exact zeros") {
  auto rng = stream_rng(5, 0);
  const std::vector<std::size_t> tw{3, 4, 3}, gw{3, 4, 3};
  const auto theta = MlpParams::glorot(tw, rng);
  const auto gamma = MlpParams::glorot(gw, rng);
  const Matrix xi = random_matrix(4, 3, rng), xo = random_matrix(4, 3, rng);
  const Matrix to = random_simplex_rows(4, 3, rng);
  const auto map = make_reduction_label_map(xi, random_reductions(4, 3, rng));
  for (double v : hypergradient(theta, gamma, xi, xo, to, 0.0, map).grad.flatten()) CHECK(v == 0.0);

  const Matrix fixed = random_simplex_rows(4, 3, rng);
  PseudoLabelMap constant{[&](const MlpParams&) { return fixed; },
                          [](const MlpParams& g, const Matrix&) { return g.zeros_like(); }};
  for (double v : hypergradient(theta, gamma, xi, xo, to, 0.5, constant).grad.flatten()) {
    CHECK(v == 0.0);
  }
}

TEST_CASE("hypergradient matches finite differences over gamma") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto rng = stream_rng(s, 12);
    const std::vector<std::size_t> tw{3, 4, 3}, gw{3, 4, 3};
    const auto theta = MlpParams::glorot(tw, rng);
    const auto gamma = MlpParams::glorot(gw, rng);
    const Matrix xi = random_matrix(5, 3, rng), xo = random_matrix(5, 3, rng);
    const Matrix to = random_simplex_rows(5, 3, rng);
    const auto map = make_reduction_label_map(xi, random_reductions(5, 3, rng));
    const double beta2 = 0.5;
    const auto hg = hypergradient(theta, gamma, xi, xo, to, beta2, map);
    CHECK(hg.outer_loss ==
          doctest::Approx(outer_loss_after_step(theta, gamma, xi, xo, to, beta2, map)).epsilon(1e-12));
    Vector flat = gamma.flatten(), fd(flat.size());
    const double h = 1e-5;
    for (std::size_t k = 0; k < flat.size(); ++k) {
      const double keep = flat[k];
      flat[k] = keep + h;
      const double up = outer_loss_after_step(theta, gamma.with_flat(flat), xi, xo, to, beta2, map);
      flat[k] = keep - h;
      const double down = outer_loss_after_step(theta, gamma.with_flat(flat), xi, xo, to, beta2, map);
      flat[k] = keep;
      fd[k] = (up - down) / (2 * h);
    }
    CHECK(rel_error(hg.grad.flatten(), fd) < 1e-4);
  }
}

TEST_CASE("meta weights: zero net is uniform, Jacobian matches finite differences") {
  const std::vector<std::size_t> gw{2, 3, 4};
  const auto zero = MlpParams::zeros(gw);
  for (double v : meta_weights(zero, Vector{0.3, -1.0})) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  auto rng = stream_rng(6, 0);
  const auto gamma = MlpParams::glorot(gw, rng);
  const Vector x{0.4, -0.7};
  const auto w = meta_weights(gamma, x);
  CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  // d(sum_j c_j w_j)/d(gamma) through the label map with U = identity rows.
  Matrix eye(4, 4);
  for (int k = 0; k < 4; ++k) eye(k, k) = 1.0;
  const auto map = make_reduction_label_map(Matrix{{x[0], x[1]}}, {eye});
  const Matrix cot{{0.3, -1.2, 0.5, 2.0}};
  const auto an = map.pullback(gamma, cot).flatten();
  Vector flat = gamma.flatten(), fd(flat.size());
  const double h = 1e-6;
  auto obj = [&](const Vector& f) {
    const auto ww = meta_weights(gamma.with_flat(f), x);
    double s = 0;
    for (int k = 0; k < 4; ++k) s += cot(0, k) * ww[k];
    return s;
  };
  for (std::size_t k = 0; k < flat.size(); ++k) {
    const double keep = flat[k];
    flat[k] = keep + h;
    const double up = obj(flat);
    flat[k] = keep - h;
    const double down = obj(flat);
    flat[k] = keep;
    fd[k] = (up - down) / (2 * h);
  }
  CHECK(rel_error(an, fd) < 1e-6);
}
