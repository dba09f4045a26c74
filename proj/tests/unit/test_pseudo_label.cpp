// SPDX-License-Identifier: Apache-2.0
// Set examples below are written with 0-based labels: {1,2} over three labels
// in 1-based notation is {0,1} here.
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "doctest.h"
#include "reduxpll/errors.hpp"
#include "reduxpll/log.hpp"
#include "reduxpll/pseudo_label.hpp"
#include "reduxpll/random.hpp"
#include "test_util.hpp"

using namespace reduxpll;

namespace {

void check_vec(std::span<const double> got, std::initializer_list<double> want, double tol = 1e-15) {
  REQUIRE(got.size() == want.size());
  std::size_t k = 0;
  for (double w : want) CHECK(std::abs(got[k++] - w) <= tol);
}

LabelSet random_candidates(int c, std::mt19937_64& rng) {
  // Proper nonempty subset of size >= 2.
  std::uniform_int_distribution<std::uint64_t> bits(0, (std::uint64_t{1} << c) - 1);
  for (;;) {
    const LabelSet s(bits(rng));
    if (s.size() >= 2 && s.size() < c) return s;
  }
}

}  // namespace

TEST_CASE("basic pseudo-label") {
  check_vec(basic_pseudo(Vector{0.1, 0.6, 0.3}, LabelSet::of({0, 1})), {1.0 / 7, 6.0 / 7, 0.0}, 1e-15);
  check_vec(basic_pseudo(Vector{0.25, 0.25, 0.25, 0.25}, LabelSet::of({0, 2, 3})),
            {1.0 / 3, 0.0, 1.0 / 3, 1.0 / 3}, 1e-15);

  auto rng = stream_rng(1, 0);
  for (int t = 0; t < 1000; ++t) {
    const Vector f = testutil::random_simplex(6, rng);
    const LabelSet s = random_candidates(6, rng);
    const Vector mu = basic_pseudo(f, s);
    Vector masked(6, -1.0);
    for (int j : s.labels()) masked[j] = f[j];
    CHECK(argmax(mu) == argmax(masked));
  }
}

TEST_CASE("basic pseudo-label: zero candidate mass falls back to uniform with a warning") {
  std::vector<std::string> seen;
  auto old = set_warning_handler([&](std::string_view m) { seen.emplace_back(m); });
  const Vector mu = basic_pseudo(Vector{1.0, 0.0, 0.0}, LabelSet::of({1, 2}));
  set_warning_handler(old);
  check_vec(mu, {0.0, 0.5, 0.5});
  CHECK(seen.size() == 1);
}

TEST_CASE("reduction row") {
  check_vec(reduction_row(Vector{0.2, 0.5, 0.3}, LabelSet::of({0, 1, 2}), 1), {0.4, 0.0, 0.6}, 1e-15);
  check_vec(reduction_row(Vector{0.2, 0.5, 0.3}, LabelSet::of({0, 2}), 2), {1.0, 0.0, 0.0});
  // j outside S reduces to the basic pseudo-label.
  const Vector phi{0.1, 0.2, 0.3, 0.4};
  const LabelSet s = LabelSet::of({1, 3});
  CHECK(reduction_row(phi, s, 0) == basic_pseudo(phi, s));
  CHECK_THROWS_AS(reduction_row(phi, LabelSet::of({2}), 2), ContractViolation);

  auto rng = stream_rng(2, 0);
  for (int t = 0; t < 1000; ++t) {
    const Vector p = testutil::random_simplex(5, rng);
    const LabelSet cs = random_candidates(5, rng);
    const int j = static_cast<int>(rng() % 5);
    const Vector u = reduction_row(p, cs, j);
    CHECK(std::abs(std::accumulate(u.begin(), u.end(), 0.0) - 1.0) <= 1e-12);
    CHECK(u[j] == 0.0);
  }
}

TEST_CASE("initial reduction matrix") {
  const Matrix u = initial_reduction_matrix(LabelSet::of({0, 2, 3}), 4);
  check_vec(u.row(0), {0.0, 0.0, 0.5, 0.5});
  check_vec(u.row(1), {1.0 / 3, 0.0, 1.0 / 3, 1.0 / 3});
  check_vec(u.row(2), {0.5, 0.0, 0.0, 0.5});
  const Matrix single = initial_reduction_matrix(LabelSet::of({1}), 3);
  check_vec(single.row(1), {0.0, 1.0, 0.0});
  check_vec(single.row(0), {0.0, 1.0, 0.0});
}

TEST_CASE("reduction pseudo-label") {
  const Matrix u{{0, 0.4, 0.6}, {0.7, 0, 0.3}, {0.2, 0.8, 0}};
  check_vec(reduction_pseudo(Vector{0.5, 0.25, 0.25}, u), {0.225, 0.4, 0.375}, 1e-15);
  check_vec(reduction_pseudo(Vector{0, 1, 0}, u), {0.7, 0, 0.3});
  const Matrix same{{0.1, 0.2, 0.7}, {0.1, 0.2, 0.7}, {0.1, 0.2, 0.7}};
  check_vec(reduction_pseudo(Vector{0.6, 0.3, 0.1}, same), {0.1, 0.2, 0.7}, 1e-15);
}

TEST_CASE("combine") {
  const Vector mu{0.2, 0.8, 0}, v{0.5, 0.25, 0.25};
  CHECK(combine(mu, v, 1.0) == mu);
  CHECK(combine(mu, v, 0.0) == v);
  check_vec(combine(Vector{1, 0, 0}, Vector{0, 1, 0}, 0.5), {0.5, 0.5, 0.0});
  CHECK_THROWS_AS(combine(mu, v, 1.01), ConfigError);
  CHECK_THROWS_AS(combine(mu, v, -0.01), ConfigError);
}

TEST_CASE("pseudo-label state: uniform initialization and invariants") {
  const std::vector<LabelSet> cands{LabelSet::of({0, 1}), LabelSet::of({1, 2, 3})};
  PseudoLabelState st(cands, 4, 0.3);
  check_vec(st.mu.row(0), {0.5, 0.5, 0, 0});
  check_vec(st.w.row(1), {0.25, 0.25, 0.25, 0.25});
  check_vec(st.reduction[1].row(2), {0, 0.5, 0, 0.5});
  st.check_invariants(cands);
  for (std::size_t i = 0; i < 2; ++i) {
    const Vector q = combine(st.mu.row(i), st.v.row(i), 0.3);
    for (int j = 0; j < 4; ++j) CHECK(st.q(i, j) == q[j]);
  }
  st.q(0, 2) = 0.1;
  CHECK_THROWS_AS(st.check_invariants(cands), ContractViolation);
  st.refresh_q(0);
  st.check_invariants(cands);
}

TEST_CASE("simplex invariants over random draws") {
  auto rng = stream_rng(3, 0);
  for (int t = 0; t < 2000; ++t) {
    const int c = 3 + static_cast<int>(rng() % 6);
    const LabelSet s = random_candidates(c, rng);
    const Vector mu = basic_pseudo(testutil::random_simplex(c, rng), s);
    Matrix u(c, c);
    for (int j = 0; j < c; ++j) {
      const Vector row = reduction_row(testutil::random_simplex(c, rng), s, j);
      std::copy(row.begin(), row.end(), u.row(j).begin());
    }
    const Vector v = reduction_pseudo(testutil::random_simplex(c, rng), u);
    const double alpha = std::uniform_real_distribution<double>(0, 1)(rng);
    const Vector q = combine(mu, v, alpha);
    for (const Vector* x : {&mu, &v, &q}) {
      CHECK(std::abs(std::accumulate(x->begin(), x->end(), 0.0) - 1.0) <= 1e-9);
      for (int j = 0; j < c; ++j) {
        CHECK((*x)[j] >= 0.0);
        if (!s.contains(j)) CHECK((*x)[j] == 0.0);
      }
    }
  }
}

TEST_CASE("reduction label map pullback matches finite differences") {
  auto rng = stream_rng(4, 0);
  const std::vector<std::size_t> gw{2, 3, 3};
  const auto gamma = MlpParams::glorot(gw, rng);
  const Matrix x = testutil::random_matrix(3, 2, rng);
  std::vector<Matrix> us;
  for (int i = 0; i < 3; ++i) us.push_back(initial_reduction_matrix(LabelSet::of({0, 2}), 3));
  us[1] = initial_reduction_matrix(LabelSet::of({0, 1}), 3);
  const auto map = make_reduction_label_map(x, us);
  const Matrix cot = testutil::random_matrix(3, 3, rng);
  const Vector an = map.pullback(gamma, cot).flatten();
  Vector flat = gamma.flatten(), fd(flat.size());
  auto obj = [&](const Vector& f) {
    const Matrix v = map.targets(gamma.with_flat(f));
    double s = 0;
    for (std::size_t k = 0; k < v.size(); ++k) s += v.flat()[k] * cot.flat()[k];
    return s;
  };
  const double h = 1e-6;
  for (std::size_t k = 0; k < flat.size(); ++k) {
    const double keep = flat[k];
    flat[k] = keep + h;
    const double up = obj(flat);
    flat[k] = keep - h;
    const double down = obj(flat);
    flat[k] = keep;
    fd[k] = (up - down) / (2 * h);
  }
  CHECK(testutil::rel_error(an, fd) < 1e-6);
}
