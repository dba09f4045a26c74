// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "app.hpp"
#include "reduxpll/errors.hpp"
#include "reduxpll/hypergradient.hpp"
#include "reduxpll/pseudo_label.hpp"
#include "reduxpll/random.hpp"
#include "reduxpll/theory.hpp"
#include "test_util.hpp"

using namespace reduxpll;
using namespace reduxpll::app;

namespace {

// Pinned tolerances and budgets.
constexpr std::size_t kSimplexDraws = 10000;
constexpr double kSimplexTol = 1e-9;
constexpr double kSimplexSeconds = 10.0;
constexpr std::size_t kGradientNets = 100;
constexpr double kCeRelTol = 1e-6;
constexpr double kHyperRelTol = 1e-4;
constexpr double kFdStep = 1e-5;
constexpr double kGradientSeconds = 60.0;
constexpr std::size_t kRollbackEpochs = 5;
constexpr std::size_t kTheoryTrials = 100000;
constexpr double kTheorem1MinGapSe = 3.0;
constexpr double kTheorySeconds = 120.0;
constexpr std::size_t kSeeds = 5;
constexpr double kOrderingSeconds = 15 * 60.0;
constexpr std::size_t kTrendMinSeeds = 4;
constexpr std::size_t kTrendWindow = 10;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

// Runs one criterion, turning an escaped exception into a failure line.
void criterion(int id, const std::string& what, const std::function<std::pair<bool, std::string>()>& body) {
  try {
    const auto [pass, detail] = body();
    report(id, pass, what, detail);
  } catch (const std::exception& e) {
    report(id, false, what, std::string("threw: ") + e.what());
  }
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

LabelSet random_candidates(int c, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::uint64_t> bits(0, (std::uint64_t{1} << c) - 1);
  for (;;) {
    const LabelSet s(bits(rng));
    if (s.size() >= 2 && s.size() < c) return s;
  }
}

bool on_simplex_in(std::span<const double> v, LabelSet s) {
  double sum = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) {
    if (!(v[j] >= 0.0)) return false;
    if (!s.contains(static_cast<int>(j)) && v[j] != 0.0) return false;
    sum += v[j];
  }
  return std::abs(sum - 1.0) <= kSimplexTol;
}

std::pair<bool, std::string> simplex_suite() {
  const auto t0 = Clock::now();
  auto rng = stream_rng(2024, 1);
  std::size_t bad = 0;
  for (std::size_t t = 0; t < kSimplexDraws; ++t) {
    const int c = 3 + static_cast<int>(rng() % 8);
    const LabelSet s = random_candidates(c, rng);
    const Vector mu = basic_pseudo(testutil::random_simplex(c, rng), s);
    Matrix u(c, c);
    bool rows_ok = true;
    for (int j = 0; j < c; ++j) {
      const Vector row = reduction_row(testutil::random_simplex(c, rng), s, j);
      rows_ok = rows_ok && on_simplex_in(row, s.without(j)) && row[j] == 0.0;
      std::copy(row.begin(), row.end(), u.row(j).begin());
    }
    const Vector w = testutil::random_simplex(c, rng);
    const Vector v = reduction_pseudo(w, u);
    const double alpha = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const Vector q = combine(mu, v, alpha);
    if (!(rows_ok && on_simplex_in(mu, s) && on_simplex_in(v, s) && on_simplex_in(q, s))) ++bad;
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < kSimplexSeconds,
          std::to_string(kSimplexDraws) + " draws, " + std::to_string(bad) + " violations, " +
              fmt("%.2f s", secs)};
}

std::vector<Matrix> full_reductions(std::size_t n, int c, std::mt19937_64& rng) {
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < n; ++i) {
    Matrix u(c, c);
    for (int j = 0; j < c; ++j) {
      const Vector row = reduction_row(testutil::random_simplex(c, rng), LabelSet::full(c), j);
      std::copy(row.begin(), row.end(), u.row(j).begin());
    }
    out.push_back(u);
  }
  return out;
}

Vector central_difference(const MlpParams& p, const std::function<double(const MlpParams&)>& f) {
  Vector flat = p.flatten(), g(flat.size());
  for (std::size_t k = 0; k < flat.size(); ++k) {
    const double keep = flat[k];
    flat[k] = keep + kFdStep;
    const double up = f(p.with_flat(flat));
    flat[k] = keep - kFdStep;
    const double down = f(p.with_flat(flat));
    flat[k] = keep;
    g[k] = (up - down) / (2 * kFdStep);
  }
  return g;
}

std::pair<bool, std::string> gradient_suite() {
  const auto t0 = Clock::now();
  double worst_ce = 0.0, worst_hg = 0.0;
  for (std::size_t net = 0; net < kGradientNets; ++net) {
    auto rng = stream_rng(net, 2);
    const std::vector<std::size_t> tw{3, 4, 3}, gw{3, 4, 3};
    const auto theta = MlpParams::glorot(tw, rng);
    const auto gamma = MlpParams::glorot(gw, rng);
    const Matrix xi = testutil::random_matrix(6, 3, rng);
    const Matrix xo = testutil::random_matrix(6, 3, rng);
    const Matrix t = testutil::random_simplex_rows(6, 3, rng);

    auto fr = forward(theta, xi);
    const auto ce = backward_ce(std::move(fr.tape), fr.probs, t);
    const Vector fd_ce =
        central_difference(theta, [&](const MlpParams& p) { return cross_entropy(predict(p, xi), t); });
    worst_ce = std::max(worst_ce, testutil::rel_error(ce.grad.flatten(), fd_ce));

    const auto map = make_reduction_label_map(xi, full_reductions(6, 3, rng));
    const double beta2 = 0.5;
    const auto hg = hypergradient(theta, gamma, xi, xo, t, beta2, map);
    const Vector fd_hg = central_difference(gamma, [&](const MlpParams& g) {
      return outer_loss_after_step(theta, g, xi, xo, t, beta2, map);
    });
    worst_hg = std::max(worst_hg, testutil::rel_error(hg.grad.flatten(), fd_hg));
  }
  const double secs = seconds_since(t0);
  return {worst_ce < kCeRelTol && worst_hg < kHyperRelTol && secs < kGradientSeconds,
          std::to_string(kGradientNets) + " nets, worst rel err ce " + fmt("%.2e", worst_ce) +
              " hypergradient " + fmt("%.2e", worst_hg) + ", " + fmt("%.2f s", secs)};
}

const DataSplits& default_splits(const fs::path& data_dir) {
  static const DataSplits s = split(load_csv(data_dir / "data.csv"), SplitSpec{});
  return s;
}

std::pair<bool, std::string> rollback_suite(const fs::path& data_dir) {
  TrainConfig c;
  c.epochs = kRollbackEpochs;
  c.patience = kRollbackEpochs;
  c.verify_rollback = true;
  Trainer t(default_splits(data_dir), c);
  for (std::size_t e = 0; e < kRollbackEpochs; ++e) t.train_epoch();
  const std::size_t n = default_splits(data_dir).train.size();
  const std::size_t want = kRollbackEpochs * ((n + c.batch_size - 1) / c.batch_size);
  return {t.rollback_checks() == want,
          std::to_string(t.rollback_checks()) + " bit-identical restores over " +
              std::to_string(kRollbackEpochs) + " epochs, expected " + std::to_string(want)};
}

std::pair<bool, std::string> theorem1_suite() {
  const auto t0 = Clock::now();
  const auto s = load_scenario(REDUXPLL_SCENARIO);
  const auto r = verify_theorem1(s, {.trials = kTheoryTrials, .seed = 0});
  const double secs = seconds_since(t0);
  return {r.holds && r.lhs < r.rhs && r.gap_in_se >= kTheorem1MinGapSe && r.j_size > 0 &&
              secs < kTheorySeconds,
          "lhs " + fmt("%.5f", r.lhs) + " rhs " + fmt("%.5f", r.rhs) + ", gap " +
              fmt("%.1f", r.gap_in_se) + " SE, |J| " + std::to_string(r.j_size) + ", " +
              fmt("%.2f s", secs)};
}

std::pair<bool, std::string> theorem2_suite() {
  const auto t0 = Clock::now();
  auto s = load_scenario(REDUXPLL_SCENARIO);
  const TsybakovConstants unit{1.0, 1.0, s.tsybakov ? s.tsybakov->t0 : 1.0};
  const auto r = verify_theorem2(s, {.trials = kTheoryTrials, .seed = 1}, unit);
  const double secs = seconds_since(t0);
  return {r.holds && secs < kTheorySeconds,
          "empirical " + fmt("%.5f", r.empirical_consistency) + " >= bound " + fmt("%.5f", r.bound) +
              " with (C, lambda, t0) = (1, 1, " + fmt("%g", unit.t0) + "), " + fmt("%.2f s", secs)};
}

struct MethodRun {
  TrainSummary summary;
  fs::path dir;
};

MethodRun run_method(Method m, const fs::path& data_dir, const fs::path& root) {
  TrainOptions o;
  o.dataset = data_dir;
  o.config.method = m;
  o.seeds = kSeeds;
  o.out = root / std::string(to_string(m));
  fs::remove_all(o.out);
  o.checkpoint_every = 0;
  return {cmd_train(o), o.out};
}

std::pair<bool, std::string> ordering_suite(const MethodRun& ours, const MethodRun& uniform,
                                            const MethodRun& proden, double secs) {
  auto pooled = [](const TrainSummary& a, const TrainSummary& b) {
    return std::sqrt((a.std_test_accuracy * a.std_test_accuracy + b.std_test_accuracy * b.std_test_accuracy) / 2);
  };
  const auto& o = ours.summary;
  const double m_u = o.mean_test_accuracy - uniform.summary.mean_test_accuracy;
  const double m_p = o.mean_test_accuracy - proden.summary.mean_test_accuracy;
  const double sd_u = pooled(o, uniform.summary), sd_p = pooled(o, proden.summary);
  std::ostringstream d;
  d << "reduxpll " << fmt("%.4f", o.mean_test_accuracy) << "+-" << fmt("%.4f", o.std_test_accuracy)
    << ", uniform-w " << fmt("%.4f", uniform.summary.mean_test_accuracy) << "+-"
    << fmt("%.4f", uniform.summary.std_test_accuracy) << ", proden "
    << fmt("%.4f", proden.summary.mean_test_accuracy) << "+-"
    << fmt("%.4f", proden.summary.std_test_accuracy) << "; margins " << fmt("%+.4f", m_u) << " vs sd "
    << fmt("%.4f", sd_u) << ", " << fmt("%+.4f", m_p) << " vs sd " << fmt("%.4f", sd_p) << "; "
    << fmt("%.0f s", secs);
  return {m_u > sd_u && m_p > sd_p && secs < kOrderingSeconds, d.str()};
}

double window_mean(const std::vector<EpochMetrics>& log, std::size_t from, std::size_t to) {
  double s = 0.0;
  for (std::size_t k = from; k < to; ++k) s += log[k].pseudo_label_drift;
  return s / static_cast<double>(to - from);
}

std::pair<bool, std::string> trend_suite(const MethodRun& ours) {
  std::size_t good = 0;
  std::ostringstream d;
  for (const auto& run : ours.summary.runs) {
    const auto log = read_metrics(ours.dir / ("seed_" + std::to_string(run.seed)) / "metrics.jsonl");
    const std::size_t n = log.size();
    if (n < 2 || !log.front().bayes_consistency || !log.back().bayes_consistency) continue;
    const std::size_t w = std::min(kTrendWindow, n / 2);
    const bool rises = *log.back().bayes_consistency > *log.front().bayes_consistency;
    const bool settles = window_mean(log, n - w, n) < window_mean(log, 0, w);
    good += rises && settles;
    d << "seed " << run.seed << ": bc " << fmt("%.3f", *log.front().bayes_consistency) << "->"
      << fmt("%.3f", *log.back().bayes_consistency) << " drift " << fmt("%.4f", window_mean(log, 0, w))
      << "->" << fmt("%.4f", window_mean(log, n - w, n)) << "; ";
  }
  d << good << "/" << ours.summary.runs.size() << " seeds";
  return {good >= kTrendMinSeeds, d.str()};
}

std::pair<bool, std::string> sweep_suite(const fs::path& data_dir, const fs::path& root) {
  SweepOptions so;
  so.base.dataset = data_dir;
  so.base.seeds = kSeeds;
  so.base.out = root / "sweep";
  so.base.checkpoint_every = 0;
  fs::remove_all(so.base.out);
  const auto r = cmd_sweep_alpha(so);
  bool finite = r.rows.size() == 9;
  for (const auto& row : r.rows) finite = finite && std::isfinite(row.mean_test_accuracy);
  std::size_t best = 0;
  for (std::size_t k = 1; k < r.rows.size(); ++k) {
    if (r.rows[k].mean_test_accuracy > r.rows[best].mean_test_accuracy) best = k;
  }
  // The CSV must flag exactly that row.
  std::ifstream in(so.base.out / "sweep.csv");
  std::string line;
  std::getline(in, line);
  std::size_t flagged = 0, row = 0, flagged_row = 0;
  while (std::getline(in, line)) {
    if (line.ends_with(",1")) {
      ++flagged;
      flagged_row = row;
    }
    ++row;
  }
  std::ostringstream d;
  for (const auto& rr : r.rows) d << fmt("%.1f", rr.alpha) << ":" << fmt("%.4f", rr.mean_test_accuracy) << " ";
  d << "; best alpha " << fmt("%.1f", r.rows[best].alpha);
  return {finite && row == 9 && flagged == 1 && flagged_row == best && r.best_row == best, d.str()};
}

}  // namespace

int main() {
  const fs::path root = fs::path(REDUXPLL_TEST_TMP) / "acceptance";
  fs::create_directories(root);
  const fs::path data_dir = root / "data";
  cmd_generate({.out = data_dir});  // c = 5, q = 2, n = 2000, ambiguity 0.5

  criterion(1, "simplex invariants of mu, U rows, v, q", simplex_suite);
  criterion(2, "cross-entropy and hypergradient match finite differences", gradient_suite);
  criterion(3, "predictor rollback is bit-exact every batch", [&] { return rollback_suite(data_dir); });
  criterion(4, "consistency inequality on the designed scenario", theorem1_suite);
  criterion(5, "consistency lower bound under the margin condition", theorem2_suite);

  std::optional<MethodRun> ours, uniform, proden;
  double secs = 0.0;
  try {
    const auto t0 = Clock::now();
    ours = run_method(Method::kReduxPll, data_dir, root);
    uniform = run_method(Method::kReduxPllUniformW, data_dir, root);
    proden = run_method(Method::kProden, data_dir, root);
    secs = seconds_since(t0);
  } catch (const std::exception& e) {
    report(6, false, "method ordering", std::string("threw: ") + e.what());
    report(7, false, "consistency and drift trends", "no runs");
  }
  if (ours) {
    criterion(6, "method ordering reduxpll > uniform-w, proden by one pooled sd",
              [&] { return ordering_suite(*ours, *uniform, *proden, secs); });
    criterion(7, "bayes consistency rises and pseudo-label drift settles",
              [&] { return trend_suite(*ours); });
  }
  criterion(8, "alpha sweep completes and flags its best alpha", [&] { return sweep_suite(data_dir, root); });

  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
