// SPDX-License-Identifier: Apache-2.0
#include "reduxpll/theory.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <random>
#include <thread>

#include "json.hpp"
#include "reduxpll/errors.hpp"
#include "reduxpll/format.hpp"
#include "reduxpll/pseudo_label.hpp"
#include "reduxpll/random.hpp"

namespace reduxpll {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr double kTol = 1e-9;
constexpr int kMaxAttempts = 100000;

void check_budgets(double tau, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw ContractViolation("epsilon must lie in (0, 1), got " + format_double(epsilon));
  }
  if (!(tau > 0.0 && tau <= std::min(1.0, 2.0 * epsilon))) {
    throw ContractViolation("tau must lie in (0, min(1, 2 epsilon)], got " + format_double(tau));
  }
}

// Argmax over the labels for which keep(j) holds; lowest index wins ties.
template <class Pred>
std::optional<int> argmax_where(std::span<const double> v, Pred keep) {
  std::optional<int> best;
  for (std::size_t j = 0; j < v.size(); ++j) {
    if (!keep(static_cast<int>(j))) continue;
    if (!best || v[j] > v[static_cast<std::size_t>(*best)]) best = static_cast<int>(j);
  }
  return best;
}

std::vector<std::size_t> j_points(const TheoryScenario& s) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    if (membership_J(s, i)) out.push_back(i);
  }
  return out;
}

double j_term(const TheoryScenario& s, std::size_t i) {
  const auto& eta = s.points[i].eta;
  const PointLabels l = point_labels(eta, s.excluded);
  const double top = eta[static_cast<std::size_t>(l.bayes)];
  const double eb = l.b ? eta[static_cast<std::size_t>(*l.b)] : 0.0;
  const double ea = eta[static_cast<std::size_t>(l.a)];
  double excluded_mass = 0.0;
  for (int j : s.excluded.labels()) excluded_mass += eta[static_cast<std::size_t>(j)];
  return (top - eb) * (top - ea) / (4.0 * s.epsilon * (1.0 - excluded_mass));
}

struct Counts {
  std::size_t lhs = 0;
  std::size_t rhs = 0;
  std::size_t rejected_f = 0;
  std::size_t rejected_phi = 0;
};

double se(double p, std::size_t n) {
  return std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

int TheoryScenario::num_classes() const {
  return points.empty() ? 0 : static_cast<int>(points.front().eta.size());
}

Vector reduced_posterior(std::span<const double> eta, LabelSet excluded) {
  double mass = 0.0;
  for (int j : excluded.labels()) {
    if (static_cast<std::size_t>(j) >= eta.size()) {
      throw ContractViolation("reduced_posterior: excluded label outside the label space");
    }
    mass += eta[static_cast<std::size_t>(j)];
  }
  const double rest = 1.0 - mass;
  if (!(rest > 0.0)) {
    throw ScenarioError("reduced_posterior: excluded labels carry all the posterior mass");
  }
  Vector out(eta.size(), 0.0);
  for (std::size_t j = 0; j < eta.size(); ++j) {
    if (!excluded.contains(static_cast<int>(j))) out[j] = eta[j] / rest;
  }
  return out;
}

bool is_disturbing(std::span<const double> eta, std::span<const double> f_out, int j, double tau,
                   double epsilon) {
  check_budgets(tau, epsilon);
  if (eta.size() != f_out.size()) throw DimensionError("is_disturbing: eta and f differ in length");
  if (j < 0 || static_cast<std::size_t>(j) >= eta.size()) {
    throw ContractViolation("is_disturbing: label outside the label space");
  }
  const int bayes = argmax(eta);
  if (j == bayes) throw ContractViolation("is_disturbing: j is the Bayes label");
  for (std::size_t k = 0; k < eta.size(); ++k) {
    if (!(std::abs(f_out[k] - eta[k]) <= epsilon)) return false;
  }
  return eta[static_cast<std::size_t>(bayes)] - eta[static_cast<std::size_t>(j)] <= tau;
}

bool membership_J(const TheoryScenario& s, std::size_t i) {
  return membership_J(s, i, s.points.at(i).eta);
}

bool membership_J(const TheoryScenario& s, std::size_t i, std::span<const double> f_out) {
  const auto& eta = s.points.at(i).eta;
  const int y = argmax(eta);
  if (s.excluded.contains(y) || s.excluded.empty()) return false;
  for (int j : s.excluded.labels()) {
    if (!is_disturbing(eta, f_out, j, s.tau, s.epsilon)) return false;
  }
  for (std::size_t k = 0; k < eta.size(); ++k) {
    if (static_cast<int>(k) == y || s.excluded.contains(static_cast<int>(k))) continue;
    for (int j : s.excluded.labels()) {
      if (!(eta[k] < eta[static_cast<std::size_t>(j)])) return false;
    }
  }
  return true;
}

PointLabels point_labels(std::span<const double> eta, LabelSet excluded) {
  PointLabels l;
  l.bayes = argmax(eta);
  const int y = l.bayes;
  l.second = argmax_where(eta, [&](int j) { return j != y; }).value_or(y);
  l.a = argmax_where(eta, [&](int j) { return excluded.contains(j); }).value_or(-1);
  l.b = argmax_where(eta, [&](int j) { return j != y && !excluded.contains(j); });
  return l;
}

double epsilon_prime_bound(const TheoryScenario& s) {
  const auto js = j_points(s);
  if (js.empty()) throw ScenarioError("scenario has no point in J; nothing to analyse");
  double bound = std::numeric_limits<double>::infinity();
  for (std::size_t i : js) bound = std::min(bound, j_term(s, i));
  return bound;
}

void validate(const TheoryScenario& s) {
  if (s.points.empty()) throw ScenarioError("scenario has no points");
  const int c = s.num_classes();
  if (c < 2 || c > kMaxLabels) throw ScenarioError("scenario needs between 2 and 64 labels");
  double total = 0.0;
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    const auto& p = s.points[i];
    const std::string at = "point " + std::to_string(i) + ": ";
    if (static_cast<int>(p.eta.size()) != c) throw ScenarioError(at + "eta has the wrong length");
    double sum = 0.0;
    for (double e : p.eta) {
      if (!std::isfinite(e) || e < -kTol) throw ScenarioError(at + "eta has a negative entry");
      sum += e;
    }
    if (std::abs(sum - 1.0) > kTol) throw ScenarioError(at + "eta does not sum to 1");
    if (!std::isfinite(p.weight) || p.weight < 0.0) throw ScenarioError(at + "negative weight");
    total += p.weight;
    if (p.candidates) {
      if (p.candidates->empty()) throw ScenarioError(at + "empty candidate set");
      for (int l : p.candidates->labels()) {
        if (l >= c) throw ScenarioError(at + "candidate outside the label space");
      }
    }
  }
  if (std::abs(total - 1.0) > kTol) throw ScenarioError("weights do not sum to 1");
  if (s.excluded.empty()) throw ScenarioError("excluded label set is empty");
  for (int l : s.excluded.labels()) {
    if (l >= c) throw ScenarioError("excluded label outside the label space");
  }
  if (s.excluded.size() >= c) throw ScenarioError("excluded set must be a proper subset");
  for (const auto& p : s.points) (void)reduced_posterior(p.eta, s.excluded);
  check_budgets(s.tau, s.epsilon);
  if (!(s.epsilon_prime > 0.0 && s.epsilon_prime < 1.0)) {
    throw ContractViolation("epsilon' must lie in (0, 1)");
  }
  if (!j_points(s).empty()) {
    const double bound = epsilon_prime_bound(s);
    if (!(s.epsilon_prime < bound)) {
      throw ContractViolation("epsilon' = " + format_double(s.epsilon_prime) +
                              " is not below the hypothesis bound " + format_double(bound));
    }
  }
  if (s.tsybakov) {
    const auto& t = *s.tsybakov;
    if (!(t.C > 0.0) || !(t.lambda > 0.0) || !(t.t0 > 0.0 && t.t0 <= 1.0)) {
      throw ScenarioError("tsybakov constants need C > 0, lambda > 0, t0 in (0, 1]");
    }
  }
}

TheoryScenario scenario_from_json(const std::string& text, const std::string& source_name) {
  TheoryScenario s;
  try {
    const json j = json::parse(text);
    for (const auto& p : j.at("points")) {
      ScenarioPoint pt;
      if (p.contains("x")) pt.x = p.at("x").get<Vector>();
      pt.eta = p.at("eta").get<Vector>();
      pt.weight = p.at("weight").get<double>();
      if (p.contains("candidates")) {
        LabelSet cand;
        for (int l : p.at("candidates").get<std::vector<int>>()) {
          if (l < 0 || l >= kMaxLabels) throw ParseError(source_name + ": candidate out of range");
          cand.insert(l);
        }
        pt.candidates = cand;
      }
      s.points.push_back(std::move(pt));
    }
    for (int l : j.at("excluded").get<std::vector<int>>()) {
      if (l < 0 || l >= kMaxLabels) throw ParseError(source_name + ": excluded label out of range");
      s.excluded.insert(l);
    }
    s.tau = j.at("tau").get<double>();
    s.epsilon = j.at("epsilon").get<double>();
    s.epsilon_prime = j.at("epsilon_prime").get<double>();
    if (j.contains("tsybakov") && !j.at("tsybakov").is_null()) {
      const auto& t = j.at("tsybakov");
      s.tsybakov = TsybakovConstants{t.at("C").get<double>(), t.at("lambda").get<double>(),
                                     t.at("t0").get<double>()};
    }
  } catch (const json::exception& e) {
    throw ParseError(source_name + ": " + e.what());
  }
  validate(s);
  return s;
}

TheoryScenario load_scenario(const std::filesystem::path& path) {
  return scenario_from_json(read_file(path), path.string());
}

std::string scenario_to_json(const TheoryScenario& s) {
  ordered_json j;
  ordered_json pts = ordered_json::array();
  for (const auto& p : s.points) {
    ordered_json pj;
    if (!p.x.empty()) pj["x"] = p.x;
    pj["eta"] = p.eta;
    pj["weight"] = p.weight;
    if (p.candidates) pj["candidates"] = p.candidates->labels();
    pts.push_back(std::move(pj));
  }
  j["points"] = std::move(pts);
  j["excluded"] = s.excluded.labels();
  j["tau"] = s.tau;
  j["epsilon"] = s.epsilon;
  j["epsilon_prime"] = s.epsilon_prime;
  if (s.tsybakov) {
    j["tsybakov"] = {{"C", s.tsybakov->C}, {"lambda", s.tsybakov->lambda}, {"t0", s.tsybakov->t0}};
  }
  return j.dump(2);
}

Vector sample_in_ball(std::span<const double> center, double radius, LabelSet active,
                      std::mt19937_64& rng, std::size_t* rejected) {
  if (!(radius >= 0.0 && radius < 1.0)) throw ContractViolation("ball radius must lie in [0, 1)");
  Vector out(center.size(), 0.0);
  if (radius == 0.0) {
    for (std::size_t j = 0; j < out.size(); ++j) {
      if (active.contains(static_cast<int>(j))) out[j] = center[j];
    }
    return out;
  }
  std::uniform_real_distribution<double> noise(-radius, radius);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    double sum = 0.0;
    for (std::size_t j = 0; j < out.size(); ++j) {
      if (!active.contains(static_cast<int>(j))) {
        out[j] = 0.0;
        continue;
      }
      out[j] = std::clamp(center[j] + noise(rng), 0.0, 1.0);
      sum += out[j];
    }
    if (sum > 0.0) {
      bool inside = true;
      for (std::size_t j = 0; j < out.size(); ++j) {
        out[j] /= sum;
        if (active.contains(static_cast<int>(j)) && std::abs(out[j] - center[j]) > radius) {
          inside = false;
        }
      }
      if (inside) return out;
    }
    if (rejected) ++*rejected;
  }
  throw NumericError("ball sampler: no admissible draw after " + std::to_string(kMaxAttempts) +
                     " attempts (radius " + format_double(radius) + ")");
}

Theorem1Report verify_theorem1(const TheoryScenario& s, const Theorem1Options& opts) {
  if (opts.trials == 0) throw ConfigError("trials must be positive");
  const auto js = j_points(s);
  if (js.empty()) throw ScenarioError("scenario has no point in J; nothing to analyse");
  const double f_r = opts.f_radius.value_or(s.epsilon);
  const double phi_r = opts.phi_radius.value_or(s.epsilon_prime);
  if (!(f_r >= 0.0 && f_r < 1.0) || !(phi_r >= 0.0 && phi_r < 1.0)) {
    throw ConfigError("sampling radii must lie in [0, 1)");
  }

  std::vector<double> cumulative;
  double mass = 0.0;
  for (std::size_t i : js) cumulative.push_back(mass += s.points[i].weight);
  if (!(mass > 0.0)) throw ScenarioError("points in J carry zero weight");

  std::vector<Vector> reduced;
  for (std::size_t i : js) reduced.push_back(reduced_posterior(s.points[i].eta, s.excluded));

  const int c = s.num_classes();
  const LabelSet kept(LabelSet::full(c).bits() & ~s.excluded.bits());
  auto run = [&](std::size_t begin, std::size_t end) {
    Counts k;
    for (std::size_t t = begin; t < end; ++t) {
      auto rng = stream_rng(opts.seed, t);
      const double u = std::uniform_real_distribution<double>(0.0, mass)(rng);
      const std::size_t pick = std::min<std::size_t>(
          static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) -
                                   cumulative.begin()),
          js.size() - 1);
      const auto& pt = s.points[js[pick]];
      const int y = argmax(pt.eta);
      const LabelSet cand = pt.candidates.value_or(LabelSet::full(c));

      const Vector f = sample_in_ball(pt.eta, f_r, LabelSet::full(c), rng, &k.rejected_f);
      const auto q = argmax_where(f, [&](int j) { return cand.contains(j); });
      if (q && *q == y) ++k.lhs;

      const Vector phi = sample_in_ball(reduced[pick], phi_r, kept, rng, &k.rejected_phi);
      if (argmax(phi) == y) ++k.rhs;
    }
    return k;
  };

  unsigned threads = opts.threads ? opts.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, opts.trials));
  std::vector<std::future<Counts>> parts;
  const std::size_t chunk = (opts.trials + threads - 1) / threads;
  for (std::size_t b = 0; b < opts.trials; b += chunk) {
    parts.push_back(std::async(std::launch::async, run, b, std::min(opts.trials, b + chunk)));
  }
  Counts total;
  for (auto& p : parts) {
    const Counts k = p.get();
    total.lhs += k.lhs;
    total.rhs += k.rhs;
    total.rejected_f += k.rejected_f;
    total.rejected_phi += k.rejected_phi;
  }

  Theorem1Report r;
  const auto n = static_cast<double>(opts.trials);
  r.trials = opts.trials;
  r.lhs = static_cast<double>(total.lhs) / n;
  r.rhs = static_cast<double>(total.rhs) / n;
  r.lhs_se = se(r.lhs, opts.trials);
  r.rhs_se = se(r.rhs, opts.trials);
  r.combined_se = std::hypot(r.lhs_se, r.rhs_se);
  const double gap = r.rhs - r.lhs;
  if (r.combined_se > 0.0) {
    r.gap_in_se = gap / r.combined_se;
  } else {
    r.gap_in_se = gap > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  r.holds = r.lhs <= r.rhs + 2.0 * r.combined_se;
  r.rejected_f = total.rejected_f;
  r.rejected_phi = total.rejected_phi;
  r.j_size = js.size();
  r.j_mass = mass;
  r.epsilon_prime_bound = epsilon_prime_bound(s);
  return r;
}

bool check_tsybakov(std::span<const Vector> etas, std::span<const double> weights, double C,
                    double lambda, double t0) {
  if (!(t0 > 0.0 && t0 <= 1.0)) throw ContractViolation("t0 must lie in (0, 1]");
  if (etas.size() != weights.size()) throw DimensionError("check_tsybakov: one weight per point");
  std::vector<double> margins;
  for (const auto& eta : etas) {
    const PointLabels l = point_labels(eta, {});
    margins.push_back(eta[static_cast<std::size_t>(l.bayes)] -
                      eta[static_cast<std::size_t>(l.second)]);
  }
  for (int k = 1; k <= 100; ++k) {
    const double t = k * t0 / 100.0;
    double cdf = 0.0;
    for (std::size_t i = 0; i < margins.size(); ++i) {
      if (margins[i] <= t) cdf += weights[i];
    }
    if (cdf > C * std::pow(t, lambda)) return false;
  }
  return true;
}

bool check_tsybakov(const TheoryScenario& s, double C, double lambda, double t0) {
  std::vector<Vector> etas;
  std::vector<double> weights;
  for (const auto& p : s.points) {
    etas.push_back(p.eta);
    weights.push_back(p.weight);
  }
  return check_tsybakov(etas, weights, C, lambda, t0);
}

Theorem2Report verify_theorem2(const TheoryScenario& s, const Theorem1Options& opts,
                               std::optional<TsybakovConstants> constants) {
  if (!constants) constants = s.tsybakov;
  if (!constants) throw ConfigError("theorem 2 needs Tsybakov constants (C, lambda, t0)");
  const auto js = j_points(s);
  if (js.empty()) throw ScenarioError("scenario has no point in J; nothing to analyse");

  std::vector<Vector> etas;
  std::vector<double> weights;
  double mass = 0.0;
  for (std::size_t i : js) mass += s.points[i].weight;
  for (std::size_t i : js) {
    etas.push_back(s.points[i].eta);
    weights.push_back(s.points[i].weight / mass);
  }
  if (!check_tsybakov(etas, weights, constants->C, constants->lambda, constants->t0)) {
    throw AssumptionViolation("points in J violate the Tsybakov condition for C = " +
                              format_double(constants->C) + ", lambda = " +
                              format_double(constants->lambda) + ", t0 = " +
                              format_double(constants->t0));
  }

  const double eps_prime = opts.phi_radius.value_or(s.epsilon_prime);
  Theorem2Report r;
  r.constants = *constants;
  r.bound = std::numeric_limits<double>::infinity();
  for (std::size_t i : js) {
    const auto& eta = s.points[i].eta;
    const PointLabels l = point_labels(eta, s.excluded);
    const double top = eta[static_cast<std::size_t>(l.bayes)];
    const double eb = l.b ? eta[static_cast<std::size_t>(*l.b)] : 0.0;
    const double es = eta[static_cast<std::size_t>(l.second)];
    const double inner = 4.0 * s.epsilon * eps_prime * (1.0 - es) / (top - eb);
    const double b = 1.0 - constants->C * std::pow(inner, constants->lambda);
    if (b < r.bound) {
      r.bound = b;
      r.worst_point = i;
    }
  }

  const Theorem1Report t1 = verify_theorem1(s, opts);
  r.empirical_consistency = t1.rhs;
  r.standard_error = t1.rhs_se;
  r.trials = t1.trials;
  r.holds = r.empirical_consistency >= r.bound;
  return r;
}

std::string to_json(const Theorem1Report& r) {
  ordered_json j;
  j["lhs"] = r.lhs;
  j["rhs"] = r.rhs;
  j["lhs_se"] = r.lhs_se;
  j["rhs_se"] = r.rhs_se;
  j["combined_se"] = r.combined_se;
  j["gap_in_se"] = finite_or_null(r.gap_in_se);
  j["holds"] = r.holds;
  j["trials"] = r.trials;
  j["rejected_f"] = r.rejected_f;
  j["rejected_phi"] = r.rejected_phi;
  j["j_size"] = r.j_size;
  j["j_mass"] = r.j_mass;
  j["epsilon_prime_bound"] = r.epsilon_prime_bound;
  return j.dump();
}

std::string to_json(const Theorem2Report& r) {
  ordered_json j;
  j["empirical_consistency"] = r.empirical_consistency;
  j["standard_error"] = r.standard_error;
  j["bound"] = r.bound;
  j["worst_point"] = r.worst_point;
  j["holds"] = r.holds;
  j["trials"] = r.trials;
  j["C"] = r.constants.C;
  j["lambda"] = r.constants.lambda;
  j["t0"] = r.constants.t0;
  return j.dump();
}

}  // namespace reduxpll
