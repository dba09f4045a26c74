// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "reduxpll/dataset.hpp"
#include "reduxpll/errors.hpp"
#include "reduxpll/random.hpp"

namespace reduxpll {

GaussianMixture::GaussianMixture(int num_classes, int dim, double separation)
    : num_classes_(num_classes), dim_(dim), separation_(separation) {
  if (num_classes < 3 || num_classes > kMaxLabels) {
    throw ConfigError("mixture needs between 3 and 64 classes");
  }
  if (dim < 1) throw ConfigError("mixture dimension must be positive");
  if (!(separation > 0.0) || !std::isfinite(separation)) {
    throw ConfigError("mixture separation must be positive and finite");
  }
  means_ = Matrix(static_cast<std::size_t>(num_classes), static_cast<std::size_t>(dim));
  for (int k = 0; k < num_classes; ++k) {
    const auto r = static_cast<std::size_t>(k);
    if (dim == 1) {
      means_(r, 0) = separation * (k - 0.5 * (num_classes - 1));
    } else {
      const double angle = 2.0 * std::numbers::pi * k / num_classes;
      means_(r, 0) = separation * std::cos(angle);
      means_(r, 1) = separation * std::sin(angle);
    }
  }
}

Vector GaussianMixture::posterior(std::span<const double> x) const {
  if (x.size() != static_cast<std::size_t>(dim_)) throw DimensionError("posterior: wrong dimension");
  Vector logp(static_cast<std::size_t>(num_classes_));
  for (std::size_t k = 0; k < logp.size(); ++k) {
    const auto m = means_.row(k);
    double d2 = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) d2 += (x[d] - m[d]) * (x[d] - m[d]);
    logp[k] = -0.5 * d2;
  }
  const double mx = *std::max_element(logp.begin(), logp.end());
  double sum = 0.0;
  for (double& v : logp) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : logp) v /= sum;
  return logp;
}

PllDataset gen_gaussian_mixture(int num_classes, int dim, std::size_t n, double separation,
                                std::uint64_t seed) {
  const GaussianMixture mixture(num_classes, dim, separation);
  if (n < static_cast<std::size_t>(num_classes)) {
    throw ConfigError("need at least as many instances as classes");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, num_classes - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  PllDataset ds;
  ds.num_classes = num_classes;
  ds.features = Matrix(n, static_cast<std::size_t>(dim));
  ds.posterior = Matrix(n, static_cast<std::size_t>(num_classes));
  std::vector<int> labels(n);
  ds.candidates.resize(n);

  for (std::size_t i = 0; i < n; ++i) {
    const auto component = static_cast<std::size_t>(pick(rng));
    auto x = ds.features.row(i);
    const auto mean = mixture.means().row(component);
    for (std::size_t d = 0; d < x.size(); ++d) x[d] = mean[d] + noise(rng);
    const Vector eta = mixture.posterior(x);
    std::copy(eta.begin(), eta.end(), ds.posterior->row(i).begin());

    const double u = unit(rng);
    double acc = 0.0;
    int y = num_classes - 1;
    for (int k = 0; k < num_classes; ++k) {
      acc += eta[static_cast<std::size_t>(k)];
      if (u < acc) {
        y = k;
        break;
      }
    }
    labels[i] = y;
    ds.candidates[i] = LabelSet::of({y});
  }
  ds.true_labels = std::move(labels);
  return ds;
}

PllDataset corrupt_instance_dependent(const PllDataset& ds, double ambiguity, std::uint64_t seed) {
  if (!ds.posterior) throw ConfigError("instance-dependent corruption needs exact posteriors");
  if (!ds.true_labels) throw ConfigError("instance-dependent corruption needs true labels");
  if (!(ambiguity > 0.0 && ambiguity <= 1.0)) throw ConfigError("ambiguity must lie in (0, 1]");
  if (ds.num_classes < 3) throw ConfigError("corruption needs at least 3 classes");

  PllDataset out = ds;
  const int c = ds.num_classes;
  const LabelSet all = LabelSet::full(c);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int y = (*ds.true_labels)[i];
    const auto eta = ds.posterior->row(i);
    auto rng = stream_rng(seed, i);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    int most = -1;
    int least = -1;
    for (int j = 0; j < c; ++j) {
      if (j == y) continue;
      const auto uj = static_cast<std::size_t>(j);
      if (most < 0 || eta[uj] > eta[static_cast<std::size_t>(most)]) most = j;
      if (least < 0 || eta[uj] < eta[static_cast<std::size_t>(least)]) least = j;
    }
    const double top = eta[static_cast<std::size_t>(most)];

    LabelSet s = LabelSet::of({y});
    if (top > 0.0) {
      for (int j = 0; j < c; ++j) {
        if (j == y) continue;
        if (unit(rng) < ambiguity * eta[static_cast<std::size_t>(j)] / top) s.insert(j);
      }
    } else {
      // Every incorrect posterior underflowed: nothing flips, and the forced
      // label is drawn among the tied incorrect labels.
      std::uniform_int_distribution<int> pick(0, c - 2);
      const int k = pick(rng);
      most = k < y ? k : k + 1;
    }
    if (s.size() == 1) s.insert(most);
    if (s == all) s.erase(least);
    out.candidates[i] = s;
  }
  return out;
}

}  // namespace reduxpll
