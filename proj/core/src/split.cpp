// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "reduxpll/dataset.hpp"
#include "reduxpll/errors.hpp"

namespace reduxpll {

namespace {

// Largest-remainder apportionment of `total` units proportionally to
// `shares`, never exceeding `capacity`.
std::vector<std::size_t> apportion(const std::vector<double>& shares,
                                   const std::vector<std::size_t>& capacity, std::size_t total) {
  const double share_sum = std::accumulate(shares.begin(), shares.end(), 0.0);
  std::vector<std::size_t> out(shares.size(), 0);
  std::vector<double> frac(shares.size(), 0.0);
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < shares.size(); ++k) {
    const double exact = share_sum > 0.0 ? total * shares[k] / share_sum : 0.0;
    out[k] = std::min(capacity[k], static_cast<std::size_t>(std::floor(exact)));
    frac[k] = exact - std::floor(exact);
    assigned += out[k];
  }
  std::vector<std::size_t> order(shares.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  // Largest remainders first; later rounds only fill slack left by capacity caps.
  while (assigned < total) {
    bool progressed = false;
    for (std::size_t k : order) {
      if (assigned == total) break;
      if (out[k] < capacity[k]) {
        ++out[k];
        ++assigned;
        progressed = true;
      }
    }
    if (!progressed) throw ConfigError("split: not enough instances for the requested sizes");
  }
  return out;
}

}  // namespace

SplitIndices split_indices(const PllDataset& ds, const SplitSpec& spec) {
  if (!(spec.train > 0.0 && spec.val > 0.0 && spec.test > 0.0)) {
    throw ConfigError("split fractions must all be positive");
  }
  if (std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  const std::size_t n = ds.size();
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.val));
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.test));
  if (n_val == 0 || n_test == 0 || n_val + n_test >= n) {
    throw ConfigError("split: dataset of " + std::to_string(n) + " rows is too small");
  }

  std::mt19937_64 rng(spec.seed);
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) {
    groups[ds.true_labels ? (*ds.true_labels)[i] : 0].push_back(i);
  }
  for (auto& [label, idx] : groups) std::shuffle(idx.begin(), idx.end(), rng);

  std::vector<double> sizes;
  std::vector<std::size_t> capacity;
  for (const auto& [label, idx] : groups) {
    sizes.push_back(static_cast<double>(idx.size()));
    capacity.push_back(idx.size());
  }
  const auto val_quota = apportion(sizes, capacity, n_val);
  for (std::size_t k = 0; k < capacity.size(); ++k) capacity[k] -= val_quota[k];
  const auto test_quota = apportion(sizes, capacity, n_test);

  SplitIndices out;
  std::size_t k = 0;
  for (const auto& [label, idx] : groups) {
    const auto v_end = static_cast<std::ptrdiff_t>(val_quota[k]);
    const auto t_end = v_end + static_cast<std::ptrdiff_t>(test_quota[k]);
    out.val.insert(out.val.end(), idx.begin(), idx.begin() + v_end);
    out.test.insert(out.test.end(), idx.begin() + v_end, idx.begin() + t_end);
    out.train.insert(out.train.end(), idx.begin() + t_end, idx.end());
    ++k;
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

DataSplits split(const PllDataset& ds, const SplitSpec& spec) {
  const SplitIndices idx = split_indices(ds, spec);
  return {subset(ds, idx.train), subset(ds, idx.val), subset(ds, idx.test)};
}

}  // namespace reduxpll
