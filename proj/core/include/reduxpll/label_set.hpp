// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace reduxpll {

inline constexpr int kMaxLabels = 64;

/// Candidate label set over at most 64 labels, stored as a bitmask.
class LabelSet {
 public:
  constexpr LabelSet() noexcept = default;
  constexpr explicit LabelSet(std::uint64_t bits) noexcept : bits_(bits) {}

  static LabelSet of(std::initializer_list<int> labels);
  static LabelSet full(int num_labels);

  constexpr bool contains(int label) const noexcept {
    return label >= 0 && label < kMaxLabels && ((bits_ >> label) & 1u) != 0;
  }
  constexpr void insert(int label) noexcept { bits_ |= std::uint64_t{1} << label; }
  constexpr void erase(int label) noexcept { bits_ &= ~(std::uint64_t{1} << label); }
  constexpr LabelSet without(int label) const noexcept {
    LabelSet s = *this;
    s.erase(label);
    return s;
  }

  constexpr int size() const noexcept { return std::popcount(bits_); }
  constexpr bool empty() const noexcept { return bits_ == 0; }
  constexpr std::uint64_t bits() const noexcept { return bits_; }

  std::vector<int> labels() const;

  /// Comma-joined ascending label indices, e.g. "0,2,3".
  std::string to_string() const;
  /// Inverse of to_string; throws ParseError on bad tokens.
  static LabelSet parse(const std::string& text);

  friend constexpr bool operator==(LabelSet, LabelSet) noexcept = default;

 private:
  std::uint64_t bits_ = 0;
};

}  // namespace reduxpll
