#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "nef/core.hpp"

namespace nef {

/// Keep the k largest-magnitude coordinates; ties go to the lower index.
struct TopK {
  std::size_t k = 1;
};

/// Keep k uniformly chosen coordinates, values unchanged. E||C(v)-v||^2 = (1-k/d)||v||^2.
struct RandK {
  std::size_t k = 1;
};

struct Identity {};

/// Contractive compressor descriptor plus the wire cost of one value.
struct CompressorKind {
  std::variant<TopK, RandK, Identity> variant = Identity{};
  int value_bits = 32;

  static CompressorKind top_k(std::size_t k, int value_bits = 32) { return {TopK{k}, value_bits}; }
  static CompressorKind rand_k(std::size_t k, int value_bits = 32) { return {RandK{k}, value_bits}; }
  static CompressorKind identity(int value_bits = 32) { return {Identity{}, value_bits}; }

  [[nodiscard]] bool is_identity() const noexcept { return std::holds_alternative<Identity>(variant); }

  /// Number of retained coordinates at dimension d.
  [[nodiscard]] std::size_t retained(std::size_t d) const {
    if (const auto* t = std::get_if<TopK>(&variant)) return t->k;
    if (const auto* r = std::get_if<RandK>(&variant)) return r->k;
    return d;
  }

  [[nodiscard]] std::string name() const {
    if (const auto* t = std::get_if<TopK>(&variant)) return "top_k(" + std::to_string(t->k) + ")";
    if (const auto* r = std::get_if<RandK>(&variant)) return "rand_k(" + std::to_string(r->k) + ")";
    return "identity";
  }

  /// Throws ParameterError unless 1 <= k <= d.
  void validate(std::size_t d) const {
    if (d == 0) throw DimensionError("compressor: dimension must be positive");
    if (value_bits <= 0) throw ParameterError("compressor: value_bits must be positive");
    if (is_identity()) return;
    const std::size_t k = retained(d);
    if (k == 0 || k > d)
      throw ParameterError("compressor: k=" + std::to_string(k) + " must lie in [1, d=" +
                           std::to_string(d) + "]");
  }
};

/// Contraction factor: k/d for top-k and rand-k, 1 for identity.
inline double alpha_of(const CompressorKind& kind, std::size_t d) {
  kind.validate(d);
  if (kind.is_identity()) return 1.0;
  return static_cast<double>(kind.retained(d)) / static_cast<double>(d);
}

/// Bits for one message: k*(value_bits + ceil(log2 d)) for sparsifiers,
/// d*value_bits for identity.
inline std::int64_t payload_bits(const CompressorKind& kind, std::size_t d) {
  kind.validate(d);
  if (kind.is_identity()) return static_cast<std::int64_t>(d) * kind.value_bits;
  const auto index_bits = static_cast<std::int64_t>(std::bit_width(d - 1));  // ceil(log2 d)
  return static_cast<std::int64_t>(kind.retained(d)) * (kind.value_bits + index_bits);
}

namespace detail {

inline std::vector<std::size_t> top_k_indices(const DenseVector& v, std::size_t k) {
  std::vector<std::size_t> idx(v.dim());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto larger = [&v](std::size_t a, std::size_t b) {
    const double ma = std::abs(v[a]);
    const double mb = std::abs(v[b]);
    return ma > mb || (ma == mb && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), larger);
  idx.resize(k);
  return idx;
}

// Partial Fisher-Yates: first k entries of a uniform random permutation.
inline std::vector<std::size_t> rand_k_indices(std::size_t d, std::size_t k, RngStream& rng) {
  std::vector<std::size_t> idx(d);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t pick = j + static_cast<std::size_t>(rng.uniform_below(d - j));
    std::swap(idx[j], idx[pick]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace detail

/// Applies the compressor. Top-k and identity ignore `rng`.
inline DenseVector compress(const CompressorKind& kind, const DenseVector& v, RngStream& rng) {
  const std::size_t d = v.dim();
  kind.validate(d);
  if (kind.is_identity()) return v;

  DenseVector out(d);
  if (const auto* t = std::get_if<TopK>(&kind.variant)) {
    if (t->k == d) return v;
    for (std::size_t j : detail::top_k_indices(v, t->k)) out[j] = v[j];
    return out;
  }
  const auto& r = std::get<RandK>(kind.variant);
  for (std::size_t j : detail::rand_k_indices(d, r.k, rng)) out[j] = v[j];
  return out;
}

}  // namespace nef
