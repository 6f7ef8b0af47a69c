#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nef {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions disagree, or a dimension is zero where one is required.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A numeric parameter lies outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Iterates left the finite reals (divergence).
class NumericalError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// DenseVector
// ---------------------------------------------------------------------------

/// Dense d-dimensional vector of doubles. Holds iterates, gradients,
/// error-feedback memories and compressed messages.
class DenseVector {
 public:
  DenseVector() = default;

  /// Zero vector of dimension `dim`.
  explicit DenseVector(std::size_t dim) : values_(dim, 0.0) {
    if (dim == 0) throw DimensionError("DenseVector: dimension must be positive");
  }

  DenseVector(std::size_t dim, double fill) : values_(dim, fill) {
    if (dim == 0) throw DimensionError("DenseVector: dimension must be positive");
  }

  DenseVector(std::initializer_list<double> values) : values_(values) {}

  explicit DenseVector(std::vector<double> values) : values_(std::move(values)) {}

  [[nodiscard]] std::size_t dim() const noexcept { return values_.size(); }
  [[nodiscard]] bool empty() const noexcept { return values_.empty(); }

  double& operator[](std::size_t j) noexcept { return values_[j]; }
  double operator[](std::size_t j) const noexcept { return values_[j]; }

  [[nodiscard]] std::span<double> values() noexcept { return values_; }
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  [[nodiscard]] bool all_finite() const noexcept {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  DenseVector& operator+=(const DenseVector& rhs) {
    check_same_dim(rhs, "operator+=");
    for (std::size_t j = 0; j < values_.size(); ++j) values_[j] += rhs.values_[j];
    return *this;
  }

  DenseVector& operator-=(const DenseVector& rhs) {
    check_same_dim(rhs, "operator-=");
    for (std::size_t j = 0; j < values_.size(); ++j) values_[j] -= rhs.values_[j];
    return *this;
  }

  DenseVector& operator*=(double s) noexcept {
    for (double& v : values_) v *= s;
    return *this;
  }

  /// this += s * x
  DenseVector& axpy(double s, const DenseVector& x) {
    check_same_dim(x, "axpy");
    for (std::size_t j = 0; j < values_.size(); ++j) values_[j] += s * x.values_[j];
    return *this;
  }

  friend bool operator==(const DenseVector&, const DenseVector&) = default;

  void check_same_dim(const DenseVector& other, const char* what) const {
    if (other.dim() != dim())
      throw DimensionError(std::string(what) + ": dimension mismatch (" +
                           std::to_string(dim()) + " vs " + std::to_string(other.dim()) + ")");
  }

 private:
  std::vector<double> values_;
};

inline DenseVector operator+(DenseVector a, const DenseVector& b) { return a += b; }
inline DenseVector operator-(DenseVector a, const DenseVector& b) { return a -= b; }
inline DenseVector operator*(double s, DenseVector a) { return a *= s; }

inline double dot(const DenseVector& a, const DenseVector& b) {
  a.check_same_dim(b, "dot");
  double s = 0.0;
  for (std::size_t j = 0; j < a.dim(); ++j) s += a[j] * b[j];
  return s;
}

inline double squared_norm(const DenseVector& v) noexcept {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

/// Euclidean norm.
inline double norm2(const DenseVector& v) noexcept { return std::sqrt(squared_norm(v)); }

/// Arithmetic mean of equally sized vectors, accumulated in index order.
/// Every "average over clients" in the library goes through here so that
/// identical inputs give bitwise identical averages.
inline DenseVector mean_of(std::span<const DenseVector> vs) {
  if (vs.empty()) throw DimensionError("mean_of: no vectors");
  DenseVector acc = vs.front();
  for (std::size_t i = 1; i < vs.size(); ++i) acc += vs[i];
  if (vs.size() > 1) acc *= 1.0 / static_cast<double>(vs.size());
  return acc;
}

// ---------------------------------------------------------------------------
// Reproducible randomness
// ---------------------------------------------------------------------------

namespace detail {
inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

inline constexpr std::uint64_t splitmix64_finalize(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Counter-based random stream. Draw n is splitmix64(seed + (n+1)*golden),
/// i.e. the SplitMix64 sequence, so a (seed, counter) pair fully determines
/// every output on every platform. Uniforms use the top 53 bits; Gaussians
/// use the cosine branch of Box-Muller on two consecutive uniforms.
///
/// Streams are single-owner. Parallel callers take child() streams.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) noexcept : seed_(seed) {}

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return detail::splitmix64_finalize(seed_ + counter_ * detail::kGolden);
  }

  /// Uniform on [0, 1).
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, bound). bound must be positive.
  std::uint64_t uniform_below(std::uint64_t bound) noexcept {
    // multiply-high reduction; bias below 2^-64 * bound
    __extension__ using u128 = unsigned __int128;
    return static_cast<std::uint64_t>((static_cast<u128>(next_u64()) * bound) >> 64);
  }

  double gaussian(double mean, double stddev) noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    return mean + stddev * z;
  }

  /// Independent stream derived from (seed, index). Does not advance *this.
  [[nodiscard]] RngStream child(std::uint64_t index) const noexcept {
    const std::uint64_t mixed =
        detail::splitmix64_finalize(seed_ ^ detail::splitmix64_finalize(index + detail::kGolden));
    return RngStream(mixed);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

inline RngStream seeded_rng(std::uint64_t seed) noexcept { return RngStream(seed); }

/// n independent N(mean, stddev^2) draws.
inline DenseVector sample_gaussian(RngStream& rng, std::size_t n, double mean, double stddev) {
  if (n == 0) throw DimensionError("sample_gaussian: empty dimension");
  if (!(stddev >= 0.0)) throw ParameterError("sample_gaussian: stddev must be >= 0");
  DenseVector out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = rng.gaussian(mean, stddev);
  return out;
}

}  // namespace nef
