#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nef/core.hpp"
#include "nef/dataset.hpp"

namespace nef {

/// Smoothness constants of an objective.
///   L      classical smoothness of f (0 when not yet known)
///   L_hat  classical smoothness of each f_i
///   L0, L1 generalized smoothness pair shared by every f_i
///   D      box radius behind the polynomial's L, when used
struct SmoothnessConstants {
  double L = 0.0;
  std::vector<double> L_hat;
  double L0 = 0.0;
  double L1 = 0.0;
  std::optional<double> D;

  /// sqrt(mean L_hat_i^2).
  [[nodiscard]] double L_tilde() const {
    if (L_hat.empty()) return L;
    double s = 0.0;
    for (double l : L_hat) s += l * l;
    return std::sqrt(s / static_cast<double>(L_hat.size()));
  }
};

/// How a client draws a stochastic gradient.
struct SampleSpec {
  std::size_t batch = 1;  // rows per draw (logistic)
  double sigma = 0.0;     // additive noise level (polynomial)
};

/// f(x) = (1/n) sum_i f_i(x) over n clients.
class Problem {
 public:
  virtual ~Problem() = default;

  [[nodiscard]] virtual std::size_t dim() const noexcept = 0;
  [[nodiscard]] virtual std::size_t num_clients() const noexcept = 0;
  [[nodiscard]] virtual double client_value(std::size_t i, const DenseVector& x) const = 0;
  [[nodiscard]] virtual DenseVector client_grad(std::size_t i, const DenseVector& x) const = 0;
  /// Unbiased estimate of client_grad(i, x).
  [[nodiscard]] virtual DenseVector stochastic_grad(std::size_t i, const DenseVector& x,
                                                    const SampleSpec& spec, RngStream& rng) const = 0;
  [[nodiscard]] virtual SmoothnessConstants constants() const = 0;
  /// inf f, when known in closed form.
  [[nodiscard]] virtual std::optional<double> f_inf() const { return std::nullopt; }
  /// inf f_i, when known in closed form.
  [[nodiscard]] virtual std::optional<double> client_f_inf(std::size_t) const { return std::nullopt; }

  [[nodiscard]] double value(const DenseVector& x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < num_clients(); ++i) s += client_value(i, x);
    return s / static_cast<double>(num_clients());
  }

  [[nodiscard]] DenseVector grad(const DenseVector& x) const {
    return mean_of(client_grads(x));
  }

  [[nodiscard]] std::vector<DenseVector> client_grads(const DenseVector& x) const {
    std::vector<DenseVector> gs;
    gs.reserve(num_clients());
    for (std::size_t i = 0; i < num_clients(); ++i) gs.push_back(client_grad(i, x));
    return gs;
  }

 protected:
  void check_point(const DenseVector& x) const {
    if (x.dim() != dim())
      throw DimensionError("problem: point has dimension " + std::to_string(x.dim()) +
                           ", expected " + std::to_string(dim()));
  }
  void check_client(std::size_t i) const {
    if (i >= num_clients())
      throw ParameterError("problem: unknown client " + std::to_string(i) + " (have " +
                           std::to_string(num_clients()) + ")");
  }
};

namespace detail {

// lambda * sum x_j^2 / (1 + x_j^2)
inline double bump_regularizer(double lambda, const DenseVector& x) {
  double s = 0.0;
  for (double v : x) s += v * v / (1.0 + v * v);
  return lambda * s;
}

// entry j: 2 lambda x_j / (1 + x_j^2)^2
inline void add_bump_regularizer_grad(double lambda, const DenseVector& x, DenseVector& g) {
  for (std::size_t j = 0; j < x.dim(); ++j) {
    const double q = 1.0 + x[j] * x[j];
    g[j] += 2.0 * lambda * x[j] / (q * q);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Polynomial testbed
// ---------------------------------------------------------------------------

/// f(x) = sum_j a_j x_j^4 + lambda sum_j x_j^2 / (1 + x_j^2).
/// Every client holds the same f, so f_inf = f_i_inf = 0.
class PolynomialProblem final : public Problem {
 public:
  PolynomialProblem(double lambda, std::vector<double> coeffs, std::size_t n_clients = 1)
      : lambda_(lambda), coeffs_(std::move(coeffs)), n_clients_(n_clients) {
    if (coeffs_.empty()) throw DimensionError("polynomial: dimension must be positive");
    if (!(lambda_ > 0.0)) throw ParameterError("polynomial: lambda must be positive");
    for (double a : coeffs_)
      if (!(a > 0.0)) throw ParameterError("polynomial: coefficients must be positive");
    if (n_clients_ == 0) throw ParameterError("polynomial: need at least one client");
  }

  [[nodiscard]] std::size_t dim() const noexcept override { return coeffs_.size(); }
  [[nodiscard]] std::size_t num_clients() const noexcept override { return n_clients_; }
  [[nodiscard]] double lambda() const noexcept { return lambda_; }
  [[nodiscard]] const std::vector<double>& coeffs() const noexcept { return coeffs_; }

  [[nodiscard]] double poly_value(const DenseVector& x) const {
    check_point(x);
    double quartic = 0.0;
    for (std::size_t j = 0; j < dim(); ++j) {
      const double x2 = x[j] * x[j];
      quartic += coeffs_[j] * x2 * x2;
    }
    return quartic + detail::bump_regularizer(lambda_, x);
  }

  [[nodiscard]] DenseVector poly_grad(const DenseVector& x) const {
    check_point(x);
    DenseVector g(dim());
    for (std::size_t j = 0; j < dim(); ++j) g[j] = 4.0 * coeffs_[j] * x[j] * x[j] * x[j];
    detail::add_bump_regularizer_grad(lambda_, x, g);
    return g;
  }

  [[nodiscard]] double client_value(std::size_t i, const DenseVector& x) const override {
    check_client(i);
    return poly_value(x);
  }
  [[nodiscard]] DenseVector client_grad(std::size_t i, const DenseVector& x) const override {
    check_client(i);
    return poly_grad(x);
  }

  /// Exact gradient plus i.i.d. N(0, sigma^2/d) noise per coordinate.
  [[nodiscard]] DenseVector stochastic_grad(std::size_t i, const DenseVector& x, const SampleSpec& spec,
                                            RngStream& rng) const override {
    check_client(i);
    if (spec.batch == 0) throw ParameterError("stochastic_grad: batch must be >= 1");
    if (!(spec.sigma >= 0.0)) throw ParameterError("stochastic_grad: sigma must be >= 0");
    DenseVector g = poly_grad(x);
    if (spec.sigma == 0.0) return g;
    const double sd = spec.sigma / std::sqrt(static_cast<double>(dim()));
    for (double& v : g) v += rng.gaussian(0.0, sd);
    return g;
  }

  /// L0, L1 from construction; L and L_hat filled once D is set.
  [[nodiscard]] SmoothnessConstants constants() const override { return constants_; }
  [[nodiscard]] std::optional<double> f_inf() const override { return 0.0; }
  [[nodiscard]] std::optional<double> client_f_inf(std::size_t) const override { return 0.0; }

  void set_generalized_constants(double L0, double L1) {
    constants_.L0 = L0;
    constants_.L1 = L1;
  }

  /// Classical smoothness on the box |x_j| <= D: lambda sqrt(d) D^2 / 2 + 2 lambda.
  [[nodiscard]] double L_from_D(double D) const {
    if (!(D > 0.0)) throw ParameterError("poly_L_from_D: D must be positive");
    return lambda_ * std::sqrt(static_cast<double>(dim())) * D * D / 2.0 + 2.0 * lambda_;
  }

  void set_box_radius(double D) {
    constants_.L = L_from_D(D);
    constants_.D = D;
    constants_.L_hat.assign(n_clients_, constants_.L);
  }

 private:
  double lambda_;
  std::vector<double> coeffs_;
  std::size_t n_clients_;
  SmoothnessConstants constants_;
};

/// Result of solving the polynomial's parameters from a target (L0, L1).
struct PolynomialParams {
  double lambda;
  std::vector<double> coeffs;
  SmoothnessConstants constants;
};

/// Picks lambda so that L0 = 9 lambda d^2 / (2 L1^2) + 2 lambda equals
/// `L0_target`, with a_j = lambda / 24 (the nonconvex choice).
inline PolynomialParams poly_constants(std::size_t d, double L1, double L0_target) {
  if (d == 0) throw ParameterError("poly_constants: d must be positive");
  if (!(L1 > 0.0) || !(L0_target > 0.0))
    throw ParameterError("poly_constants: L1 and L0 must be positive");
  const double dd = static_cast<double>(d);
  const double lambda = L0_target / (9.0 * dd * dd / (2.0 * L1 * L1) + 2.0);
  PolynomialParams out{lambda, std::vector<double>(d, lambda / 24.0), {}};
  out.constants.L0 = L0_target;
  out.constants.L1 = L1;
  return out;
}

inline PolynomialProblem make_polynomial(std::size_t d, double L1, double L0_target, std::size_t n_clients = 1) {
  auto params = poly_constants(d, L1, L0_target);
  PolynomialProblem p(params.lambda, std::move(params.coeffs), n_clients);
  p.set_generalized_constants(params.constants.L0, params.constants.L1);
  return p;
}

inline double poly_L_from_D(const PolynomialProblem& p, double D) { return p.L_from_D(D); }

// ---------------------------------------------------------------------------
// Logistic regression with the nonconvex bump regularizer
// ---------------------------------------------------------------------------

/// Contiguous half-open row range owned by one client.
struct Shard {
  std::size_t begin = 0;
  std::size_t end = 0;
  [[nodiscard]] std::size_t size() const noexcept { return end - begin; }
};

/// Contiguous, nearly equal partition of n rows; the first n % clients
/// shards get one extra row.
inline std::vector<Shard> shard(std::size_t n_rows, std::size_t n_clients) {
  if (n_clients == 0) throw ParameterError("shard: need at least one client");
  if (n_clients > n_rows)
    throw ParameterError("shard: " + std::to_string(n_clients) + " clients exceed " +
                         std::to_string(n_rows) + " rows");
  std::vector<Shard> out;
  out.reserve(n_clients);
  const std::size_t base = n_rows / n_clients;
  const std::size_t extra = n_rows % n_clients;
  std::size_t start = 0;
  for (std::size_t c = 0; c < n_clients; ++c) {
    const std::size_t len = base + (c < extra ? 1 : 0);
    out.push_back({start, start + len});
    start += len;
  }
  return out;
}

/// Client i minimizes the mean over its rows r of
///   log(1 + exp(-b_r a_r^T x)) + lambda sum_j x_j^2 / (1 + x_j^2).
class LogisticProblem final : public Problem {
 public:
  /// n_clients = 0 assigns one row per client.
  LogisticProblem(const Dataset& ds, double lambda, std::size_t n_clients = 0)
      : lambda_(lambda), d_(ds.dim), n_(ds.size()) {
    if (n_ == 0 || d_ == 0) throw ParameterError("logistic: empty dataset");
    if (!(lambda_ >= 0.0)) throw ParameterError("logistic: lambda must be >= 0");
    features_.assign(n_ * d_, 0.0);
    labels_.reserve(n_);
    for (std::size_t r = 0; r < n_; ++r) {
      const int b = ds.labels[r];
      if (b != -1 && b != 1) throw ParameterError("logistic: labels must be -1 or +1");
      labels_.push_back(static_cast<double>(b));
      for (const Feature& f : ds.rows[r]) {
        if (f.index == 0 || f.index > d_) throw DimensionError("logistic: feature index out of range");
        features_[r * d_ + (f.index - 1)] = f.value;
      }
    }
    shards_ = shard(n_, n_clients == 0 ? n_ : n_clients);
  }

  [[nodiscard]] std::size_t dim() const noexcept override { return d_; }
  [[nodiscard]] std::size_t num_clients() const noexcept override { return shards_.size(); }
  [[nodiscard]] std::size_t num_rows() const noexcept { return n_; }
  [[nodiscard]] double lambda() const noexcept { return lambda_; }
  [[nodiscard]] const std::vector<Shard>& shards() const noexcept { return shards_; }

  [[nodiscard]] std::span<const double> row(std::size_t r) const {
    return std::span<const double>(features_).subspan(r * d_, d_);
  }
  [[nodiscard]] double label(std::size_t r) const { return labels_.at(r); }

  [[nodiscard]] double client_value(std::size_t i, const DenseVector& x) const override {
    check_client(i);
    check_point(x);
    const Shard& s = shards_[i];
    double loss = 0.0;
    for (std::size_t r = s.begin; r < s.end; ++r) loss += row_loss(r, x);
    return loss / static_cast<double>(s.size()) + detail::bump_regularizer(lambda_, x);
  }

  [[nodiscard]] DenseVector client_grad(std::size_t i, const DenseVector& x) const override {
    check_client(i);
    check_point(x);
    const Shard& s = shards_[i];
    DenseVector g(d_);
    for (std::size_t r = s.begin; r < s.end; ++r) add_row_grad(r, x, 1.0, g);
    g *= 1.0 / static_cast<double>(s.size());
    detail::add_bump_regularizer_grad(lambda_, x, g);
    return g;
  }

  /// Mean row gradient over `batch` rows drawn without replacement from the
  /// client's shard, plus the regularizer gradient.
  [[nodiscard]] DenseVector stochastic_grad(std::size_t i, const DenseVector& x, const SampleSpec& spec,
                                            RngStream& rng) const override {
    check_client(i);
    check_point(x);
    const Shard& s = shards_[i];
    if (spec.batch == 0) throw ParameterError("stochastic_grad: batch must be >= 1");
    if (spec.batch > s.size())
      throw ParameterError("stochastic_grad: batch " + std::to_string(spec.batch) +
                           " exceeds shard size " + std::to_string(s.size()));
    if (spec.batch == s.size()) return client_grad(i, x);

    std::vector<std::size_t> rows(s.size());
    std::iota(rows.begin(), rows.end(), s.begin);
    DenseVector g(d_);
    for (std::size_t t = 0; t < spec.batch; ++t) {
      const std::size_t pick = t + static_cast<std::size_t>(rng.uniform_below(rows.size() - t));
      std::swap(rows[t], rows[pick]);
      add_row_grad(rows[t], x, 1.0, g);
    }
    g *= 1.0 / static_cast<double>(spec.batch);
    detail::add_bump_regularizer_grad(lambda_, x, g);
    return g;
  }

  /// L = ||A||^2/(4n) + 2 lambda, L_hat_i = ||A_i||^2/(4 |S_i|) + 2 lambda
  /// (= ||a_i||^2/4 + 2 lambda for one row), L1 = max ||a_r||,
  /// L0 = 2 lambda + lambda sqrt(d) max ||a_r||.
  [[nodiscard]] SmoothnessConstants constants() const override {
    SmoothnessConstants c;
    c.L = spectral_norm_sq(0, n_) / (4.0 * static_cast<double>(n_)) + 2.0 * lambda_;
    c.L_hat.reserve(shards_.size());
    for (const Shard& s : shards_)
      c.L_hat.push_back(spectral_norm_sq(s.begin, s.end) / (4.0 * static_cast<double>(s.size())) +
                        2.0 * lambda_);
    double max_row = 0.0;
    for (std::size_t r = 0; r < n_; ++r) {
      double sq = 0.0;
      for (double v : row(r)) sq += v * v;
      max_row = std::max(max_row, std::sqrt(sq));
    }
    c.L1 = max_row;
    c.L0 = 2.0 * lambda_ + lambda_ * std::sqrt(static_cast<double>(d_)) * max_row;
    return c;
  }

 private:
  // log(1 + exp(-z)) with z = b a^T x, evaluated without overflow.
  [[nodiscard]] double row_loss(std::size_t r, const DenseVector& x) const {
    const double z = margin(r, x);
    return z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
  }

  [[nodiscard]] double margin(std::size_t r, const DenseVector& x) const {
    const auto a = row(r);
    double z = 0.0;
    for (std::size_t j = 0; j < d_; ++j) z += a[j] * x[j];
    return labels_[r] * z;
  }

  // g += weight * (-sigmoid(-z) b a)
  void add_row_grad(std::size_t r, const DenseVector& x, double weight, DenseVector& g) const {
    constexpr double kClamp = 35.0;
    const double z = std::clamp(margin(r, x), -kClamp, kClamp);
    const double s = 1.0 / (1.0 + std::exp(z));  // exp(-z)/(1+exp(-z))
    const double coef = -weight * s * labels_[r];
    const auto a = row(r);
    for (std::size_t j = 0; j < d_; ++j) g[j] += coef * a[j];
  }

  // Largest eigenvalue of A_S^T A_S for rows [begin, end).
  [[nodiscard]] double spectral_norm_sq(std::size_t begin, std::size_t end) const {
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMajor> block(features_.data() + begin * d_, static_cast<Eigen::Index>(end - begin),
                                     static_cast<Eigen::Index>(d_));
    const Eigen::MatrixXd gram = block.transpose() * block;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram, Eigen::EigenvaluesOnly);
    return std::max(0.0, solver.eigenvalues().maxCoeff());
  }

  double lambda_;
  std::size_t d_;
  std::size_t n_;
  std::vector<double> features_;  // row-major n x d
  std::vector<double> labels_;
  std::vector<Shard> shards_;
};

}  // namespace nef
