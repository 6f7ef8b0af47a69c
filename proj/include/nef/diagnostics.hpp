#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nef/algorithms.hpp"
#include "nef/problems.hpp"
#include "nef/schedules.hpp"

namespace nef {

/// Worst observed slack (rhs - lhs) of one inequality over many evaluations.
struct InequalityCheck {
  std::string name;
  double worst_margin = std::numeric_limits<double>::infinity();
  std::int64_t worst_at = -1;
  std::size_t evaluations = 0;

  void record(double lhs, double rhs, std::int64_t at) {
    ++evaluations;
    const double margin = rhs - lhs;
    if (margin < worst_margin || std::isnan(margin)) {
      worst_margin = margin;
      worst_at = at;
    }
  }
  [[nodiscard]] bool passed(double tol) const { return evaluations > 0 && worst_margin >= -tol; }
};

/// (1/n) sum ||grad f_i(x)|| <= 8 L1 (f(x) - f_inf) + 8 L1 delta_inf + L0/L1.
inline void check_grad_norm_bound(InequalityCheck& c, const Problem& p, const DenseVector& x,
                                  std::span<const DenseVector> client_grads, double L0, double L1,
                                  double f_inf, double delta_inf, std::int64_t at) {
  double lhs = 0.0;
  for (const DenseVector& g : client_grads) lhs += norm2(g);
  lhs /= static_cast<double>(client_grads.size());
  const double rhs = 8.0 * L1 * (p.value(x) - f_inf) + 8.0 * L1 * delta_inf + L0 / L1;
  c.record(lhs, rhs, at);
}

/// ||grad f_i||^2 / (4 (L0 + L1 ||grad f_i||)) <= f_i(x) - f_i_inf for every client.
inline void check_gap_lower_bound(InequalityCheck& c, const Problem& p, const DenseVector& x,
                                  std::span<const DenseVector> client_grads, double L0, double L1,
                                  std::int64_t at) {
  for (std::size_t i = 0; i < client_grads.size(); ++i) {
    const auto fi_inf = p.client_f_inf(i);
    if (!fi_inf) continue;
    const double gn = norm2(client_grads[i]);
    c.record(gn * gn / (4.0 * (L0 + L1 * gn)), p.client_value(i, x) - *fi_inf, at);
  }
}

/// Watches a normalized deterministic run and checks, at every round,
///   gradient-norm bound and gap lower bound at x^k,
///   the normalized descent inequality for f(x^{k+1}), and
///   the Lyapunov descent V^{k+1} <= V^k + c1 e^{L1 g} g^2 mean||grad f_i|| - g||grad f|| + c0 e^{L1 g} g^2.
/// The two descent checks need f_inf; without it only the pointwise ones run.
class InequalityMonitor {
 public:
  InequalityMonitor(const Problem& problem, double alpha)
      : problem_(problem), alpha_(alpha), sc_(problem.constants()), f_inf_(problem.f_inf()) {
    const auto c = c_constants(sc_.L0, sc_.L1, alpha);
    c0_ = c.c0;
    c1_ = c.c1;
    if (f_inf_) {
      double s = 0.0;
      bool known = true;
      for (std::size_t i = 0; i < problem.num_clients(); ++i) {
        const auto fi = problem.client_f_inf(i);
        if (!fi) {
          known = false;
          break;
        }
        s += *f_inf_ - *fi;
      }
      if (known) delta_inf_ = s / static_cast<double>(problem.num_clients());
    }
    norm_bound_.name = "grad_norm_bound";
    gap_.name = "gap_lower_bound";
    descent_.name = "normalized_descent";
    lyapunov_.name = "lyapunov_descent";
  }

  void operator()(const RoundView& view) {
    const double L0 = sc_.L0;
    const double L1 = sc_.L1;
    const double gamma = view.gamma;
    if (delta_inf_) check_grad_norm_bound(norm_bound_, problem_, view.x, view.client_grads, L0, L1, *f_inf_, *delta_inf_, view.k);
    check_gap_lower_bound(gap_, problem_, view.x, view.client_grads, L0, L1, view.k);
    if (!f_inf_) return;

    double mean_norm = 0.0;
    double mem_gap = 0.0;
    for (std::size_t i = 0; i < view.client_grads.size(); ++i) {
      mean_norm += norm2(view.client_grads[i]);
      mem_gap += norm2(view.client_grads[i] - view.clients[i].g);
    }
    const double n = static_cast<double>(view.client_grads.size());
    mean_norm /= n;
    mem_gap /= n;
    const DenseVector full = mean_of(view.client_grads);
    const double grad_norm = norm2(full);
    const double f_now = problem_.value(view.x);
    const double growth = std::exp(L1 * gamma) * gamma * gamma;

    // f(x^{k+1}) <= f(x^k) - g||grad f|| + 2g||grad f - g^k|| + (g^2/2) e^{g L1}(L0 + L1 mean||grad f_i||)
    const double f_next = problem_.value(view.x_next);
    const double rhs = f_now - gamma * grad_norm + 2.0 * gamma * norm2(full - view.g) +
                       0.5 * growth * (L0 + L1 * mean_norm);
    descent_.record(f_next, rhs, view.k);

    const double V = f_now - *f_inf_ + 2.0 * gamma / (1.0 - std::sqrt(1.0 - alpha_)) * mem_gap;
    if (pending_bound_) lyapunov_.record(V, *pending_bound_, view.k - 1);
    pending_bound_ = V + c1_ * growth * mean_norm - gamma * grad_norm + c0_ * growth;
  }

  [[nodiscard]] std::vector<InequalityCheck> results() const {
    std::vector<InequalityCheck> out;
    if (delta_inf_) out.push_back(norm_bound_);
    out.push_back(gap_);
    if (f_inf_) {
      out.push_back(descent_);
      out.push_back(lyapunov_);
    }
    return out;
  }

 private:
  const Problem& problem_;
  double alpha_;
  SmoothnessConstants sc_;
  std::optional<double> f_inf_;
  std::optional<double> delta_inf_;
  double c0_ = 0.0;
  double c1_ = 0.0;
  std::optional<double> pending_bound_;
  InequalityCheck norm_bound_, gap_, descent_, lyapunov_;
};

}  // namespace nef
