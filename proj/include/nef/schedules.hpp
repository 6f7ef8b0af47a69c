#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <variant>

#include "nef/core.hpp"

namespace nef {

namespace detail {
inline void check_alpha(double alpha, const char* who) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw ParameterError(std::string(who) + ": alpha must lie in (0, 1], got " + std::to_string(alpha));
}
}  // namespace detail

/// Compression multiplier 1/2 + 2 sqrt(1-alpha) / (1 - sqrt(1-alpha)).
inline double compression_multiplier(double alpha) {
  detail::check_alpha(alpha, "compression_multiplier");
  const double r = std::sqrt(1.0 - alpha);
  return 0.5 + 2.0 * r / (1.0 - r);
}

struct CConstants {
  double c0;
  double c1;
};

/// c_i = (1/2 + 2 sqrt(1-alpha)/(1 - sqrt(1-alpha))) L_i for i = 0, 1.
inline CConstants c_constants(double L0, double L1, double alpha) {
  const double m = compression_multiplier(alpha);
  return {m * L0, m * L1};
}

/// Derived constants used by the stepsize rules and diagnostics.
struct TheoryConstants {
  double c0 = 0.0;
  double c1 = 0.0;
  double C_alpha = 0.0;  // 1 - sqrt(1 - alpha)
  double theta = 0.0;    // 1 - sqrt(1 - alpha)
  double beta = 0.0;     // (1 - alpha) / (1 - sqrt(1 - alpha))
  std::optional<double> B;

  /// `delta_inf` is (1/n) sum (f_inf - f_i_inf) when known; B is left empty otherwise.
  static TheoryConstants make(double L0, double L1, double alpha,
                              std::optional<double> delta_inf = std::nullopt) {
    detail::check_alpha(alpha, "TheoryConstants");
    TheoryConstants t;
    const auto c = c_constants(L0, L1, alpha);
    t.c0 = c.c0;
    t.c1 = c.c1;
    t.C_alpha = 1.0 - std::sqrt(1.0 - alpha);
    t.theta = t.C_alpha;
    t.beta = (1.0 - alpha) / t.theta;
    if (delta_inf) t.B = 2.0 * t.c0 + 8.0 * L1 * t.c1 * *delta_inf;
    return t;
  }
};

/// gamma0 / sqrt(K + 1).
inline double normalized_sqrtK_stepsize(double gamma0, std::int64_t K) {
  if (!(gamma0 > 0.0)) throw ParameterError("normalized_sqrtK_stepsize: gamma0 must be positive");
  if (K < 0) throw ParameterError("normalized_sqrtK_stepsize: K must be >= 0");
  return gamma0 / std::sqrt(static_cast<double>(K) + 1.0);
}

/// Single-node constant stepsize 1 / (beta c1), beta >= 2.
inline double single_node_stepsize(double L1, double alpha, double beta) {
  if (!(beta >= 2.0)) throw ParameterError("single_node_stepsize: beta must be >= 2");
  if (!(L1 > 0.0)) throw ParameterError("single_node_stepsize: L1 must be positive");
  return 1.0 / (beta * c_constants(0.0, L1, alpha).c1);
}

/// Classical EF21 stepsize 1 / (L + L_tilde sqrt(beta/theta)).
inline double ef21_classical_stepsize(double L, double L_tilde, double alpha) {
  detail::check_alpha(alpha, "ef21_classical_stepsize");
  if (!(L > 0.0) || !(L_tilde > 0.0)) throw ParameterError("ef21_classical_stepsize: L and L_tilde must be positive");
  const double theta = 1.0 - std::sqrt(1.0 - alpha);
  const double beta = (1.0 - alpha) / theta;
  return 1.0 / (L + L_tilde * std::sqrt(beta / theta));
}

/// Upper limit on gamma0 for the momentum rule:
/// (1 / (16 L1)) min{ sqrt(K+1) C_alpha, 1 }.
inline double sgdm_gamma0_cap(std::int64_t K, double L1, double alpha) {
  detail::check_alpha(alpha, "sgdm_gamma0_cap");
  if (!(L1 > 0.0)) throw ParameterError("sgdm_gamma0_cap: L1 must be positive");
  if (K < 0) throw ParameterError("sgdm_gamma0_cap: K must be >= 0");
  const double C_alpha = 1.0 - std::sqrt(1.0 - alpha);
  return std::min(std::sqrt(static_cast<double>(K) + 1.0) * C_alpha, 1.0) / (16.0 * L1);
}

/// gamma0 exceeded the momentum-rule cap.
class CapError : public ParameterError {
 public:
  CapError(double gamma0, double cap)
      : ParameterError(message(gamma0, cap)), gamma0_(gamma0), cap_(cap) {}
  [[nodiscard]] double cap() const noexcept { return cap_; }
  [[nodiscard]] double gamma0() const noexcept { return gamma0_; }

 private:
  static std::string message(double gamma0, double cap) {
    std::ostringstream os;
    os.precision(17);
    os << "sgdm: gamma0 = " << gamma0 << " exceeds the cap " << cap;
    return os.str();
  }
  double gamma0_;
  double cap_;
};

struct MomentumSteps {
  double gamma;
  double eta;
};

/// gamma = gamma0 / (K+1)^{3/4}, eta = (K+1)^{-1/2}; rejects gamma0 above the cap.
inline MomentumSteps sgdm_stepsizes(double gamma0, std::int64_t K, double L1, double alpha) {
  if (!(gamma0 > 0.0)) throw ParameterError("sgdm_stepsizes: gamma0 must be positive");
  const double cap = sgdm_gamma0_cap(K, L1, alpha);
  if (gamma0 > cap) throw CapError(gamma0, cap);
  const double k1 = static_cast<double>(K) + 1.0;
  return {gamma0 / std::pow(k1, 0.75), 1.0 / std::sqrt(k1)};
}

// ---------------------------------------------------------------------------
// StepsizeRule: resolved once per run, given the horizon K.
// ---------------------------------------------------------------------------

struct NormalizedSqrtK {
  double gamma0 = 1.0;
};
struct SingleNodeConstant {
  double beta = 2.0;
};
struct EF21Classical {};
struct SgdmRule {
  double gamma0 = 0.0;  // <= 0 selects the cap
  bool clamp = false;   // clamp gamma0 to the cap instead of rejecting
};
/// User-fixed (gamma, eta); eta = 1 disables momentum.
struct FixedStep {
  double gamma = 0.0;
  double eta = 1.0;
};

using StepsizeRule = std::variant<NormalizedSqrtK, SingleNodeConstant, EF21Classical, SgdmRule, FixedStep>;

/// Everything the rules can depend on.
struct RuleInputs {
  std::int64_t K = 0;
  double alpha = 1.0;
  double L = 0.0;
  double L_tilde = 0.0;
  double L1 = 0.0;
};

/// Stepsize and momentum for every round of a run of horizon K.
struct ResolvedSteps {
  double gamma = 0.0;
  double eta = 1.0;
  double gamma0 = 0.0;  // the gamma0 actually used, when the rule has one
  [[nodiscard]] double gamma_at(std::int64_t /*k*/) const noexcept { return gamma; }
};

[[nodiscard]] inline bool carries_momentum(const StepsizeRule& rule) noexcept {
  return std::holds_alternative<SgdmRule>(rule) || std::holds_alternative<FixedStep>(rule);
}

inline ResolvedSteps resolve(const StepsizeRule& rule, const RuleInputs& in) {
  if (in.K < 0) throw ParameterError("resolve: K must be >= 0");
  return std::visit(
      [&](const auto& r) -> ResolvedSteps {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, NormalizedSqrtK>) {
          return {normalized_sqrtK_stepsize(r.gamma0, in.K), 1.0, r.gamma0};
        } else if constexpr (std::is_same_v<T, SingleNodeConstant>) {
          return {single_node_stepsize(in.L1, in.alpha, r.beta), 1.0, 0.0};
        } else if constexpr (std::is_same_v<T, EF21Classical>) {
          return {ef21_classical_stepsize(in.L, in.L_tilde, in.alpha), 1.0, 0.0};
        } else if constexpr (std::is_same_v<T, SgdmRule>) {
          const double cap = sgdm_gamma0_cap(in.K, in.L1, in.alpha);
          double gamma0 = r.gamma0 > 0.0 ? r.gamma0 : cap;
          if (r.clamp) gamma0 = std::min(gamma0, cap);
          const auto steps = sgdm_stepsizes(gamma0, in.K, in.L1, in.alpha);
          return {steps.gamma, steps.eta, gamma0};
        } else {
          if (!(r.gamma > 0.0)) throw ParameterError("fixed rule: gamma must be positive");
          if (!(r.eta > 0.0 && r.eta <= 1.0)) throw ParameterError("fixed rule: eta must lie in (0, 1]");
          return {r.gamma, r.eta, 0.0};
        }
      },
      rule);
}

inline std::string rule_name(const StepsizeRule& rule) {
  return std::visit(
      [](const auto& r) -> std::string {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, NormalizedSqrtK>) return "sqrtk";
        else if constexpr (std::is_same_v<T, SingleNodeConstant>) return "single_node";
        else if constexpr (std::is_same_v<T, EF21Classical>) return "ef21_classical";
        else if constexpr (std::is_same_v<T, SgdmRule>) return "sgdm";
        else return "fixed";
      },
      rule);
}

}  // namespace nef
