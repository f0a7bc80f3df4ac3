#pragma once

// Scalar kernels of the lower-censored (at zero) Gaussian likelihood.
//
// For one entry with observation y, linear predictor mu and noise scale sigma:
//
//   y > tau :  nll = (y - mu)^2 / (2 sigma^2) + log sigma + 0.5 log(2 pi)
//   y <= tau:  nll = -log Phi(-mu / sigma)
//
// tau is the censor threshold (0 unless configured). Phi is evaluated in the
// log domain; the standardized argument is clamped to [-kSaturation,
// kSaturation] and the clamp is reported through the `saturated` flag.

#include <cmath>
#include <numbers>
#include <string>

#include "ssn/error.hpp"

namespace ssn {

inline constexpr double kSaturation = 30.0;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

/// One censored-regression likelihood term.
struct CensoredNllTerm {
  double y = 0.0;
  double mu = 0.0;
  double sigma = 1.0;
};

/// Value of a kernel plus a flag raised when the standardized argument hit
/// the saturation cap.
struct Saturating {
  double value = 0.0;
  bool saturated = false;
};

namespace detail {

inline void require_finite(double z, const char* who) {
  if (!std::isfinite(z)) fail(ErrorKind::InvalidArgument, std::string(who) + ": non-finite input");
}

inline void check_term(const CensoredNllTerm& term) {
  if (!std::isfinite(term.y) || !std::isfinite(term.mu) || !std::isfinite(term.sigma))
    fail(ErrorKind::InvalidArgument, "censored term has a non-finite field");
  if (!(term.sigma > 0.0)) fail(ErrorKind::InvalidArgument, "censored term needs sigma > 0");
  if (term.y < 0.0) fail(ErrorKind::InvalidArgument, "censored term needs y >= 0");
}

inline Saturating clamp_standardized(double z) {
  if (z > kSaturation) return {kSaturation, true};
  if (z < -kSaturation) return {-kSaturation, true};
  return {z, false};
}

}  // namespace detail

/// Standard normal density.
inline double std_normal_pdf(double z) {
  detail::require_finite(z, "std_normal_pdf");
  return std::exp(-0.5 * z * z) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
}

/// Upper tail P(Z > z) of the standard normal.
inline double std_normal_tail(double z) {
  detail::require_finite(z, "std_normal_tail");
  return 0.5 * std::erfc(z / std::numbers::sqrt2);
}

/// log Phi(z). Stays accurate where Phi underflows to subnormals or rounds to 1.
inline double log_std_normal_cdf(double z) {
  detail::require_finite(z, "log_std_normal_cdf");
  if (z < 0.0) return std::log(0.5 * std::erfc(-z / std::numbers::sqrt2));
  return std::log1p(-0.5 * std::erfc(z / std::numbers::sqrt2));
}

/// phi(z) / Phi(z), the inverse Mills ratio of the lower tail.
inline double normal_hazard(double z) {
  detail::require_finite(z, "normal_hazard");
  return std::exp(-0.5 * z * z - kLogSqrt2Pi - log_std_normal_cdf(z));
}

inline bool is_censored(double y, double censor_threshold = 0.0) { return y <= censor_threshold; }

/// Negative log-likelihood of one term.
inline Saturating censored_nll_checked(const CensoredNllTerm& term, double censor_threshold = 0.0) {
  detail::check_term(term);
  if (!is_censored(term.y, censor_threshold)) {
    const double r = (term.y - term.mu) / term.sigma;
    return {0.5 * r * r + std::log(term.sigma) + kLogSqrt2Pi, false};
  }
  const auto z = detail::clamp_standardized(-term.mu / term.sigma);
  return {-log_std_normal_cdf(z.value), z.saturated};
}

inline double censored_nll(const CensoredNllTerm& term, double censor_threshold = 0.0) {
  return censored_nll_checked(term, censor_threshold).value;
}

/// d nll / d mu. Callers apply the chain rule onto U_t and V.
inline Saturating grad_mu_censored_nll_checked(const CensoredNllTerm& term, double censor_threshold = 0.0) {
  detail::check_term(term);
  if (!is_censored(term.y, censor_threshold))
    return {-(term.y - term.mu) / (term.sigma * term.sigma), false};
  const auto z = detail::clamp_standardized(-term.mu / term.sigma);
  return {normal_hazard(z.value) / term.sigma, z.saturated};
}

inline double grad_mu_censored_nll(const CensoredNllTerm& term, double censor_threshold = 0.0) {
  return grad_mu_censored_nll_checked(term, censor_threshold).value;
}

}  // namespace ssn
