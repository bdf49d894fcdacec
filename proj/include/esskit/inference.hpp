#pragma once

// Maximum-likelihood fitting of two-arm binomial data in the (l0, theta)
// parameterization, and conjugate normal posterior updates.

#include <cmath>
#include <optional>
#include <sstream>
#include <string>

#include "esskit/error.hpp"
#include "esskit/ess.hpp"
#include "esskit/measures.hpp"
#include "esskit/numerics.hpp"

namespace esskit {

struct TwoArmBinomialData {
  int n1 = 0;  ///< treatment arm size
  int y1 = 0;  ///< treatment events
  int n0 = 0;  ///< control arm size
  int y0 = 0;  ///< control events

  void validate() const {
    require(n1 >= 1 && n0 >= 1, "arm sizes must be positive");
    require(y1 >= 0 && y1 <= n1 && y0 >= 0 && y0 <= n0, "event counts must lie in [0, n]");
  }
  friend bool operator==(const TwoArmBinomialData&, const TwoArmBinomialData&) = default;
};

struct FitResult {
  Vector2 nu_hat{};      ///< (l0_hat, theta_hat)
  Matrix2 sigma_hat{};   ///< inverse observed information at nu_hat
  double rho_hat = 0;
  int iterations = 0;
  bool converged = false;
  double gradient_norm = 0;

  double l0_hat() const { return nu_hat[0]; }
  double theta_hat() const { return nu_hat[1]; }
  friend bool operator==(const FitResult&, const FitResult&) = default;
};

/// Observed effect and its sampling variance s1^2/n1 + s0^2/n0.
struct NormalSummary {
  double theta_hat = 0;
  double sigma_sq = 1;
};

struct FitOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-10;
  /// Defaults to the empirical plug-in estimate.
  std::optional<Vector2> start;
};

/// Newton-Raphson ran out of iterations; carries the last iterate.
class FitNotConverged : public Error {
 public:
  FitNotConverged(const Vector2& last, double gradient_norm, int iterations)
      : Error(ErrorCode::NotConverged, describe(last, gradient_norm, iterations)),
        last_iterate(last),
        last_gradient_norm(gradient_norm) {}

  Vector2 last_iterate;
  double last_gradient_norm;

 private:
  static std::string describe(const Vector2& last, double g, int iterations) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "Newton-Raphson did not converge after " << iterations << " iterations; last iterate (l0="
        << last[0] << ", theta=" << last[1] << "), gradient norm " << g;
    return msg.str();
  }
};

namespace detail {

/// Event counts as reals so that continuity-corrected data share the fitter.
struct Counts {
  double y0, n0, y1, n1;
};

struct LikelihoodState {
  bool valid = false;
  double loglik = 0;
  Vector2 gradient{};
  Matrix2 hessian{};
  Matrix2 expected_information{};
};

/// Log-likelihood of the two binomial arms at nu = (l0, theta) with its
/// gradient and Hessian via the chain rule through (p0, p1).
inline LikelihoodState likelihood(const EffectMeasure& m, const Vector2& nu, const Counts& c) {
  LikelihoodState st;
  const double l0 = nu[0];
  const double theta = nu[1];
  const double p0 = expit(l0);
  const double q0 = 1 - p0;
  const double v0 = p0 * q0;

  double p1 = 0;
  Vector2 dp1{};
  double c11 = 0, c12 = 0, c22 = 0;  // second partials of p1
  switch (m.kind) {
    case MeasureKind::RiskDifference:
      p1 = p0 + theta;
      dp1 = {v0, 1.0};
      c11 = v0 * (1 - 2 * p0);
      break;
    case MeasureKind::LogOddsRatio: {
      p1 = expit(l0 + theta);
      const double v1 = p1 * (1 - p1);
      dp1 = {v1, v1};
      c11 = c12 = c22 = v1 * (1 - 2 * p1);
      break;
    }
    case MeasureKind::LogRiskRatio:
      p1 = p0 * std::exp(theta);
      dp1 = {p1 * q0, p1};
      c11 = p1 * q0 * (1 - 2 * p0);
      c12 = p1 * q0;
      c22 = p1;
      break;
    case MeasureKind::MeanDifference:
      throw Error(ErrorCode::UnsupportedMeasure, "binomial fit requires rd, log-or or log-rr");
  }
  if (!(p0 > 0 && p0 < 1 && p1 > 0 && p1 < 1)) return st;
  const double q1 = 1 - p1;
  const double v1 = p1 * q1;

  st.valid = true;
  st.loglik = c.y0 * std::log(p0) + (c.n0 - c.y0) * std::log(q0) + c.y1 * std::log(p1) +
              (c.n1 - c.y1) * std::log(q1);

  const double score0 = (c.y0 - c.n0 * p0) / v0;
  const double score1 = (c.y1 - c.n1 * p1) / v1;
  const double curv0 = -c.y0 / (p0 * p0) - (c.n0 - c.y0) / (q0 * q0);
  const double curv1 = -c.y1 / (p1 * p1) - (c.n1 - c.y1) / (q1 * q1);

  // p0 depends on l0 only: dp0 = (v0, 0), d2p0/dl0^2 = v0 (1 - 2 p0).
  st.gradient = {score0 * v0 + score1 * dp1[0], score1 * dp1[1]};
  const double hxx = curv0 * v0 * v0 + score0 * v0 * (1 - 2 * p0) + curv1 * dp1[0] * dp1[0] + score1 * c11;
  const double hxy = curv1 * dp1[0] * dp1[1] + score1 * c12;
  const double hyy = curv1 * dp1[1] * dp1[1] + score1 * c22;
  st.hessian = Matrix2::symmetric(hxx, hxy, hyy);

  const double w0 = c.n0 / v0;
  const double w1 = c.n1 / v1;
  st.expected_information = Matrix2::symmetric(w0 * v0 * v0 + w1 * dp1[0] * dp1[0],
                                               w1 * dp1[0] * dp1[1], w1 * dp1[1] * dp1[1]);
  return st;
}

inline Vector2 plug_in_start(const EffectMeasure& m, const Counts& c) {
  const double p0 = c.y0 / c.n0;
  const double p1 = c.y1 / c.n1;
  const double l0 = logit(p0);
  switch (m.kind) {
    case MeasureKind::RiskDifference: return {l0, p1 - p0};
    case MeasureKind::LogOddsRatio: return {l0, logit(p1) - l0};
    default: return {l0, std::log(p1) - std::log(p0)};
  }
}

inline bool negative_definite(const Matrix2& h) {
  return h.xx < 0 && h.det() > 0;
}

inline FitResult fit_counts(const EffectMeasure& m, const Counts& c, const FitOptions& opt = {}) {
  require_binomial(m);
  if (!(c.y0 > 0 && c.y0 < c.n0 && c.y1 > 0 && c.y1 < c.n1)) {
    throw Error(ErrorCode::NoInteriorMle,
                "event counts at 0 or n in an arm: no interior maximum-likelihood estimate");
  }
  Vector2 nu = opt.start.value_or(plug_in_start(m, c));
  LikelihoodState st = likelihood(m, nu, c);
  if (!st.valid) {
    throw Error(ErrorCode::InvalidArgument, "starting point implies event rates outside (0, 1)");
  }

  int iter = 0;
  double gnorm = std::hypot(st.gradient[0], st.gradient[1]);
  while (gnorm >= opt.gradient_tolerance) {
    if (iter >= opt.max_iterations) throw FitNotConverged(nu, gnorm, iter);
    ++iter;
    // Newton direction where the Hessian is negative definite, Fisher
    // scoring otherwise.
    const Matrix2 curvature = negative_definite(st.hessian) ? -1.0 * st.hessian : st.expected_information;
    const Vector2 step = curvature.inverse() * st.gradient;
    double scale = 1.0;
    LikelihoodState next;
    Vector2 candidate{};
    for (int halving = 0; halving < 60; ++halving, scale *= 0.5) {
      candidate = {nu[0] + scale * step[0], nu[1] + scale * step[1]};
      next = likelihood(m, candidate, c);
      if (next.valid && next.loglik >= st.loglik - 1e-12 * std::abs(st.loglik)) break;
    }
    if (!next.valid) throw FitNotConverged(nu, gnorm, iter);
    nu = candidate;
    st = next;
    gnorm = std::hypot(st.gradient[0], st.gradient[1]);
  }
  if (!negative_definite(st.hessian)) {
    throw Error(ErrorCode::SingularMatrix, "Hessian is not negative definite at the estimate");
  }

  FitResult r;
  r.nu_hat = nu;
  const Matrix2 cov = (-1.0 * st.hessian).inverse();
  r.sigma_hat = Matrix2::symmetric(cov.xx, 0.5 * (cov.xy + cov.yx), cov.yy);
  r.rho_hat = r.sigma_hat.xy / std::sqrt(r.sigma_hat.xx * r.sigma_hat.yy);
  r.iterations = iter;
  r.converged = true;
  r.gradient_norm = gnorm;
  return r;
}

}  // namespace detail

/// Maximum-likelihood estimate of (l0, theta) from two-arm binomial counts,
/// with the inverse observed information as asymptotic covariance.
inline FitResult fit_two_arm(const TwoArmBinomialData& data, const EffectMeasure& measure,
                             const FitOptions& options = {}) {
  data.validate();
  return detail::fit_counts(measure, {double(data.y0), double(data.n0), double(data.y1), double(data.n1)},
                            options);
}

/// Bivariate normal prior x asymptotic normal likelihood: precision M =
/// Sigma_hat^-1 + Sigma_0^-1, mean M^-1 (Sigma_hat^-1 nu_hat + Sigma_0^-1 omega_0).
inline BivariateNormalParams posterior_bvn(const BivariateNormalParams& prior, const FitResult& fit) {
  prior.validate();
  require(fit.converged, "posterior update needs a converged fit");
  const Matrix2 prior_precision = prior.covariance().inverse();
  const Matrix2 data_precision = fit.sigma_hat.inverse();
  const Matrix2 precision = prior_precision + data_precision;
  const Matrix2 cov = precision.inverse();
  const Vector2 b = data_precision * fit.nu_hat + prior_precision * prior.mean();
  const Matrix2 sym = Matrix2::symmetric(cov.xx, 0.5 * (cov.xy + cov.yx), cov.yy);
  const auto [lo, hi] = sym.symmetric_eigenvalues();
  if (!(lo > 0) || lo <= 1e-15 * hi) {
    throw Error(ErrorCode::SingularMatrix, "posterior covariance is numerically singular");
  }
  return BivariateNormalParams::from_moments(cov * b, sym);
}

/// Precision-weighted normal update. An infinite sigma_sq means no data.
inline UnivariateNormal posterior_normal(double prior_mean, double prior_s, const NormalSummary& summary) {
  require(std::isfinite(prior_mean), "prior mean must be finite");
  require(std::isfinite(prior_s) && prior_s > 0, "prior sd must be positive");
  require(summary.sigma_sq > 0, "sampling variance must be positive");
  const double prior_precision = 1.0 / (prior_s * prior_s);
  const double data_precision = 1.0 / summary.sigma_sq;
  const double precision = prior_precision + data_precision;
  const double data_term = std::isinf(summary.sigma_sq) ? 0.0 : summary.theta_hat * data_precision;
  return {(prior_mean * prior_precision + data_term) / precision, std::sqrt(1.0 / precision)};
}

inline EssResult posterior_ess(const EffectMeasure& measure, const BivariateNormalParams& posterior,
                               const RandomizationRatio& ratio, const QuadratureConfig& cfg = {},
                               bool renormalize = false) {
  return ess_binomial(measure, posterior, ratio, cfg, renormalize);
}

inline EssResult posterior_ess(const EffectMeasure& measure, const UnivariateNormal& posterior,
                               const RandomizationRatio& ratio) {
  return ess_normal(measure, ratio, posterior);
}

}  // namespace esskit
