#pragma once

// Expected local-information-ratio (ELIR) effective sample size on the
// treatment-effect scale.

#include <cmath>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "esskit/error.hpp"
#include "esskit/measures.hpp"
#include "esskit/numerics.hpp"

namespace esskit {

inline constexpr double kCapturedMassWarning = 0.95;

struct EssResult {
  double ess_iu = 0;
  int iu_size = 0;
  double ess_total = 0;
  double ess_trt = 0;
  double ess_ctrl = 0;
  /// Mass of the induced (p0, p1) density on the unit square. 1 for
  /// mean-diff and (up to quadrature error) log-or.
  double captured_mass_z = 1.0;
  /// Prior expectation of the information-unit variance.
  double expected_iu_variance = 0;
  bool renormalized = false;
  double integration_spread = 0;
  std::vector<std::string> warnings;
};

/// Steps 3-5: information units, then total subjects, then the per-arm split.
inline EssResult scale_ess(double expected_iu_variance, double prior_sd,
                           const RandomizationRatio& ratio) {
  EssResult r;
  r.expected_iu_variance = expected_iu_variance;
  r.ess_iu = expected_iu_variance / (prior_sd * prior_sd);
  r.iu_size = ratio.iu_size();
  r.ess_total = r.ess_iu * r.iu_size;
  r.ess_trt = r.ess_total * ratio.a / r.iu_size;
  r.ess_ctrl = r.ess_total * ratio.b / r.iu_size;
  return r;
}

/// Closed form for a normal endpoint with known variances: sigma_IU^2 / s^2.
inline EssResult ess_normal(const EffectMeasure& measure, const RandomizationRatio& ratio,
                            double prior_s) {
  require(measure.kind == MeasureKind::MeanDifference, "ess_normal requires the mean-diff measure");
  require(std::isfinite(prior_s) && prior_s > 0, "prior sd s must be positive");
  ratio.validate();
  return scale_ess(iu_variance(measure, std::nullopt, ratio), prior_s, ratio);
}

/// The prior mean is accepted and has no influence on the result.
inline EssResult ess_normal(const EffectMeasure& measure, const RandomizationRatio& ratio,
                            const UnivariateNormal& prior) {
  prior.validate();
  return ess_normal(measure, ratio, prior.sd);
}

namespace detail {

/// Tabulated kernel returning {f(p0,p1), f(p0,p1) * sigma_IU^2(p0,p1)} on a
/// tensor grid, u indexing p0 and v indexing p1.
class InducedDensityKernel {
 public:
  InducedDensityKernel(const EffectMeasure& m, const BivariateNormalParams& prior,
                       const RandomizationRatio& ratio, const GaussRule& u, const GaussRule& v)
      : kind_(m.kind),
        theta0_(prior.theta0),
        s_(prior.s),
        rho_(prior.rho),
        norm_(bvn_normalizer(prior)) {
    const double a = ratio.a;
    const double b = ratio.b;
    const std::size_t nu = u.nodes.size();
    const std::size_t nv = v.nodes.size();
    z_l0_.resize(nu), row_jac_.resize(nu), row_var_.resize(nu), row_coord_.resize(nu);
    for (std::size_t i = 0; i < nu; ++i) {
      const double p0 = u.nodes[i];
      const double v0 = p0 * (1 - p0);
      const double l0 = logit(p0);
      z_l0_[i] = (l0 - prior.mu0) / prior.m0;
      row_jac_[i] = 1.0 / v0;
      switch (kind_) {
        case MeasureKind::RiskDifference: row_var_[i] = v0 / b; row_coord_[i] = p0; break;
        case MeasureKind::LogOddsRatio: row_var_[i] = 1.0 / (b * v0); row_coord_[i] = l0; break;
        default: row_var_[i] = (1 - p0) / (b * p0); row_coord_[i] = std::log(p0); break;
      }
    }
    col_jac_.resize(nv), col_var_.resize(nv), col_coord_.resize(nv);
    for (std::size_t j = 0; j < nv; ++j) {
      const double p1 = v.nodes[j];
      const double v1 = p1 * (1 - p1);
      switch (kind_) {
        case MeasureKind::RiskDifference:
          col_jac_[j] = 1.0; col_var_[j] = v1 / a; col_coord_[j] = p1; break;
        case MeasureKind::LogOddsRatio:
          col_jac_[j] = 1.0 / v1; col_var_[j] = 1.0 / (a * v1); col_coord_[j] = logit(p1); break;
        default:
          col_jac_[j] = 1.0 / p1; col_var_[j] = (1 - p1) / (a * p1); col_coord_[j] = std::log(p1); break;
      }
    }
  }

  std::array<double, 2> operator()(std::size_t i, std::size_t j) const {
    const double theta = col_coord_[j] - row_coord_[i];
    const double q = bvn_quadratic_form(z_l0_[i], (theta - theta0_) / s_, rho_);
    // exp(-q/2) underflows to exactly zero beyond this point
    if (q > 1500.0) return {0.0, 0.0};
    const double f = norm_ * row_jac_[i] * col_jac_[j] * std::exp(-0.5 * q);
    return {f, f * (row_var_[i] + col_var_[j])};
  }

 private:
  MeasureKind kind_;
  double theta0_, s_, rho_, norm_;
  std::vector<double> z_l0_, row_jac_, row_var_, row_coord_;
  std::vector<double> col_jac_, col_var_, col_coord_;
};

}  // namespace detail

/// ELIR ESS for a binomial measure under a bivariate normal belief on
/// (l0, theta): E[sigma_IU^2] / s^2, with the expectation taken over the
/// induced (p0, p1) density by tensor Gauss-Legendre quadrature.
/// With renormalize, the expectation is divided by the captured mass Z.
inline EssResult ess_binomial(const EffectMeasure& measure, const BivariateNormalParams& prior,
                              const RandomizationRatio& ratio, const QuadratureConfig& cfg = {},
                              bool renormalize = false) {
  require_binomial(measure);
  prior.validate();
  ratio.validate();
  cfg.validate();
  const Range square = probability_square(cfg);
  const auto integrals = integrate_tensor<2>(
      square, square, cfg, [&](const GaussRule& u, const GaussRule& v) {
        return detail::InducedDensityKernel(measure, prior, ratio, u, v);
      });
  const double z = integrals[0].value;
  if (!(z > 0)) {
    throw Error(ErrorCode::IntegrationFailure,
                "induced density has no mass on the probability square");
  }
  double expected = integrals[1].value;
  double spread = integrals[1].panel_spread;
  if (renormalize) {
    expected /= z;
    spread /= z;
  }

  EssResult r = scale_ess(expected, prior.s, ratio);
  r.captured_mass_z = z;
  r.renormalized = renormalize;
  r.integration_spread = spread / (prior.s * prior.s);
  if (z < kCapturedMassWarning) {
    std::ostringstream msg;
    msg << "captured mass Z=" << z << " is below " << kCapturedMassWarning
        << "; the prior places substantial mass on invalid rate pairs";
    r.warnings.push_back(msg.str());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Conjugate reference values.

struct BetaPrior { double a; double b; };
struct NormalMeanPrior { double n0; };
struct GammaPrior { double shape; double rate; };
using ConjugatePrior = std::variant<BetaPrior, NormalMeanPrior, GammaPrior>;

inline double conjugate_ess(const ConjugatePrior& model) {
  struct Visitor {
    double operator()(const BetaPrior& p) const {
      require(p.a > 0 && p.b > 0, "beta hyperparameters must be positive");
      return p.a + p.b;
    }
    double operator()(const NormalMeanPrior& p) const {
      require(p.n0 > 0, "normal prior n0 must be positive");
      return p.n0;
    }
    double operator()(const GammaPrior& p) const {
      require(p.shape > 0 && p.rate > 0, "gamma hyperparameters must be positive");
      return p.rate;
    }
  };
  return std::visit(Visitor{}, model);
}

// ---------------------------------------------------------------------------
// Contour data.

struct DensityPoint {
  double p0;
  double p1;
  double density;
};

/// Cell-centre samples of the induced (p0, p1) density on a
/// resolution x resolution grid; p0 varies slowest.
inline std::vector<DensityPoint> density_grid(const EffectMeasure& measure,
                                              const BivariateNormalParams& prior,
                                              int resolution = 200) {
  require_binomial(measure);
  prior.validate();
  require(resolution >= 1, "resolution must be >= 1");
  const auto n = static_cast<std::size_t>(resolution);
  std::vector<DensityPoint> grid(n * n);
  detail::parallel_for(n, [&](std::size_t i) {
    const double p0 = (static_cast<double>(i) + 0.5) / resolution;
    for (std::size_t j = 0; j < n; ++j) {
      const double p1 = (static_cast<double>(j) + 0.5) / resolution;
      grid[i * n + j] = {p0, p1, joint_prob_density(measure, prior, {p0, p1})};
    }
  });
  return grid;
}

}  // namespace esskit
