#pragma once

#include <cmath>
#include <charconv>
#include <optional>
#include <string>
#include <string_view>

#include "esskit/error.hpp"
#include "esskit/numerics.hpp"

namespace esskit {

enum class MeasureKind { MeanDifference, RiskDifference, LogOddsRatio, LogRiskRatio };

/// Treatment-effect measure. MeanDifference carries the known within-arm
/// variances; the binomial kinds carry nothing.
struct EffectMeasure {
  MeasureKind kind = MeasureKind::RiskDifference;
  double s1_sq = 0;
  double s0_sq = 0;

  static EffectMeasure mean_difference(double s1_sq, double s0_sq) {
    require(std::isfinite(s1_sq) && s1_sq > 0 && std::isfinite(s0_sq) && s0_sq > 0,
            "mean-difference variances s1sq and s0sq must be positive");
    return {MeasureKind::MeanDifference, s1_sq, s0_sq};
  }
  static EffectMeasure risk_difference() { return {MeasureKind::RiskDifference}; }
  static EffectMeasure log_odds_ratio() { return {MeasureKind::LogOddsRatio}; }
  static EffectMeasure log_risk_ratio() { return {MeasureKind::LogRiskRatio}; }

  bool is_binomial() const { return kind != MeasureKind::MeanDifference; }

  std::string_view name() const {
    switch (kind) {
      case MeasureKind::MeanDifference: return "mean-diff";
      case MeasureKind::RiskDifference: return "rd";
      case MeasureKind::LogOddsRatio: return "log-or";
      case MeasureKind::LogRiskRatio: return "log-rr";
    }
    return "?";
  }

  friend bool operator==(const EffectMeasure&, const EffectMeasure&) = default;
};

/// Parses "mean-diff", "rd", "log-or" or "log-rr". Variances apply to
/// mean-diff only.
inline MeasureKind parse_measure_kind(std::string_view name) {
  if (name == "mean-diff") return MeasureKind::MeanDifference;
  if (name == "rd") return MeasureKind::RiskDifference;
  if (name == "log-or") return MeasureKind::LogOddsRatio;
  if (name == "log-rr") return MeasureKind::LogRiskRatio;
  throw Error(ErrorCode::InvalidArgument,
              "unknown measure '" + std::string(name) + "' (expected mean-diff|rd|log-or|log-rr)");
}

inline void require_binomial(const EffectMeasure& m) {
  if (!m.is_binomial()) {
    throw Error(ErrorCode::UnsupportedMeasure,
                "operation requires a binomial measure (rd, log-or, log-rr)");
  }
}

/// a treatment and b control subjects per information unit.
struct RandomizationRatio {
  int a = 1;
  int b = 1;

  void validate() const { require(a >= 1 && b >= 1, "randomization ratio entries must be >= 1"); }
  int iu_size() const { return a + b; }
  RandomizationRatio scaled(int k) const { return {a * k, b * k}; }

  /// "a:b" with positive integers.
  static RandomizationRatio parse(std::string_view text) {
    const auto colon = text.find(':');
    auto to_int = [&](std::string_view part) {
      int v = 0;
      const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
      if (ec != std::errc{} || ptr != part.data() + part.size()) {
        throw Error(ErrorCode::InvalidArgument, "malformed ratio '" + std::string(text) + "'");
      }
      return v;
    };
    if (colon == std::string_view::npos) {
      throw Error(ErrorCode::InvalidArgument,
                  "malformed ratio '" + std::string(text) + "' (expected a:b)");
    }
    RandomizationRatio r{to_int(text.substr(0, colon)), to_int(text.substr(colon + 1))};
    r.validate();
    return r;
  }
  std::string to_string() const { return std::to_string(a) + ":" + std::to_string(b); }
  friend bool operator==(const RandomizationRatio&, const RandomizationRatio&) = default;
};

/// Control (p0) and treatment (p1) event rates.
struct ProbPair {
  double p0 = 0.5;
  double p1 = 0.5;
  bool valid() const { return p0 > 0 && p0 < 1 && p1 > 0 && p1 < 1; }
};

/// Inverse of the (l0, theta) parameterization. Empty when the implied
/// treatment rate leaves (0, 1), which can happen for rd and log-rr.
inline std::optional<ProbPair> probs_from_params(const EffectMeasure& m, double l0, double theta) {
  require_binomial(m);
  const double p0 = expit(l0);
  double p1 = 0;
  switch (m.kind) {
    case MeasureKind::RiskDifference: p1 = p0 + theta; break;
    case MeasureKind::LogOddsRatio: p1 = expit(l0 + theta); break;
    case MeasureKind::LogRiskRatio: p1 = p0 * std::exp(theta); break;
    case MeasureKind::MeanDifference: break;
  }
  const ProbPair pair{p0, p1};
  if (!pair.valid()) return std::nullopt;
  return pair;
}

/// (h1, h2): the (l0, theta) coordinates of a rate pair.
inline Vector2 params_from_probs(const EffectMeasure& m, const ProbPair& pair) {
  require_binomial(m);
  const double l0 = logit(pair.p0);
  switch (m.kind) {
    case MeasureKind::RiskDifference: return {l0, pair.p1 - pair.p0};
    case MeasureKind::LogOddsRatio: return {l0, logit(pair.p1) - l0};
    case MeasureKind::LogRiskRatio: return {l0, std::log(pair.p1) - std::log(pair.p0)};
    case MeasureKind::MeanDifference: break;
  }
  return {};
}

/// |d(l0, theta) / d(p0, p1)|.
inline double jacobian_abs(const EffectMeasure& m, const ProbPair& pair) {
  require_binomial(m);
  const double v0 = pair.p0 * (1.0 - pair.p0);
  switch (m.kind) {
    case MeasureKind::RiskDifference: return 1.0 / v0;
    case MeasureKind::LogOddsRatio: return 1.0 / (v0 * pair.p1 * (1.0 - pair.p1));
    case MeasureKind::LogRiskRatio: return 1.0 / (pair.p1 * v0);
    case MeasureKind::MeanDifference: break;
  }
  return 0;
}

/// Density of (p0, p1) induced by a bivariate normal belief on (l0, theta).
/// Zero outside the open unit square.
inline double joint_prob_density(const EffectMeasure& m, const BivariateNormalParams& prior,
                                 const ProbPair& pair) {
  require_binomial(m);
  if (!pair.valid()) return 0.0;
  const Vector2 h = params_from_probs(m, pair);
  return jacobian_abs(m, pair) * bvn_density(h[0], h[1], prior);
}

/// Sampling variance of the treatment-effect estimate from one information
/// unit. Binomial kinds need the true rates; mean-diff ignores them.
inline double iu_variance(const EffectMeasure& m, std::optional<ProbPair> pair,
                          const RandomizationRatio& ratio) {
  ratio.validate();
  const double a = ratio.a;
  const double b = ratio.b;
  if (m.kind == MeasureKind::MeanDifference) return m.s1_sq / a + m.s0_sq / b;

  require(pair.has_value(), "binomial iu_variance needs an event-rate pair");
  const double p0 = pair->p0;
  const double p1 = pair->p1;
  require(p0 >= 0 && p0 <= 1 && p1 >= 0 && p1 <= 1, "event rates must lie in [0, 1]");
  switch (m.kind) {
    case MeasureKind::RiskDifference:
      return p1 * (1 - p1) / a + p0 * (1 - p0) / b;
    case MeasureKind::LogOddsRatio:
      if (!pair->valid()) {
        throw Error(ErrorCode::Singularity, "log-or variance is singular at rate 0 or 1");
      }
      return 1.0 / (a * p1 * (1 - p1)) + 1.0 / (b * p0 * (1 - p0));
    case MeasureKind::LogRiskRatio:
      if (p0 == 0 || p1 == 0) {
        throw Error(ErrorCode::Singularity, "log-rr variance is singular at rate 0");
      }
      return (1 - p1) / (a * p1) + (1 - p0) / (b * p0);
    case MeasureKind::MeanDifference: break;
  }
  return 0;
}

inline double iu_variance(const EffectMeasure& m, const ProbPair& pair,
                          const RandomizationRatio& ratio) {
  return iu_variance(m, std::optional<ProbPair>(pair), ratio);
}

}  // namespace esskit
