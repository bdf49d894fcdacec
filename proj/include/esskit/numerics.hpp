#pragma once

// Deterministic numerical foundation: Gauss-Legendre rules, composite
// tensor-product integration over rectangles, 2x2 linear algebra and the
// bivariate normal density.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "esskit/detail/parallel.hpp"
#include "esskit/error.hpp"

namespace esskit {

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double expit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// 2x2 linear algebra, closed form.

using Vector2 = std::array<double, 2>;

struct Matrix2 {
  double xx = 0, xy = 0, yx = 0, yy = 0;

  static Matrix2 symmetric(double a, double b, double d) { return {a, b, b, d}; }
  static Matrix2 identity() { return {1, 0, 0, 1}; }

  double operator()(int i, int j) const {
    return i == 0 ? (j == 0 ? xx : xy) : (j == 0 ? yx : yy);
  }
  double det() const { return xx * yy - xy * yx; }
  double trace() const { return xx + yy; }

  /// Adjugate inverse. Throws SingularMatrix when |det| is negligible
  /// relative to the entry scale.
  Matrix2 inverse() const {
    const double d = det();
    const double scale = std::max({std::abs(xx * yy), std::abs(xy * yx), 1e-300});
    if (!std::isfinite(d) || std::abs(d) <= 1e-14 * scale) {
      throw Error(ErrorCode::SingularMatrix, "2x2 matrix is numerically singular");
    }
    return {yy / d, -xy / d, -yx / d, xx / d};
  }

  /// Eigenvalues of the symmetric part, ascending.
  std::pair<double, double> symmetric_eigenvalues() const {
    const double off = 0.5 * (xy + yx);
    const double mean = 0.5 * (xx + yy);
    const double radius = std::hypot(0.5 * (xx - yy), off);
    return {mean - radius, mean + radius};
  }

  friend Matrix2 operator+(const Matrix2& a, const Matrix2& b) {
    return {a.xx + b.xx, a.xy + b.xy, a.yx + b.yx, a.yy + b.yy};
  }
  friend Matrix2 operator-(const Matrix2& a, const Matrix2& b) {
    return {a.xx - b.xx, a.xy - b.xy, a.yx - b.yx, a.yy - b.yy};
  }
  friend Matrix2 operator*(double k, const Matrix2& a) {
    return {k * a.xx, k * a.xy, k * a.yx, k * a.yy};
  }
  friend Matrix2 operator*(const Matrix2& a, const Matrix2& b) {
    return {a.xx * b.xx + a.xy * b.yx, a.xx * b.xy + a.xy * b.yy,
            a.yx * b.xx + a.yy * b.yx, a.yx * b.xy + a.yy * b.yy};
  }
  friend Vector2 operator*(const Matrix2& a, const Vector2& v) {
    return {a.xx * v[0] + a.xy * v[1], a.yx * v[0] + a.yy * v[1]};
  }
  friend bool operator==(const Matrix2&, const Matrix2&) = default;
};

inline Vector2 operator+(const Vector2& a, const Vector2& b) {
  return {a[0] + b[0], a[1] + b[1]};
}

// ---------------------------------------------------------------------------
// Configuration and belief types.

struct QuadratureConfig {
  int nodes_per_axis = 200;
  int panels_per_axis = 4;
  /// The probability square [0,1]^2 is integrated as [eps, 1-eps]^2.
  double domain_margin = 1e-8;

  void validate() const {
    require(nodes_per_axis >= 2, "nodes_per_axis must be >= 2");
    require(panels_per_axis >= 1, "panels_per_axis must be >= 1");
    require(domain_margin > 0 && domain_margin < 0.5,
            "domain_margin must lie in (0, 0.5)");
  }
  friend bool operator==(const QuadratureConfig&, const QuadratureConfig&) = default;
};

/// Joint normal belief on (l0, theta): l0 is the control-arm log-odds and
/// theta the treatment effect. Marginal sds m0 and s, correlation rho.
struct BivariateNormalParams {
  double mu0 = 0;
  double m0 = 1;
  double theta0 = 0;
  double s = 1;
  double rho = 0;

  void validate() const {
    require(std::isfinite(mu0) && std::isfinite(theta0), "means must be finite");
    require(std::isfinite(m0) && m0 > 0, "m0 must be positive");
    require(std::isfinite(s) && s > 0, "s must be positive");
    require(std::isfinite(rho) && std::abs(rho) < 1, "rho must lie in (-1, 1)");
  }

  Vector2 mean() const { return {mu0, theta0}; }
  Matrix2 covariance() const {
    return Matrix2::symmetric(m0 * m0, rho * m0 * s, s * s);
  }

  /// Builds params from a mean vector and an SPD covariance.
  static BivariateNormalParams from_moments(const Vector2& mean, const Matrix2& cov) {
    const double m0 = std::sqrt(cov.xx);
    const double s = std::sqrt(cov.yy);
    BivariateNormalParams p{mean[0], m0, mean[1], s, 0.5 * (cov.xy + cov.yx) / (m0 * s)};
    p.validate();
    return p;
  }
  friend bool operator==(const BivariateNormalParams&, const BivariateNormalParams&) = default;
};

struct UnivariateNormal {
  double mean = 0;
  double sd = 1;

  void validate() const {
    require(std::isfinite(mean), "mean must be finite");
    require(std::isfinite(sd) && sd > 0, "sd must be positive");
  }
  friend bool operator==(const UnivariateNormal&, const UnivariateNormal&) = default;
};

struct IntegrationResult {
  double value = 0;
  /// Deviation between the full rule and a half-order rule on the same
  /// panels, floored at the rounding level of the sum.
  double panel_spread = 0;
};

struct Range {
  double lo = 0;
  double hi = 1;
};

inline Range probability_square(const QuadratureConfig& cfg) {
  return {cfg.domain_margin, 1.0 - cfg.domain_margin};
}

// ---------------------------------------------------------------------------
// Gauss-Legendre rules.

struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point Gauss-Legendre rule on [-1, 1]: Newton iteration on the
/// three-term recurrence from Tricomi's asymptotic guesses.
inline GaussRule gauss_legendre_rule(int n) {
  require(n >= 1, "Gauss-Legendre order must be >= 1");
  GaussRule rule;
  rule.nodes.assign(n, 0.0);
  rule.weights.assign(n, 0.0);
  const double nn = n;
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    const double angle = std::numbers::pi * (i + 0.75) / (nn + 0.5);
    double x = std::cos(angle) * (1.0 - (nn - 1.0) / (8.0 * nn * nn * nn));
    double dp = 0;
    bool converged = false;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = nn * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-14) {
        converged = true;
        // refresh derivative at the accepted node
        double q0 = 1.0, q1 = x;
        for (int k = 2; k <= n; ++k) {
          const double qk = ((2.0 * k - 1.0) * x * q1 - (k - 1.0) * q0) / k;
          q0 = q1;
          q1 = qk;
        }
        dp = nn * (x * q1 - q0) / (x * x - 1.0);
        break;
      }
    }
    if (!converged) {
      throw Error(ErrorCode::IntegrationFailure,
                  "Gauss-Legendre node iteration did not converge for n=" + std::to_string(n));
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[n - 1 - i] = x;
    rule.nodes[i] = -x;
    rule.weights[i] = rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

/// Composite rule: `panels` equal sub-intervals, `order` points each.
inline GaussRule composite_rule(Range r, int order, int panels) {
  const GaussRule base = gauss_legendre_rule(order);
  GaussRule out;
  out.nodes.reserve(static_cast<std::size_t>(order) * panels);
  out.weights.reserve(out.nodes.capacity());
  const double width = (r.hi - r.lo) / panels;
  for (int p = 0; p < panels; ++p) {
    const double a = r.lo + p * width;
    const double half = 0.5 * width;
    const double mid = a + half;
    for (int k = 0; k < order; ++k) {
      out.nodes.push_back(mid + half * base.nodes[k]);
      out.weights.push_back(half * base.weights[k]);
    }
  }
  return out;
}

namespace detail {

struct GridSum {
  double value = 0;
  double magnitude = 0;
};

/// Tensor-product sum of kernel(i, j) over the axis rules. Rows are summed
/// independently (in parallel) and reduced pairwise in row order.
template <std::size_t N, class Kernel>
std::array<GridSum, N> grid_sum(const GaussRule& u, const GaussRule& v, const Kernel& kernel) {
  using Row = std::array<GridSum, N>;
  const std::size_t rows = u.nodes.size();
  const std::size_t cols = v.nodes.size();
  std::vector<Row> row_sums(rows);
  parallel_for(rows, [&](std::size_t i) {
    Row acc{};
    for (std::size_t j = 0; j < cols; ++j) {
      const std::array<double, N> f = kernel(i, j);
      for (std::size_t k = 0; k < N; ++k) {
        if (!std::isfinite(f[k])) {
          std::ostringstream msg;
          msg.precision(17);
          msg << "non-finite integrand value at (u=" << u.nodes[i] << ", v=" << v.nodes[j] << ")";
          throw Error(ErrorCode::IntegrationFailure, msg.str());
        }
        const double wf = v.weights[j] * f[k];
        acc[k].value += wf;
        acc[k].magnitude += std::abs(wf);
      }
    }
    for (std::size_t k = 0; k < N; ++k) {
      acc[k].value *= u.weights[i];
      acc[k].magnitude *= u.weights[i];
    }
    row_sums[i] = acc;
  });
  return pairwise_reduce(row_sums, 0, rows, Row{}, [](const Row& a, const Row& b) {
    Row r;
    for (std::size_t k = 0; k < N; ++k) {
      r[k].value = a[k].value + b[k].value;
      r[k].magnitude = a[k].magnitude + b[k].magnitude;
    }
    return r;
  });
}

}  // namespace detail

/// Integrates N quantities jointly over u_range x v_range. `factory(u, v)`
/// receives the axis rules and returns a kernel (i, j) -> std::array<double, N>,
/// which lets callers tabulate per-axis terms once. The factory is invoked for
/// the full rule and for a half-order companion rule used by panel_spread.
template <std::size_t N, class KernelFactory>
std::array<IntegrationResult, N> integrate_tensor(Range u_range, Range v_range,
                                                  const QuadratureConfig& cfg,
                                                  KernelFactory&& factory) {
  cfg.validate();
  require(u_range.hi > u_range.lo && v_range.hi > v_range.lo, "empty integration range");
  const int n = cfg.nodes_per_axis;
  const int panels = cfg.panels_per_axis;

  const GaussRule u_fine = composite_rule(u_range, n, panels);
  const GaussRule v_fine = composite_rule(v_range, n, panels);
  const auto fine = detail::grid_sum<N>(u_fine, v_fine, factory(u_fine, v_fine));

  const int coarse_order = std::max(1, n / 2);
  const GaussRule u_coarse = composite_rule(u_range, coarse_order, panels);
  const GaussRule v_coarse = composite_rule(v_range, coarse_order, panels);
  const auto coarse = detail::grid_sum<N>(u_coarse, v_coarse, factory(u_coarse, v_coarse));

  std::array<IntegrationResult, N> out;
  for (std::size_t k = 0; k < N; ++k) {
    const double floor = 64.0 * 2.220446049250313e-16 * fine[k].magnitude;
    out[k] = {fine[k].value, std::abs(fine[k].value - coarse[k].value) + floor};
  }
  return out;
}

/// Composite tensor-product Gauss-Legendre estimate of the integral of
/// f(u, v) over u_range x v_range. The ranges are used as given; callers
/// integrating over the probability square pass probability_square(cfg).
template <class F>
IntegrationResult integrate_rect(F&& f, Range u_range, Range v_range,
                                 const QuadratureConfig& cfg = {}) {
  auto factory = [&f](const GaussRule& u, const GaussRule& v) {
    return [&f, &u, &v](std::size_t i, std::size_t j) {
      return std::array<double, 1>{static_cast<double>(f(u.nodes[i], v.nodes[j]))};
    };
  };
  return integrate_tensor<1>(u_range, v_range, cfg, factory)[0];
}

// ---------------------------------------------------------------------------
// Bivariate normal density.

/// Quadratic form of the standardized deviations, already divided by 1-rho^2.
inline double bvn_quadratic_form(double z_l0, double z_theta, double rho) {
  return (z_l0 * z_l0 + z_theta * z_theta - 2.0 * rho * z_l0 * z_theta) / (1.0 - rho * rho);
}

inline double bvn_normalizer(const BivariateNormalParams& p) {
  return 1.0 / (2.0 * std::numbers::pi * p.m0 * p.s * std::sqrt(1.0 - p.rho * p.rho));
}

inline double bvn_density(double l0, double theta, const BivariateNormalParams& p) {
  p.validate();
  const double q = bvn_quadratic_form((l0 - p.mu0) / p.m0, (theta - p.theta0) / p.s, p.rho);
  return bvn_normalizer(p) * std::exp(-0.5 * q);
}

inline double normal_density(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace esskit
