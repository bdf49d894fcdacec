#pragma once

// Seeded Monte Carlo experiments: an independent estimate of the prior
// expected IU variance, the simulation-based log-OR ESS with sample
// proportions, and the predictive-consistency harness.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

#include "esskit/detail/parallel.hpp"
#include "esskit/detail/random.hpp"
#include "esskit/error.hpp"
#include "esskit/ess.hpp"
#include "esskit/inference.hpp"
#include "esskit/measures.hpp"
#include "esskit/numerics.hpp"

namespace esskit {

struct SimConfig {
  std::uint64_t seed = 1;
  int replications = 100;
  /// Added to events (and twice to trials) in arms with 0 or n events.
  double continuity_correction = 0.5;

  void validate() const {
    require(replications >= 1, "replications must be >= 1");
    require(continuity_correction >= 0 && std::isfinite(continuity_correction),
            "continuity correction must be nonnegative");
  }
};

struct McEstimate {
  double estimate = 0;
  double std_error = 0;
  double acceptance_rate = 0;
  std::int64_t accepted = 0;
};

struct SmallSampleEss {
  double ess_iu = 0;      ///< in units of the enlarged IU (k*a : k*b)
  double ess_total = 0;
  /// Average simulated Fisher information per base IU (a : b).
  double mean_unit_information = 0;
  double degenerate_fraction = 0;
  int replicates_used = 0;
};

struct ConsistencyReport {
  double prior_ess_total = 0;
  double avg_posterior_ess_total = 0;
  double mc_std_error = 0;
  double consistency_gap = 0;
  int current_trial_size = 0;
  int replications = 0;
  int corrected_replicates = 0;
  int failed_replicates = 0;
  std::vector<double> per_replicate;
};

namespace detail {

inline constexpr std::int64_t kSampleBlock = 4096;

/// (l0, theta) draw from the bivariate normal.
template <class Rng>
Vector2 draw_bvn(const BivariateNormalParams& p, Rng& rng) {
  std::normal_distribution<double> std_normal;
  const double z1 = std_normal(rng);
  const double z2 = std_normal(rng);
  return {p.mu0 + p.m0 * z1, p.theta0 + p.s * (p.rho * z1 + std::sqrt(1 - p.rho * p.rho) * z2)};
}

struct Moments {
  std::int64_t count = 0;
  double mean = 0;
  double m2 = 0;

  void add(double x) {
    ++count;
    const double d = x - mean;
    mean += d / count;
    m2 += d * (x - mean);
  }
  static Moments merge(const Moments& a, const Moments& b) {
    if (a.count == 0) return b;
    if (b.count == 0) return a;
    Moments r;
    r.count = a.count + b.count;
    const double d = b.mean - a.mean;
    r.mean = a.mean + d * b.count / r.count;
    r.m2 = a.m2 + b.m2 + d * d * double(a.count) * double(b.count) / r.count;
    return r;
  }
  double variance() const { return count > 1 ? m2 / (count - 1) : 0.0; }
};

inline double corrected_rate(int events, int trials, double cc, bool& corrected) {
  if ((events == 0 || events == trials) && cc > 0) {
    corrected = true;
    return (events + cc) / (trials + 2 * cc);
  }
  return double(events) / trials;
}

}  // namespace detail

/// Monte Carlo estimate of E[sigma_IU^2] over the prior, conditional on a
/// valid rate pair. cfg.replications is the number of prior draws.
inline McEstimate mc_expected_iu_variance(const EffectMeasure& measure,
                                          const BivariateNormalParams& prior,
                                          const RandomizationRatio& ratio, const SimConfig& cfg) {
  require_binomial(measure);
  prior.validate();
  ratio.validate();
  cfg.validate();
  const std::int64_t total = cfg.replications;
  const std::int64_t blocks = (total + detail::kSampleBlock - 1) / detail::kSampleBlock;
  std::vector<detail::Moments> partial(static_cast<std::size_t>(blocks));
  detail::parallel_for(partial.size(), [&](std::size_t block) {
    auto rng = detail::substream(cfg.seed, block);
    const std::int64_t begin = static_cast<std::int64_t>(block) * detail::kSampleBlock;
    const std::int64_t end = std::min(total, begin + detail::kSampleBlock);
    detail::Moments m;
    for (std::int64_t k = begin; k < end; ++k) {
      const Vector2 nu = detail::draw_bvn(prior, rng);
      if (const auto pair = probs_from_params(measure, nu[0], nu[1])) {
        m.add(iu_variance(measure, *pair, ratio));
      }
    }
    partial[block] = m;
  });
  const detail::Moments all = detail::pairwise_reduce(partial, 0, partial.size(), detail::Moments{},
                                                      &detail::Moments::merge);
  McEstimate r;
  r.accepted = all.count;
  r.acceptance_rate = double(all.count) / double(total);
  if (r.acceptance_rate < 0.5) {
    std::ostringstream msg;
    msg << "only " << r.acceptance_rate << " of prior draws map to valid rate pairs";
    throw Error(ErrorCode::UnreliablePrior, msg.str());
  }
  r.estimate = all.mean;
  r.std_error = std::sqrt(all.variance() / double(all.count));
  return r;
}

/// Log-OR ESS with the Fisher information of each prior draw estimated by
/// simulation: binomial counts for an IU of k*a treatment and k*b control
/// subjects, sample proportions in the variance, and the information taken
/// as the mean of 1/sigma_hat^2 over `inner_draws` simulated IUs.
inline SmallSampleEss small_sample_ess_logor(const BivariateNormalParams& prior,
                                             const RandomizationRatio& ratio, int iu_multiplier,
                                             const SimConfig& cfg, int inner_draws = 32) {
  prior.validate();
  ratio.validate();
  cfg.validate();
  require(iu_multiplier >= 1, "iu_multiplier must be >= 1");
  require(inner_draws >= 1, "inner_draws must be >= 1");
  const auto measure = EffectMeasure::log_odds_ratio();
  const int n1 = ratio.a * iu_multiplier;
  const int n0 = ratio.b * iu_multiplier;
  const double cc = cfg.continuity_correction;

  struct Replicate {
    bool used = false;
    double ess = 0;
    double unit_info = 0;
    int degenerate = 0;
  };
  std::vector<Replicate> reps(static_cast<std::size_t>(cfg.replications));
  detail::parallel_for(reps.size(), [&](std::size_t r) {
    auto rng = detail::substream(cfg.seed, r);
    const Vector2 nu = detail::draw_bvn(prior, rng);
    const auto pair = probs_from_params(measure, nu[0], nu[1]);
    if (!pair) return;
    std::binomial_distribution<int> trt(n1, pair->p1);
    std::binomial_distribution<int> ctl(n0, pair->p0);
    double info_sum = 0;
    int used = 0;
    for (int d = 0; d < inner_draws; ++d) {
      const int y1 = trt(rng);
      const int y0 = ctl(rng);
      bool corrected = false;
      const double ph1 = detail::corrected_rate(y1, n1, cc, corrected);
      const double ph0 = detail::corrected_rate(y0, n0, cc, corrected);
      if (corrected) ++reps[r].degenerate;
      if (!(ph1 > 0 && ph1 < 1 && ph0 > 0 && ph0 < 1)) continue;
      const double var = 1.0 / (n1 * ph1 * (1 - ph1)) + 1.0 / (n0 * ph0 * (1 - ph0));
      info_sum += 1.0 / var;
      ++used;
    }
    if (used == 0) return;
    const double info = info_sum / used;
    reps[r].used = true;
    reps[r].ess = 1.0 / (prior.s * prior.s * info);
    reps[r].unit_info = info / iu_multiplier;
  });

  SmallSampleEss out;
  double ess_sum = 0, info_sum = 0;
  long degenerate = 0;
  for (const auto& rep : reps) {
    degenerate += rep.degenerate;
    if (!rep.used) continue;
    ++out.replicates_used;
    ess_sum += rep.ess;
    info_sum += rep.unit_info;
  }
  if (out.replicates_used == 0) {
    throw Error(ErrorCode::EstimationFailure, "every simulated replicate was degenerate");
  }
  out.ess_iu = ess_sum / out.replicates_used;
  out.ess_total = out.ess_iu * (n1 + n0);
  out.mean_unit_information = info_sum / out.replicates_used;
  out.degenerate_fraction = double(degenerate) / (double(cfg.replications) * inner_draws);
  return out;
}

using Deadline = std::optional<std::chrono::steady_clock::time_point>;

/// Simulates current trials at the true rates, fits each, updates the prior
/// and records the posterior ESS (total subjects). Arms with 0 or n events
/// are continuity-corrected; more than 1% failed replicates is an error.
inline ConsistencyReport predictive_consistency(const EffectMeasure& measure,
                                                const BivariateNormalParams& prior, double true_p0,
                                                double true_p1, int n1, int n0,
                                                const RandomizationRatio& ratio, const SimConfig& cfg,
                                                const QuadratureConfig& quad = {},
                                                Deadline deadline = std::nullopt) {
  require_binomial(measure);
  prior.validate();
  ratio.validate();
  cfg.validate();
  quad.validate();
  require(true_p0 > 0 && true_p0 < 1 && true_p1 > 0 && true_p1 < 1, "true rates must lie in (0, 1)");
  require(n1 >= 1 && n0 >= 1, "current trial arm sizes must be positive");

  ConsistencyReport report;
  report.prior_ess_total = ess_binomial(measure, prior, ratio, quad).ess_total;
  report.current_trial_size = n1 + n0;

  struct Replicate {
    bool ok = false;
    bool corrected = false;
    double ess_total = 0;
  };
  std::vector<Replicate> reps(static_cast<std::size_t>(cfg.replications));
  detail::parallel_for(reps.size(), [&](std::size_t r) {
    if (deadline && std::chrono::steady_clock::now() > *deadline) {
      throw Error(ErrorCode::Timeout, "consistency run exceeded its deadline");
    }
    auto rng = detail::substream(cfg.seed, r);
    std::binomial_distribution<int> trt(n1, true_p1);
    std::binomial_distribution<int> ctl(n0, true_p0);
    const int y1 = trt(rng);
    const int y0 = ctl(rng);
    detail::Counts counts{double(y0), double(n0), double(y1), double(n1)};
    const double cc = cfg.continuity_correction;
    auto correct = [&](double& y, double& n) {
      if ((y == 0 || y == n) && cc > 0) {
        y += cc;
        n += 2 * cc;
        reps[r].corrected = true;
      }
    };
    correct(counts.y0, counts.n0);
    correct(counts.y1, counts.n1);
    try {
      const FitResult fit = detail::fit_counts(measure, counts);
      const auto posterior = posterior_bvn(prior, fit);
      reps[r].ess_total = posterior_ess(measure, posterior, ratio, quad).ess_total;
      reps[r].ok = true;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Timeout) throw;
    }
  });

  for (const auto& rep : reps) {
    if (rep.corrected) ++report.corrected_replicates;
    if (!rep.ok) {
      ++report.failed_replicates;
      continue;
    }
    report.per_replicate.push_back(rep.ess_total);
  }
  if (report.failed_replicates * 100 > cfg.replications) {
    std::ostringstream msg;
    msg << report.failed_replicates << " of " << cfg.replications
        << " replicates failed to produce a posterior (limit 1%)";
    throw Error(ErrorCode::TooManyFailures, msg.str());
  }
  detail::Moments m;
  for (double v : report.per_replicate) m.add(v);
  report.replications = static_cast<int>(report.per_replicate.size());
  double sum = 0;
  for (double v : report.per_replicate) sum += v;
  report.avg_posterior_ess_total = sum / report.replications;
  report.mc_std_error = std::sqrt(m.variance() / report.replications);
  report.consistency_gap =
      report.avg_posterior_ess_total - report.prior_ess_total - report.current_trial_size;
  return report;
}

/// Normal endpoint with known variances: the posterior ESS is available in
/// closed form, so no simulation is needed and the report has one entry.
inline ConsistencyReport predictive_consistency_normal(const EffectMeasure& measure, double prior_s,
                                                       int n1, int n0,
                                                       const RandomizationRatio& ratio) {
  require(measure.kind == MeasureKind::MeanDifference, "normal consistency needs mean-diff");
  require(n1 >= 1 && n0 >= 1, "current trial arm sizes must be positive");
  ConsistencyReport report;
  report.prior_ess_total = ess_normal(measure, ratio, prior_s).ess_total;
  report.current_trial_size = n1 + n0;
  const NormalSummary summary{0.0, measure.s1_sq / n1 + measure.s0_sq / n0};
  const UnivariateNormal post = posterior_normal(0.0, prior_s, summary);
  report.per_replicate = {posterior_ess(measure, post, ratio).ess_total};
  report.replications = 1;
  report.avg_posterior_ess_total = report.per_replicate.front();
  report.consistency_gap =
      report.avg_posterior_ess_total - report.prior_ess_total - report.current_trial_size;
  return report;
}

}  // namespace esskit
