#pragma once

// One parameter schema shared by the command line and the HTTP service.
// A run is described by a flat JSON object; keys that do not apply to the
// command (or to the chosen measure) are rejected so typos fail loudly.
// Responses are JSON objects carrying `engine_version` and `warnings`.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

#include "esskit/error.hpp"
#include "esskit/ess.hpp"
#include "esskit/inference.hpp"
#include "esskit/measures.hpp"
#include "esskit/numerics.hpp"
#include "esskit/simlab.hpp"
#include "esskit/version.hpp"

namespace esskit::api {

using Json = nlohmann::json;

inline constexpr std::string_view kCommands[] = {"ess", "fit", "posterior", "consistency",
                                                 "density-grid"};

// ---------------------------------------------------------------------------
// Run specifications.

/// Measure, ratio and belief hyperparameters. For mean-diff only theta0 and
/// s of `prior` are meaningful.
struct BeliefSpec {
  EffectMeasure measure;
  RandomizationRatio ratio{2, 1};
  BivariateNormalParams prior;
  QuadratureConfig quad;
  bool renormalize = false;
  /// Turn the low captured-mass warning into a LOW_CAPTURED_MASS error.
  bool strict = false;
  std::string output_format = "human";

  friend bool operator==(const BeliefSpec&, const BeliefSpec&) = default;
};

struct EssSpec : BeliefSpec {
  friend bool operator==(const EssSpec&, const EssSpec&) = default;
};

struct FitSpec {
  EffectMeasure measure;
  TwoArmBinomialData data;
  std::optional<Vector2> start;
  int max_iterations = 100;
  std::string output_format = "human";

  friend bool operator==(const FitSpec&, const FitSpec&) = default;
};

/// Binomial data come as counts or as a previously computed fit; normal data
/// as theta_hat with sigma_sq and/or arm sizes. No data echoes the prior.
struct PosteriorSpec : BeliefSpec {
  std::optional<int> y0, n0, y1, n1;
  std::optional<double> theta_hat, sigma_sq;
  std::optional<FitResult> fit;

  friend bool operator==(const PosteriorSpec&, const PosteriorSpec&) = default;
};

struct ConsistencySpec : BeliefSpec {
  double true_p0 = 0.5;
  double true_p1 = 0.5;
  int n1 = 1;
  int n0 = 1;
  SimConfig sim;
  bool verbose = false;

  friend bool operator==(const ConsistencySpec& x, const ConsistencySpec& y) {
    return static_cast<const BeliefSpec&>(x) == static_cast<const BeliefSpec&>(y) &&
           x.true_p0 == y.true_p0 && x.true_p1 == y.true_p1 && x.n1 == y.n1 && x.n0 == y.n0 &&
           x.sim.seed == y.sim.seed && x.sim.replications == y.sim.replications &&
           x.sim.continuity_correction == y.sim.continuity_correction && x.verbose == y.verbose;
  }
};

struct DensityGridSpec {
  EffectMeasure measure;
  BivariateNormalParams prior;
  int resolution = 200;
  std::string output_format = "human";

  friend bool operator==(const DensityGridSpec&, const DensityGridSpec&) = default;
};

/// Service-side guards for consistency runs.
struct RunLimits {
  std::optional<int> replication_cap;
  Deadline deadline;
};

namespace detail {

[[noreturn]] inline void usage(const std::string& message) {
  throw Error(ErrorCode::InvalidArgument, message);
}

/// Strict typed access to a flat parameter object; finish() rejects any key
/// that was never read.
class Reader {
 public:
  explicit Reader(const Json& doc) : doc_(doc) {
    if (!doc_.is_object()) usage("parameter document must be a JSON object");
  }

  bool has(const char* key) const { return doc_.contains(key) && !doc_.at(key).is_null(); }

  std::optional<double> number(const char* key) {
    if (!mark(key)) return std::nullopt;
    const Json& v = doc_.at(key);
    if (!v.is_number()) usage(std::string("'") + key + "' must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) usage(std::string("'") + key + "' must be finite");
    return x;
  }

  std::optional<std::int64_t> integer(const char* key) {
    if (!mark(key)) return std::nullopt;
    const Json& v = doc_.at(key);
    if (v.is_number_integer()) return v.get<std::int64_t>();
    if (v.is_number_float()) {
      const double x = v.get<double>();
      if (std::isfinite(x) && x == std::floor(x) && std::abs(x) < 9e15) return std::int64_t(x);
    }
    usage(std::string("'") + key + "' must be an integer");
  }

  std::optional<int> int32(const char* key) {
    const auto v = integer(key);
    if (!v) return std::nullopt;
    if (*v < -2147483647 || *v > 2147483647) usage(std::string("'") + key + "' is out of range");
    return static_cast<int>(*v);
  }

  std::optional<std::uint64_t> unsigned64(const char* key) {
    if (!mark(key)) return std::nullopt;
    const Json& v = doc_.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
    usage(std::string("'") + key + "' must be a nonnegative integer");
  }

  std::optional<bool> boolean(const char* key) {
    if (!mark(key)) return std::nullopt;
    const Json& v = doc_.at(key);
    if (!v.is_boolean()) usage(std::string("'") + key + "' must be true or false");
    return v.get<bool>();
  }

  std::optional<std::string> string(const char* key) {
    if (!mark(key)) return std::nullopt;
    const Json& v = doc_.at(key);
    if (!v.is_string()) usage(std::string("'") + key + "' must be a string");
    return v.get<std::string>();
  }

  std::optional<Json> object(const char* key) {
    if (!mark(key)) return std::nullopt;
    const Json& v = doc_.at(key);
    if (!v.is_object()) usage(std::string("'") + key + "' must be an object");
    return v;
  }

  template <class T>
  T required(std::optional<T> v, const char* key) {
    if (!v) usage(std::string("missing required parameter '") + key + "'");
    return *v;
  }

  void finish(std::string_view context) const {
    for (const auto& item : doc_.items()) {
      if (!seen_.count(item.key())) {
        usage("parameter '" + item.key() + "' does not apply to " + std::string(context));
      }
    }
  }

 private:
  bool mark(const char* key) {
    seen_.insert(key);
    return has(key);
  }

  const Json& doc_;
  std::set<std::string, std::less<>> seen_;
};

inline std::string read_format(Reader& r) {
  const std::string f = r.string("format").value_or("human");
  if (f != "human" && f != "json" && f != "csv") usage("format must be human, json or csv");
  return f;
}

inline EffectMeasure read_measure(Reader& r) {
  const MeasureKind kind = parse_measure_kind(r.required(r.string("measure"), "measure"));
  if (kind == MeasureKind::MeanDifference) {
    return EffectMeasure::mean_difference(r.number("s1sq").value_or(1.0), r.number("s0sq").value_or(1.0));
  }
  return {kind};
}

inline BivariateNormalParams read_prior(Reader& r, const EffectMeasure& m) {
  BivariateNormalParams p;
  if (m.is_binomial()) {
    p.mu0 = r.required(r.number("mu0"), "mu0");
    p.m0 = r.required(r.number("m0"), "m0");
    p.rho = r.required(r.number("rho"), "rho");
    p.theta0 = r.required(r.number("theta0"), "theta0");
    p.s = r.required(r.number("s"), "s");
    p.validate();
  } else {
    p.theta0 = r.number("theta0").value_or(0.0);
    p.s = r.required(r.number("s"), "s");
    UnivariateNormal{p.theta0, p.s}.validate();
  }
  return p;
}

inline void read_belief(Reader& r, BeliefSpec& b) {
  b.measure = read_measure(r);
  b.ratio = RandomizationRatio::parse(r.required(r.string("ratio"), "ratio"));
  b.prior = read_prior(r, b.measure);
  b.renormalize = r.boolean("renormalize").value_or(false);
  b.strict = r.boolean("strict").value_or(false);
  if (b.measure.is_binomial()) {
    b.quad.nodes_per_axis = r.int32("quad_nodes").value_or(b.quad.nodes_per_axis);
    b.quad.panels_per_axis = r.int32("quad_panels").value_or(b.quad.panels_per_axis);
    b.quad.domain_margin = r.number("quad_margin").value_or(b.quad.domain_margin);
    b.quad.validate();
  }
  b.output_format = read_format(r);
}

inline void write_belief(Json& j, const BeliefSpec& b) {
  j["measure"] = std::string(b.measure.name());
  j["ratio"] = b.ratio.to_string();
  if (b.measure.is_binomial()) {
    j["mu0"] = b.prior.mu0;
    j["m0"] = b.prior.m0;
    j["rho"] = b.prior.rho;
    j["quad_nodes"] = b.quad.nodes_per_axis;
    j["quad_panels"] = b.quad.panels_per_axis;
    j["quad_margin"] = b.quad.domain_margin;
  } else {
    j["s1sq"] = b.measure.s1_sq;
    j["s0sq"] = b.measure.s0_sq;
  }
  j["theta0"] = b.prior.theta0;
  j["s"] = b.prior.s;
  j["renormalize"] = b.renormalize;
  j["strict"] = b.strict;
  j["format"] = b.output_format;
}

inline Json matrix_json(const Matrix2& m) { return Json::array({{m.xx, m.xy}, {m.yx, m.yy}}); }

inline Matrix2 matrix_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_array() || j[0].size() != 2 || !j[1].is_array() ||
      j[1].size() != 2) {
    usage("sigma_hat must be a 2x2 array");
  }
  try {
    return {j[0][0].get<double>(), j[0][1].get<double>(), j[1][0].get<double>(), j[1][1].get<double>()};
  } catch (const Json::exception&) {
    usage("sigma_hat entries must be numbers");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Spec (de)serialization.

inline EssSpec parse_ess_spec(const Json& doc) {
  detail::Reader r(doc);
  EssSpec s;
  detail::read_belief(r, s);
  r.finish("ess for measure " + std::string(s.measure.name()));
  return s;
}

inline Json to_json(const EssSpec& s) {
  Json j = Json::object();
  detail::write_belief(j, s);
  return j;
}

inline Json fit_to_json(const FitResult& f, const EffectMeasure& m) {
  return {{"measure", std::string(m.name())},
          {"l0_hat", f.l0_hat()},
          {"theta_hat", f.theta_hat()},
          {"sigma_hat", detail::matrix_json(f.sigma_hat)},
          {"rho_hat", f.rho_hat},
          {"iterations", f.iterations},
          {"converged", f.converged},
          {"gradient_norm", f.gradient_norm}};
}

/// Reads a fit object as produced by fit_to_json (extra keys are ignored so
/// a whole fit response can be passed through).
inline FitResult fit_from_json(const Json& j, std::optional<EffectMeasure> expected = std::nullopt) {
  if (!j.is_object()) detail::usage("fit must be a JSON object");
  try {
    if (expected && j.contains("measure") &&
        parse_measure_kind(j.at("measure").get<std::string>()) != expected->kind) {
      detail::usage("fit was computed for measure '" + j.at("measure").get<std::string>() +
                    "' but the run uses '" + std::string(expected->name()) + "'");
    }
    FitResult f;
    f.nu_hat = {j.at("l0_hat").get<double>(), j.at("theta_hat").get<double>()};
    f.sigma_hat = detail::matrix_from_json(j.at("sigma_hat"));
    f.rho_hat = j.at("rho_hat").get<double>();
    f.iterations = j.value("iterations", 0);
    f.converged = j.value("converged", true);
    f.gradient_norm = j.value("gradient_norm", 0.0);
    return f;
  } catch (const Json::exception& e) {
    detail::usage(std::string("malformed fit object: ") + e.what());
  }
}

inline FitSpec parse_fit_spec(const Json& doc) {
  detail::Reader r(doc);
  FitSpec s;
  s.measure = detail::read_measure(r);
  require_binomial(s.measure);
  s.data.y0 = r.required(r.int32("y0"), "y0");
  s.data.n0 = r.required(r.int32("n0"), "n0");
  s.data.y1 = r.required(r.int32("y1"), "y1");
  s.data.n1 = r.required(r.int32("n1"), "n1");
  s.data.validate();
  const auto l0 = r.number("l0_start");
  const auto th = r.number("theta_start");
  if (l0.has_value() != th.has_value()) detail::usage("l0_start and theta_start go together");
  if (l0) s.start = Vector2{*l0, *th};
  s.max_iterations = r.int32("max_iterations").value_or(100);
  require(s.max_iterations >= 0, "max_iterations must be >= 0");
  s.output_format = detail::read_format(r);
  r.finish("fit");
  return s;
}

inline Json to_json(const FitSpec& s) {
  Json j = {{"measure", std::string(s.measure.name())},
            {"y0", s.data.y0},
            {"n0", s.data.n0},
            {"y1", s.data.y1},
            {"n1", s.data.n1},
            {"max_iterations", s.max_iterations},
            {"format", s.output_format}};
  if (s.start) {
    j["l0_start"] = (*s.start)[0];
    j["theta_start"] = (*s.start)[1];
  }
  return j;
}

inline PosteriorSpec parse_posterior_spec(const Json& doc) {
  detail::Reader r(doc);
  PosteriorSpec s;
  detail::read_belief(r, s);
  s.n0 = r.int32("n0");
  s.n1 = r.int32("n1");
  if (s.measure.is_binomial()) {
    s.y0 = r.int32("y0");
    s.y1 = r.int32("y1");
    const int given = int(s.y0.has_value()) + int(s.y1.has_value()) + int(s.n0.has_value()) +
                      int(s.n1.has_value());
    if (given != 0 && given != 4) detail::usage("binomial data need all of y0, n0, y1, n1");
    if (given == 4) TwoArmBinomialData{*s.n1, *s.y1, *s.n0, *s.y0}.validate();
    if (const auto fit = r.object("fit")) {
      if (given) detail::usage("give either counts or a fit, not both");
      s.fit = fit_from_json(*fit, s.measure);
    }
  } else {
    if (s.n0.has_value() != s.n1.has_value()) detail::usage("n1 and n0 go together");
    if (s.n1) require(*s.n1 >= 1 && *s.n0 >= 1, "arm sizes must be positive");
    s.theta_hat = r.number("theta_hat");
    s.sigma_sq = r.number("sigma_sq");
    if (s.sigma_sq) require(*s.sigma_sq > 0, "sigma_sq must be positive");
  }
  r.finish("posterior for measure " + std::string(s.measure.name()));
  return s;
}

inline Json to_json(const PosteriorSpec& s) {
  Json j = Json::object();
  detail::write_belief(j, s);
  auto put = [&](const char* key, const auto& v) {
    if (v) j[key] = *v;
  };
  put("y0", s.y0);
  put("n0", s.n0);
  put("y1", s.y1);
  put("n1", s.n1);
  put("theta_hat", s.theta_hat);
  put("sigma_sq", s.sigma_sq);
  if (s.fit) j["fit"] = fit_to_json(*s.fit, s.measure);
  return j;
}

inline ConsistencySpec parse_consistency_spec(const Json& doc) {
  detail::Reader r(doc);
  ConsistencySpec s;
  detail::read_belief(r, s);
  s.n1 = r.required(r.int32("n1"), "n1");
  s.n0 = r.required(r.int32("n0"), "n0");
  require(s.n1 >= 1 && s.n0 >= 1, "arm sizes must be positive");
  if (s.measure.is_binomial()) {
    s.true_p0 = r.required(r.number("true_p0"), "true_p0");
    s.true_p1 = r.required(r.number("true_p1"), "true_p1");
    require(s.true_p0 > 0 && s.true_p0 < 1 && s.true_p1 > 0 && s.true_p1 < 1,
            "true rates must lie in (0, 1)");
    s.sim.replications = r.int32("reps").value_or(100);
    s.sim.seed = r.unsigned64("seed").value_or(1);
    s.sim.continuity_correction = r.number("continuity_correction").value_or(0.5);
    s.sim.validate();
  }
  s.verbose = r.boolean("verbose").value_or(false);
  r.finish("consistency for measure " + std::string(s.measure.name()));
  return s;
}

inline Json to_json(const ConsistencySpec& s) {
  Json j = Json::object();
  detail::write_belief(j, s);
  j["n1"] = s.n1;
  j["n0"] = s.n0;
  if (s.measure.is_binomial()) {
    j["true_p0"] = s.true_p0;
    j["true_p1"] = s.true_p1;
    j["reps"] = s.sim.replications;
    j["seed"] = s.sim.seed;
    j["continuity_correction"] = s.sim.continuity_correction;
  }
  j["verbose"] = s.verbose;
  return j;
}

inline DensityGridSpec parse_density_grid_spec(const Json& doc) {
  detail::Reader r(doc);
  DensityGridSpec s;
  s.measure = detail::read_measure(r);
  require_binomial(s.measure);
  s.prior = detail::read_prior(r, s.measure);
  s.resolution = r.int32("resolution").value_or(200);
  require(s.resolution >= 1 && s.resolution <= 2000, "resolution must lie in [1, 2000]");
  s.output_format = detail::read_format(r);
  r.finish("density-grid");
  return s;
}

inline Json to_json(const DensityGridSpec& s) {
  return {{"measure", std::string(s.measure.name())},
          {"mu0", s.prior.mu0},
          {"m0", s.prior.m0},
          {"rho", s.prior.rho},
          {"theta0", s.prior.theta0},
          {"s", s.prior.s},
          {"resolution", s.resolution},
          {"format", s.output_format}};
}

// ---------------------------------------------------------------------------
// Result (de)serialization.

inline Json to_json(const EssResult& r) {
  return {{"ess_iu", r.ess_iu},
          {"iu_size", r.iu_size},
          {"ess_total", r.ess_total},
          {"ess_trt", r.ess_trt},
          {"ess_ctrl", r.ess_ctrl},
          {"captured_mass_z", r.captured_mass_z},
          {"expected_iu_variance", r.expected_iu_variance},
          {"renormalized", r.renormalized},
          {"integration_spread", r.integration_spread},
          {"warnings", r.warnings}};
}

inline EssResult ess_result_from_json(const Json& j) {
  EssResult r;
  r.ess_iu = j.at("ess_iu").get<double>();
  r.iu_size = j.at("iu_size").get<int>();
  r.ess_total = j.at("ess_total").get<double>();
  r.ess_trt = j.at("ess_trt").get<double>();
  r.ess_ctrl = j.at("ess_ctrl").get<double>();
  r.captured_mass_z = j.at("captured_mass_z").get<double>();
  r.expected_iu_variance = j.at("expected_iu_variance").get<double>();
  r.renormalized = j.at("renormalized").get<bool>();
  r.integration_spread = j.at("integration_spread").get<double>();
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  return r;
}

inline Json to_json(const ConsistencyReport& r) {
  return {{"prior_ess_total", r.prior_ess_total},
          {"avg_posterior_ess_total", r.avg_posterior_ess_total},
          {"mc_std_error", r.mc_std_error},
          {"consistency_gap", r.consistency_gap},
          {"current_trial_size", r.current_trial_size},
          {"replications", r.replications},
          {"corrected_replicates", r.corrected_replicates},
          {"failed_replicates", r.failed_replicates},
          {"per_replicate", r.per_replicate}};
}

inline ConsistencyReport consistency_report_from_json(const Json& j) {
  ConsistencyReport r;
  r.prior_ess_total = j.at("prior_ess_total").get<double>();
  r.avg_posterior_ess_total = j.at("avg_posterior_ess_total").get<double>();
  r.mc_std_error = j.at("mc_std_error").get<double>();
  r.consistency_gap = j.at("consistency_gap").get<double>();
  r.current_trial_size = j.at("current_trial_size").get<int>();
  r.replications = j.at("replications").get<int>();
  r.corrected_replicates = j.at("corrected_replicates").get<int>();
  r.failed_replicates = j.at("failed_replicates").get<int>();
  r.per_replicate = j.at("per_replicate").get<std::vector<double>>();
  return r;
}

inline Json to_json(const BivariateNormalParams& p) {
  return {{"mu0", p.mu0}, {"m0", p.m0}, {"theta0", p.theta0}, {"s", p.s}, {"rho", p.rho}};
}

inline Json to_json(const UnivariateNormal& p) { return {{"mean", p.mean}, {"sd", p.sd}}; }

// ---------------------------------------------------------------------------
// Running.

namespace detail {

inline void check_mass(const BeliefSpec& b, const EssResult& r, std::string_view what) {
  if (b.strict && r.captured_mass_z < kCapturedMassWarning) {
    std::ostringstream msg;
    msg << what << ": captured mass Z = " << r.captured_mass_z << " is below "
        << kCapturedMassWarning;
    throw Error(ErrorCode::LowCapturedMass, msg.str());
  }
}

inline EssResult belief_ess(const BeliefSpec& b, const BivariateNormalParams& belief,
                            std::string_view what) {
  EssResult r = b.measure.is_binomial()
                    ? ess_binomial(b.measure, belief, b.ratio, b.quad, b.renormalize)
                    : ess_normal(b.measure, b.ratio, UnivariateNormal{belief.theta0, belief.s});
  check_mass(b, r, what);
  return r;
}

inline Json envelope(Json body, const std::vector<std::string>& warnings) {
  body["engine_version"] = engine_version;
  body["warnings"] = warnings;
  return body;
}

inline void append(std::vector<std::string>& out, const std::vector<std::string>& in,
                   std::string_view prefix) {
  for (const auto& w : in) out.push_back(std::string(prefix) + w);
}

}  // namespace detail

inline Json run_ess(const EssSpec& s) {
  const EssResult r = detail::belief_ess(s, s.prior, "prior");
  Json body = {{"command", "ess"}, {"measure", std::string(s.measure.name())},
               {"ratio", s.ratio.to_string()}, {"result", to_json(r)}};
  return detail::envelope(std::move(body), r.warnings);
}

inline Json run_fit(const FitSpec& s) {
  FitOptions opt;
  opt.start = s.start;
  opt.max_iterations = s.max_iterations;
  const FitResult f = fit_two_arm(s.data, s.measure, opt);
  Json body = {{"command", "fit"}, {"result", fit_to_json(f, s.measure)}};
  return detail::envelope(std::move(body), {});
}

inline Json run_posterior(const PosteriorSpec& s) {
  std::vector<std::string> warnings;
  const EssResult prior_ess = detail::belief_ess(s, s.prior, "prior");
  detail::append(warnings, prior_ess.warnings, "prior: ");
  Json body = {{"command", "posterior"}, {"measure", std::string(s.measure.name())},
               {"ratio", s.ratio.to_string()}};
  std::optional<int> trial_size;
  EssResult post_ess;
  if (s.measure.is_binomial()) {
    std::optional<FitResult> fit = s.fit;
    if (s.y0) {
      fit = fit_two_arm({*s.n1, *s.y1, *s.n0, *s.y0}, s.measure);
      trial_size = *s.n1 + *s.n0;
    }
    BivariateNormalParams post = s.prior;
    bool has_data = false;
    if (fit) {
      post = posterior_bvn(s.prior, *fit);
      body["fit"] = fit_to_json(*fit, s.measure);
      has_data = true;
    }
    body["has_data"] = has_data;
    body["posterior"] = to_json(post);
    post_ess = detail::belief_ess(s, post, "posterior");
  } else {
    std::optional<double> sigma_sq = s.sigma_sq;
    if (s.n1) {
      trial_size = *s.n1 + *s.n0;
      if (!sigma_sq) sigma_sq = s.measure.s1_sq / *s.n1 + s.measure.s0_sq / *s.n0;
    }
    const NormalSummary summary{s.theta_hat.value_or(s.prior.theta0),
                                sigma_sq.value_or(std::numeric_limits<double>::infinity())};
    const UnivariateNormal post = posterior_normal(s.prior.theta0, s.prior.s, summary);
    body["has_data"] = sigma_sq.has_value();
    body["posterior"] = to_json(post);
    post_ess = ess_normal(s.measure, s.ratio, post);
  }
  detail::append(warnings, post_ess.warnings, "posterior: ");
  body["prior_ess"] = to_json(prior_ess);
  body["posterior_ess"] = to_json(post_ess);
  if (trial_size) {
    body["current_trial_size"] = *trial_size;
    body["consistency_gap"] = post_ess.ess_total - prior_ess.ess_total - *trial_size;
  }
  return detail::envelope(std::move(body), warnings);
}

inline Json run_consistency(const ConsistencySpec& s, const RunLimits& limits = {}) {
  std::vector<std::string> warnings;
  ConsistencyReport report;
  if (s.measure.is_binomial()) {
    if (limits.replication_cap && s.sim.replications > *limits.replication_cap) {
      throw Error(ErrorCode::ReplicationCap, "reps = " + std::to_string(s.sim.replications) +
                                                 " exceeds the replication cap of " +
                                                 std::to_string(*limits.replication_cap));
    }
    const EssResult prior_ess = detail::belief_ess(s, s.prior, "prior");
    detail::append(warnings, prior_ess.warnings, "prior: ");
    report = predictive_consistency(s.measure, s.prior, s.true_p0, s.true_p1, s.n1, s.n0, s.ratio,
                                    s.sim, s.quad, limits.deadline);
    if (report.corrected_replicates > 0) {
      warnings.push_back(std::to_string(report.corrected_replicates) +
                         " replicates had an arm with 0 or n events and were continuity-corrected");
    }
  } else {
    report = predictive_consistency_normal(s.measure, s.prior.s, s.n1, s.n0, s.ratio);
  }
  Json body = {{"command", "consistency"}, {"measure", std::string(s.measure.name())},
               {"ratio", s.ratio.to_string()}, {"result", to_json(report)}};
  return detail::envelope(std::move(body), warnings);
}

inline Json run_density_grid(const DensityGridSpec& s) {
  const auto grid = density_grid(s.measure, s.prior, s.resolution);
  std::vector<double> p0, p1, d;
  p0.reserve(grid.size());
  p1.reserve(grid.size());
  d.reserve(grid.size());
  for (const auto& pt : grid) {
    p0.push_back(pt.p0);
    p1.push_back(pt.p1);
    d.push_back(pt.density);
  }
  Json body = {{"command", "density-grid"},
               {"measure", std::string(s.measure.name())},
               {"resolution", s.resolution},
               {"result", {{"p0", p0}, {"p1", p1}, {"density", d}}}};
  return detail::envelope(std::move(body), {});
}

/// Parses `params` for `command` and runs it.
inline Json run(std::string_view command, const Json& params, const RunLimits& limits = {}) {
  if (command == "ess") return run_ess(parse_ess_spec(params));
  if (command == "fit") return run_fit(parse_fit_spec(params));
  if (command == "posterior") return run_posterior(parse_posterior_spec(params));
  if (command == "consistency") return run_consistency(parse_consistency_spec(params), limits);
  if (command == "density-grid") return run_density_grid(parse_density_grid_spec(params));
  detail::usage("unknown command '" + std::string(command) + "'");
}

inline Json error_json(const Error& e) {
  return {{"code", std::string(code_name(e.code()))},
          {"message", e.what()},
          {"engine_version", engine_version}};
}

}  // namespace esskit::api
