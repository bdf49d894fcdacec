#pragma once

// Helpers shared by the unit tests and the acceptance runner: independent
// oracles, a subprocess runner for the CLI, and golden-document discovery.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "esskit/measures.hpp"
#include "esskit/numerics.hpp"

namespace esskit::testkit {

// ---------------------------------------------------------------------------
// Oracles.

inline double log_beta_density(double p, double a, double b) {
  return (a - 1) * std::log(p) + (b - 1) * std::log1p(-p) + std::lgamma(a + b) - std::lgamma(a) -
         std::lgamma(b);
}

/// ELIR of a Beta(a, b) prior for a Bernoulli rate, computed on the natural
/// (logit) scale from first principles: the prior information is the
/// finite-difference curvature of the log prior density of eta = logit(p),
/// the unit Fisher information is p(1-p), and the ratio is averaged over the
/// prior by Gauss-Legendre quadrature in p.
inline double elir_beta_natural_scale(double a, double b) {
  auto log_prior_eta = [&](double eta) {
    const double p = expit(eta);
    return log_beta_density(p, a, b) + std::log(p) + std::log1p(-p);
  };
  const GaussRule rule = composite_rule({1e-9, 1 - 1e-9}, 200, 8);
  const double h = 1e-4;
  double sum = 0;
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
    const double p = rule.nodes[k];
    const double eta = logit(p);
    const double curvature =
        -(log_prior_eta(eta + h) - 2 * log_prior_eta(eta) + log_prior_eta(eta - h)) / (h * h);
    sum += rule.weights[k] * std::exp(log_beta_density(p, a, b)) * curvature / (p * (1 - p));
  }
  return sum;
}

/// Same on the probability scale; defined for a, b > 1 only (at a = 1 the
/// prior carries no curvature on this scale).
inline double elir_beta_probability_scale(double a, double b) {
  const GaussRule rule = composite_rule({1e-9, 1 - 1e-9}, 200, 8);
  double sum = 0;
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
    const double p = rule.nodes[k];
    const double info = (a - 1) / (p * p) + (b - 1) / ((1 - p) * (1 - p));
    sum += rule.weights[k] * std::exp(log_beta_density(p, a, b)) * info * p * (1 - p);
  }
  return sum;
}

/// |det d(l0, theta)/d(p0, p1)| by central differences of params_from_probs.
inline double finite_difference_jacobian(const EffectMeasure& m, ProbPair p, double h = 1e-6) {
  const Vector2 a = params_from_probs(m, {p.p0 + h, p.p1});
  const Vector2 b = params_from_probs(m, {p.p0 - h, p.p1});
  const Vector2 c = params_from_probs(m, {p.p0, p.p1 + h});
  const Vector2 d = params_from_probs(m, {p.p0, p.p1 - h});
  const double j00 = (a[0] - b[0]) / (2 * h), j10 = (a[1] - b[1]) / (2 * h);
  const double j01 = (c[0] - d[0]) / (2 * h), j11 = (c[1] - d[1]) / (2 * h);
  return std::abs(j00 * j11 - j01 * j10);
}

// ---------------------------------------------------------------------------
// Files and processes.

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Golden {
  std::string command;  ///< directory name: ess, fit, posterior, ...
  std::string name;
  std::filesystem::path path;
};

/// Parameter documents under <dir>/<command>/<name>.json, sorted.
inline std::vector<Golden> golden_documents(const std::filesystem::path& dir) {
  std::vector<Golden> out;
  for (const auto& cmd : std::filesystem::directory_iterator(dir)) {
    if (!cmd.is_directory()) continue;
    for (const auto& doc : std::filesystem::directory_iterator(cmd.path())) {
      if (doc.path().extension() == ".json") {
        out.push_back({cmd.path().filename().string(), doc.path().stem().string(), doc.path()});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const Golden& a, const Golden& b) { return a.path < b.path; });
  return out;
}

struct ProcessResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

inline std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'') {
      q += "'\\''";
    } else {
      q += c;
    }
  }
  return q + "'";
}

/// Runs `binary args...` through the shell with optional stdin text.
inline ProcessResult run_process(const std::string& binary, const std::vector<std::string>& args,
                                 const std::string& stdin_text = "") {
  char out_path[] = "/tmp/esskit-out-XXXXXX";
  char err_path[] = "/tmp/esskit-err-XXXXXX";
  char in_path[] = "/tmp/esskit-in-XXXXXX";
  ::close(::mkstemp(out_path));
  ::close(::mkstemp(err_path));
  ::close(::mkstemp(in_path));
  std::ofstream(in_path, std::ios::binary) << stdin_text;
  std::string cmd = shell_quote(binary);
  for (const auto& a : args) cmd += " " + shell_quote(a);
  cmd += std::string(" <") + in_path + " >" + out_path + " 2>" + err_path;
  const int status = std::system(cmd.c_str());
  ProcessResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out_path);
  r.err = read_file(err_path);
  std::remove(out_path);
  std::remove(err_path);
  std::remove(in_path);
  return r;
}

}  // namespace esskit::testkit
