// esskit: effective sample size for treatment-effect borrowing.
//
// Every subcommand builds one flat parameter document (config file first,
// flags on top) and hands it to the same runner the HTTP service uses.
// Exit codes: 0 success, 1 computation error, 2 usage error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "esskit/api.hpp"
#include "esskit/service.hpp"

namespace {

using esskit::Error;
using esskit::ErrorCode;
using Json = esskit::api::Json;

enum class Kind { Number, Integer, Unsigned, Text, Flag };

struct FlagDef {
  const char* flag;
  Kind kind;
  const char* help;
};

const std::vector<FlagDef> kMeasureFlags = {
    {"measure", Kind::Text, "effect measure: mean-diff | rd | log-or | log-rr"},
    {"s1sq", Kind::Number, "treatment-arm variance (mean-diff, default 1)"},
    {"s0sq", Kind::Number, "control-arm variance (mean-diff, default 1)"},
};

const std::vector<FlagDef> kPriorFlags = {
    {"mu0", Kind::Number, "prior mean of the control log-odds l0"},
    {"m0", Kind::Number, "prior sd of l0"},
    {"theta0", Kind::Number, "prior mean of the effect"},
    {"s", Kind::Number, "prior sd of the effect"},
    {"rho", Kind::Number, "prior correlation of (l0, theta)"},
};

const std::vector<FlagDef> kBeliefFlags = {
    {"ratio", Kind::Text, "randomization ratio a:b"},
    {"renormalize", Kind::Flag, "divide by the captured mass Z"},
    {"strict", Kind::Flag, "fail instead of warning when Z < 0.95"},
    {"quad-nodes", Kind::Integer, "Gauss-Legendre nodes per panel (default 200)"},
    {"quad-panels", Kind::Integer, "panels per axis (default 4)"},
    {"quad-margin", Kind::Number, "integrate over [margin, 1 - margin]^2 (default 1e-8)"},
};

const std::vector<FlagDef> kCountFlags = {
    {"y0", Kind::Integer, "control events"},
    {"n0", Kind::Integer, "control arm size"},
    {"y1", Kind::Integer, "treatment events"},
    {"n1", Kind::Integer, "treatment arm size"},
};

std::string key_of(std::string flag) {
  for (auto& c : flag) {
    if (c == '-') c = '_';
  }
  return flag;
}

/// Collects flags as strings and converts them into typed JSON values.
class FlagSet {
 public:
  void add(CLI::App* app, const std::vector<FlagDef>& defs) {
    for (const auto& d : defs) {
      defs_.push_back(d);
      const std::string name = std::string("--") + d.flag;
      if (d.kind == Kind::Flag) {
        options_[d.flag] = app->add_flag(name, d.help);
      } else {
        options_[d.flag] = app->add_option(name, values_[d.flag], d.help);
      }
    }
  }

  void apply(Json& doc) const {
    for (const auto& d : defs_) {
      const CLI::Option* opt = options_.at(d.flag);
      if (opt->count() == 0) continue;
      const std::string key = key_of(d.flag);
      const std::string& text = d.kind == Kind::Flag ? std::string() : values_.at(d.flag);
      switch (d.kind) {
        case Kind::Flag: doc[key] = true; break;
        case Kind::Text: doc[key] = text; break;
        case Kind::Number: doc[key] = parse_number(d.flag, text); break;
        case Kind::Integer: doc[key] = parse_integer<long long>(d.flag, text); break;
        case Kind::Unsigned: doc[key] = parse_integer<unsigned long long>(d.flag, text); break;
      }
    }
  }

 private:
  static double parse_number(const char* flag, const std::string& text) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != text.size()) {
      throw Error(ErrorCode::InvalidArgument, std::string("--") + flag + ": '" + text + "' is not a number");
    }
    return v;
  }

  template <class T>
  static T parse_integer(const char* flag, const std::string& text) {
    T v{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
      throw Error(ErrorCode::InvalidArgument, std::string("--") + flag + ": '" + text + "' is not an integer");
    }
    return v;
  }

  std::vector<FlagDef> defs_;
  std::map<std::string, std::string> values_;
  std::map<std::string, CLI::Option*> options_;
};

std::string read_source(const std::string& path) {
  if (path == "-") {
    return {std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>()};
  }
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot read '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Json read_json(const std::string& path) {
  try {
    return Json::parse(read_source(path));
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::InvalidArgument, "'" + path + "' is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Output.

std::string num(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string brief(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string csv_cell(const Json& v) {
  if (v.is_number_float()) return full(v.get<double>());
  if (v.is_number()) return v.dump();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  std::string s = v.is_string() ? v.get<std::string>() : v.dump();
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char c : s) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  return quoted + "\"";
}

void csv_table(std::ostream& out, const std::vector<std::string>& header,
               const std::vector<std::vector<Json>>& rows) {
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\r\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << csv_cell(row[i]);
    out << "\r\n";
  }
}

const std::vector<std::string> kEssFields = {"ess_iu", "iu_size", "ess_total", "ess_trt", "ess_ctrl",
                                             "captured_mass_z", "expected_iu_variance", "renormalized",
                                             "integration_spread"};

void human_ess(std::ostream& out, const Json& r, const std::string& indent = "") {
  out << indent << "ESS per IU      " << num(r["ess_iu"], 2) << "  (IU = " << r["iu_size"].get<int>()
      << " subjects)\n";
  out << indent << "ESS total       " << num(r["ess_total"], 2) << "\n";
  out << indent << "ESS treatment   " << num(r["ess_trt"], 2) << "\n";
  out << indent << "ESS control     " << num(r["ess_ctrl"], 2) << "\n";
  out << indent << "captured mass   " << num(r["captured_mass_z"], 4)
      << (r["renormalized"].get<bool>() ? "  (renormalized)" : "") << "\n";
}

void write_ess(std::ostream& out, const Json& res, const std::string& format) {
  const Json& r = res["result"];
  if (format == "csv") {
    std::vector<std::string> header = {"measure", "ratio"};
    std::vector<Json> row = {res["measure"], res["ratio"]};
    for (const auto& f : kEssFields) {
      header.push_back(f);
      row.push_back(r[f]);
    }
    csv_table(out, header, {row});
    return;
  }
  out << "measure " << res["measure"].get<std::string>() << ", ratio " << res["ratio"].get<std::string>()
      << "\n";
  human_ess(out, r);
}

void write_fit(std::ostream& out, const Json& res, const std::string& format) {
  const Json& r = res["result"];
  const Json& S = r["sigma_hat"];
  if (format == "csv") {
    csv_table(out,
              {"measure", "l0_hat", "theta_hat", "sigma_00", "sigma_01", "sigma_11", "rho_hat",
               "iterations", "converged", "gradient_norm"},
              {{r["measure"], r["l0_hat"], r["theta_hat"], S[0][0], S[0][1], S[1][1], r["rho_hat"],
                r["iterations"], r["converged"], r["gradient_norm"]}});
    return;
  }
  auto g = [](const Json& v) { return brief(v.get<double>()); };
  out << "measure    " << r["measure"].get<std::string>() << "\n";
  out << "l0_hat     " << num(r["l0_hat"], 3) << "\n";
  out << "theta_hat  " << num(r["theta_hat"], 3) << "\n";
  out << "sigma_hat  [[" << g(S[0][0]) << ", " << g(S[0][1]) << "], [" << g(S[1][0]) << ", "
      << g(S[1][1]) << "]]\n";
  out << "rho_hat    " << num(r["rho_hat"], 3) << "\n";
  out << "iterations " << r["iterations"].get<int>() << "\n";
}

void write_posterior(std::ostream& out, const Json& res, const std::string& format) {
  const Json& post = res["posterior"];
  if (format == "csv") {
    std::vector<std::string> header = {"measure", "ratio", "has_data"};
    std::vector<Json> row = {res["measure"], res["ratio"], res["has_data"]};
    for (const auto& item : post.items()) {
      header.push_back("posterior_" + item.key());
      row.push_back(item.value());
    }
    for (const char* which : {"prior_ess", "posterior_ess"}) {
      for (const auto& f : kEssFields) {
        header.push_back(std::string(which) + "_" + f);
        row.push_back(res[which][f]);
      }
    }
    header.push_back("current_trial_size");
    row.push_back(res.value("current_trial_size", Json()));
    header.push_back("consistency_gap");
    row.push_back(res.value("consistency_gap", Json()));
    for (auto& cell : row) {
      if (cell.is_null()) cell = "";
    }
    csv_table(out, header, {row});
    return;
  }
  out << "measure " << res["measure"].get<std::string>() << ", ratio " << res["ratio"].get<std::string>()
      << (res["has_data"].get<bool>() ? "" : "  (no data: prior echoed)") << "\n";
  out << "posterior";
  for (const auto& item : post.items()) out << "  " << item.key() << "=" << brief(item.value());
  out << "\nprior\n";
  human_ess(out, res["prior_ess"], "  ");
  out << "posterior\n";
  human_ess(out, res["posterior_ess"], "  ");
  if (res.contains("consistency_gap")) {
    out << "current trial   " << res["current_trial_size"].get<int>() << " subjects\n";
    out << "gap             " << num(res["consistency_gap"], 2) << "\n";
  }
}

void write_consistency(std::ostream& out, const Json& res, const std::string& format, bool verbose) {
  const Json& r = res["result"];
  const auto& reps = r["per_replicate"];
  if (format == "csv") {
    if (verbose) {
      std::vector<std::vector<Json>> rows;
      for (std::size_t i = 0; i < reps.size(); ++i) rows.push_back({Json(i + 1), reps[i]});
      csv_table(out, {"replicate", "posterior_ess_total"}, rows);
    } else {
      csv_table(out,
                {"measure", "ratio", "prior_ess_total", "avg_posterior_ess_total", "mc_std_error",
                 "consistency_gap", "current_trial_size", "replications", "corrected_replicates",
                 "failed_replicates"},
                {{res["measure"], res["ratio"], r["prior_ess_total"], r["avg_posterior_ess_total"],
                  r["mc_std_error"], r["consistency_gap"], r["current_trial_size"], r["replications"],
                  r["corrected_replicates"], r["failed_replicates"]}});
    }
    return;
  }
  out << "measure " << res["measure"].get<std::string>() << ", ratio " << res["ratio"].get<std::string>()
      << ", " << r["replications"].get<int>() << " replicates\n";
  out << "prior ESS           " << num(r["prior_ess_total"], 2) << "\n";
  out << "avg posterior ESS   " << num(r["avg_posterior_ess_total"], 2) << "  (MC s.e. "
      << num(r["mc_std_error"], 2) << ")\n";
  out << "current trial       " << r["current_trial_size"].get<int>() << "\n";
  out << "gap                 " << num(r["consistency_gap"], 2) << "\n";
  if (verbose) {
    for (std::size_t i = 0; i < reps.size(); ++i) {
      out << "  replicate " << i + 1 << "  " << num(reps[i], 2) << "\n";
    }
  }
}

void write_density_grid(std::ostream& out, const Json& res) {
  const Json& r = res["result"];
  const auto& p0 = r["p0"];
  const auto& p1 = r["p1"];
  const auto& d = r["density"];
  out << "p0,p1,density\r\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << full(p0[i]) << "," << full(p1[i]) << "," << full(d[i]) << "\r\n";
  }
}

void write_result(std::ostream& out, const std::string& command, const Json& res,
                  const std::string& format, bool verbose) {
  if (format == "json") {
    out << res.dump(2) << "\n";
  } else if (command == "ess") {
    write_ess(out, res, format);
  } else if (command == "fit") {
    write_fit(out, res, format);
  } else if (command == "posterior") {
    write_posterior(out, res, format);
  } else if (command == "consistency") {
    write_consistency(out, res, format, verbose);
  } else {
    write_density_grid(out, res);
  }
}

// ---------------------------------------------------------------------------

struct Command {
  CLI::App* app = nullptr;
  FlagSet flags;
  std::string config;
  std::string output;
  std::string format;
  std::string fit_file;
  CLI::Option* format_opt = nullptr;
};

void add_common(Command& c) {
  c.app->add_option("--config", c.config, "JSON parameter document; flags override its keys");
  c.app->add_option("--output,-o", c.output, "write the report to a file instead of stdout");
  c.format_opt = c.app->add_option("--format", c.format, "human | json | csv (default human)");
}

Json build_params(const Command& c) {
  Json doc = c.config.empty() ? Json::object() : read_json(c.config);
  if (!doc.is_object()) throw Error(ErrorCode::InvalidArgument, "config must be a JSON object");
  c.flags.apply(doc);
  if (c.format_opt->count() > 0) doc["format"] = c.format;
  if (!c.fit_file.empty()) {
    Json fit = read_json(c.fit_file);
    // Accept a whole `fit --format json` response as well as its result.
    if (fit.is_object() && fit.contains("result")) fit = fit["result"];
    doc["fit"] = fit;
  }
  return doc;
}

int run_command(const std::string& name, const Command& c) {
  const Json params = build_params(c);
  const std::string format = params.value("format", std::string("human"));
  const bool verbose = params.value("verbose", false);
  const Json res = esskit::api::run(name, params);
  for (const auto& w : res["warnings"]) std::cerr << "warning: " << w.get<std::string>() << "\n";
  if (c.output.empty()) {
    write_result(std::cout, name, res, format, verbose);
  } else {
    std::ofstream out(c.output, std::ios::binary);
    if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write '" + c.output + "'");
    write_result(out, name, res, format, verbose);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Effective sample size of priors on a treatment effect (ELIR)", "esskit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(esskit::engine_version));

  std::map<std::string, Command> commands;
  auto make = [&](const std::string& name, const std::string& help) -> Command& {
    Command& c = commands[name];
    c.app = app.add_subcommand(name, help);
    add_common(c);
    return c;
  };

  {
    Command& c = make("ess", "prior ESS at IU, total and per-arm level");
    c.flags.add(c.app, kMeasureFlags);
    c.flags.add(c.app, kPriorFlags);
    c.flags.add(c.app, kBeliefFlags);
  }
  {
    Command& c = make("fit", "maximum-likelihood fit of two-arm binomial counts");
    c.flags.add(c.app, {kMeasureFlags[0]});
    c.flags.add(c.app, kCountFlags);
    c.flags.add(c.app, {{"l0-start", Kind::Number, "Newton-Raphson start for l0"},
                        {"theta-start", Kind::Number, "Newton-Raphson start for theta"},
                        {"max-iterations", Kind::Integer, "iteration limit (default 100)"}});
  }
  {
    Command& c = make("posterior", "posterior belief and posterior ESS");
    c.flags.add(c.app, kMeasureFlags);
    c.flags.add(c.app, kPriorFlags);
    c.flags.add(c.app, kBeliefFlags);
    c.flags.add(c.app, kCountFlags);
    c.flags.add(c.app, {{"theta-hat", Kind::Number, "observed effect (mean-diff)"},
                        {"sigma-sq", Kind::Number, "sampling variance of theta-hat (mean-diff)"}});
    c.app->add_option("--fit", c.fit_file, "fit JSON from `esskit fit --format json` ('-' for stdin)");
  }
  {
    Command& c = make("consistency", "predictive-consistency simulation");
    c.flags.add(c.app, kMeasureFlags);
    c.flags.add(c.app, kPriorFlags);
    c.flags.add(c.app, kBeliefFlags);
    c.flags.add(c.app, {{"true-p0", Kind::Number, "true control event rate"},
                        {"true-p1", Kind::Number, "true treatment event rate"},
                        {"n1", Kind::Integer, "current treatment arm size"},
                        {"n0", Kind::Integer, "current control arm size"},
                        {"reps", Kind::Integer, "replications (default 100)"},
                        {"seed", Kind::Unsigned, "random seed (default 1)"},
                        {"continuity-correction", Kind::Number, "added to 0/n cells (default 0.5)"},
                        {"verbose", Kind::Flag, "list per-replicate posterior ESS"}});
  }
  {
    Command& c = make("density-grid", "induced (p0, p1) density on a grid, as CSV");
    c.flags.add(c.app, {kMeasureFlags[0]});
    c.flags.add(c.app, kPriorFlags);
    c.flags.add(c.app, {{"resolution", Kind::Integer, "cells per axis (default 200)"}});
  }

  esskit::ServiceOptions service;
  std::string bind = "127.0.0.1";
  int port = 8080;
  int timeout_s = 60;
  CLI::App* serve = app.add_subcommand("serve", "HTTP API (and the UI when --ui-dir is given)");
  serve->add_option("--port", port, "TCP port (default 8080)");
  serve->add_option("--bind", bind, "bind address (default 127.0.0.1)");
  serve->add_option("--ui-dir", service.ui_dir, "static UI assets served at /");
  serve->add_option("--cors-origin", service.cors_origin, "Access-Control-Allow-Origin (default *)");
  serve->add_option("--replication-cap", service.replication_cap, "largest consistency run (default 10000)");
  serve->add_option("--timeout", timeout_s, "request timeout in seconds (default 60)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (serve->parsed()) {
      service.request_timeout = std::chrono::seconds(timeout_s);
      esskit::Service server(service);
      std::cerr << "esskit " << esskit::engine_version << " listening on http://" << bind << ":" << port
                << "\n";
      if (!server.listen(bind, port)) {
        std::cerr << "error: cannot listen on " << bind << ":" << port << "\n";
        return 1;
      }
      return 0;
    }
    for (auto& [name, c] : commands) {
      if (c.app->parsed()) return run_command(name, c);
    }
  } catch (const Error& e) {
    std::cerr << "error [" << esskit::code_name(e.code()) << "]: " << e.what() << "\n";
    return e.is_usage_error() ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
