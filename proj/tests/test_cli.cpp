#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "esskit/api.hpp"
#include "support.hpp"

using namespace esskit;
using api::Json;
using testkit::run_process;

namespace {

const std::string kCli = ESSKIT_CLI_PATH;

const std::vector<std::string> kRdPrior = {"--measure", "rd",    "--ratio",  "2:1", "--mu0",
                                            "-1",        "--m0",  "1",        "--rho", "-0.8",
                                            "--theta0",  "0.3",   "--s",      "0.1"};

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

testkit::ProcessResult cli(const std::vector<std::string>& args, const std::string& input = "") {
  return run_process(kCli, args, input);
}

Json cli_json(const std::vector<std::string>& args, const std::string& input = "") {
  const auto r = cli(cat(args, {"--format", "json"}), input);
  EXPECT_EQ(r.exit_code, 0) << r.err;
  return Json::parse(r.out);
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

}  // namespace

TEST(CliEss, NormalReferenceHuman) {
  const auto r = cli({"ess", "--measure", "mean-diff", "--ratio", "2:1", "--s1sq", "1", "--s0sq", "1", "--s", "0.5"});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("ESS total       18.00"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("ESS treatment   12.00"), std::string::npos);
  EXPECT_NE(r.out.find("ESS control     6.00"), std::string::npos);
}

TEST(CliEss, RiskDifferenceReference) {
  const Json res = cli_json(cat({"ess"}, kRdPrior));
  EXPECT_NEAR(res["result"]["ess_total"].get<double>(), 86.98, 0.05);
  const auto human = cli(cat({"ess"}, kRdPrior));
  EXPECT_NE(human.out.find("86.98"), std::string::npos) << human.out;
}

TEST(CliEss, LogOddsRatioReference) {
  const Json res = cli_json({"ess", "--measure", "log-or", "--ratio", "2:1", "--mu0", "-1", "--m0", "0.5",
                             "--rho", "-0.8", "--theta0", "0", "--s", "1"});
  EXPECT_NEAR(res["result"]["ess_total"].get<double>(), 25.29, 0.05);
}

TEST(CliEss, JsonParsesBackLosslessly) {
  const Json res = cli_json(cat({"ess"}, kRdPrior));
  const EssResult back = api::ess_result_from_json(res["result"]);
  const auto direct = ess_binomial(EffectMeasure::risk_difference(), {-1, 1, 0.3, 0.1, -0.8}, {2, 1});
  EXPECT_EQ(back.ess_total, direct.ess_total);
  EXPECT_EQ(back.ess_iu, direct.ess_iu);
  EXPECT_EQ(back.captured_mass_z, direct.captured_mass_z);
  EXPECT_EQ(back.integration_spread, direct.integration_spread);
}

TEST(CliEss, CsvHasHeaderAndFullPrecision) {
  const auto r = cli(cat({"ess"}, cat(kRdPrior, {"--format", "csv"})));
  ASSERT_EQ(r.exit_code, 0);
  const auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].rfind("measure,ratio,ess_iu,iu_size,ess_total", 0), 0u);
  const auto direct = ess_binomial(EffectMeasure::risk_difference(), {-1, 1, 0.3, 0.1, -0.8}, {2, 1});
  std::istringstream row(rows[1]);
  std::vector<std::string> cells;
  for (std::string c; std::getline(row, c, ',');) cells.push_back(c);
  ASSERT_GE(cells.size(), 5u);
  EXPECT_EQ(std::stod(cells[4]), direct.ess_total);
}

TEST(CliEss, ConfigFileWithFlagOverride) {
  const auto doc = std::filesystem::path(ESSKIT_GOLDEN_DIR) / "ess" / "rd_theta0_03_2to1.json";
  const Json from_config = cli_json({"ess", "--config", doc.string()});
  EXPECT_NEAR(from_config["result"]["ess_total"].get<double>(), 86.98, 0.05);
  const Json overridden = cli_json({"ess", "--config", doc.string(), "--theta0", "0.4"});
  EXPECT_NEAR(overridden["result"]["ess_total"].get<double>(), 81.53, 0.05);
}

TEST(CliEss, OutputFile) {
  const auto path = std::filesystem::temp_directory_path() / "esskit-cli-output.json";
  const auto r = cli(cat({"ess"}, cat(kRdPrior, {"--format", "json", "--output", path.string()})));
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_TRUE(r.out.empty());
  EXPECT_NEAR(Json::parse(testkit::read_file(path))["result"]["ess_total"].get<double>(), 86.98, 0.05);
  std::filesystem::remove(path);
}

TEST(CliEss, WarningsGoToStderr) {
  const auto r = cli({"ess", "--measure", "rd", "--ratio", "2:1", "--mu0", "1.386", "--m0", "0.3", "--rho", "0",
                      "--theta0", "0.2", "--s", "0.1", "--format", "json"});
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_NE(r.err.find("warning: captured mass"), std::string::npos) << r.err;
  EXPECT_EQ(Json::parse(r.out)["warnings"].size(), 1u);
  const auto strict = cli({"ess", "--measure", "rd", "--ratio", "2:1", "--mu0", "1.386", "--m0", "0.3", "--rho",
                           "0", "--theta0", "0.2", "--s", "0.1", "--strict"});
  EXPECT_EQ(strict.exit_code, 1);
  EXPECT_NE(strict.err.find("LOW_CAPTURED_MASS"), std::string::npos);
}

TEST(CliExitCodes, UsageErrorsAreTwo) {
  EXPECT_EQ(cli({}).exit_code, 2);
  EXPECT_EQ(cli({"ess", "--bogus"}).exit_code, 2);
  EXPECT_EQ(cli({"ess", "--measure", "hr", "--ratio", "2:1", "--s", "1"}).exit_code, 2);
  EXPECT_EQ(cli({"ess", "--measure", "rd", "--ratio", "2:1", "--mu0", "-1", "--m0", "1", "--rho", "1.5",
                 "--theta0", "0.3", "--s", "0.1"})
                .exit_code,
            2);
  EXPECT_EQ(cli({"ess", "--measure", "mean-diff", "--ratio", "2:1", "--s", "abc"}).exit_code, 2);
  EXPECT_EQ(cli({"ess", "--measure", "mean-diff", "--ratio", "2:1"}).exit_code, 2);
  EXPECT_EQ(cli({"ess", "--config", "/nonexistent/params.json"}).exit_code, 2);
  EXPECT_EQ(cli({"density-grid", "--measure", "rd", "--mu0", "-1", "--m0", "1", "--rho", "0", "--theta0", "0",
                 "--s", "0.1", "--resolution", "0"})
                .exit_code,
            2);
  EXPECT_EQ(cli({"ess", "--config", "-"}, "{not json").exit_code, 2);
}

TEST(CliExitCodes, HelpAndVersionSucceed) {
  EXPECT_EQ(cli({"--help"}).exit_code, 0);
  const auto v = cli({"--version"});
  EXPECT_EQ(v.exit_code, 0);
  EXPECT_NE(v.out.find(engine_version), std::string::npos);
}

TEST(CliFit, ExternalTrial) {
  const Json res = cli_json({"fit", "--measure", "rd", "--y0", "20", "--n0", "100", "--y1", "70", "--n1", "200"});
  EXPECT_NEAR(res["result"]["rho_hat"].get<double>(), -0.765, 1e-3);
  const auto human = cli({"fit", "--measure", "rd", "--y0", "20", "--n0", "100", "--y1", "70", "--n1", "200"});
  EXPECT_NE(human.out.find("rho_hat    -0.765"), std::string::npos) << human.out;
}

TEST(CliFit, EqualRatesAndBoundary) {
  const Json eq = cli_json({"fit", "--measure", "log-or", "--y0", "30", "--n0", "100", "--y1", "60", "--n1", "200"});
  EXPECT_NEAR(eq["result"]["theta_hat"].get<double>(), 0.0, 1e-12);
  const auto boundary = cli({"fit", "--measure", "rd", "--y0", "0", "--n0", "100", "--y1", "70", "--n1", "200"});
  EXPECT_EQ(boundary.exit_code, 1);
  EXPECT_NE(boundary.err.find("NO_INTERIOR_MLE"), std::string::npos);
}

TEST(CliPosterior, NormalExample) {
  const Json res = cli_json({"posterior", "--measure", "mean-diff", "--ratio", "2:1", "--s1sq", "1", "--s0sq", "1",
                             "--s", "0.5", "--sigma-sq", "0.015"});
  EXPECT_NEAR(res["posterior_ess"]["ess_total"].get<double>(), 318.0, 1e-8);
}

TEST(CliPosterior, NoDataEchoesPrior) {
  const Json res = cli_json({"posterior", "--measure", "mean-diff", "--ratio", "2:1", "--s", "0.5"});
  EXPECT_EQ(res["posterior_ess"], res["prior_ess"]);
}

TEST(CliPosterior, FitPipedIntoPosteriorMatchesSimulationReplicate) {
  // The first replicate of a one-replicate consistency run, recomputed by
  // hand through fit -> posterior with the same simulated counts.
  SimConfig cfg;
  cfg.replications = 1;
  cfg.seed = 11;
  const BivariateNormalParams prior{-1, 1, 0.4, 0.1, -0.8};
  const auto report = predictive_consistency(EffectMeasure::risk_difference(), prior, 0.4, 0.65, 100, 50, {2, 1}, cfg);
  auto rng = detail::substream(cfg.seed, 0);
  std::binomial_distribution<int> trt(100, 0.65), ctl(50, 0.4);
  const int y1 = trt(rng);
  const int y0 = ctl(rng);

  const auto fit = cli({"fit", "--measure", "rd", "--y0", std::to_string(y0), "--n0", "50", "--y1",
                        std::to_string(y1), "--n1", "100", "--format", "json"});
  ASSERT_EQ(fit.exit_code, 0) << fit.err;
  const Json post = cli_json({"posterior", "--measure", "rd", "--ratio", "2:1", "--mu0", "-1", "--m0", "1",
                              "--rho", "-0.8", "--theta0", "0.4", "--s", "0.1", "--fit", "-"},
                             fit.out);
  EXPECT_EQ(post["posterior_ess"]["ess_total"].get<double>(), report.per_replicate.at(0));
}

TEST(CliConsistency, NormalGapIsZero) {
  for (const char* k : {"1", "100", "5000"}) {
    const int n0 = std::stoi(k);
    const Json res = cli_json({"consistency", "--measure", "mean-diff", "--ratio", "2:1", "--s", "0.5", "--n1",
                               std::to_string(2 * n0), "--n0", std::to_string(n0)});
    EXPECT_NEAR(res["result"]["consistency_gap"].get<double>(), 0.0, 1e-8);
  }
}

TEST(CliConsistency, SmallRunAndVerboseCsv) {
  const auto args = cat({"consistency"}, {"--measure", "log-or", "--ratio", "2:1", "--mu0", "-1", "--m0", "0.5",
                                          "--rho", "-0.8", "--theta0", "0.4", "--s", "0.5", "--true-p0", "0.4",
                                          "--true-p1", "0.65", "--n1", "100", "--n0", "50", "--reps", "8",
                                          "--seed", "3"});
  const Json res = cli_json(args);
  const auto report = api::consistency_report_from_json(res["result"]);
  EXPECT_EQ(report.per_replicate.size(), 8u);
  const auto csv = cli(cat(args, {"--format", "csv", "--verbose"}));
  const auto rows = lines(csv.out);
  ASSERT_EQ(rows.size(), 9u);
  EXPECT_EQ(rows[0], "replicate,posterior_ess_total");
  EXPECT_EQ(std::stod(rows[3].substr(rows[3].find(',') + 1)), report.per_replicate[2]);
  const auto summary = cli(cat(args, {"--format", "csv"}));
  EXPECT_EQ(lines(summary.out).size(), 2u);
}

TEST(CliDensityGrid, CsvShape) {
  const auto r = cli({"density-grid", "--measure", "log-or", "--mu0", "-1", "--m0", "0.5", "--rho", "-0.8",
                      "--theta0", "0.4", "--s", "0.5", "--resolution", "7"});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 50u);
  EXPECT_EQ(rows[0], "p0,p1,density");
  const auto grid = density_grid(EffectMeasure::log_odds_ratio(), {-1, 0.5, 0.4, 0.5, -0.8}, 7);
  std::istringstream row(rows[10]);
  std::string p0, p1, d;
  std::getline(row, p0, ',');
  std::getline(row, p1, ',');
  std::getline(row, d, ',');
  EXPECT_EQ(std::stod(p0), grid[9].p0);
  EXPECT_EQ(std::stod(p1), grid[9].p1);
  EXPECT_EQ(std::stod(d), grid[9].density);
}
