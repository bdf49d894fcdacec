#include <gtest/gtest.h>

#include <chrono>
#include <future>
#include <thread>

#include "esskit/service.hpp"
#include "support.hpp"

using namespace esskit;
using api::Json;

namespace {

class ServiceTest : public ::testing::Test {
 protected:
  void start(ServiceOptions options = {}) {
    service_ = std::make_unique<Service>(std::move(options));
    port_ = service_->bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { service_->listen_after_bind(); });
    service_->wait_until_ready();
  }

  void SetUp() override { start(); }

  void TearDown() override {
    service_->stop();
    if (thread_.joinable()) thread_.join();
  }

  void restart(ServiceOptions options) {
    TearDown();
    start(std::move(options));
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(120, 0);
    return c;
  }

  httplib::Result post(const std::string& command, const std::string& body) const {
    return client().Post("/v1/" + command, body, "application/json");
  }

  Json post_ok(const std::string& command, const Json& body) const {
    auto res = post(command, body.dump());
    EXPECT_TRUE(res);
    if (!res) return {};
    EXPECT_EQ(res->status, 200) << res->body;
    return Json::parse(res->body);
  }

  std::unique_ptr<Service> service_;
  std::thread thread_;
  int port_ = -1;
};

const Json kRdPrior = {{"measure", "rd"}, {"ratio", "2:1"}, {"mu0", -1.0}, {"m0", 1.0},
                        {"rho", -0.8},     {"theta0", 0.3},  {"s", 0.1}};

}  // namespace

TEST_F(ServiceTest, HealthIsFastAndVersioned) {
  auto c = client();
  const auto t0 = std::chrono::steady_clock::now();
  auto res = c.Get("/v1/health");
  const auto elapsed = std::chrono::steady_clock::now() - t0;
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const Json body = Json::parse(res->body);
  EXPECT_EQ(body["status"], "ok");
  EXPECT_EQ(body["engine_version"], engine_version);
  EXPECT_LT(elapsed, std::chrono::milliseconds(50));
}

TEST_F(ServiceTest, EssEndpoints) {
  const Json normal = post_ok("ess", {{"measure", "mean-diff"}, {"ratio", "2:1"}, {"s", 0.5}});
  EXPECT_NEAR(normal["result"]["ess_total"].get<double>(), 18.0, 1e-12);
  EXPECT_EQ(normal["engine_version"], engine_version);

  const Json rd = post_ok("ess", kRdPrior);
  EXPECT_NEAR(rd["result"]["ess_total"].get<double>(), 86.98, 0.05);

  const Json logor = post_ok("ess", {{"measure", "log-or"}, {"ratio", "2:1"}, {"mu0", -1.0}, {"m0", 0.5},
                                     {"rho", -0.8}, {"theta0", 0.0}, {"s", 1.0}});
  EXPECT_NEAR(logor["result"]["ess_total"].get<double>(), 25.29, 0.05);
}

TEST_F(ServiceTest, UsageErrorsAre400) {
  Json bad = kRdPrior;
  bad["rho"] = 1.5;
  auto res = post("ess", bad.dump());
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(Json::parse(res->body)["code"], "INVALID_ARGUMENT");

  res = post("ess", "{not json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);

  res = post("density-grid", Json{{"measure", "rd"}, {"mu0", -1.0}, {"m0", 1.0}, {"rho", 0.0}, {"theta0", 0.0},
                                  {"s", 0.1}, {"resolution", 0}}
                                 .dump());
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);

  Json unknown = kRdPrior;
  unknown["colour"] = "red";
  res = post("ess", unknown.dump());
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);

  res = client().Post("/v1/nonexistent", "{}", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);
}

TEST_F(ServiceTest, ComputationErrorsAre422) {
  auto res = post("fit", Json{{"measure", "rd"}, {"y0", 0}, {"n0", 100}, {"y1", 70}, {"n1", 200}}.dump());
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 422);
  EXPECT_EQ(Json::parse(res->body)["code"], "NO_INTERIOR_MLE");

  const Json low = {{"measure", "rd"}, {"ratio", "2:1"}, {"mu0", 1.386}, {"m0", 0.3}, {"rho", 0.0},
                    {"theta0", 0.2},   {"s", 0.1},       {"strict", true}};
  res = post("ess", low.dump());
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 422);
  EXPECT_EQ(Json::parse(res->body)["code"], "LOW_CAPTURED_MASS");
}

TEST_F(ServiceTest, FitAndPosterior) {
  const Json fit = post_ok("fit", {{"measure", "rd"}, {"y0", 20}, {"n0", 100}, {"y1", 70}, {"n1", 200}});
  EXPECT_NEAR(fit["result"]["rho_hat"].get<double>(), -0.765, 1e-3);

  const Json post = post_ok("posterior", {{"measure", "mean-diff"}, {"ratio", "2:1"}, {"s", 0.5},
                                          {"sigma_sq", 0.015}});
  EXPECT_NEAR(post["posterior_ess"]["ess_total"].get<double>(), 318.0, 1e-8);

  Json with_fit = kRdPrior;
  with_fit["fit"] = fit["result"];
  Json with_counts = kRdPrior;
  with_counts.update({{"y0", 20}, {"n0", 100}, {"y1", 70}, {"n1", 200}});
  EXPECT_EQ(post_ok("posterior", with_fit)["posterior_ess"], post_ok("posterior", with_counts)["posterior_ess"]);
}

TEST_F(ServiceTest, ReplicationCapAndTimeout) {
  ServiceOptions capped;
  capped.replication_cap = 50;
  restart(capped);
  Json body = kRdPrior;
  body.update({{"true_p0", 0.4}, {"true_p1", 0.65}, {"n1", 100}, {"n0", 50}, {"reps", 51}});
  auto res = post("consistency", body.dump());
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 422);
  EXPECT_EQ(Json::parse(res->body)["code"], "REPLICATION_CAP");

  body["reps"] = 50;
  EXPECT_EQ(post_ok("consistency", body)["result"]["replications"], 50);

  ServiceOptions hurried;
  hurried.request_timeout = std::chrono::milliseconds(1);
  restart(hurried);
  body["reps"] = 5000;
  res = post("consistency", body.dump());
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 422);
  EXPECT_EQ(Json::parse(res->body)["code"], "TIMEOUT");
}

TEST_F(ServiceTest, CorsHeadersAndPreflight) {
  auto c = client();
  auto res = c.Get("/v1/health");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");

  res = c.Options("/v1/ess");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 204);
  EXPECT_NE(res->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);

  ServiceOptions origin;
  origin.cors_origin = "http://localhost:5173";
  restart(origin);
  res = client().Get("/v1/health");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "http://localhost:5173");
}

TEST_F(ServiceTest, ConcurrentIdenticalRequestsAgree) {
  Json body = kRdPrior;
  body.update({{"true_p0", 0.4}, {"true_p1", 0.65}, {"n1", 100}, {"n0", 50}, {"reps", 40}, {"seed", 9}});
  std::vector<std::future<std::string>> futures;
  for (int i = 0; i < 4; ++i) {
    futures.push_back(std::async(std::launch::async, [&] {
      auto res = post("consistency", body.dump());
      return res && res->status == 200 ? res->body : std::string("error");
    }));
  }
  const std::string first = futures[0].get();
  EXPECT_NE(first, "error");
  for (std::size_t i = 1; i < futures.size(); ++i) EXPECT_EQ(futures[i].get(), first);
}

TEST_F(ServiceTest, UiDirectoryIsServed) {
  const auto dir = std::filesystem::temp_directory_path() / "esskit-ui-test";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "index.html") << "<html>elicit</html>";
  ServiceOptions ui;
  ui.ui_dir = dir.string();
  restart(ui);
  auto res = client().Get("/index.html");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, "<html>elicit</html>");
  EXPECT_EQ(client().Get("/v1/health")->status, 200);
  std::filesystem::remove_all(dir);
}

// The CLI and the service share one engine; every quick golden document must
// give the same parsed JSON from both. The long simulation documents are
// covered by the acceptance runner.
TEST_F(ServiceTest, GoldenParityWithCli) {
  int checked = 0;
  for (const auto& g : testkit::golden_documents(ESSKIT_GOLDEN_DIR)) {
    if (g.command == "consistency" && g.name != "normal_exact") continue;
    const auto cli = testkit::run_process(ESSKIT_CLI_PATH, {g.command, "--config", g.path.string(), "--format", "json"});
    ASSERT_EQ(cli.exit_code, 0) << g.path << "\n" << cli.err;
    auto res = post(g.command, testkit::read_file(g.path));
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << g.path << "\n" << res->body;
    EXPECT_EQ(Json::parse(cli.out), Json::parse(res->body)) << g.path;
    ++checked;
  }
  EXPECT_GE(checked, 18);
}
