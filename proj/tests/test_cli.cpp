#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "platoon/cli.hpp"

namespace fs = std::filesystem;
using namespace platoon;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("platoon_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
  return path;
}

std::vector<std::string> lines(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "platoon");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("empty document gives the default setup") {
  auto cfg = cli::parse_config("{}");
  CHECK(cfg.vehicle.wheel_radius == 0.39445);
  CHECK(cfg.mpc.horizon == 20);
  CHECK(cfg.mpc.a_min == doctest::Approx(-3.218).epsilon(1e-3));
  CHECK(cfg.scenario.vehicles == 4);
  CHECK(cfg.scenario.initial_spacing == 6.5);
  CHECK(cfg.scenario.trust_horizons == std::vector<int>{0, 5, 10, 15, 20});
}

TEST_CASE("config keys override defaults") {
  auto cfg = cli::parse_config(R"({"mpc": {"alpha": 2.5, "trust_horizon": 7},
                                   "scenario": {"vehicles": 3, "topology": "predecessor_following"}})");
  CHECK(cfg.mpc.alpha == 2.5);
  CHECK(cfg.mpc.trust_horizon == 7);
  CHECK(cfg.scenario.vehicles == 3);
  CHECK(cfg.scenario.topology == v2v::TopologyKind::predecessor_following);
  auto explicit_a = cli::parse_config(R"({"mpc": {"a_min": -3.0}})");
  CHECK(explicit_a.mpc.a_min == -3.0);
  auto heavier = cli::parse_config(R"({"vehicle": {"mass": 2500}})");
  CHECK(heavier.mpc.a_min > cfg.mpc.a_min);
}

TEST_CASE("bad documents are configuration errors") {
  CHECK_THROWS_WITH_AS(cli::parse_config("{\n\"mpc\": {\n\"alpha\": ,\n}}"),
                       doctest::Contains("line 3"), cli::ConfigError);
  CHECK_THROWS_AS(cli::parse_config(R"({"mpc": {"alpah": 1}})"), cli::ConfigError);
  CHECK_THROWS_AS(cli::parse_config(R"({"mpc": {"alpha": "one"}})"), cli::ConfigError);
  CHECK_THROWS_AS(cli::parse_config(R"({"unknown": {}})"), cli::ConfigError);
  CHECK_THROWS_WITH_AS(cli::parse_config(R"({"scenario": {"initial_spacing": 5.0}})"),
                       doctest::Contains("h_min"), cli::ConfigError);
  CHECK_THROWS_AS(cli::parse_config(R"({"mpc": {"trust_horizon": 30}})"), cli::ConfigError);
  CHECK_THROWS_AS(cli::parse_config(R"({"scenario": {"topology": "ring"}})"), cli::ConfigError);
  CHECK_THROWS_AS(cli::load_config("/nonexistent/platoon.json"), cli::ConfigError);
}

TEST_CASE("echoed config re-parses to the same configuration") {
  auto cfg = cli::parse_config(R"({"mpc": {"alpha": 0.3, "trust_horizon": 12}, "scenario": {"duration": 20}})");
  std::string echo = cli::echo_config(cfg);
  auto again = cli::parse_config(echo);
  CHECK(cli::echo_config(again) == echo);
  CHECK(cli::config_hash(again) == cli::config_hash(cfg));
  CHECK(cli::config_hash(cfg) != cli::config_hash(cli::parse_config("{}")));
  auto parsed = nlohmann::json::parse(echo);
  CHECK(parsed["mpc"]["alpha"] == 0.3);
  CHECK(parsed["scenario"]["duration"] == 20.0);
}

TEST_CASE("run writes a trajectory with one row per vehicle and step") {
  auto dir = scratch("run");
  auto cfg = write(dir / "cfg.json", R"({"scenario": {"duration": 5.0}})");
  std::ostringstream log;
  REQUIRE(cli::cmd_run(cfg, dir / "out", 10, log) == cli::kExitOk);
  auto rows = lines(dir / "out" / "trajectory.csv");
  CHECK(rows.front() == "t,vehicle_id,p,s,h,v,u,slack,status");
  CHECK(rows.size() == 1 + 4 * 50);
  auto manifest = nlohmann::json::parse(slurp(dir / "out" / "manifest.json"));
  CHECK(manifest["command"] == "run");
  CHECK(manifest["config_hash"].get<std::string>().size() > 0);
  for (const auto& out : manifest["outputs"]) CHECK(fs::exists(out.get<std::string>()));
  auto echoed = cli::load_config(dir / "out" / "config.json");
  CHECK(echoed.mpc.trust_horizon == 10);
  CHECK(lines(dir / "out" / "messages.csv").size() > 1);
  CHECK(lines(dir / "out" / "controller.csv").size() == 1 + 4 * 50);
}

TEST_CASE("run error paths") {
  auto dir = scratch("errors");
  std::ostringstream log;
  CHECK(cli::cmd_run(dir / "missing.json", dir / "out", std::nullopt, log) == cli::kExitConfig);
  auto tight = write(dir / "tight.json", R"({"scenario": {"initial_spacing": 6.0}})");
  std::ostringstream why;
  CHECK(cli::cmd_run(tight, dir / "out", std::nullopt, why) == cli::kExitConfig);
  CHECK(why.str().find("h_min") != std::string::npos);
  auto broken = write(dir / "broken.json", "{\n  \"mpc\": {\n    \"alpha\": 1,,\n  }\n}\n");
  std::ostringstream where;
  CHECK(cli::cmd_run(broken, dir / "out", std::nullopt, where) == cli::kExitConfig);
  CHECK(where.str().find("line 3") != std::string::npos);
  CHECK(cli::cmd_run(std::nullopt, dir / "out", 99, log) == cli::kExitConfig);
}

TEST_CASE("sweep rows and empty list") {
  auto dir = scratch("sweep");
  std::ostringstream log;
  CHECK(cli::cmd_sweep(std::nullopt, dir / "none", std::vector<int>{}, log) == cli::kExitConfig);
  REQUIRE(cli::cmd_sweep(std::nullopt, dir / "one", std::vector<int>{5}, log) == cli::kExitOk);
  auto one = lines(dir / "one" / "sweep.csv");
  CHECK(one.size() == 2);
  CHECK(one[0] == "F,t_L,t_last,vph");
  CHECK(one[1].rfind("5,", 0) == 0);
  CHECK(fs::exists(dir / "one" / "trajectory_F5.csv"));
}

TEST_CASE("safe set export") {
  auto dir = scratch("safeset");
  std::ostringstream log;
  REQUIRE(cli::cmd_safeset(7.5, dir / "c75.csv", std::nullopt, log) == cli::kExitOk);
  auto rows = lines(dir / "c75.csv");
  CHECK(rows.front() == "v,h");
  bool bottom = false, next = false;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    double v = std::stod(rows[i].substr(0, rows[i].find(',')));
    double h = std::stod(rows[i].substr(rows[i].find(',') + 1));
    bottom = bottom || (std::abs(v - 7.4014) < 0.01 && std::abs(h - 6.5) < 0.01);
    next = next || (std::abs(v - 7.7232) < 0.01 && std::abs(h - 7.2562) < 0.01);
  }
  CHECK(bottom);
  CHECK(next);

  REQUIRE(cli::cmd_safeset(0.0, dir / "c0.csv", std::nullopt, log) == cli::kExitOk);
  CHECK(lines(dir / "c0.csv")[1] == "0,6.5");
  REQUIRE(cli::cmd_safeset(30.0, dir / "c30.csv", std::nullopt, log) == cli::kExitOk);
  auto top = lines(dir / "c30.csv");
  CHECK(top.back().rfind("30,", 0) == 0);
  CHECK(cli::cmd_safeset(31.0, dir / "bad.csv", std::nullopt, log) == cli::kExitConfig);
  CHECK(cli::cmd_safeset(-1.0, dir / "bad.csv", std::nullopt, log) == cli::kExitConfig);
}

TEST_CASE("command line parsing") {
  auto dir = scratch("argv");
  CHECK(invoke({}) == cli::kExitConfig);
  CHECK(invoke({"fly"}) == cli::kExitConfig);
  CHECK(invoke({"safeset", "--out", (dir / "x.csv").string()}) == cli::kExitConfig);
  CHECK(invoke({"run", "--config", (dir / "nope.json").string()}) == cli::kExitConfig);
  CHECK(invoke({"safeset", "--v0", "12", "--out", (dir / "c12.csv").string()}) == cli::kExitOk);
  CHECK(fs::exists(dir / "c12.csv"));
  write(dir / "short.json", R"({"scenario": {"duration": 25.0}})");
  CHECK(invoke({"sweep", "--config", (dir / "short.json").string(), "--out", (dir / "sw").string(),
                "--trust-horizon", "0,20"}) == cli::kExitOk);
  CHECK(lines(dir / "sw" / "sweep.csv").size() == 3);
}
