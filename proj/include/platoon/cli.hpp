#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "platoon/dynamics.hpp"
#include "platoon/mpc.hpp"
#include "platoon/sim.hpp"

namespace platoon::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// Malformed or invalid configuration; the message names the line when the
/// document could not be parsed, or the offending key otherwise.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Config {
  dynamics::VehicleParams vehicle;
  mpc::MPCConfig mpc;
  sim::ScenarioConfig scenario;
  std::string safeset_cache;  // empty: build the sets in memory
};

/// JSON document with optional sections "vehicle", "mpc", "scenario" and the
/// key "safeset_cache". Every key is optional; unknown keys are rejected.
/// When mpc.a_min is absent it is evaluated from the vehicle model.
Config parse_config(const std::string& text);
Config load_config(const std::filesystem::path& path);

/// Every field written out explicitly, so the echo re-parses to the same run.
std::string echo_config(const Config& cfg);
/// FNV-1a of the echoed document, hex.
std::string config_hash(const Config& cfg);

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::string version;
  std::vector<std::string> outputs;
  std::map<std::string, double> timings;  // seconds

  void write(const std::filesystem::path& path) const;
};

std::string version();

/// Without a config path the defaults apply; a given path must exist.
int cmd_run(const std::optional<std::filesystem::path>& config_path,
            const std::filesystem::path& out_dir,
            std::optional<int> trust_horizon, std::ostream& log);

int cmd_sweep(const std::optional<std::filesystem::path>& config_path,
              const std::filesystem::path& out_dir,
              std::optional<std::vector<int>> trust_horizons, std::ostream& log);

/// Writes the boundary polyline of C(v0) as "v,h" rows.
int cmd_safeset(double v0, const std::filesystem::path& out_path,
                const std::optional<std::filesystem::path>& config_path,
                std::ostream& log);

/// Entry point shared by the executable and the tests.
int main(int argc, const char* const* argv);

}  // namespace platoon::cli
