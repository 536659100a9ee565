#include "platoon/cli.hpp"

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "platoon/safeset.hpp"

#ifndef PLATOON_VERSION
#define PLATOON_VERSION "0.0.0"
#endif

namespace platoon::cli {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

int line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

// nlohmann does not keep source positions; the first occurrence of the quoted
// key is close enough for a diagnostic.
std::string where(const std::string& text, const std::string& key) {
  const auto pos = text.find('"' + key + '"');
  if (pos == std::string::npos) {
    return "";
  }
  return " (line " + std::to_string(line_of_offset(text, pos)) + ")";
}

// Reads the keys of one JSON object and rejects whatever is left over.
class Section {
 public:
  Section(const json& doc, std::string name, const std::string& text)
      : name_(std::move(name)), text_(text) {
    if (doc.contains(name_)) {
      node_ = &doc.at(name_);
      if (!node_->is_object()) {
        fail(name_, "must be an object");
      }
    }
  }

  template <typename T>
  void read(const std::string& key, T& field) {
    if (node_ == nullptr || !node_->contains(key)) {
      return;
    }
    seen_.insert(key);
    const json& value = node_->at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!value.is_boolean()) fail(key, "expected true or false");
      field = value.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!value.is_number_integer()) fail(key, "expected an integer");
      field = value.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!value.is_number()) fail(key, "expected a number");
      field = value.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!value.is_string()) fail(key, "expected a string");
      field = value.get<std::string>();
    } else {
      if (!value.is_array()) fail(key, "expected a list of integers");
      field.clear();
      for (const json& item : value) {
        if (!item.is_number_integer()) fail(key, "expected a list of integers");
        field.push_back(item.get<int>());
      }
    }
  }

  bool has(const std::string& key) const {
    return node_ != nullptr && node_->contains(key);
  }

  void finish() const {
    if (node_ == nullptr) {
      return;
    }
    for (const auto& item : node_->items()) {
      if (!seen_.count(item.key())) {
        fail(item.key(), "unknown key");
      }
    }
  }

 private:
  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    const std::string path = key == name_ ? name_ : name_ + "." + key;
    throw ConfigError(path + where(text_, key) + ": " + what);
  }

  std::string name_;
  const std::string& text_;
  const json* node_ = nullptr;
  std::set<std::string> seen_;
};

std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << content;
}

template <typename Writer>
void write_file(const fs::path& path, Writer&& writer) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  writer(out);
  if (!out) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

safeset::SafeSetCache make_cache(const Config& cfg) {
  if (cfg.safeset_cache.empty()) {
    return safeset::SafeSetCache(cfg.mpc.braking_spec());
  }
  return safeset::SafeSetCache::load_or_build(cfg.safeset_cache, cfg.mpc.braking_spec());
}

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

Config load_or_default(const std::optional<fs::path>& path) {
  return path ? load_config(*path) : parse_config("{}");
}

void report_safety(const sim::SimLog& log, std::ostream& out) {
  out << "  min headway " << log.min_headway << " m, max slack " << log.max_slack
      << " m, fallbacks " << log.fallbacks << ", collision events "
      << log.collisions.size() << '\n';
  for (const sim::CollisionEvent& e : log.collisions) {
    out << "  vehicle " << e.vehicle << ": h below h_min by up to "
        << e.worst_violation << " m for " << e.steps << " steps from step "
        << e.first_step << '\n';
  }
}

}  // namespace

Config parse_config(const std::string& text) {
  json doc;
  const bool blank = text.find_first_not_of(" \t\r\n") == std::string::npos;
  try {
    doc = blank ? json::object() : json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("line " + std::to_string(line_of_offset(text, e.byte > 0 ? e.byte - 1 : 0)) +
                      ": " + e.what());
  }
  if (!doc.is_object()) {
    throw ConfigError("line 1: the configuration must be a JSON object");
  }
  for (const auto& item : doc.items()) {
    const std::string& k = item.key();
    if (k != "vehicle" && k != "mpc" && k != "scenario" && k != "safeset_cache") {
      throw ConfigError(k + where(text, k) + ": unknown key");
    }
  }

  Config cfg;
  Section vehicle(doc, "vehicle", text);
  vehicle.read("mass", cfg.vehicle.mass);
  vehicle.read("area", cfg.vehicle.area);
  vehicle.read("air_density", cfg.vehicle.air_density);
  vehicle.read("drag_coeff", cfg.vehicle.drag_coeff);
  vehicle.read("roll_coeff", cfg.vehicle.roll_coeff);
  vehicle.read("wheel_radius", cfg.vehicle.wheel_radius);
  vehicle.read("gravity", cfg.vehicle.gravity);
  vehicle.read("grade", cfg.vehicle.grade);
  vehicle.finish();

  Section m(doc, "mpc", text);
  m.read("horizon", cfg.mpc.horizon);
  m.read("dt", cfg.mpc.dt);
  m.read("alpha", cfg.mpc.alpha);
  m.read("h_des", cfg.mpc.h_des);
  m.read("h_min", cfg.mpc.h_min);
  m.read("v_min", cfg.mpc.v_min);
  m.read("v_max", cfg.mpc.v_max);
  m.read("v_des", cfg.mpc.v_des);
  m.read("u_min", cfg.mpc.u_min);
  m.read("u_max", cfg.mpc.u_max);
  m.read("du_max", cfg.mpc.du_max);
  m.read("symmetric_slew", cfg.mpc.symmetric_slew);
  m.read("trust_horizon", cfg.mpc.trust_horizon);
  m.read("slack_weight", cfg.mpc.slack_weight);
  m.read("qp_tol", cfg.mpc.solver.tol);
  m.read("qp_max_iter", cfg.mpc.solver.max_iter);
  const bool explicit_a_min = m.has("a_min");
  m.read("a_min", cfg.mpc.a_min);
  m.finish();

  Section sc(doc, "scenario", text);
  sc.read("vehicles", cfg.scenario.vehicles);
  sc.read("initial_spacing", cfg.scenario.initial_spacing);
  sc.read("duration", cfg.scenario.duration);
  sc.read("ell", cfg.scenario.ell);
  sc.read("latency", cfg.scenario.latency);
  sc.read("trust_horizons", cfg.scenario.trust_horizons);
  std::string topology = v2v::to_string(cfg.scenario.topology);
  sc.read("topology", topology);
  sc.finish();

  if (doc.contains("safeset_cache")) {
    if (!doc["safeset_cache"].is_string()) {
      throw ConfigError("safeset_cache" + where(text, "safeset_cache") + ": expected a string");
    }
    cfg.safeset_cache = doc["safeset_cache"].get<std::string>();
  }

  try {
    cfg.scenario.topology = v2v::topology_from_string(topology);
    cfg.vehicle.validate();
    if (!explicit_a_min) {
      cfg.mpc.a_min = safeset::max_deceleration(cfg.vehicle, cfg.mpc.u_min, cfg.mpc.v_max);
    }
    cfg.mpc.validate();
    cfg.scenario.validate(cfg.mpc);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

Config load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file " + path.string());
  }
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string echo_config(const Config& cfg) {
  json doc;
  const auto& v = cfg.vehicle;
  doc["vehicle"] = {{"mass", v.mass},
                    {"area", v.area},
                    {"air_density", v.air_density},
                    {"drag_coeff", v.drag_coeff},
                    {"roll_coeff", v.roll_coeff},
                    {"wheel_radius", v.wheel_radius},
                    {"gravity", v.gravity},
                    {"grade", v.grade}};
  const auto& m = cfg.mpc;
  doc["mpc"] = {{"horizon", m.horizon},
                {"dt", m.dt},
                {"alpha", m.alpha},
                {"h_des", m.h_des},
                {"h_min", m.h_min},
                {"v_min", m.v_min},
                {"v_max", m.v_max},
                {"v_des", m.v_des},
                {"u_min", m.u_min},
                {"u_max", m.u_max},
                {"du_max", m.du_max},
                {"symmetric_slew", m.symmetric_slew},
                {"trust_horizon", m.trust_horizon},
                {"a_min", m.a_min},
                {"slack_weight", m.slack_weight},
                {"qp_tol", m.solver.tol},
                {"qp_max_iter", m.solver.max_iter}};
  const auto& s = cfg.scenario;
  doc["scenario"] = {{"vehicles", s.vehicles},
                     {"initial_spacing", s.initial_spacing},
                     {"duration", s.duration},
                     {"ell", s.ell},
                     {"latency", s.latency},
                     {"trust_horizons", s.trust_horizons},
                     {"topology", v2v::to_string(s.topology)}};
  if (!cfg.safeset_cache.empty()) {
    doc["safeset_cache"] = cfg.safeset_cache;
  }
  return doc.dump(2) + "\n";
}

std::string config_hash(const Config& cfg) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << fnv1a(echo_config(cfg));
  return out.str();
}

std::string version() { return PLATOON_VERSION; }

void RunManifest::write(const fs::path& path) const {
  json doc;
  doc["command"] = command;
  doc["config_hash"] = config_hash;
  doc["version"] = version;
  doc["outputs"] = outputs;
  doc["timings_s"] = json::object();
  for (const auto& [name, seconds] : timings) {
    doc["timings_s"][name] = seconds;
  }
  write_text(path, doc.dump(2) + "\n");
}

int cmd_run(const std::optional<fs::path>& config_path, const fs::path& out_dir,
            std::optional<int> trust_horizon, std::ostream& log) {
  Config cfg;
  try {
    cfg = load_or_default(config_path);
    if (trust_horizon) {
      cfg.mpc.trust_horizon = *trust_horizon;
      cfg.mpc.validate();
    }
  } catch (const std::exception& e) {
    log << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  try {
    Stopwatch clock;
    RunManifest manifest{"run", config_hash(cfg), version(), {}, {}};
    fs::create_directories(out_dir);
    const safeset::SafeSetCache cache = make_cache(cfg);
    manifest.timings["safe_sets"] = clock.lap();
    const sim::SimLog result = sim::run(cfg.scenario, cfg.mpc, cfg.vehicle, cache);
    manifest.timings["simulation"] = clock.lap();

    auto emit = [&](const std::string& name, auto writer) {
      write_file(out_dir / name, writer);
      manifest.outputs.push_back((out_dir / name).string());
    };
    emit("trajectory.csv", [&](std::ostream& o) { sim::write_log_csv(result, o); });
    emit("controller.csv", [&](std::ostream& o) { sim::write_controller_csv(result, o); });
    emit("messages.csv", [&](std::ostream& o) { v2v::write_deliveries_csv(result.deliveries, o); });
    emit("config.json", [&](std::ostream& o) { o << echo_config(cfg); });
    manifest.timings["output"] = clock.lap();
    manifest.outputs.push_back((out_dir / "manifest.json").string());
    manifest.write(out_dir / "manifest.json");

    log << "run F=" << cfg.mpc.trust_horizon << ": " << result.steps() << " steps\n";
    report_safety(result, log);
    try {
      const sim::ThroughputResult tp =
          sim::measure_throughput(result, cfg.scenario.ell, cfg.scenario.vehicles);
      log << "  throughput " << tp.vph << " vph\n";
    } catch (const std::runtime_error& e) {
      log << "  throughput unavailable: " << e.what() << '\n';
    }
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_sweep(const std::optional<fs::path>& config_path, const fs::path& out_dir,
              std::optional<std::vector<int>> trust_horizons, std::ostream& log) {
  Config cfg;
  try {
    cfg = load_or_default(config_path);
    if (trust_horizons) {
      cfg.scenario.trust_horizons = *trust_horizons;
      cfg.scenario.validate(cfg.mpc);
    }
    if (cfg.scenario.trust_horizons.empty()) {
      throw ConfigError("scenario.trust_horizons: the sweep needs at least one value");
    }
  } catch (const std::exception& e) {
    log << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  try {
    Stopwatch clock;
    RunManifest manifest{"sweep", config_hash(cfg), version(), {}, {}};
    fs::create_directories(out_dir);
    const safeset::SafeSetCache cache = make_cache(cfg);
    manifest.timings["safe_sets"] = clock.lap();
    const auto sweep = sim::sweep_trust(cfg.scenario, cfg.mpc, cfg.vehicle, cache,
                                        cfg.scenario.trust_horizons);
    manifest.timings["simulation"] = clock.lap();

    write_file(out_dir / "sweep.csv", [&](std::ostream& o) { sim::write_sweep_csv(sweep, o); });
    manifest.outputs.push_back((out_dir / "sweep.csv").string());
    for (const sim::SweepPoint& p : sweep) {
      const std::string name = "trajectory_F" + std::to_string(p.trust_horizon) + ".csv";
      write_file(out_dir / name, [&](std::ostream& o) { sim::write_log_csv(p.log, o); });
      manifest.outputs.push_back((out_dir / name).string());
      log << "F=" << p.trust_horizon << ": " << p.throughput.vph << " vph\n";
      report_safety(p.log, log);
    }
    write_file(out_dir / "config.json", [&](std::ostream& o) { o << echo_config(cfg); });
    manifest.outputs.push_back((out_dir / "config.json").string());
    manifest.timings["output"] = clock.lap();
    manifest.outputs.push_back((out_dir / "manifest.json").string());
    manifest.write(out_dir / "manifest.json");
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_safeset(double v0, const fs::path& out_path,
                const std::optional<fs::path>& config_path, std::ostream& log) {
  Config cfg;
  try {
    cfg = load_or_default(config_path);
    if (!(v0 >= cfg.mpc.v_min && v0 <= cfg.mpc.v_max)) {
      throw ConfigError("v0 must lie in [v_min, v_max]");
    }
  } catch (const std::exception& e) {
    log << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  try {
    const safeset::SafeSet set = safeset::build_safe_set(v0, cfg.mpc.braking_spec());
    if (out_path.has_parent_path()) {
      fs::create_directories(out_path.parent_path());
    }
    write_file(out_path, [&](std::ostream& o) {
      o << "v,h\n" << std::setprecision(12);
      for (const safeset::BoundaryPoint& p : set.boundary()) {
        o << p.v << ',' << p.h << '\n';
      }
    });
    log << "C(" << v0 << "): v0_tilde " << set.v0_tilde() << ", "
        << set.boundary().size() << " boundary points, "
        << set.halfspaces().size() << " facets\n";
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

int main(int argc, const char* const* argv) {
  CLI::App app{"Platoon coordination under distributed MPC with V2V trust horizons"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);

  std::optional<std::string> config;
  std::string out = "out";
  std::optional<int> trust;
  auto* run = app.add_subcommand("run", "simulate one scenario");
  run->add_option("--config", config, "JSON configuration (defaults if omitted)");
  run->add_option("--out", out, "output directory")->capture_default_str();
  run->add_option("--trust-horizon", trust, "override mpc.trust_horizon");

  std::optional<std::vector<int>> trust_list;
  auto* sweep = app.add_subcommand("sweep", "throughput for each trust horizon");
  sweep->add_option("--config", config, "JSON configuration (defaults if omitted)");
  sweep->add_option("--out", out, "output directory")->capture_default_str();
  sweep->add_option("--trust-horizon", trust_list, "trust horizons, e.g. 0,5,10")
      ->delimiter(',');

  double v0 = 0.0;
  std::string safeset_out;
  auto* safeset = app.add_subcommand("safeset", "export the boundary of C(v0)");
  safeset->add_option("--v0", v0, "predecessor speed, m/s")->required();
  safeset->add_option("--out", safeset_out, "CSV file")->required();
  safeset->add_option("--config", config, "JSON configuration (defaults if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  std::optional<fs::path> cfg_path;
  if (config) {
    cfg_path = fs::path(*config);
  }
  if (*run) {
    return cmd_run(cfg_path, out, trust, std::cerr);
  }
  if (*sweep) {
    return cmd_sweep(cfg_path, out, trust_list, std::cerr);
  }
  return cmd_safeset(v0, safeset_out, cfg_path, std::cerr);
}

}  // namespace platoon::cli
