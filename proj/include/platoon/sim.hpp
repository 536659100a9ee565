#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "platoon/dynamics.hpp"
#include "platoon/mpc.hpp"
#include "platoon/safeset.hpp"
#include "platoon/v2v.hpp"

namespace platoon::sim {

struct ScenarioConfig {
  int vehicles = 4;               // N, leader included
  double initial_spacing = 6.5;   // s, m
  double duration = 30.0;         // s
  double ell = 30.0;              // throughput measurement point, m
  double latency = 0.1;           // per V2V arc, s
  std::vector<int> trust_horizons{0, 5, 10, 15, 20};
  v2v::TopologyKind topology = v2v::TopologyKind::predecessor_following_leader;

  /// Throws std::invalid_argument: N >= 2, s >= h_min, ell > 0, ...
  void validate(const mpc::MPCConfig& mpc_cfg) const;
  int steps(double dt) const;
};

struct InitialStates {
  dynamics::LeaderState leader;
  std::vector<dynamics::FollowerState> followers;  // index i-1 holds follower i
};

/// Leader at the stop bar at rest; follower i at -s i, s-state s i, h = s.
InitialStates init_scenario(const ScenarioConfig& cfg, double h_min);

/// One vehicle at one step: the state at the start of the step and what its
/// controller did with it.
struct VehicleSample {
  double p = 0.0;
  double s = 0.0;   // spacing to the leader (0 for the leader)
  double h = 0.0;   // gap to the predecessor (0 for the leader)
  double v = 0.0;
  double u = 0.0;   // applied torque
  double slack = 0.0;
  qp::Status status = qp::Status::optimal;
  bool fallback = false;
  double kkt_residual = 0.0;
  int iterations = 0;
  double solve_seconds = 0.0;  // wall clock, excluded from determinism checks
  double s_estimate_error = 0.0;  // estimated minus true spacing to the leader
  int leader_delay = -1;
  int predecessor_delay = -1;
};

struct CollisionEvent {
  int vehicle = 0;
  int first_step = 0;
  int steps = 0;            // duration in steps
  double worst_violation = 0.0;  // h_min - min h
};

struct SimLog {
  double dt = 0.1;
  int vehicles = 0;
  std::vector<double> t;
  std::vector<std::vector<VehicleSample>> samples;  // [step][vehicle]
  std::vector<v2v::Delivery> deliveries;
  std::vector<CollisionEvent> collisions;
  int fallbacks = 0;
  double max_slack = 0.0;
  double max_kkt_residual = 0.0;
  double min_headway = 0.0;

  int steps() const { return static_cast<int>(t.size()); }
  const VehicleSample& at(int step, int vehicle) const {
    return samples.at(static_cast<std::size_t>(step)).at(static_cast<std::size_t>(vehicle));
  }
};

struct RunOptions {
  /// Replaces a controller: torque for (vehicle, step), or nullopt to solve.
  std::function<std::optional<double>(int, int)> torque_override;
  /// Called after every QP with the vehicle, step and solve data.
  std::function<void(int, int, const mpc::SolveRecord&)> on_solve;
  bool parallel = true;
};

/// Closed loop. Each step: deliver due messages, solve every controller on the
/// snapshot, broadcast plans, advance the nonlinear plants. Deterministic.
SimLog run(const ScenarioConfig& cfg, const mpc::MPCConfig& mpc_cfg,
           const dynamics::VehicleParams& params,
           const safeset::SafeSetCache& cache, const RunOptions& options = {});

/// Flags runs of steps with h < h_min - tol per follower.
std::vector<CollisionEvent> detect_collisions(const SimLog& log, double h_min,
                                              double tol = 1e-6);

struct ThroughputResult {
  double t_leader = 0.0;
  double t_last = 0.0;
  double vph = 0.0;
};

/// First time p >= ell, interpolated linearly between samples.
/// Throws std::runtime_error naming the vehicle if it never gets there.
double crossing_time(const SimLog& log, int vehicle, double ell);

/// 3600 (N - 1) / (t_last - t_L).
ThroughputResult measure_throughput(const SimLog& log, double ell, int vehicles);

struct SweepPoint {
  int trust_horizon = 0;
  ThroughputResult throughput;
  SimLog log;
};

/// One independent run per F, concurrently.
std::vector<SweepPoint> sweep_trust(const ScenarioConfig& cfg,
                                    const mpc::MPCConfig& mpc_cfg,
                                    const dynamics::VehicleParams& params,
                                    const safeset::SafeSetCache& cache,
                                    const std::vector<int>& trust_horizons);

/// t,vehicle_id,p,s,h,v,u,slack,status
void write_log_csv(const SimLog& log, std::ostream& out);
/// t,vehicle_id,status,fallback,slack,u,iterations,kkt_residual,solve_seconds
void write_controller_csv(const SimLog& log, std::ostream& out);
/// F,t_L,t_last,vph
void write_sweep_csv(const std::vector<SweepPoint>& sweep, std::ostream& out);

}  // namespace platoon::sim
