#pragma once

#include <optional>
#include <span>
#include <vector>

#include "platoon/dynamics.hpp"
#include "platoon/qp.hpp"
#include "platoon/safeset.hpp"
#include "platoon/v2v.hpp"

namespace platoon::mpc {

struct MPCConfig {
  int horizon = 20;           // N_p
  double dt = 0.1;            // s
  double alpha = 1.0;         // input-smoothness weight
  double h_des = 9.0;         // m
  double h_min = 6.5;         // m
  double v_min = 0.0;         // m/s
  double v_max = 30.0;        // m/s
  double v_des = 15.64;       // m/s
  double u_min = -2000.0;     // Nm
  double u_max = 1500.0;      // Nm
  double du_max = 250.0;      // Nm/s, bounds torque increases
  /// Also bound torque decreases by du_max. Off by default: the safe sets
  /// assume a follower can start braking at full strength immediately.
  bool symmetric_slew = false;
  int trust_horizon = 0;      // F
  double a_min = -3.218;      // m/s^2; see default_config()
  double slack_weight = 1e6;
  qp::SolverSettings solver;

  /// Throws std::invalid_argument when an invariant is violated
  /// (0 <= F <= N_p, u_min < 0 < u_max, h_min < h_des, ...).
  void validate() const;
  safeset::BrakingSpec braking_spec() const;
  /// Largest torque change between consecutive steps.
  double du_step() const { return du_max * dt; }
};

/// Defaults with a_min evaluated from the vehicle model instead of the
/// rounded -3.218.
MPCConfig default_config(const dynamics::VehicleParams& params);

struct ControlPlan {
  std::vector<double> inputs;      // u(t..t+N_p-1)
  std::vector<double> velocities;  // v(t..t+N_p)
  std::vector<double> positions;   // p(t..t+N_p)
  bool feasible = false;
  bool fallback = false;  // maximum braking applied instead of a QP solution
  double slack = 0.0;
  qp::Status status = qp::Status::infeasible;
  double kkt_residual = 0.0;
  int iterations = 0;
  double objective = 0.0;

  double applied() const { return inputs.front(); }
};

/// Solve data kept for certification: the QP and its solution.
struct SolveRecord {
  qp::QProblem problem;
  qp::QPSolution solution;
};

/// Terminal-velocity tracking with smooth inputs (leader has no obstacles).
/// `previous_input` anchors the slew-rate bound of the first input.
ControlPlan solve_leader(const dynamics::LeaderState& state,
                         const dynamics::DiscreteModel& model,
                         double previous_input, const MPCConfig& cfg,
                         SolveRecord* record = nullptr);

/// Everything a follower's optimization needs for one step.
struct FollowerProblem {
  int index = 1;                        // i >= 1
  dynamics::FollowerState estimate;     // [p; s_hat; h; v]
  double previous_input = 0.0;
  std::vector<double> leader_preview;       // v_L(t..t+N_p)
  std::vector<double> predecessor_preview;  // braking profile over t..t+N_p
  const safeset::SafeSet* terminal_set = nullptr;
};

/// Spacing-to-leader tracking subject to the minimum-distance constraint over
/// the horizon and the safe-set constraint at step max(F, 1). Both are
/// softened by one nonnegative slack. If even the softened problem is
/// infeasible the plan brakes as hard as the input limits allow.
ControlPlan solve_follower(const FollowerProblem& problem,
                           const dynamics::DiscreteModel& model,
                           const MPCConfig& cfg, SolveRecord* record = nullptr);

/// What a follower observes at the start of a step.
struct FollowerObservation {
  int index = 1;
  double t = 0.0;
  double p = 0.0;                 // own position
  double v = 0.0;                 // own speed
  double radar_h = 0.0;           // distance to predecessor
  double radar_predecessor_v = 0.0;
  double initial_s = 0.0;         // known spacing to the leader at start-up
  bool leader_link = true;        // topology carries leader -> this follower
  std::optional<v2v::Received> leader_msg;
  std::optional<v2v::Received> predecessor_msg;
};

struct FollowerEstimate {
  dynamics::FollowerState state;
  std::vector<double> leader_preview;
  std::vector<double> predecessor_estimates;  // delayed-message estimates
  std::vector<double> predecessor_preview;    // with braking injected
  int trust_horizon = 0;   // effective F (0 without a usable message)
  int leader_delay = -1;   // -1 when no message was used
  int predecessor_delay = -1;
  double terminal_v0 = 0.0;
};

/// Builds the initial-state estimate and disturbance previews from the most
/// recent messages. Messages older than N_p steps are ignored; without a
/// usable message the follower relies on radar only.
FollowerEstimate estimate_follower(const FollowerObservation& obs,
                                   const MPCConfig& cfg);

/// Safe set for the terminal constraint: keyed by the radar speed when F = 0,
/// otherwise by the predecessor estimate at t + F.
const safeset::SafeSet& select_terminal_set(
    std::span<const double> predecessor_estimates, int trust_horizon,
    double radar_v, const safeset::SafeSetCache& cache);

}  // namespace platoon::mpc
