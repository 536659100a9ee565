#pragma once

#include <Eigen/Dense>

namespace platoon::dynamics {

/// Physical constants of the homogeneous vehicle model. Defaults are the
/// passenger-car values used throughout the project; the wheel radius is the
/// value consistent with a maximum deceleration of -3.218 m/s^2 at
/// u_min = -2000 Nm and v_max = 30 m/s.
struct VehicleParams {
  double mass = 1722.0;          // kg
  double area = 2.6292;          // m^2
  double air_density = 1.206;    // kg/m^3
  double drag_coeff = 0.2047;    // -
  double roll_coeff = 0.0106;    // -
  double wheel_radius = 0.39445; // m
  double gravity = 9.81;         // m/s^2
  double grade = 0.0;            // rad

  /// Throws std::invalid_argument when a constant is non-positive or not finite.
  void validate() const;
};

struct LeaderState {
  double p = 0.0;
  double v = 0.0;
};

struct FollowerState {
  double p = 0.0;
  double s = 0.0;  // distance to the leader
  double h = 0.0;  // distance to the predecessor
  double v = 0.0;
};

/// Velocities of the leader and of the predecessor, the exogenous inputs of
/// the follower model.
struct Disturbance {
  double leader_v = 0.0;
  double predecessor_v = 0.0;
};

// State layout of the linear models.
namespace leader_index {
inline constexpr int kP = 0;
inline constexpr int kV = 1;
inline constexpr int kSize = 2;
}  // namespace leader_index

namespace follower_index {
inline constexpr int kP = 0;
inline constexpr int kS = 1;
inline constexpr int kH = 2;
inline constexpr int kV = 3;
inline constexpr int kSize = 4;
}  // namespace follower_index

/// Rolling resistance plus aerodynamic drag.
double friction_force(const VehicleParams& params, double v);

/// Largest wheel torque that leaves a vehicle at rest (static friction).
double holding_torque(const VehicleParams& params);

/// dv/dt of the nonlinear model, including the static-friction clamp at rest.
double acceleration(const VehicleParams& params, double v, double torque);

/// One sampling interval of the nonlinear longitudinal model, integrated with
/// a single classical RK4 step. Velocity never crosses zero: a braking vehicle
/// that would reverse is stopped at the instant its speed reaches zero.
LeaderState plant_step(const LeaderState& state, double torque,
                       const VehicleParams& params, double dt);

/// Follower variant. The leader/predecessor velocities are held constant over
/// the interval (zero-order hold), so s and h advance by dt*w minus the
/// follower's own displacement.
FollowerState plant_step(const FollowerState& state, double torque,
                         const Disturbance& w, const VehicleParams& params,
                         double dt);

/// Continuous-time affine model  x' = A x + B u + E w + c  obtained by a
/// first-order expansion of the friction force about v0. The constant c makes
/// the model exact at v = v0.
struct ContinuousModel {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  Eigen::MatrixXd E;  // zero columns for the leader
  Eigen::VectorXd offset;
  double v0 = 0.0;
};

struct DiscreteModel {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  Eigen::MatrixXd E;
  Eigen::VectorXd offset;
  double v0 = 0.0;
  double dt = 0.0;

  int states() const { return static_cast<int>(A.rows()); }
  int disturbances() const { return static_cast<int>(E.cols()); }
};

ContinuousModel linearize_leader(const VehicleParams& params, double v0);
ContinuousModel linearize_follower(const VehicleParams& params, double v0);

/// Zero-order-hold discretization. When A has a single nonzero column (the
/// case for both vehicle models) the exponential is evaluated in closed form;
/// any other A falls back to the exponential of the augmented block matrix.
DiscreteModel discretize(const ContinuousModel& model, double dt);

/// Convenience: linearize + discretize.
DiscreteModel leader_model(const VehicleParams& params, double v0, double dt);
DiscreteModel follower_model(const VehicleParams& params, double v0, double dt);

}  // namespace platoon::dynamics
