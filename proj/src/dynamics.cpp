#include "platoon/dynamics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include <unsupported/Eigen/MatrixFunctions>

namespace platoon::dynamics {

namespace {

void require_positive(double value, const char* name) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw std::invalid_argument(std::string("VehicleParams.") + name +
                                " must be positive and finite");
  }
}

double rolling_force(const VehicleParams& p) {
  return p.mass * p.gravity *
         (std::sin(p.grade) + p.roll_coeff * std::cos(p.grade));
}

double drag_factor(const VehicleParams& p) {
  return 0.5 * p.air_density * p.area * p.drag_coeff;
}

struct Kinematics {
  double dp;
  double v;
};

Kinematics rk4(const VehicleParams& params, double v, double torque, double h) {
  const double k1 = acceleration(params, v, torque);
  const double v2 = v + 0.5 * h * k1;
  const double k2 = acceleration(params, v2, torque);
  const double v3 = v + 0.5 * h * k2;
  const double k3 = acceleration(params, v3, torque);
  const double v4 = v + h * k3;
  const double k4 = acceleration(params, v4, torque);
  return {h / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4),
          v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)};
}

// Advances (p, v) by dt. If the RK4 step ends with a negative speed the
// vehicle stopped inside the interval: bisect on the step length for the
// instant the speed reaches zero and stay at rest afterwards.
Kinematics longitudinal_step(const VehicleParams& params, double v,
                             double torque, double dt) {
  Kinematics full = rk4(params, v, torque, dt);
  if (full.v >= 0.0) {
    return full;
  }
  double lo = 0.0;
  double hi = dt;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (rk4(params, v, torque, mid).v > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return {rk4(params, v, torque, lo).dp, 0.0};
}

// Closed-form ZOH for an A whose only nonzero column is `col`. Then
// A^2 = lambda*A with lambda = A(col, col), hence
//   exp(A t)         = I + phi1(t) A
//   int_0^t exp(A s) = t I + phi2(t) A
double phi1(double lambda, double t) {
  const double x = lambda * t;
  if (std::abs(x) < 1e-3) {
    return t * (1.0 + x / 2.0 + x * x / 6.0 + x * x * x / 24.0 +
                x * x * x * x / 120.0);
  }
  return std::expm1(x) / lambda;
}

double phi2(double lambda, double t) {
  const double x = lambda * t;
  if (std::abs(x) < 1e-3) {
    return t * t *
           (0.5 + x / 6.0 + x * x / 24.0 + x * x * x / 120.0 +
            x * x * x * x / 720.0);
  }
  return (phi1(lambda, t) - t) / lambda;
}

int single_nonzero_column(const Eigen::MatrixXd& A) {
  int found = -1;
  for (Eigen::Index c = 0; c < A.cols(); ++c) {
    if (!A.col(c).isZero(0.0)) {
      if (found >= 0) {
        return -2;
      }
      found = static_cast<int>(c);
    }
  }
  return found;
}

}  // namespace

void VehicleParams::validate() const {
  require_positive(mass, "mass");
  require_positive(area, "area");
  require_positive(air_density, "air_density");
  require_positive(drag_coeff, "drag_coeff");
  require_positive(roll_coeff, "roll_coeff");
  require_positive(wheel_radius, "wheel_radius");
  require_positive(gravity, "gravity");
  if (!std::isfinite(grade)) {
    throw std::invalid_argument("VehicleParams.grade must be finite");
  }
}

double friction_force(const VehicleParams& params, double v) {
  return rolling_force(params) + drag_factor(params) * v * v;
}

double holding_torque(const VehicleParams& params) {
  return params.wheel_radius * rolling_force(params);
}

double acceleration(const VehicleParams& params, double v, double torque) {
  const double tractive = torque / params.wheel_radius;
  if (v <= 0.0 && tractive <= rolling_force(params)) {
    return 0.0;
  }
  const double speed = v > 0.0 ? v : 0.0;
  return (tractive - friction_force(params, speed)) / params.mass;
}

LeaderState plant_step(const LeaderState& state, double torque,
                       const VehicleParams& params, double dt) {
  const Kinematics k = longitudinal_step(params, state.v, torque, dt);
  return {state.p + k.dp, k.v};
}

FollowerState plant_step(const FollowerState& state, double torque,
                         const Disturbance& w, const VehicleParams& params,
                         double dt) {
  const Kinematics k = longitudinal_step(params, state.v, torque, dt);
  return {state.p + k.dp, state.s + dt * w.leader_v - k.dp,
          state.h + dt * w.predecessor_v - k.dp, k.v};
}

ContinuousModel linearize_leader(const VehicleParams& params, double v0) {
  using namespace leader_index;
  ContinuousModel m;
  m.v0 = v0;
  m.A = Eigen::MatrixXd::Zero(kSize, kSize);
  m.B = Eigen::MatrixXd::Zero(kSize, 1);
  m.E = Eigen::MatrixXd::Zero(kSize, 0);
  m.offset = Eigen::VectorXd::Zero(kSize);
  const double k = drag_factor(params);
  m.A(kP, kV) = 1.0;
  m.A(kV, kV) = -2.0 * k * v0 / params.mass;
  m.B(kV, 0) = 1.0 / (params.mass * params.wheel_radius);
  // F_f(v) ~ F_f(v0) + 2 k v0 (v - v0): the constant part is F_roll - k v0^2.
  m.offset(kV) = -(rolling_force(params) - k * v0 * v0) / params.mass;
  return m;
}

ContinuousModel linearize_follower(const VehicleParams& params, double v0) {
  using namespace follower_index;
  const ContinuousModel lead = linearize_leader(params, v0);
  ContinuousModel m;
  m.v0 = v0;
  m.A = Eigen::MatrixXd::Zero(kSize, kSize);
  m.B = Eigen::MatrixXd::Zero(kSize, 1);
  m.E = Eigen::MatrixXd::Zero(kSize, 2);
  m.offset = Eigen::VectorXd::Zero(kSize);
  m.A(kP, kV) = 1.0;
  m.A(kS, kV) = -1.0;
  m.A(kH, kV) = -1.0;
  m.A(kV, kV) = lead.A(leader_index::kV, leader_index::kV);
  m.B(kV, 0) = lead.B(leader_index::kV, 0);
  m.E(kS, 0) = 1.0;
  m.E(kH, 1) = 1.0;
  m.offset(kV) = lead.offset(leader_index::kV);
  return m;
}

DiscreteModel discretize(const ContinuousModel& model, double dt) {
  if (!(dt > 0.0)) {
    throw std::invalid_argument("discretize: dt must be positive");
  }
  const Eigen::Index n = model.A.rows();
  DiscreteModel d;
  d.v0 = model.v0;
  d.dt = dt;

  const int col = single_nonzero_column(model.A);
  if (col >= -1) {
    const double lambda = col >= 0 ? model.A(col, col) : 0.0;
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
    d.A = I + phi1(lambda, dt) * model.A;
    const Eigen::MatrixXd integral = dt * I + phi2(lambda, dt) * model.A;
    d.B = integral * model.B;
    d.E = integral * model.E;
    d.offset = integral * model.offset;
    return d;
  }

  // General case: exp([A B E c; 0 0 0 0] dt) holds A_d and the ZOH integrals
  // in its first block row.
  const Eigen::Index nu = model.B.cols();
  const Eigen::Index nw = model.E.cols();
  const Eigen::Index total = n + nu + nw + 1;
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(total, total);
  aug.topLeftCorner(n, n) = model.A;
  aug.block(0, n, n, nu) = model.B;
  aug.block(0, n + nu, n, nw) = model.E;
  aug.block(0, n + nu + nw, n, 1) = model.offset;
  const Eigen::MatrixXd phi = (aug * dt).exp();
  d.A = phi.topLeftCorner(n, n);
  d.B = phi.block(0, n, n, nu);
  d.E = phi.block(0, n + nu, n, nw);
  d.offset = phi.block(0, n + nu + nw, n, 1);
  return d;
}

DiscreteModel leader_model(const VehicleParams& params, double v0, double dt) {
  return discretize(linearize_leader(params, v0), dt);
}

DiscreteModel follower_model(const VehicleParams& params, double v0,
                             double dt) {
  return discretize(linearize_follower(params, v0), dt);
}

}  // namespace platoon::dynamics
