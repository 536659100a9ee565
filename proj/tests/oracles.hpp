#pragma once

// Reference computations that do not reuse library code paths: fine-step
// integration, hand-built models, a KKT checker and a grid search.

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "platoon/dynamics.hpp"
#include "platoon/qp.hpp"

namespace oracle {

struct PV {
  double p = 0.0;
  double v = 0.0;
};

inline double drag_constant(const platoon::dynamics::VehicleParams& p) {
  return 0.5 * p.air_density * p.area * p.drag_coeff;
}

inline double vdot(const platoon::dynamics::VehicleParams& p, double v, double u) {
  double friction = p.mass * p.gravity * p.roll_coeff + drag_constant(p) * v * v;
  return (u / p.wheel_radius - friction) / p.mass;
}

// Many RK4 substeps of the nonlinear model; valid while v stays positive.
inline PV integrate_nonlinear(const platoon::dynamics::VehicleParams& p, double p0,
                              double v0, double u, double dt, int substeps) {
  double h = dt / substeps;
  PV x{p0, v0};
  for (int i = 0; i < substeps; ++i) {
    double k1p = x.v, k1v = vdot(p, x.v, u);
    double k2p = x.v + 0.5 * h * k1v, k2v = vdot(p, x.v + 0.5 * h * k1v, u);
    double k3p = x.v + 0.5 * h * k2v, k3v = vdot(p, x.v + 0.5 * h * k2v, u);
    double k4p = x.v + h * k3v, k4v = vdot(p, x.v + h * k3v, u);
    x.p += h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p);
    x.v += h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
  }
  return x;
}

// Follower model [p s h v] written out from the equations of motion.
inline platoon::dynamics::ContinuousModel follower_continuous(
    const platoon::dynamics::VehicleParams& p, double v0) {
  double k = drag_constant(p);
  platoon::dynamics::ContinuousModel c;
  c.A = Eigen::MatrixXd::Zero(4, 4);
  c.A(0, 3) = 1.0;
  c.A(1, 3) = -1.0;
  c.A(2, 3) = -1.0;
  c.A(3, 3) = -2.0 * k * v0 / p.mass;
  c.B = Eigen::MatrixXd::Zero(4, 1);
  c.B(3, 0) = 1.0 / (p.mass * p.wheel_radius);
  c.E = Eigen::MatrixXd::Zero(4, 2);
  c.E(1, 0) = 1.0;
  c.E(2, 1) = 1.0;
  // friction(v) ~ friction(v0) + 2 k v0 (v - v0)
  c.offset = Eigen::VectorXd::Zero(4);
  c.offset(3) = -(p.mass * p.gravity * p.roll_coeff - k * v0 * v0) / p.mass;
  c.v0 = v0;
  return c;
}

// Leader model [p v].
inline platoon::dynamics::ContinuousModel leader_continuous(
    const platoon::dynamics::VehicleParams& p, double v0) {
  double k = drag_constant(p);
  platoon::dynamics::ContinuousModel c;
  c.A = Eigen::MatrixXd{{0.0, 1.0}, {0.0, -2.0 * k * v0 / p.mass}};
  c.B = Eigen::MatrixXd{{0.0}, {1.0 / (p.mass * p.wheel_radius)}};
  c.E = Eigen::MatrixXd::Zero(2, 0);
  c.offset = Eigen::VectorXd{{0.0, -(p.mass * p.gravity * p.roll_coeff - k * v0 * v0) / p.mass}};
  c.v0 = v0;
  return c;
}

// Integrates Psi' = M Psi, Psi(0) = I for the augmented generator
// [[A B E c]; [0 0 0 0]] with RK4; the top block row is [Ad Bd Ed cd].
inline platoon::dynamics::DiscreteModel zoh_by_integration(
    const platoon::dynamics::ContinuousModel& c, double dt, int substeps) {
  Eigen::Index n = c.A.rows(), nu = c.B.cols(), nw = c.E.cols();
  Eigen::Index total = n + nu + nw + 1;
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(total, total);
  M.block(0, 0, n, n) = c.A;
  M.block(0, n, n, nu) = c.B;
  if (nw > 0) M.block(0, n + nu, n, nw) = c.E;
  M.block(0, n + nu + nw, n, 1) = c.offset;
  Eigen::MatrixXd psi = Eigen::MatrixXd::Identity(total, total);
  double h = dt / substeps;
  for (int i = 0; i < substeps; ++i) {
    Eigen::MatrixXd k1 = M * psi;
    Eigen::MatrixXd k2 = M * (psi + 0.5 * h * k1);
    Eigen::MatrixXd k3 = M * (psi + 0.5 * h * k2);
    Eigen::MatrixXd k4 = M * (psi + h * k3);
    psi += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  platoon::dynamics::DiscreteModel d;
  d.A = psi.block(0, 0, n, n);
  d.B = psi.block(0, n, n, nu);
  d.E = psi.block(0, n + nu, n, nw);
  d.offset = psi.block(0, n + nu + nw, n, 1);
  d.dt = dt;
  return d;
}

inline double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return std::numeric_limits<double>::infinity();
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff();
}

struct KKTReport {
  double stationarity = 0.0;
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;
  double worst() const { return std::max({stationarity, primal, dual, complementarity}); }
};

// Convention H z + f + G' lambda + Aeq' mu = 0, lambda >= 0.
inline KKTReport check_kkt(const platoon::qp::QProblem& qp, const Eigen::VectorXd& z,
                           const Eigen::VectorXd& lambda, const Eigen::VectorXd& mu) {
  KKTReport r;
  Eigen::VectorXd grad = qp.H * z + qp.f;
  if (qp.G.rows() > 0) grad += qp.G.transpose() * lambda;
  if (qp.Aeq.rows() > 0) grad += qp.Aeq.transpose() * mu;
  r.stationarity = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
  for (Eigen::Index i = 0; i < qp.G.rows(); ++i) {
    double slack = qp.g(i) - qp.G.row(i).dot(z);
    r.primal = std::max(r.primal, -slack);
    r.dual = std::max(r.dual, -lambda(i));
    r.complementarity = std::max(r.complementarity, std::abs(lambda(i) * slack));
  }
  for (Eigen::Index i = 0; i < qp.Aeq.rows(); ++i)
    r.primal = std::max(r.primal, std::abs(qp.Aeq.row(i).dot(z) - qp.beq(i)));
  return r;
}

inline double objective(const platoon::qp::QProblem& qp, const Eigen::VectorXd& z) {
  return 0.5 * z.dot(qp.H * z) + qp.f.dot(z);
}

// Exhaustive minimization of a 2-variable QP over the grid lo + k h of a box,
// optionally cut by one halfspace a.z <= b with a(1) != 0. For each grid value
// of z0 the best grid z1 is found exactly (the objective is a parabola in z1).
inline double grid_minimum(const Eigen::Matrix2d& H, const Eigen::Vector2d& f,
                           const Eigen::Vector2d& lo, const Eigen::Vector2d& hi,
                           const Eigen::Vector2d* a, double b, double h) {
  auto obj = [&](double x, double y) {
    return 0.5 * (H(0, 0) * x * x + 2 * H(0, 1) * x * y + H(1, 1) * y * y) + f(0) * x + f(1) * y;
  };
  long n0 = std::lround((hi(0) - lo(0)) / h);
  long n1 = std::lround((hi(1) - lo(1)) / h);
  double best = std::numeric_limits<double>::infinity();
  for (long i = 0; i <= n0; ++i) {
    double x = lo(0) + i * h;
    long jlo = 0, jhi = n1;
    if (a) {
      double bound = ((b - (*a)(0) * x) / (*a)(1) - lo(1)) / h;
      if ((*a)(1) > 0)
        jhi = std::min(jhi, static_cast<long>(std::floor(bound + 1e-12)));
      else
        jlo = std::max(jlo, static_cast<long>(std::ceil(bound - 1e-12)));
    }
    if (jlo > jhi) continue;
    double ystar = -(f(1) + H(0, 1) * x) / H(1, 1);
    long jc = std::clamp(static_cast<long>(std::floor((ystar - lo(1)) / h)), jlo, jhi);
    for (long j : {jc - 1, jc, jc + 1, jc + 2, jlo, jhi}) {
      if (j < jlo || j > jhi) continue;
      best = std::min(best, obj(x, lo(1) + j * h));
    }
  }
  return best;
}

}  // namespace oracle
