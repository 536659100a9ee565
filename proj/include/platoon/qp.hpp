#pragma once

#include <iosfwd>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "platoon/dynamics.hpp"

namespace platoon::qp {

/// min 1/2 z'Hz + f'z   s.t.  G z <= g,  Aeq z = beq
struct QProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd f;
  Eigen::MatrixXd G;
  Eigen::VectorXd g;
  Eigen::MatrixXd Aeq;
  Eigen::VectorXd beq;

  /// Empty constraint blocks sized for n variables.
  static QProblem with_variables(Eigen::Index n);

  Eigen::Index variables() const { return H.rows(); }

  /// Throws std::invalid_argument on inconsistent sizes, non-finite data or
  /// an asymmetric H.
  void validate() const;
};

enum class Status { optimal, infeasible, max_iterations };

std::string to_string(Status status);

struct QPSolution {
  Eigen::VectorXd z;
  Eigen::VectorXd ineq_duals;  // >= 0, one per row of G
  Eigen::VectorXd eq_duals;    // one per row of Aeq
  Status status = Status::infeasible;
  double kkt_residual = 0.0;
  int iterations = 0;
};

struct SolverSettings {
  double tol = 1e-6;
  int max_iter = 4000;
};

/// Dense dual active-set solver (Goldfarb-Idnani). H must be positive
/// definite; an H that fails the Cholesky factorization is rejected with
/// std::invalid_argument. Infeasibility is reported through the status.
QPSolution solve(const QProblem& problem, const SolverSettings& settings = {});

/// Largest violation among stationarity, primal feasibility, dual
/// feasibility and complementary slackness, with the sign convention
///   H z + f + G' ineq_duals + Aeq' eq_duals = 0.
double kkt_residual(const QProblem& problem, const Eigen::VectorXd& z,
                    const Eigen::VectorXd& ineq_duals,
                    const Eigen::VectorXd& eq_duals);

/// Text dump of every block in a Matrix Market-like coordinate format.
void dump(const QProblem& problem, std::ostream& out);

/// Stacked state trajectory x(0..N) written as  X = free + gamma * U, where
/// U = [u(0); ...; u(N-1)].
struct Prediction {
  Eigen::Index states = 0;
  Eigen::Index inputs = 0;
  int horizon = 0;
  Eigen::VectorXd free;   // (N+1)*states
  Eigen::MatrixXd gamma;  // (N+1)*states x N*inputs

  /// Affine expression of component `state` of x(k): (coefficient row, constant).
  Eigen::RowVectorXd coeff(int k, int state) const {
    return gamma.row(k * states + state);
  }
  double constant(int k, int state) const { return free(k * states + state); }
};

/// Eliminates the states of  x(k+1) = A x(k) + B u(k) + E w(k) + c.
/// `models` holds either one model (frozen over the horizon) or one per step;
/// `preview` has one column per step (E.cols() rows, may be empty).
Prediction condense(std::span<const dynamics::DiscreteModel> models,
                    int horizon, const Eigen::VectorXd& x0,
                    const Eigen::MatrixXd& preview);

}  // namespace platoon::qp
