#include "platoon/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace platoon::mpc {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

void require(bool ok, const std::string& what) {
  if (!ok) {
    throw std::invalid_argument("MPCConfig: " + what);
  }
}

// Appends rows to G z <= g.
class RowSink {
 public:
  explicit RowSink(Index n) : n_(n) {}

  void add(const RowVectorXd& row, double rhs) {
    rows_.push_back(row);
    rhs_.push_back(rhs);
  }

  void into(qp::QProblem& problem) const {
    problem.G.resize(static_cast<Index>(rows_.size()), n_);
    problem.g.resize(static_cast<Index>(rows_.size()));
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      problem.G.row(static_cast<Index>(r)) = rows_[r];
      problem.g(static_cast<Index>(r)) = rhs_[r];
    }
  }

 private:
  Index n_;
  std::vector<RowVectorXd> rows_;
  std::vector<double> rhs_;
};

RowVectorXd embed(const RowVectorXd& u_part, Index n) {
  RowVectorXd row = RowVectorXd::Zero(n);
  row.head(u_part.size()) = u_part;
  return row;
}

// Box, slew and jerk terms shared by both controllers. The first input is
// tied to the one applied last step; later inputs to their predecessor.
// Torque decreases are only rate limited with symmetric_slew.
void add_input_terms(qp::QProblem& problem, RowSink& rows, int horizon,
                     double previous_input, const MPCConfig& cfg) {
  const Index n = problem.variables();
  const double du = cfg.du_step();
  for (int k = 0; k < horizon; ++k) {
    RowVectorXd e = RowVectorXd::Zero(n);
    e(k) = 1.0;
    rows.add(e, cfg.u_max);
    rows.add(-e, -cfg.u_min);
    if (k == 0) {
      rows.add(e, previous_input + du);
      if (cfg.symmetric_slew) {
        rows.add(-e, du - previous_input);
      }
    } else {
      RowVectorXd diff = RowVectorXd::Zero(n);
      diff(k) = 1.0;
      diff(k - 1) = -1.0;
      rows.add(diff, du);
      if (cfg.symmetric_slew) {
        rows.add(-diff, du);
      }
      problem.H(k, k) += 2.0 * cfg.alpha;
      problem.H(k - 1, k - 1) += 2.0 * cfg.alpha;
      problem.H(k, k - 1) -= 2.0 * cfg.alpha;
      problem.H(k - 1, k) -= 2.0 * cfg.alpha;
    }
  }
}

void add_velocity_bounds(RowSink& rows, const qp::Prediction& pred, int v_index,
                         Index n, const MPCConfig& cfg) {
  for (int k = 1; k <= pred.horizon; ++k) {
    const RowVectorXd c = embed(pred.coeff(k, v_index), n);
    const double c0 = pred.constant(k, v_index);
    rows.add(c, cfg.v_max - c0);
    rows.add(-c, c0 - cfg.v_min);
  }
}

std::vector<double> trajectory(const qp::Prediction& pred, const VectorXd& u,
                               int state) {
  std::vector<double> out(static_cast<std::size_t>(pred.horizon) + 1);
  for (int k = 0; k <= pred.horizon; ++k) {
    out[static_cast<std::size_t>(k)] =
        pred.constant(k, state) + pred.coeff(k, state).dot(u);
  }
  return out;
}

void clamp_velocities(std::vector<double>& v, const MPCConfig& cfg) {
  for (double& x : v) {
    x = std::clamp(x, cfg.v_min, cfg.v_max);
  }
}

// Hardest braking the input limits allow.
VectorXd braking_inputs(double previous_input, int horizon, const MPCConfig& cfg) {
  VectorXd u(horizon);
  double last = previous_input;
  for (int k = 0; k < horizon; ++k) {
    last = cfg.symmetric_slew ? std::clamp(last - cfg.du_step(), cfg.u_min, cfg.u_max)
                              : cfg.u_min;
    u(k) = last;
  }
  return u;
}

double objective_value(const qp::QProblem& problem, const VectorXd& z,
                       double constant) {
  return 0.5 * z.dot(problem.H * z) + problem.f.dot(z) + constant;
}

void fill_from_solution(ControlPlan& plan, const qp::QPSolution& sol) {
  plan.status = sol.status;
  plan.kkt_residual = sol.kkt_residual;
  plan.iterations += sol.iterations;
}

}  // namespace

void MPCConfig::validate() const {
  require(horizon >= 1, "horizon must be at least 1");
  require(dt > 0.0 && std::isfinite(dt), "dt must be positive");
  require(alpha > 0.0 && std::isfinite(alpha), "alpha must be positive");
  require(trust_horizon >= 0 && trust_horizon <= horizon,
          "trust_horizon must lie in [0, horizon]");
  require(u_min < 0.0 && u_max > 0.0, "u_min < 0 < u_max must hold");
  require(h_min > 0.0, "h_min must be positive");
  require(h_min < h_des, "h_min < h_des must hold");
  require(v_min >= 0.0 && v_min < v_max, "0 <= v_min < v_max must hold");
  require(v_des >= v_min && v_des <= v_max, "v_des must lie in [v_min, v_max]");
  require(du_max > 0.0, "du_max must be positive");
  require(a_min < 0.0 && std::isfinite(a_min), "a_min must be negative");
  require(slack_weight > 0.0 && std::isfinite(slack_weight),
          "slack_weight must be positive");
}

safeset::BrakingSpec MPCConfig::braking_spec() const {
  return {a_min, h_min, dt, v_max};
}

MPCConfig default_config(const dynamics::VehicleParams& params) {
  MPCConfig cfg;
  cfg.a_min = safeset::max_deceleration(params, cfg.u_min, cfg.v_max);
  return cfg;
}

ControlPlan solve_leader(const dynamics::LeaderState& state,
                         const dynamics::DiscreteModel& model,
                         double previous_input, const MPCConfig& cfg,
                         SolveRecord* record) {
  cfg.validate();
  namespace li = dynamics::leader_index;
  const int N = cfg.horizon;
  VectorXd x0(li::kSize);
  x0 << state.p, state.v;
  const qp::Prediction pred = qp::condense({&model, 1}, N, x0, MatrixXd());

  qp::QProblem problem = qp::QProblem::with_variables(N);
  const RowVectorXd gv = pred.coeff(N, li::kV);
  const double cv = pred.constant(N, li::kV) - cfg.v_des;
  problem.H += 2.0 * gv.transpose() * gv;
  problem.f += 2.0 * cv * gv.transpose();

  RowSink rows(N);
  add_input_terms(problem, rows, N, previous_input, cfg);
  add_velocity_bounds(rows, pred, li::kV, N, cfg);
  rows.into(problem);

  ControlPlan plan;
  const qp::QPSolution sol = qp::solve(problem, cfg.solver);
  fill_from_solution(plan, sol);
  VectorXd u;
  if (sol.status == qp::Status::optimal) {
    u = sol.z;
    plan.feasible = true;
    plan.objective = objective_value(problem, u, cv * cv);
  } else {
    u = braking_inputs(previous_input, N, cfg);
    plan.fallback = true;
  }
  plan.inputs.assign(u.data(), u.data() + u.size());
  plan.velocities = trajectory(pred, u, li::kV);
  plan.positions = trajectory(pred, u, li::kP);
  clamp_velocities(plan.velocities, cfg);
  if (record != nullptr) {
    record->problem = std::move(problem);
    record->solution = sol;
  }
  return plan;
}

ControlPlan solve_follower(const FollowerProblem& fp,
                           const dynamics::DiscreteModel& model,
                           const MPCConfig& cfg, SolveRecord* record) {
  cfg.validate();
  namespace fi = dynamics::follower_index;
  const int N = cfg.horizon;
  const auto samples = static_cast<std::size_t>(N) + 1;
  if (fp.index < 1) {
    throw std::invalid_argument("solve_follower: follower index must be >= 1");
  }
  if (fp.leader_preview.size() < samples ||
      fp.predecessor_preview.size() < samples) {
    throw std::invalid_argument("solve_follower: previews need horizon + 1 samples");
  }
  if (fp.terminal_set == nullptr) {
    throw std::invalid_argument("solve_follower: terminal set missing");
  }

  VectorXd x0(fi::kSize);
  x0 << fp.estimate.p, fp.estimate.s, fp.estimate.h, fp.estimate.v;
  MatrixXd preview(2, N);
  for (int k = 0; k < N; ++k) {
    preview(0, k) = fp.leader_preview[static_cast<std::size_t>(k)];
    preview(1, k) = fp.predecessor_preview[static_cast<std::size_t>(k)];
  }
  const qp::Prediction pred = qp::condense({&model, 1}, N, x0, preview);
  const double s_des = cfg.h_des * fp.index;
  const int terminal = std::max(cfg.trust_horizon, 1);

  // Variables [u(0..N-1); sigma] with slack delta = sigma / sqrt(w), so the
  // penalty w delta^2 becomes sigma^2 and H stays well conditioned.
  auto build = [&](bool soft, double& constant) {
    const Index n = soft ? N + 1 : N;
    const double scale = soft ? 1.0 / std::sqrt(cfg.slack_weight) : 0.0;
    qp::QProblem problem = qp::QProblem::with_variables(n);
    constant = 0.0;
    for (int k = 1; k <= N; ++k) {
      const RowVectorXd gs = embed(pred.coeff(k, fi::kS), n);
      const double cs = pred.constant(k, fi::kS) - s_des;
      problem.H += 2.0 * gs.transpose() * gs;
      problem.f += 2.0 * cs * gs.transpose();
      constant += cs * cs;
    }
    RowSink rows(n);
    add_input_terms(problem, rows, N, fp.previous_input, cfg);
    add_velocity_bounds(rows, pred, fi::kV, n, cfg);
    for (int k = 1; k <= N; ++k) {
      RowVectorXd c = -embed(pred.coeff(k, fi::kH), n);
      if (soft) {
        c(N) = -scale;
      }
      rows.add(c, pred.constant(k, fi::kH) - cfg.h_min);
    }
    for (const safeset::Halfspace& hs : fp.terminal_set->halfspaces()) {
      if (hs.normal_h == 0.0) {
        continue;  // pure velocity bounds, already imposed
      }
      RowVectorXd c = embed(hs.normal_h * pred.coeff(terminal, fi::kH) +
                                hs.normal_v * pred.coeff(terminal, fi::kV),
                            n);
      const double c0 = hs.normal_h * pred.constant(terminal, fi::kH) +
                        hs.normal_v * pred.constant(terminal, fi::kV);
      if (soft) {
        c(N) = -scale;
      }
      rows.add(c, hs.offset - c0);
    }
    if (soft) {
      RowVectorXd c = RowVectorXd::Zero(n);
      c(N) = -1.0;
      rows.add(c, 0.0);
      problem.H(N, N) += 2.0;
    }
    rows.into(problem);
    return problem;
  };

  ControlPlan plan;
  double constant = 0.0;
  // The softened problem is only posed when the hard one has no solution, so
  // the slack is exactly zero whenever the constraints can be met.
  qp::QProblem problem = build(false, constant);
  qp::QPSolution sol = qp::solve(problem, cfg.solver);
  fill_from_solution(plan, sol);
  if (sol.status != qp::Status::optimal) {
    problem = build(true, constant);
    sol = qp::solve(problem, cfg.solver);
    fill_from_solution(plan, sol);
  }

  VectorXd u;
  if (sol.status == qp::Status::optimal) {
    u = sol.z.head(N);
    plan.feasible = true;
    plan.objective = objective_value(problem, sol.z, constant);
    if (sol.z.size() > N) {
      plan.slack = std::max(0.0, sol.z(N)) / std::sqrt(cfg.slack_weight);
    }
  } else {
    u = braking_inputs(fp.previous_input, N, cfg);
    plan.fallback = true;
  }
  plan.inputs.assign(u.data(), u.data() + u.size());
  plan.velocities = trajectory(pred, u, fi::kV);
  plan.positions = trajectory(pred, u, fi::kP);
  clamp_velocities(plan.velocities, cfg);
  if (record != nullptr) {
    record->problem = std::move(problem);
    record->solution = std::move(sol);
  }
  return plan;
}

FollowerEstimate estimate_follower(const FollowerObservation& obs,
                                   const MPCConfig& cfg) {
  const int N = cfg.horizon;
  const auto samples = static_cast<std::size_t>(N) + 1;
  FollowerEstimate est;

  auto usable_delay = [&](const std::optional<v2v::Received>& r) {
    if (!r) {
      return -1;
    }
    const int d = v2v::compute_delay(obs.t, r->message.t_sent, cfg.dt);
    return d <= N ? d : -1;
  };
  est.predecessor_delay = usable_delay(obs.predecessor_msg);
  est.leader_delay = usable_delay(obs.leader_msg);

  if (est.predecessor_delay >= 0) {
    est.predecessor_estimates =
        v2v::estimate_velocities(obs.predecessor_msg->message, est.predecessor_delay, N);
    est.trust_horizon = cfg.trust_horizon;
  } else {
    est.predecessor_estimates.assign(samples, obs.radar_predecessor_v);
    est.trust_horizon = 0;
  }
  std::vector<double> basis = est.predecessor_estimates;
  if (est.trust_horizon == 0) {
    basis[0] = obs.radar_predecessor_v;
  }
  est.terminal_v0 = basis[static_cast<std::size_t>(est.trust_horizon)];
  est.predecessor_preview =
      safeset::braking_velocity_profile(basis, est.trust_horizon, cfg.braking_spec());

  est.state.p = obs.p;
  est.state.h = obs.radar_h;
  est.state.v = obs.v;
  if (obs.index == 1) {
    // The leader is the predecessor: its plan is treated like any other
    // predecessor's, and the spacing to it is the radar distance.
    est.leader_preview = est.predecessor_preview;
    est.state.s = est.leader_delay >= 0
                      ? v2v::estimate_leader_position(obs.leader_msg->message,
                                                      est.leader_delay, obs.p, cfg.dt)
                      : obs.radar_h;
  } else if (est.leader_delay >= 0) {
    est.leader_preview =
        v2v::estimate_velocities(obs.leader_msg->message, est.leader_delay, N);
    est.state.s = v2v::estimate_leader_position(obs.leader_msg->message,
                                                est.leader_delay, obs.p, cfg.dt);
  } else {
    est.leader_preview = est.predecessor_preview;
    if (obs.leader_link && !obs.leader_msg) {
      est.state.s = obs.initial_s;  // nothing received yet
    } else {
      // No leader information: track the gap to the predecessor instead.
      est.state.s = cfg.h_des * (obs.index - 1) + obs.radar_h;
    }
  }
  return est;
}

const safeset::SafeSet& select_terminal_set(
    std::span<const double> predecessor_estimates, int trust_horizon,
    double radar_v, const safeset::SafeSetCache& cache) {
  if (trust_horizon == 0) {
    return cache.lookup(radar_v);
  }
  if (trust_horizon < 0 ||
      static_cast<std::size_t>(trust_horizon) >= predecessor_estimates.size()) {
    throw std::invalid_argument("select_terminal_set: trust horizon outside the estimates");
  }
  return cache.lookup(predecessor_estimates[static_cast<std::size_t>(trust_horizon)]);
}

}  // namespace platoon::mpc
