#include "platoon/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

namespace platoon::sim {

namespace {

struct StepResult {
  mpc::ControlPlan plan;
  VehicleSample sample;
};

// Exactly within the actuator and slew limits, removing solver round-off.
double certify_input(double u, double previous, const mpc::MPCConfig& cfg) {
  const double lo = cfg.symmetric_slew ? std::max(cfg.u_min, previous - cfg.du_step())
                                       : cfg.u_min;
  const double hi = std::min(cfg.u_max, previous + cfg.du_step());
  return lo <= hi ? std::clamp(u, lo, hi) : std::clamp(u, cfg.u_min, cfg.u_max);
}

mpc::ControlPlan hold_plan(double v, double u, const mpc::MPCConfig& cfg) {
  mpc::ControlPlan plan;
  plan.inputs.assign(static_cast<std::size_t>(cfg.horizon), u);
  plan.velocities.assign(static_cast<std::size_t>(cfg.horizon) + 1,
                         std::clamp(v, cfg.v_min, cfg.v_max));
  plan.feasible = true;
  plan.status = qp::Status::optimal;
  return plan;
}

}  // namespace

void ScenarioConfig::validate(const mpc::MPCConfig& mpc_cfg) const {
  if (vehicles < 2) {
    throw std::invalid_argument("scenario: vehicles must be at least 2");
  }
  if (!(initial_spacing >= mpc_cfg.h_min)) {
    throw std::invalid_argument("scenario: initial_spacing must be >= h_min");
  }
  if (!(duration > 0.0) || !std::isfinite(duration)) {
    throw std::invalid_argument("scenario: duration must be positive");
  }
  if (!(ell > 0.0) || !std::isfinite(ell)) {
    throw std::invalid_argument("scenario: ell must be positive");
  }
  if (!(latency >= 0.0) || !std::isfinite(latency)) {
    throw std::invalid_argument("scenario: latency must be non-negative");
  }
  for (int f : trust_horizons) {
    if (f < 0 || f > mpc_cfg.horizon) {
      throw std::invalid_argument("scenario: trust horizon " + std::to_string(f) +
                                  " outside [0, horizon]");
    }
  }
}

int ScenarioConfig::steps(double dt) const {
  return static_cast<int>(std::llround(duration / dt));
}

InitialStates init_scenario(const ScenarioConfig& cfg, double h_min) {
  if (cfg.vehicles < 2) {
    throw std::invalid_argument("init_scenario: vehicles must be at least 2");
  }
  if (!(cfg.initial_spacing >= h_min)) {
    throw std::invalid_argument("init_scenario: initial_spacing must be >= h_min");
  }
  InitialStates init;
  for (int i = 1; i < cfg.vehicles; ++i) {
    const double s = cfg.initial_spacing;
    init.followers.push_back({-s * i, s * i, s, 0.0});
  }
  return init;
}

SimLog run(const ScenarioConfig& cfg, const mpc::MPCConfig& mpc_cfg,
           const dynamics::VehicleParams& params,
           const safeset::SafeSetCache& cache, const RunOptions& options) {
  cfg.validate(mpc_cfg);
  mpc_cfg.validate();
  params.validate();
  const int N = cfg.vehicles;
  const double dt = mpc_cfg.dt;
  const int steps = cfg.steps(dt);
  const v2v::Topology topology = v2v::Topology::make(cfg.topology, N);
  v2v::MessageBus bus(topology, cfg.latency, dt);

  const InitialStates init = init_scenario(cfg, mpc_cfg.h_min);
  // Plants integrate (p, v) per vehicle; spacings follow from positions.
  std::vector<dynamics::LeaderState> plant(static_cast<std::size_t>(N));
  plant[0] = init.leader;
  for (int i = 1; i < N; ++i) {
    const auto& f = init.followers[static_cast<std::size_t>(i - 1)];
    plant[static_cast<std::size_t>(i)] = {f.p, f.v};
  }
  std::vector<double> previous(static_cast<std::size_t>(N),
                               dynamics::holding_torque(params));

  SimLog log;
  log.dt = dt;
  log.vehicles = N;
  log.t.reserve(static_cast<std::size_t>(steps));
  log.samples.reserve(static_cast<std::size_t>(steps));
  log.min_headway = std::numeric_limits<double>::infinity();

  for (int k = 0; k < steps; ++k) {
    const double t = k * dt;
    bus.tick(t);

    auto control = [&](int i) {
      const auto& self = plant[static_cast<std::size_t>(i)];
      StepResult r;
      r.sample.p = self.p;
      r.sample.v = self.v;
      if (i > 0) {
        r.sample.s = plant[0].p - self.p;
        r.sample.h = plant[static_cast<std::size_t>(i - 1)].p - self.p;
      }
      const double prev_u = previous[static_cast<std::size_t>(i)];
      std::optional<double> forced;
      if (options.torque_override) {
        forced = options.torque_override(i, k);
      }
      mpc::SolveRecord record;
      const auto started = std::chrono::steady_clock::now();
      if (forced) {
        r.plan = hold_plan(self.v, *forced, mpc_cfg);
      } else if (i == 0) {
        r.plan = mpc::solve_leader(self, dynamics::leader_model(params, self.v, dt),
                                   prev_u, mpc_cfg, &record);
      } else {
        mpc::FollowerObservation obs;
        obs.index = i;
        obs.t = t;
        obs.p = self.p;
        obs.v = self.v;
        obs.radar_h = r.sample.h;
        obs.radar_predecessor_v = plant[static_cast<std::size_t>(i - 1)].v;
        obs.initial_s = cfg.initial_spacing * i;
        obs.leader_link = i == 1 || topology.has_arc(0, i);
        obs.leader_msg = bus.latest(i, 0);
        obs.predecessor_msg = bus.latest(i, i - 1);
        const mpc::FollowerEstimate est = mpc::estimate_follower(obs, mpc_cfg);
        mpc::FollowerProblem fp;
        fp.index = i;
        fp.estimate = est.state;
        fp.previous_input = prev_u;
        fp.leader_preview = est.leader_preview;
        fp.predecessor_preview = est.predecessor_preview;
        fp.terminal_set = &mpc::select_terminal_set(
            est.predecessor_estimates, est.trust_horizon, obs.radar_predecessor_v, cache);
        r.plan = mpc::solve_follower(fp, dynamics::follower_model(params, self.v, dt),
                                     mpc_cfg, &record);
        r.sample.s_estimate_error = est.state.s - r.sample.s;
        r.sample.leader_delay = est.leader_delay;
        r.sample.predecessor_delay = est.predecessor_delay;
      }
      r.sample.solve_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      if (!forced && options.on_solve) {
        options.on_solve(i, k, record);
      }
      r.sample.u = forced ? *forced : certify_input(r.plan.applied(), prev_u, mpc_cfg);
      r.sample.slack = r.plan.slack;
      r.sample.status = r.plan.status;
      r.sample.fallback = r.plan.fallback;
      r.sample.kkt_residual = r.plan.kkt_residual;
      r.sample.iterations = r.plan.iterations;
      return r;
    };

    std::vector<StepResult> results(static_cast<std::size_t>(N));
    if (options.parallel && !options.on_solve) {
      std::vector<std::future<StepResult>> jobs;
      for (int i = 0; i < N; ++i) {
        jobs.push_back(std::async(std::launch::async, control, i));
      }
      for (int i = 0; i < N; ++i) {
        results[static_cast<std::size_t>(i)] = jobs[static_cast<std::size_t>(i)].get();
      }
    } else {
      for (int i = 0; i < N; ++i) {
        results[static_cast<std::size_t>(i)] = control(i);
      }
    }

    std::vector<VehicleSample> row;
    row.reserve(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
      const StepResult& r = results[static_cast<std::size_t>(i)];
      v2v::V2VMessage msg;
      msg.sender = i;
      msg.t_sent = t;
      if (i == 0) {
        msg.position = plant[0].p;
      }
      msg.plan = r.plan.velocities;
      bus.send(msg);

      log.max_slack = std::max(log.max_slack, r.sample.slack);
      log.max_kkt_residual = std::max(log.max_kkt_residual, r.sample.kkt_residual);
      log.fallbacks += r.sample.fallback ? 1 : 0;
      if (i > 0) {
        log.min_headway = std::min(log.min_headway, r.sample.h);
      }
      row.push_back(r.sample);
    }
    for (int i = 0; i < N; ++i) {
      auto& state = plant[static_cast<std::size_t>(i)];
      const double u = row[static_cast<std::size_t>(i)].u;
      state = dynamics::plant_step(state, u, params, dt);
      previous[static_cast<std::size_t>(i)] = u;
    }
    log.t.push_back(t);
    log.samples.push_back(std::move(row));
  }
  log.deliveries = bus.log();
  log.collisions = detect_collisions(log, mpc_cfg.h_min);
  return log;
}

std::vector<CollisionEvent> detect_collisions(const SimLog& log, double h_min,
                                              double tol) {
  std::vector<CollisionEvent> events;
  for (int i = 1; i < log.vehicles; ++i) {
    std::optional<CollisionEvent> open;
    for (int k = 0; k < log.steps(); ++k) {
      const double h = log.at(k, i).h;
      if (h < h_min - tol) {
        if (!open) {
          open = CollisionEvent{i, k, 0, 0.0};
        }
        open->steps += 1;
        open->worst_violation = std::max(open->worst_violation, h_min - h);
      } else if (open) {
        events.push_back(*open);
        open.reset();
      }
    }
    if (open) {
      events.push_back(*open);
    }
  }
  return events;
}

double crossing_time(const SimLog& log, int vehicle, double ell) {
  for (int k = 0; k < log.steps(); ++k) {
    const double p = log.at(k, vehicle).p;
    if (p >= ell) {
      if (k == 0) {
        return log.t[0];
      }
      const double p_prev = log.at(k - 1, vehicle).p;
      const double frac = (ell - p_prev) / (p - p_prev);
      return log.t[static_cast<std::size_t>(k - 1)] +
             frac * (log.t[static_cast<std::size_t>(k)] -
                     log.t[static_cast<std::size_t>(k - 1)]);
    }
  }
  throw std::runtime_error("vehicle " + std::to_string(vehicle) +
                           " never reaches ell = " + std::to_string(ell) + " m");
}

ThroughputResult measure_throughput(const SimLog& log, double ell, int vehicles) {
  if (vehicles < 2 || vehicles > log.vehicles) {
    throw std::invalid_argument("measure_throughput: vehicle count does not match the log");
  }
  ThroughputResult r;
  r.t_leader = crossing_time(log, 0, ell);
  r.t_last = crossing_time(log, vehicles - 1, ell);
  if (!(r.t_last > r.t_leader)) {
    throw std::runtime_error("measure_throughput: last vehicle crossed before the leader");
  }
  r.vph = 3600.0 * (vehicles - 1) / (r.t_last - r.t_leader);
  return r;
}

std::vector<SweepPoint> sweep_trust(const ScenarioConfig& cfg,
                                    const mpc::MPCConfig& mpc_cfg,
                                    const dynamics::VehicleParams& params,
                                    const safeset::SafeSetCache& cache,
                                    const std::vector<int>& trust_horizons) {
  if (trust_horizons.empty()) {
    throw std::invalid_argument("sweep_trust: empty trust-horizon list");
  }
  std::vector<std::future<SweepPoint>> jobs;
  for (int f : trust_horizons) {
    mpc::MPCConfig run_cfg = mpc_cfg;
    run_cfg.trust_horizon = f;
    run_cfg.validate();
    jobs.push_back(std::async(std::launch::async, [=, &cache, &params] {
      RunOptions options;
      options.parallel = false;
      SweepPoint point;
      point.trust_horizon = f;
      point.log = run(cfg, run_cfg, params, cache, options);
      point.throughput = measure_throughput(point.log, cfg.ell, cfg.vehicles);
      return point;
    }));
  }
  std::vector<SweepPoint> out;
  for (auto& job : jobs) {
    out.push_back(job.get());
  }
  return out;
}

void write_log_csv(const SimLog& log, std::ostream& out) {
  out << "t,vehicle_id,p,s,h,v,u,slack,status\n";
  out << std::setprecision(12);
  for (int k = 0; k < log.steps(); ++k) {
    for (int i = 0; i < log.vehicles; ++i) {
      const VehicleSample& s = log.at(k, i);
      out << log.t[static_cast<std::size_t>(k)] << ',' << i << ',' << s.p << ','
          << s.s << ',' << s.h << ',' << s.v << ',' << s.u << ',' << s.slack << ','
          << (s.fallback ? std::string("fallback") : qp::to_string(s.status)) << '\n';
    }
  }
}

void write_controller_csv(const SimLog& log, std::ostream& out) {
  out << "t,vehicle_id,status,fallback,slack,u,iterations,kkt_residual,solve_seconds\n";
  out << std::setprecision(12);
  for (int k = 0; k < log.steps(); ++k) {
    for (int i = 0; i < log.vehicles; ++i) {
      const VehicleSample& s = log.at(k, i);
      out << log.t[static_cast<std::size_t>(k)] << ',' << i << ','
          << qp::to_string(s.status) << ',' << (s.fallback ? 1 : 0) << ',' << s.slack
          << ',' << s.u << ',' << s.iterations << ',' << s.kkt_residual << ','
          << s.solve_seconds << '\n';
    }
  }
}

void write_sweep_csv(const std::vector<SweepPoint>& sweep, std::ostream& out) {
  out << "F,t_L,t_last,vph\n";
  out << std::setprecision(10);
  for (const SweepPoint& p : sweep) {
    out << p.trust_horizon << ',' << p.throughput.t_leader << ','
        << p.throughput.t_last << ',' << p.throughput.vph << '\n';
  }
}

}  // namespace platoon::sim
