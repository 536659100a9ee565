// End-to-end acceptance checks, one line per criterion. Exit status is the
// number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "platoon/dynamics.hpp"
#include "platoon/mpc.hpp"
#include "platoon/qp.hpp"
#include "platoon/safeset.hpp"
#include "platoon/sim.hpp"
#include "platoon/v2v.hpp"

using namespace platoon;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  std::printf("criterion %2d: %s  %s (%s)\n", id, pass ? "PASS" : "FAIL", what.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* format, double a = 0, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c, d);
  return buf;
}

const safeset::BrakingSpec kReferenceSpec{-3.218, 6.5, 0.1, 30.0};

// Extremal braking rollout from the kinematic model, written independently
// of the library: returns min_k h(k).
double rollout_min_gap(double h0, double vf, double v0, const safeset::BrakingSpec& spec) {
  double step = -spec.a_min * spec.dt;
  double vl = step * std::floor(v0 / step + 1e-9);
  double pl = h0, pf = 0.0, v = vf, worst = h0;
  for (int k = 0; k < 100000 && (vl > 0.0 || v > 0.0); ++k) {
    double al = vl + spec.a_min * spec.dt < 1e-12 ? -vl / spec.dt : spec.a_min;
    double af = v + spec.a_min * spec.dt < 1e-12 ? -v / spec.dt : spec.a_min;
    pl += vl * spec.dt + 0.5 * al * spec.dt * spec.dt;
    pf += v * spec.dt + 0.5 * af * spec.dt * spec.dt;
    vl += al * spec.dt;
    v += af * spec.dt;
    worst = std::min(worst, pl - pf);
  }
  return worst;
}

double distance_to_vertex(const safeset::SafeSet& set, double v, double h) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : set.boundary()) best = std::min(best, std::max(std::abs(p.v - v), std::abs(p.h - h)));
  return best;
}

void criterion_1() {
  auto start = Clock::now();
  auto set = safeset::build_safe_set(7.5, kReferenceSpec);
  double elapsed = seconds_since(start);
  double d1 = distance_to_vertex(set, 7.40144, 6.5);
  double d2 = distance_to_vertex(set, 7.7232, 7.2562);
  report(1, d1 <= 1e-4 && d2 <= 0.01 && elapsed < 1.0, "safe set C(7.5) vertices",
         fmt("|(7.40144,6.5)| off by %.2e, |(7.7232,7.2562)| off by %.2e, built in %.4f s", d1, d2,
             elapsed));
}

void criterion_2() {
  dynamics::VehicleParams params;
  double a = safeset::max_deceleration(params, -2000.0, 30.0);
  report(2, std::abs(a + 3.218) <= 1e-3, "a_min from the vehicle model",
         fmt("a_min = %.6f m/s^2 with R_w = %.5f m", a, params.wheel_radius));
}

void criterion_3() {
  std::mt19937_64 rng(20240607);
  std::uniform_real_distribution<double> V(0.0, 30.0), H(0.0, 150.0);
  int samples = 0, skipped = 0, disagreements = 0;
  for (int i = 0; i < 12000; ++i) {
    double v0 = V(rng), vf = V(rng), h = H(rng);
    auto set = safeset::build_safe_set(v0, kReferenceSpec);
    double violation = -std::numeric_limits<double>::infinity();
    for (const auto& hs : set.halfspaces())
      violation = std::max(violation, hs.normal_h * h + hs.normal_v * vf - hs.offset);
    double margin = rollout_min_gap(h, vf, v0, kReferenceSpec) - kReferenceSpec.h_min;
    if (std::abs(violation) <= 1e-9 || std::abs(margin) <= 1e-9) {
      ++skipped;
      continue;
    }
    ++samples;
    disagreements += (violation <= 0.0) != (margin >= 0.0);
  }
  report(3, samples >= 10000 && disagreements == 0, "halfspaces vs rollout oracle",
         fmt("%.0f samples, %.0f disagreements, %.0f within 1e-9 of the boundary", samples,
             disagreements, skipped));
}

struct KKTTally {
  int solves = 0;
  int failed = 0;
  double worst = 0.0;
};

struct ClosedLoop {
  int trust_horizon = 0;
  sim::SimLog log;
  sim::ThroughputResult throughput;
  double seconds = 0.0;
  KKTTally kkt;
};

ClosedLoop closed_loop(int F) {
  dynamics::VehicleParams params;
  auto cfg = mpc::default_config(params);
  cfg.trust_horizon = F;
  sim::ScenarioConfig scenario;
  ClosedLoop out;
  out.trust_horizon = F;
  sim::RunOptions options;
  options.on_solve = [&out](int, int, const mpc::SolveRecord& rec) {
    ++out.kkt.solves;
    auto r = oracle::check_kkt(rec.problem, rec.solution.z, rec.solution.ineq_duals,
                               rec.solution.eq_duals);
    bool ok = rec.solution.status == qp::Status::optimal && r.worst() <= 1e-6;
    out.kkt.failed += ok ? 0 : 1;
    out.kkt.worst = std::max(out.kkt.worst, r.worst());
  };
  auto start = Clock::now();
  safeset::SafeSetCache cache(cfg.braking_spec());
  out.log = sim::run(scenario, cfg, params, cache, options);
  out.seconds = seconds_since(start);
  out.throughput = sim::measure_throughput(out.log, scenario.ell, scenario.vehicles);
  return out;
}

void criterion_4(const ClosedLoop& run) {
  double max_slack = 0.0, min_h = std::numeric_limits<double>::infinity();
  int slack_steps = 0;
  for (int k = 0; k < run.log.steps(); ++k)
    for (int i = 1; i < run.log.vehicles; ++i) {
      max_slack = std::max(max_slack, run.log.at(k, i).slack);
      slack_steps += run.log.at(k, i).slack > 0.0;
      min_h = std::min(min_h, run.log.at(k, i).h);
    }
  report(4, max_slack == 0.0 && min_h >= 6.5 - 1e-6, "F = 0 persistent feasibility",
         fmt("max slack %.4g m on %.0f vehicle-steps, min h %.6f m, fallbacks %.0f", max_slack,
             slack_steps, min_h, run.log.fallbacks));
}

void criterion_5(const ClosedLoop& run) {
  int last = run.log.steps() - 1;
  double worst = 0.0;
  std::string gaps;
  for (int i = 1; i < run.log.vehicles; ++i) {
    double h = run.log.at(last, i).h;
    worst = std::max(worst, std::abs(h - 9.0));
    gaps += fmt(i == 1 ? "%.3f" : ", %.3f", h);
  }
  report(5, worst <= 0.5, "F = N_p gaps converge to h_des",
         "gaps at t = " + fmt("%.1f", run.log.t[last]) + " s: " + gaps);
}

void criterion_6(const std::vector<ClosedLoop>& runs) {
  bool monotone = true, fast = true;
  std::string values;
  for (std::size_t j = 0; j < runs.size(); ++j) {
    if (j > 0 && runs[j].throughput.vph < runs[j - 1].throughput.vph) monotone = false;
    fast = fast && runs[j].seconds < 60.0;
    values += fmt(j == 0 ? "F=%.0f: %.1f" : ", F=%.0f: %.1f", runs[j].trust_horizon,
                  runs[j].throughput.vph);
  }
  double ratio = runs.back().throughput.vph / runs.front().throughput.vph;
  double slowest = 0.0;
  for (const auto& r : runs) slowest = std::max(slowest, r.seconds);
  report(6, monotone && ratio >= 1.5 && fast, "throughput grows with the trust horizon",
         values + fmt("; ratio %.3f, slowest run %.2f s", ratio, slowest));
}

void criterion_7(const std::vector<ClosedLoop>& runs) {
  KKTTally total;
  for (const auto& r : runs) {
    total.solves += r.kkt.solves;
    total.failed += r.kkt.failed;
    total.worst = std::max(total.worst, r.kkt.worst);
  }

  std::mt19937_64 rng(7);
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const double step = 1e-4;
  int mismatches = 0;
  double largest_gap = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    Eigen::Matrix2d M;
    M << N(rng), N(rng), N(rng), N(rng);
    Eigen::Matrix2d H = M * M.transpose() + 0.2 * Eigen::Matrix2d::Identity();
    H = 0.5 * (H + H.transpose()).eval();
    Eigen::Vector2d f{3.0 * N(rng), 3.0 * N(rng)};
    Eigen::Vector2d lo{-1.0 + 0.1 * std::floor(5 * U(rng)), -1.0 + 0.1 * std::floor(5 * U(rng))};
    Eigen::Vector2d hi = lo + Eigen::Vector2d::Constant(1.0 + 0.1 * std::floor(10 * U(rng)));
    auto p = qp::QProblem::with_variables(2);
    p.H = H;
    p.f = f;
    p.G = Eigen::MatrixXd{{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    p.g = Eigen::VectorXd{{hi(0), -lo(0), hi(1), -lo(1)}};
    auto s = qp::solve(p);
    if (s.status != qp::Status::optimal) {
      ++mismatches;
      continue;
    }
    double solved = oracle::objective(p, s.z);
    double grid = oracle::grid_minimum(H, f, lo, hi, nullptr, 0.0, step);
    double resolution = 4.0 * step * ((H * s.z + f).cwiseAbs().sum() + H.cwiseAbs().sum()) + 1e-12;
    largest_gap = std::max(largest_gap, grid - solved);
    if (solved > grid + 1e-9 || grid - solved > resolution) ++mismatches;
  }
  report(7, total.failed == 0 && mismatches == 0, "QP certification",
         fmt("%.0f closed-loop solves, %.0f failing, worst KKT residual %.2e; "
             "grid suite: %.0f of 500 mismatched",
             total.solves, total.failed, total.worst, mismatches) +
             fmt(", largest grid gap %.2e", largest_gap));
}

void criterion_8() {
  dynamics::VehicleParams params;
  std::mt19937_64 rng(88);
  std::uniform_real_distribution<double> V(0.0, 30.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    double v0 = V(rng);
    auto ref = oracle::zoh_by_integration(oracle::follower_continuous(params, v0), 0.1, 2000);
    auto d = dynamics::follower_model(params, v0, 0.1);
    worst = std::max({worst, oracle::max_abs_diff(d.A, ref.A), oracle::max_abs_diff(d.B, ref.B),
                      oracle::max_abs_diff(d.E, ref.E), oracle::max_abs_diff(d.offset, ref.offset)});
    auto lead_ref = oracle::zoh_by_integration(oracle::leader_continuous(params, v0), 0.1, 2000);
    auto lead = dynamics::leader_model(params, v0, 0.1);
    worst = std::max({worst, oracle::max_abs_diff(lead.A, lead_ref.A),
                      oracle::max_abs_diff(lead.B, lead_ref.B),
                      oracle::max_abs_diff(lead.offset, lead_ref.offset)});
  }
  report(8, worst <= 1e-8, "discretization vs fine integration",
         fmt("100 random v0, largest elementwise difference %.2e", worst));
}

void criterion_9(const ClosedLoop& run) {
  int deliveries = 0, wrong = 0, logged = 0;
  for (const auto& d : run.log.deliveries) {
    ++deliveries;
    wrong += v2v::compute_delay(d.t_received, d.t_sent, run.log.dt) != 1;
    wrong += d.delay != 1;
  }
  // nothing has arrived at t = 0; from then on every message is one step old
  for (int k = 0; k < run.log.steps(); ++k)
    for (int i = 1; i < run.log.vehicles; ++i)
      for (int d : {run.log.at(k, i).predecessor_delay, run.log.at(k, i).leader_delay}) {
        ++logged;
        wrong += d != (k == 0 ? -1 : 1);
      }

  // A leader cruising at constant speed, heard through the delayed bus.
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> V(0.0, 30.0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    double speed = V(rng), p0 = 100.0 * V(rng) / 30.0;
    auto topo = v2v::Topology::make(v2v::TopologyKind::predecessor_following_leader, 4);
    v2v::MessageBus bus(topo, 0.1, 0.1);
    for (int k = 0; k < 60; ++k) {
      double t = k * 0.1;
      bus.tick(t);
      double leader_p = p0 + speed * t;
      for (int receiver = 1; receiver < 4; ++receiver) {
        auto got = bus.latest(receiver, 0);
        if (!got) continue;
        double own = leader_p - 9.0 * receiver;
        int d = v2v::compute_delay(t, got->message.t_sent, 0.1);
        double s_hat = v2v::estimate_leader_position(got->message, d, own, 0.1);
        worst = std::max(worst, std::abs(s_hat - (leader_p - own)));
      }
      v2v::V2VMessage msg;
      msg.sender = 0;
      msg.t_sent = t;
      msg.position = leader_p;
      msg.plan.assign(21, speed);
      bus.send(msg);
    }
  }
  report(9, wrong == 0 && deliveries > 0 && worst <= 1e-9, "one-step delay and exact position estimate",
         fmt("%.0f deliveries and %.0f logged delays, %.0f not equal to 1; "
             "constant-speed estimate error %.2e m",
             deliveries, logged, wrong, worst));
}

std::string sweep_csv(std::vector<sim::SweepPoint>* keep = nullptr) {
  dynamics::VehicleParams params;
  auto cfg = mpc::default_config(params);
  sim::ScenarioConfig scenario;
  safeset::SafeSetCache cache(cfg.braking_spec());
  auto sweep = sim::sweep_trust(scenario, cfg, params, cache, scenario.trust_horizons);
  std::ostringstream out;
  sim::write_sweep_csv(sweep, out);
  for (const auto& p : sweep) sim::write_log_csv(p.log, out);
  if (keep) *keep = std::move(sweep);
  return out.str();
}

void criterion_10(const std::vector<ClosedLoop>& runs) {
  std::vector<sim::SweepPoint> first;
  std::string a = sweep_csv(&first);
  std::string b = sweep_csv();
  bool same_as_serial = first.size() == runs.size();
  for (std::size_t j = 0; same_as_serial && j < runs.size(); ++j)
    same_as_serial = first[j].throughput.vph == runs[j].throughput.vph;
  report(10, a == b && same_as_serial, "repeated sweeps are byte-identical",
         fmt("%.0f bytes per sweep (sweep + trajectory CSVs), ", static_cast<double>(a.size())) +
             (a == b ? "identical" : "different") +
             (same_as_serial ? ", matches the serial runs" : ", differs from the serial runs"));
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();

  std::vector<ClosedLoop> runs;
  for (int F : {0, 5, 10, 15, 20}) runs.push_back(closed_loop(F));
  criterion_4(runs.front());
  criterion_5(runs.back());
  criterion_6(runs);
  criterion_7(runs);
  criterion_8();
  criterion_9(runs.front());
  criterion_10(runs);

  std::printf("%d of 10 criteria failed\n", failures);
  return failures;
}
