#include "platoon/safeset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>

namespace platoon::safeset {

namespace {

// Quotients that land within this relative distance of an integer are
// treated as that integer, so exact multiples of |a_min| dt survive rounding.
constexpr double kGridSnap = 1e-9;
constexpr int kMaxRolloutSteps = 1000000;

double stop_threshold(double v) { return 1e-12 * std::max(1.0, std::abs(v)); }

}  // namespace

void BrakingSpec::validate() const {
  if (!(a_min < 0.0) || !std::isfinite(a_min)) {
    throw std::invalid_argument("BrakingSpec.a_min must be negative");
  }
  if (!(h_min > 0.0) || !std::isfinite(h_min)) {
    throw std::invalid_argument("BrakingSpec.h_min must be positive");
  }
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw std::invalid_argument("BrakingSpec.dt must be positive");
  }
  if (!(v_max > 0.0) || !std::isfinite(v_max)) {
    throw std::invalid_argument("BrakingSpec.v_max must be positive");
  }
}

std::uint64_t BrakingSpec::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (double field : {a_min, h_min, dt, v_max}) {
    const auto bits = std::bit_cast<std::uint64_t>(field);
    for (int byte = 0; byte < 8; ++byte) {
      h ^= (bits >> (8 * byte)) & 0xffU;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

KinematicState kinematic_step(const KinematicState& s, double dt) {
  KinematicState next = s;
  double a = s.a;
  double v_next = s.v + a * dt;
  if (a < 0.0 && v_next < stop_threshold(s.v)) {
    a = -s.v / dt;
    v_next = 0.0;
  }
  next.p = s.p + s.v * dt + 0.5 * a * dt * dt;
  next.v = v_next;
  next.a = a;
  return next;
}

double max_deceleration(const dynamics::VehicleParams& params, double u_min,
                        double v_max) {
  return (u_min / params.wheel_radius -
          dynamics::friction_force(params, v_max)) /
         params.mass;
}

StoppingProfile stopping_steps(double v0, const BrakingSpec& spec) {
  if (!(v0 >= 0.0)) {
    throw std::invalid_argument("stopping_steps: v0 must be non-negative");
  }
  const double step = spec.decel_step();
  const int k_s = static_cast<int>(std::floor(v0 / step + kGridSnap));
  return {k_s, step * k_s};
}

double min_headway_change(double vf, double v0, const BrakingSpec& spec) {
  const StoppingProfile stop = stopping_steps(v0, spec);
  KinematicState pred{0.0, stop.v0_tilde, spec.a_min};
  KinematicState foll{0.0, vf, spec.a_min};
  double lowest = 0.0;
  for (int k = 0; k < kMaxRolloutSteps && (pred.v > 0.0 || foll.v > 0.0); ++k) {
    pred = kinematic_step(pred, spec.dt);
    foll = kinematic_step(foll, spec.dt);
    pred.a = spec.a_min;
    foll.a = spec.a_min;
    lowest = std::min(lowest, pred.p - foll.p);
  }
  return lowest;
}

bool rollout_membership(double h0, double vf, double v0, const BrakingSpec& spec) {
  return h0 + min_headway_change(vf, v0, spec) >= spec.h_min;
}

SafeSet::SafeSet(double v0, StoppingProfile stop,
                 std::vector<BoundaryPoint> breakpoints, const BrakingSpec& spec)
    : v0_(v0),
      stop_(stop),
      breakpoints_(std::move(breakpoints)),
      h_min_(spec.h_min),
      v_max_(spec.v_max) {
  halfspaces_.push_back({-1.0, 0.0, -h_min_});
  halfspaces_.push_back({0.0, -1.0, 0.0});
  halfspaces_.push_back({0.0, 1.0, v_max_});

  boundary_.push_back({0.0, h_min_});
  if (stop_.v0_tilde > 0.0) {
    boundary_.push_back({std::min(stop_.v0_tilde, v_max_), h_min_});
  }
  for (std::size_t j = 0; j + 1 < breakpoints_.size(); ++j) {
    const BoundaryPoint& a = breakpoints_[j];
    const BoundaryPoint& b = breakpoints_[j + 1];
    if (a.v >= v_max_) {
      break;
    }
    const double slope = (b.h - a.h) / (b.v - a.v);
    if (slope > 1e-12) {
      halfspaces_.push_back({-1.0, slope, slope * a.v - a.h});
    }
    if (b.v < v_max_) {
      boundary_.push_back(b);
    } else {
      boundary_.push_back({v_max_, a.h + slope * (v_max_ - a.v)});
    }
  }
  if (boundary_.back().v < v_max_) {
    boundary_.push_back({v_max_, boundary_headway(v_max_)});
  }
}

double SafeSet::boundary_headway(double v) const {
  if (breakpoints_.size() < 2 || v <= breakpoints_.front().v) {
    return h_min_;
  }
  auto it = std::upper_bound(
      breakpoints_.begin(), breakpoints_.end(), v,
      [](double value, const BoundaryPoint& p) { return value < p.v; });
  if (it == breakpoints_.end()) {
    it = std::prev(breakpoints_.end());
  }
  const BoundaryPoint& b = *it;
  const BoundaryPoint& a = *std::prev(it);
  return a.h + (b.h - a.h) / (b.v - a.v) * (v - a.v);
}

bool SafeSet::contains(double h, double v, double tol) const {
  return std::all_of(halfspaces_.begin(), halfspaces_.end(),
                     [&](const Halfspace& hs) {
                       return hs.normal_h * h + hs.normal_v * v <= hs.offset + tol;
                     });
}

SafeSet build_safe_set(double v0, const BrakingSpec& spec) {
  spec.validate();
  const StoppingProfile stop = stopping_steps(v0, spec);
  const double step = spec.decel_step();
  const int last = static_cast<int>(std::ceil(spec.v_max / step - kGridSnap));
  std::vector<BoundaryPoint> breakpoints;
  for (int j = stop.k_s; j <= std::max(last, stop.k_s); ++j) {
    const double v = j * step;
    breakpoints.push_back({v, spec.h_min - min_headway_change(v, v0, spec)});
  }
  return SafeSet(v0, stop, std::move(breakpoints), spec);
}

std::vector<double> braking_velocity_profile(std::span<const double> estimates,
                                             int trust_horizon,
                                             const BrakingSpec& spec) {
  if (trust_horizon < 0 ||
      static_cast<std::size_t>(trust_horizon) >= estimates.size()) {
    throw std::invalid_argument(
        "braking_velocity_profile: trust horizon outside [0, N_p]");
  }
  std::vector<double> profile(estimates.begin(), estimates.end());
  const auto f = static_cast<std::size_t>(trust_horizon);
  profile[f] = stopping_steps(std::max(0.0, estimates[f]), spec).v0_tilde;
  for (std::size_t k = f + 1; k < profile.size(); ++k) {
    const double next = profile[k - 1] - spec.decel_step();
    profile[k] = next < stop_threshold(profile[k - 1]) ? 0.0 : next;
  }
  return profile;
}

SafeSetCache::SafeSetCache(const BrakingSpec& spec) : spec_(spec) {
  spec_.validate();
  const int top = stopping_steps(spec_.v_max, spec_).k_s;
  sets_.reserve(static_cast<std::size_t>(top) + 1);
  for (int j = 0; j <= top; ++j) {
    sets_.push_back(build_safe_set(j * spec_.decel_step(), spec_));
  }
}

SafeSetCache::SafeSetCache(const BrakingSpec& spec, std::vector<SafeSet> sets)
    : spec_(spec), sets_(std::move(sets)) {}

const SafeSet& SafeSetCache::lookup(double v0) const {
  const int k = stopping_steps(std::max(0.0, v0), spec_).k_s;
  const auto index = std::min(static_cast<std::size_t>(k), sets_.size() - 1);
  return sets_[index];
}

void SafeSetCache::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write safe-set cache " + path.string());
  }
  out << std::setprecision(17);
  out << "platoon-safeset-cache " << kFormatVersion << '\n';
  out << "spec_hash " << std::hex << spec_.hash() << std::dec << '\n';
  out << "spec " << spec_.a_min << ' ' << spec_.h_min << ' ' << spec_.dt << ' '
      << spec_.v_max << '\n';
  out << "sets " << sets_.size() << '\n';
  for (const SafeSet& set : sets_) {
    const auto& b = set.breakpoints();
    out << set.v0() << ' ' << set.k_s() << ' ' << b.size();
    for (const BoundaryPoint& p : b) {
      out << ' ' << p.v << ' ' << p.h;
    }
    out << '\n';
  }
}

std::optional<SafeSetCache> SafeSetCache::load(const std::filesystem::path& path,
                                               const BrakingSpec& spec) {
  std::ifstream in(path);
  if (!in) {
    return std::nullopt;
  }
  std::string tag;
  int version = 0;
  if (!(in >> tag >> version) || tag != "platoon-safeset-cache" ||
      version != kFormatVersion) {
    return std::nullopt;
  }
  std::uint64_t hash = 0;
  if (!(in >> tag >> std::hex >> hash >> std::dec) || tag != "spec_hash" ||
      hash != spec.hash()) {
    return std::nullopt;
  }
  BrakingSpec stored;
  if (!(in >> tag >> stored.a_min >> stored.h_min >> stored.dt >> stored.v_max) ||
      tag != "spec") {
    return std::nullopt;
  }
  std::size_t count = 0;
  if (!(in >> tag >> count) || tag != "sets") {
    return std::nullopt;
  }
  std::vector<SafeSet> sets;
  sets.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    double v0 = 0.0;
    int k_s = 0;
    std::size_t points = 0;
    if (!(in >> v0 >> k_s >> points)) {
      return std::nullopt;
    }
    std::vector<BoundaryPoint> breakpoints(points);
    for (auto& p : breakpoints) {
      if (!(in >> p.v >> p.h)) {
        return std::nullopt;
      }
    }
    sets.emplace_back(v0, StoppingProfile{k_s, k_s * spec.decel_step()},
                      std::move(breakpoints), spec);
  }
  return SafeSetCache(spec, std::move(sets));
}

SafeSetCache SafeSetCache::load_or_build(const std::filesystem::path& path,
                                         const BrakingSpec& spec) {
  if (auto cached = load(path, spec)) {
    return std::move(*cached);
  }
  SafeSetCache built(spec);
  built.save(path);
  return built;
}

}  // namespace platoon::safeset
