#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "platoon/dynamics.hpp"

namespace platoon::safeset {

/// Worst-case braking assumptions behind the safe sets.
struct BrakingSpec {
  double a_min = -3.218;  // m/s^2, negative
  double h_min = 6.5;     // m
  double dt = 0.1;        // s
  double v_max = 30.0;    // m/s

  void validate() const;
  /// Speed lost in one step of maximum braking, |a_min| * dt.
  double decel_step() const { return -a_min * dt; }
  /// FNV-1a over the four fields; embedded in cache files.
  std::uint64_t hash() const;
};

struct KinematicState {
  double p = 0.0;
  double v = 0.0;
  double a = 0.0;
};

/// p += v dt + a dt^2 / 2, v += a dt. A decelerating vehicle that would
/// reverse instead lands exactly on v = 0 (its acceleration is reduced to
/// -v/dt for that step).
KinematicState kinematic_step(const KinematicState& state, double dt);

/// (u_min / R_w - F_f(v_max)) / M: the smallest acceleration any vehicle of
/// the platoon can experience.
double max_deceleration(const dynamics::VehicleParams& params, double u_min,
                        double v_max);

struct StoppingProfile {
  int k_s = 0;
  double v0_tilde = 0.0;
};

/// k_s = floor(v0 / (|a_min| dt)), v0_tilde = k_s |a_min| dt <= v0.
StoppingProfile stopping_steps(double v0, const BrakingSpec& spec);

/// Minimum over k >= 0 of h(k) - h(0) when the predecessor brakes at a_min
/// from v0_tilde(v0) and the follower brakes at a_min from vf (both clamped at
/// zero). Never positive.
double min_headway_change(double vf, double v0, const BrakingSpec& spec);

/// Exact membership oracle: true iff the extremal braking rollout keeps
/// h(k) >= h_min for every k.
bool rollout_membership(double h0, double vf, double v0, const BrakingSpec& spec);

/// normal_h * h + normal_v * v <= offset
struct Halfspace {
  double normal_h = 0.0;
  double normal_v = 0.0;
  double offset = 0.0;
};

struct BoundaryPoint {
  double v = 0.0;
  double h = 0.0;
};

/// Polytope { (h, v) : h >= h_b(v), 0 <= v <= v_max } for one predecessor
/// speed. h_b is convex and piecewise linear with breakpoints at multiples of
/// |a_min| dt.
class SafeSet {
 public:
  SafeSet() = default;
  SafeSet(double v0, StoppingProfile stop, std::vector<BoundaryPoint> breakpoints,
          const BrakingSpec& spec);

  double v0() const { return v0_; }
  double v0_tilde() const { return stop_.v0_tilde; }
  int k_s() const { return stop_.k_s; }

  /// Boundary vertices ordered by v, from (0, h_min) to (v_max, h_b(v_max)).
  const std::vector<BoundaryPoint>& boundary() const { return boundary_; }
  /// (v_j, h_b(v_j)) for v_j = j |a_min| dt from v0_tilde to the first grid
  /// point at or above v_max.
  const std::vector<BoundaryPoint>& breakpoints() const { return breakpoints_; }
  /// Non-redundant facets, including h >= h_min and 0 <= v <= v_max.
  const std::vector<Halfspace>& halfspaces() const { return halfspaces_; }

  /// h_b(v) for v in [0, v_max]; extrapolates the last facet beyond.
  double boundary_headway(double v) const;
  bool contains(double h, double v, double tol = 0.0) const;

 private:
  double v0_ = 0.0;
  StoppingProfile stop_;
  std::vector<BoundaryPoint> breakpoints_;  // (v_j, h_b(v_j)) from v0_tilde up
  std::vector<BoundaryPoint> boundary_;
  std::vector<Halfspace> halfspaces_;
  double h_min_ = 0.0;
  double v_max_ = 0.0;
};

/// Evaluates h_b at every breakpoint v_j = j |a_min| dt with the rollout
/// oracle and joins them with facets.
SafeSet build_safe_set(double v0, const BrakingSpec& spec);

/// Predecessor velocity preview over [t, t+N_p]: the first F entries come from
/// `estimates` (the delayed-message estimate, or the radar speed at index 0),
/// entry F is v0_tilde(estimates[F]) and later entries decrease by
/// |a_min| dt down to zero.
std::vector<double> braking_velocity_profile(std::span<const double> estimates,
                                             int trust_horizon,
                                             const BrakingSpec& spec);

/// Offline family of safe sets, one per attainable v0_tilde = j |a_min| dt in
/// [0, v_max], so that lookup by v0_tilde is exact.
class SafeSetCache {
 public:
  static constexpr int kFormatVersion = 1;

  explicit SafeSetCache(const BrakingSpec& spec);

  const BrakingSpec& spec() const { return spec_; }
  std::size_t size() const { return sets_.size(); }
  const SafeSet& at(std::size_t index) const { return sets_.at(index); }

  /// Set keyed by v0_tilde(v0); v0 above the grid maps to the top set.
  const SafeSet& lookup(double v0) const;

  void save(const std::filesystem::path& path) const;
  /// nullopt when the file is missing, has another format version or was
  /// generated for a different BrakingSpec.
  static std::optional<SafeSetCache> load(const std::filesystem::path& path,
                                          const BrakingSpec& spec);
  static SafeSetCache load_or_build(const std::filesystem::path& path,
                                    const BrakingSpec& spec);

 private:
  SafeSetCache(const BrakingSpec& spec, std::vector<SafeSet> sets);

  BrakingSpec spec_;
  std::vector<SafeSet> sets_;
};

}  // namespace platoon::safeset
