#pragma once

#include <deque>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace platoon::v2v {

/// Vehicle 0 is the leader, 1..N-1 the followers.
using VehicleId = int;

/// Broadcast every step: the sender's planned velocities v(t|t)..v(t+N_p|t).
/// Only the leader attaches its current position.
struct V2VMessage {
  VehicleId sender = 0;
  double t_sent = 0.0;
  std::optional<double> position;
  std::vector<double> plan;
};

/// Throws std::invalid_argument if the plan length is not horizon + 1, an
/// entry is outside [v_min, v_max], or the position is present for a follower
/// (absent for the leader).
void validate_message(const V2VMessage& msg, int horizon, double v_min,
                      double v_max);

enum class TopologyKind { predecessor_following, predecessor_following_leader };

std::string to_string(TopologyKind kind);
/// Throws std::invalid_argument for unknown names.
TopologyKind topology_from_string(const std::string& name);

struct Arc {
  VehicleId sender = 0;
  VehicleId receiver = 0;
};

class Topology {
 public:
  static Topology make(TopologyKind kind, int vehicles);
  /// Throws std::invalid_argument unless every arc points strictly rearward
  /// (sender < receiver), which also makes the graph acyclic.
  explicit Topology(std::vector<Arc> arcs);

  const std::vector<Arc>& arcs() const { return arcs_; }
  std::vector<VehicleId> senders_to(VehicleId receiver) const;
  bool has_arc(VehicleId sender, VehicleId receiver) const;

 private:
  std::vector<Arc> arcs_;
};

/// d = ceil((t_received - t_sent) / dt); never under-counts the delay.
/// Throws std::domain_error when t_received < t_sent.
int compute_delay(double t_received, double t_sent, double dt);

/// Velocity estimate at step t + offset from a message planned at step t - d:
/// the plan sample when it exists, the terminal sample held constant after.
double estimate_velocity(const V2VMessage& msg, int delay, int offset);

/// estimate_velocity for offsets 0..horizon.
std::vector<double> estimate_velocities(const V2VMessage& msg, int delay,
                                        int horizon);

/// Distance to the leader: the leader position propagated over the delay with
/// its planned velocities, minus the receiver's own position.
/// Throws std::invalid_argument if the message carries no position.
double estimate_leader_position(const V2VMessage& msg, int delay, double own_p,
                                double dt);

/// One directed arc with constant latency; FIFO in send order.
class DelayedChannel {
 public:
  DelayedChannel(Arc arc, double latency);

  const Arc& arc() const { return arc_; }
  double latency() const { return latency_; }
  std::size_t in_flight() const { return queue_.size(); }

  void push(const V2VMessage& msg);
  /// Pops every message whose delivery time t_sent + latency is <= t.
  std::vector<V2VMessage> pop_due(double t);

 private:
  Arc arc_;
  double latency_;
  std::deque<V2VMessage> queue_;
};

struct Delivery {
  double t_sent = 0.0;
  double t_received = 0.0;
  VehicleId sender = 0;
  VehicleId receiver = 0;
  int delay = 0;
  std::optional<double> position;
  std::vector<double> plan;
};

struct Received {
  V2VMessage message;
  double t_received = 0.0;
};

/// CSV: t_sent,t_received,sender,receiver,d,p0,v0..vN (p0 empty for followers).
void write_deliveries_csv(const std::vector<Delivery>& log, std::ostream& out);

/// Owns every channel of a topology. Advanced by the simulation loop only.
class MessageBus {
 public:
  MessageBus(const Topology& topology, double latency, double dt);

  void send(const V2VMessage& msg);
  /// Delivers all messages due at time t (t must not decrease between calls)
  /// and keeps, per receiver, only the most recent message of each sender.
  std::vector<Delivery> tick(double t);

  /// Latest message from `sender` held by `receiver`.
  std::optional<Received> latest(VehicleId receiver, VehicleId sender) const;

  const std::vector<Delivery>& log() const { return log_; }
  void write_log_csv(std::ostream& out) const { write_deliveries_csv(log_, out); }

 private:
  std::vector<DelayedChannel> channels_;
  std::map<std::pair<VehicleId, VehicleId>, Received> inbox_;
  std::vector<Delivery> log_;
  double dt_;
  double last_tick_;
};

}  // namespace platoon::v2v
