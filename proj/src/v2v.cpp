#include "platoon/v2v.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace platoon::v2v {

namespace {

// Timestamps are multiples of dt computed in floating point; differences
// within this fraction of a step are rounding noise, not delay.
constexpr double kStepSnap = 1e-9;

}  // namespace

void validate_message(const V2VMessage& msg, int horizon, double v_min,
                      double v_max) {
  if (msg.plan.size() != static_cast<std::size_t>(horizon) + 1) {
    throw std::invalid_argument("V2VMessage: plan must hold horizon + 1 samples");
  }
  for (double v : msg.plan) {
    if (!(v >= v_min && v <= v_max)) {
      throw std::invalid_argument("V2VMessage: plan sample outside [v_min, v_max]");
    }
  }
  if ((msg.sender == 0) != msg.position.has_value()) {
    throw std::invalid_argument(
        "V2VMessage: position must be present exactly for the leader");
  }
}

std::string to_string(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::predecessor_following:
      return "predecessor_following";
    case TopologyKind::predecessor_following_leader:
      return "predecessor_following_leader";
  }
  return "unknown";
}

TopologyKind topology_from_string(const std::string& name) {
  if (name == "predecessor_following") {
    return TopologyKind::predecessor_following;
  }
  if (name == "predecessor_following_leader") {
    return TopologyKind::predecessor_following_leader;
  }
  throw std::invalid_argument("unknown topology '" + name + "'");
}

Topology Topology::make(TopologyKind kind, int vehicles) {
  if (vehicles < 2) {
    throw std::invalid_argument("Topology: a platoon needs at least 2 vehicles");
  }
  std::vector<Arc> arcs;
  for (VehicleId i = 1; i < vehicles; ++i) {
    if (kind == TopologyKind::predecessor_following_leader && i >= 2) {
      arcs.push_back({0, i});
    }
    arcs.push_back({i - 1, i});
  }
  return Topology(std::move(arcs));
}

Topology::Topology(std::vector<Arc> arcs) : arcs_(std::move(arcs)) {
  for (const Arc& a : arcs_) {
    if (a.sender < 0 || a.sender >= a.receiver) {
      throw std::invalid_argument(
          "Topology: information must flow rearward (sender < receiver)");
    }
  }
}

std::vector<VehicleId> Topology::senders_to(VehicleId receiver) const {
  std::vector<VehicleId> out;
  for (const Arc& a : arcs_) {
    if (a.receiver == receiver) {
      out.push_back(a.sender);
    }
  }
  return out;
}

bool Topology::has_arc(VehicleId sender, VehicleId receiver) const {
  return std::any_of(arcs_.begin(), arcs_.end(), [&](const Arc& a) {
    return a.sender == sender && a.receiver == receiver;
  });
}

int compute_delay(double t_received, double t_sent, double dt) {
  const double steps = (t_received - t_sent) / dt;
  if (steps < -kStepSnap) {
    throw std::domain_error("compute_delay: message received before it was sent");
  }
  return std::max(0, static_cast<int>(std::ceil(steps - kStepSnap)));
}

double estimate_velocity(const V2VMessage& msg, int delay, int offset) {
  if (msg.plan.empty()) {
    throw std::invalid_argument("estimate_velocity: empty plan");
  }
  const auto index = static_cast<std::size_t>(std::max(0, offset + delay));
  return index < msg.plan.size() ? msg.plan[index] : msg.plan.back();
}

std::vector<double> estimate_velocities(const V2VMessage& msg, int delay,
                                        int horizon) {
  std::vector<double> out(static_cast<std::size_t>(horizon) + 1);
  for (int j = 0; j <= horizon; ++j) {
    out[static_cast<std::size_t>(j)] = estimate_velocity(msg, delay, j);
  }
  return out;
}

double estimate_leader_position(const V2VMessage& msg, int delay, double own_p,
                                double dt) {
  if (!msg.position) {
    throw std::invalid_argument("estimate_leader_position: message has no position");
  }
  double p = *msg.position;
  for (int k = 0; k < delay; ++k) {
    p += dt * estimate_velocity(msg, 0, k);
  }
  return p - own_p;
}

DelayedChannel::DelayedChannel(Arc arc, double latency)
    : arc_(arc), latency_(latency) {
  if (!(latency >= 0.0)) {
    throw std::invalid_argument("DelayedChannel: latency must be non-negative");
  }
}

void DelayedChannel::push(const V2VMessage& msg) {
  if (!queue_.empty() && msg.t_sent < queue_.back().t_sent) {
    throw std::invalid_argument("DelayedChannel: messages must be sent in time order");
  }
  queue_.push_back(msg);
}

std::vector<V2VMessage> DelayedChannel::pop_due(double t) {
  std::vector<V2VMessage> due;
  while (!queue_.empty()) {
    const double delivery = queue_.front().t_sent + latency_;
    if (delivery > t + kStepSnap * std::max(1.0, std::abs(t))) {
      break;
    }
    due.push_back(std::move(queue_.front()));
    queue_.pop_front();
  }
  return due;
}

MessageBus::MessageBus(const Topology& topology, double latency, double dt)
    : dt_(dt), last_tick_(-std::numeric_limits<double>::infinity()) {
  for (const Arc& a : topology.arcs()) {
    channels_.emplace_back(a, latency);
  }
}

void MessageBus::send(const V2VMessage& msg) {
  for (DelayedChannel& ch : channels_) {
    if (ch.arc().sender == msg.sender) {
      ch.push(msg);
    }
  }
}

std::vector<Delivery> MessageBus::tick(double t) {
  if (t < last_tick_) {
    throw std::invalid_argument("MessageBus::tick: time must not decrease");
  }
  last_tick_ = t;
  std::vector<Delivery> delivered;
  for (DelayedChannel& ch : channels_) {
    for (V2VMessage& msg : ch.pop_due(t)) {
      Delivery d;
      d.t_sent = msg.t_sent;
      d.t_received = t;
      d.sender = ch.arc().sender;
      d.receiver = ch.arc().receiver;
      d.delay = compute_delay(t, msg.t_sent, dt_);
      d.position = msg.position;
      d.plan = msg.plan;
      const auto key = std::make_pair(d.receiver, d.sender);
      auto it = inbox_.find(key);
      if (it == inbox_.end() || it->second.message.t_sent <= msg.t_sent) {
        inbox_[key] = Received{std::move(msg), t};
      }
      log_.push_back(d);
      delivered.push_back(std::move(d));
    }
  }
  return delivered;
}

std::optional<Received> MessageBus::latest(VehicleId receiver,
                                           VehicleId sender) const {
  auto it = inbox_.find({receiver, sender});
  if (it == inbox_.end()) {
    return std::nullopt;
  }
  return it->second;
}

void write_deliveries_csv(const std::vector<Delivery>& log, std::ostream& out) {
  std::size_t width = 0;
  for (const Delivery& d : log) {
    width = std::max(width, d.plan.size());
  }
  out << "t_sent,t_received,sender,receiver,d,p0";
  for (std::size_t k = 0; k < width; ++k) {
    out << ",v" << k;
  }
  out << '\n';
  out << std::setprecision(10);
  for (const Delivery& d : log) {
    out << d.t_sent << ',' << d.t_received << ',' << d.sender << ','
        << d.receiver << ',' << d.delay << ',';
    if (d.position) {
      out << *d.position;
    }
    for (double v : d.plan) {
      out << ',' << v;
    }
    out << '\n';
  }
}

}  // namespace platoon::v2v
