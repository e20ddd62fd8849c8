#include "uavxai/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace uavxai {

double MapBounds::diagonal() const { return std::hypot(width(), length()); }

double IntruderState::speed() const { return std::hypot(vx, vy); }

std::string_view to_string(ServiceMove move) {
  switch (move) {
    case ServiceMove::left: return "left";
    case ServiceMove::right: return "right";
    case ServiceMove::forward: return "forward";
    case ServiceMove::backward: return "backward";
    case ServiceMove::ascend: return "ascend";
    case ServiceMove::descend: return "descend";
    case ServiceMove::hover: return "hover";
  }
  return "?";
}

ServiceMove opposite(ServiceMove move) {
  switch (move) {
    case ServiceMove::left: return ServiceMove::right;
    case ServiceMove::right: return ServiceMove::left;
    case ServiceMove::forward: return ServiceMove::backward;
    case ServiceMove::backward: return ServiceMove::forward;
    case ServiceMove::ascend: return ServiceMove::descend;
    case ServiceMove::descend: return ServiceMove::ascend;
    case ServiceMove::hover: return ServiceMove::hover;
  }
  return ServiceMove::hover;
}

double distance_to_user(const UavPose& pose, const UserState& user) {
  const double dx = pose.x - user.x;
  const double dy = pose.y - user.y;
  return std::sqrt(pose.h * pose.h + dx * dx + dy * dy);
}

double elevation_deg(const UavPose& pose, const UserState& user) {
  const double ground = std::hypot(pose.x - user.x, pose.y - user.y);
  return std::atan2(pose.h, ground) * 180.0 / kPi;
}

MoveResult apply_service_move(const UavPose& pose, ServiceMove move, double step,
                              const MapBounds& bounds) {
  UavPose next = pose;
  switch (move) {
    case ServiceMove::left: next.x -= step; break;
    case ServiceMove::right: next.x += step; break;
    case ServiceMove::forward: next.y += step; break;
    case ServiceMove::backward: next.y -= step; break;
    case ServiceMove::ascend: next.h += step; break;
    case ServiceMove::descend: next.h -= step; break;
    case ServiceMove::hover: break;
  }
  MoveResult result;
  result.pose.x = std::clamp(next.x, bounds.x_min, bounds.x_max);
  result.pose.y = std::clamp(next.y, bounds.y_min, bounds.y_max);
  result.pose.h = std::clamp(next.h, bounds.h_min, bounds.h_max);
  result.clamped = !(result.pose == next);
  return result;
}

AvoidAction AvoidAction::from_index(int index) {
  if (index < 0 || index >= kCount) throw std::out_of_range("avoid action index out of range");
  return {static_cast<TiltChange>(index / 3), static_cast<SpeedChange>(index % 3)};
}

namespace {

constexpr std::array<std::string_view, 3> kTiltNames{"left", "straight", "right"};
constexpr std::array<std::string_view, 3> kAccelNames{"speed_up", "constant", "slow_down"};

}  // namespace

std::string AvoidAction::label() const {
  std::string out(kTiltNames[static_cast<int>(tilt)]);
  out += '+';
  out += kAccelNames[static_cast<int>(accel)];
  return out;
}

AvoidAction AvoidAction::parse(std::string_view label) {
  for (int i = 0; i < kCount; ++i) {
    if (from_index(i).label() == label) return from_index(i);
  }
  throw std::invalid_argument("unknown avoidance action: " + std::string(label));
}

OwnshipState step_ownship(const OwnshipState& s, AvoidAction a, double dt,
                          const KinematicLimits& limits) {
  double tilt_delta = 0.0;
  if (a.tilt == TiltChange::left) tilt_delta = limits.tilt_step;
  if (a.tilt == TiltChange::right) tilt_delta = -limits.tilt_step;
  double accel = 0.0;
  if (a.accel == SpeedChange::speed_up) accel = limits.accel_step;
  if (a.accel == SpeedChange::slow_down) accel = -limits.accel_step;

  OwnshipState next = s;
  next.tilt = std::clamp(s.tilt + tilt_delta, -limits.tilt_max, limits.tilt_max);
  next.speed = std::clamp(s.speed + accel * dt, limits.v_min, limits.v_max);
  double heading = s.heading + limits.gravity * std::tan(next.tilt) / next.speed * dt;
  heading = std::fmod(heading, 2.0 * kPi);
  if (heading < 0.0) heading += 2.0 * kPi;
  next.heading = heading;
  next.x = s.x + next.speed * std::cos(next.heading) * dt;
  next.y = s.y + next.speed * std::sin(next.heading) * dt;
  return next;
}

namespace {

void reflect(double& p, double& v, double lo, double hi) {
  // A single bounce per step; speeds are far below the map extent.
  if (p > hi) {
    p = 2.0 * hi - p;
    v = -v;
  } else if (p < lo) {
    p = 2.0 * lo - p;
    v = -v;
  }
}

}  // namespace

std::vector<IntruderState> step_intruders(std::span<const IntruderState> intruders, double dt,
                                          const MapBounds& bounds) {
  std::vector<IntruderState> out(intruders.begin(), intruders.end());
  for (auto& it : out) {
    it.px += it.vx * dt;
    it.py += it.vy * dt;
    reflect(it.px, it.vx, bounds.x_min, bounds.x_max);
    reflect(it.py, it.vy, bounds.y_min, bounds.y_max);
  }
  return out;
}

std::string_view to_string(TerminalKind kind) {
  switch (kind) {
    case TerminalKind::non_terminal: return "non_terminal";
    case TerminalKind::collision: return "collision";
    case TerminalKind::timeout: return "timeout";
    case TerminalKind::goal: return "goal";
  }
  return "?";
}

TerminalKind parse_terminal_kind(std::string_view text) {
  for (auto kind : {TerminalKind::non_terminal, TerminalKind::collision, TerminalKind::timeout,
                    TerminalKind::goal}) {
    if (to_string(kind) == text) return kind;
  }
  throw std::invalid_argument("unknown terminal kind: " + std::string(text));
}

double nearest_intruder_distance(const Eigen::Vector2d& position,
                                 std::span<const IntruderState> intruders) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& it : intruders) best = std::min(best, (it.position() - position).norm());
  return best;
}

TerminalKind classify_terminal(const OwnshipState& s, std::span<const IntruderState> intruders,
                               const Eigen::Vector2d& goal, int step, const TerminalConfig& cfg) {
  const Eigen::Vector2d p = s.position();
  if (nearest_intruder_distance(p, intruders) < cfg.d_min) return TerminalKind::collision;
  if (!cfg.bounds.contains(s.x, s.y) || step >= cfg.max_steps) return TerminalKind::timeout;
  if ((p - goal).norm() <= cfg.goal_radius) return TerminalKind::goal;
  return TerminalKind::non_terminal;
}

}  // namespace uavxai
