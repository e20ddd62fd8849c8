#pragma once

#include <Eigen/Core>

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace uavxai {

inline constexpr double kPi = 3.14159265358979323846;

inline constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }

/// Axis-aligned operating region. The altitude band is only meaningful in
/// the service phase; the planning phase is planar.
struct MapBounds {
  double x_min = 0.0;
  double x_max = 0.0;
  double y_min = 0.0;
  double y_max = 0.0;
  double h_min = 0.0;
  double h_max = 0.0;

  bool valid_planar() const { return x_min < x_max && y_min < y_max; }
  bool valid() const { return valid_planar() && h_min < h_max; }
  bool contains(double x, double y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
  double width() const { return x_max - x_min; }
  double length() const { return y_max - y_min; }
  double diagonal() const;
};

struct UavPose {
  double x = 0.0;
  double y = 0.0;
  double h = 0.0;

  friend bool operator==(const UavPose&, const UavPose&) = default;
};

struct UserState {
  int id = 0;
  double x = 0.0;
  double y = 0.0;
};

// ---------------------------------------------------------------------------
// Service phase

enum class ServiceMove { left, right, forward, backward, ascend, descend, hover };
inline constexpr int kServiceMoveCount = 7;

std::string_view to_string(ServiceMove move);
ServiceMove opposite(ServiceMove move);

struct MoveResult {
  UavPose pose;
  bool clamped = false;
};

/// Slant range between the serving UAV and a ground user.
double distance_to_user(const UavPose& pose, const UserState& user);

/// Elevation angle of the UAV as seen from the user, in degrees [0, 90].
double elevation_deg(const UavPose& pose, const UserState& user);

/// Moves one axis by `step` and clamps into `bounds`. Left/right act on x,
/// forward/backward on y, ascend/descend on h.
MoveResult apply_service_move(const UavPose& pose, ServiceMove move, double step,
                              const MapBounds& bounds);

// ---------------------------------------------------------------------------
// Planning phase

struct KinematicLimits {
  double v_min = 20.0;
  double v_max = 60.0;
  double tilt_max = deg_to_rad(30.0);
  double tilt_step = deg_to_rad(5.0);
  double accel_step = 2.0;
  double gravity = 9.81;
};

/// Planar fixed-wing state. Heading is measured counter-clockwise from +x;
/// positive tilt banks left and turns the heading counter-clockwise.
struct OwnshipState {
  double x = 0.0;
  double y = 0.0;
  double speed = 0.0;
  double heading = 0.0;
  double tilt = 0.0;

  Eigen::Vector2d position() const { return {x, y}; }
  friend bool operator==(const OwnshipState&, const OwnshipState&) = default;
};

struct IntruderState {
  int id = 0;
  double px = 0.0;
  double py = 0.0;
  double vx = 0.0;
  double vy = 0.0;

  Eigen::Vector2d position() const { return {px, py}; }
  double speed() const;
  friend bool operator==(const IntruderState&, const IntruderState&) = default;
};

enum class TiltChange { left, straight, right };
enum class SpeedChange { speed_up, constant, slow_down };

/// One of the nine composite avoidance manoeuvres.
struct AvoidAction {
  TiltChange tilt = TiltChange::straight;
  SpeedChange accel = SpeedChange::constant;

  static constexpr int kCount = 9;

  int index() const { return static_cast<int>(tilt) * 3 + static_cast<int>(accel); }
  static AvoidAction from_index(int index);
  std::string label() const;
  static AvoidAction parse(std::string_view label);

  friend bool operator==(const AvoidAction&, const AvoidAction&) = default;
};

/// Coordinated-turn update: bank and speed first, then the turn rate
/// g*tan(tilt)/speed rotates the heading, then position integrates along it.
OwnshipState step_ownship(const OwnshipState& s, AvoidAction a, double dt,
                          const KinematicLimits& limits);

/// Constant-velocity motion with specular reflection off the map edges.
std::vector<IntruderState> step_intruders(std::span<const IntruderState> intruders, double dt,
                                          const MapBounds& bounds);

enum class TerminalKind { non_terminal, collision, timeout, goal };

std::string_view to_string(TerminalKind kind);
TerminalKind parse_terminal_kind(std::string_view text);

struct TerminalConfig {
  double d_min = 50.0;
  double goal_radius = 50.0;
  int max_steps = 200;
  MapBounds bounds{0.0, 2000.0, 0.0, 2000.0, 0.0, 0.0};
};

/// Precedence when several conditions hold: collision, then timeout, then goal.
TerminalKind classify_terminal(const OwnshipState& s, std::span<const IntruderState> intruders,
                               const Eigen::Vector2d& goal, int step, const TerminalConfig& cfg);

double nearest_intruder_distance(const Eigen::Vector2d& position,
                                 std::span<const IntruderState> intruders);

}  // namespace uavxai
