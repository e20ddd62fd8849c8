#pragma once

#include "uavxai/d3qn.hpp"
#include "uavxai/mcts.hpp"
#include "uavxai/trace.hpp"
#include "uavxai/world.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace uavxai {

struct AvoidanceScenario {
  MapBounds map{0.0, 2000.0, 0.0, 2000.0, 0.0, 0.0};
  KinematicLimits limits;
  TerminalConfig terminal;  // terminal.bounds mirrors `map`
  double dt = 1.0;
};

/// 1 - d(o, g) / diagonal, clamped into [0, 1].
double estimate_value(const Eigen::Vector2d& ownship, const Eigen::Vector2d& goal, double diagonal);

/// Goal 1, timeout 0.1, collision 0. Throws for a non-terminal kind.
double terminal_reward(TerminalKind kind);

struct EncounterState {
  OwnshipState own;
  int step = 0;
};

/// Search model for one planning step. Intruder motion does not depend on
/// the ownship, so their positions are forecast once per depth level with
/// the same constant-velocity law the world uses.
class EncounterModel {
 public:
  using State = EncounterState;

  EncounterModel(const AvoidanceScenario& scenario, Eigen::Vector2d goal,
                 std::span<const IntruderState> intruders, int root_step, int horizon);

  int action_count() const { return AvoidAction::kCount; }
  State transition(const State& s, int action) const;
  std::optional<double> terminal_value(const State& s) const;
  double estimate(const State& s) const;
  TerminalKind classify(const State& s) const;

 private:
  const AvoidanceScenario* scenario_;
  Eigen::Vector2d goal_;
  int root_step_;
  double diagonal_;
  std::vector<std::vector<IntruderState>> forecast_;
};

/// Chosen manoeuvre plus the trace record explaining it. fly_episode fills
/// in the episode, step and verdict.
struct AvoidDecision {
  AvoidAction action;
  DecisionRecord record;
};

class AvoidancePolicy {
 public:
  virtual ~AvoidancePolicy() = default;
  virtual AvoidDecision decide(const OwnshipState& own, std::span<const IntruderState> intruders,
                               const Eigen::Vector2d& goal, int step, Rng& rng) = 0;
};

/// MCTS planner: a fresh tree per decision, robust-child action.
class TreePolicy : public AvoidancePolicy {
 public:
  TreePolicy(AvoidanceScenario scenario, SearchConfig config);
  AvoidDecision decide(const OwnshipState& own, std::span<const IntruderState> intruders,
                       const Eigen::Vector2d& goal, int step, Rng& rng) override;

 private:
  AvoidanceScenario scenario_;
  SearchConfig config_;
};

class RandomAvoidPolicy : public AvoidancePolicy {
 public:
  AvoidDecision decide(const OwnshipState& own, std::span<const IntruderState> intruders,
                       const Eigen::Vector2d& goal, int step, Rng& rng) override;
};

/// Observation for the learned avoidance baseline: goal geometry and own
/// kinematics, then the `observed` nearest intruders in the body frame
/// (zero-padded when fewer are present).
Eigen::VectorXd avoid_observation(const OwnshipState& own, std::span<const IntruderState> intruders,
                                  const Eigen::Vector2d& goal, const AvoidanceScenario& scenario,
                                  int observed);
inline int avoid_observation_size(int observed) { return 7 + 5 * observed; }

class DqnAvoidPolicy : public AvoidancePolicy {
 public:
  DqnAvoidPolicy(AvoidanceScenario scenario, QNetwork<> network, int observed);
  AvoidDecision decide(const OwnshipState& own, std::span<const IntruderState> intruders,
                       const Eigen::Vector2d& goal, int step, Rng& rng) override;
  const QNetwork<>& network() const { return network_; }

 private:
  AvoidanceScenario scenario_;
  QNetwork<> network_;
  int observed_;
};

struct EpisodeResult {
  TerminalKind outcome = TerminalKind::non_terminal;
  int steps = 0;
  double reward = 0.0;
  std::vector<OwnshipState> trajectory;  // includes the start state
};

/// Alternates policy decisions with ownship/intruder updates until a
/// terminal state; never runs more than the step budget.
EpisodeResult fly_episode(const OwnshipState& start, const Eigen::Vector2d& goal,
                          std::vector<IntruderState> intruders, const AvoidanceScenario& scenario,
                          AvoidancePolicy& policy, Rng& rng, TraceWriter* trace = nullptr,
                          int episode = 0);

struct EncounterConfig {
  double start_distance = 1000.0;
  double initial_speed = 40.0;
  double intruder_speed_min = 10.0;
  double intruder_speed_max = 25.0;
  double spawn_clearance = 250.0;
};

struct Encounter {
  OwnshipState start;
  std::vector<IntruderState> intruders;
};

/// Ownship placed `start_distance` from the goal at a random bearing and
/// aimed at it; intruders uniform over the map (outside the spawn
/// clearance around the ownship) with random headings.
Encounter sample_encounter(const AvoidanceScenario& scenario, const EncounterConfig& config,
                           const Eigen::Vector2d& goal, int intruders, Rng& rng);

struct DqnAvoidConfig {
  int train_intruders = 10;
  int episodes = 1500;
  double epsilon_start = 0.9;
  double epsilon_end = 0.05;
  /// Weight on the potential-based progress term gamma V~(s') - V~(s).
  double shaping = 1.0;
  LearnerConfig learner;
};

/// Trains the flat Q-network avoidance baseline on encounters with a fixed
/// intruder count. Reward: the terminal payoff at the end, plus a
/// potential-based progress term on the estimated value at every step.
QNetwork<> train_dqn_avoid(const AvoidanceScenario& scenario, const EncounterConfig& encounter,
                           const Eigen::Vector2d& goal, const DqnAvoidConfig& config,
                           std::uint64_t seed);

EpisodeResult dqn_avoid_baseline(const Encounter& encounter, const Eigen::Vector2d& goal,
                                 const AvoidanceScenario& scenario, DqnAvoidPolicy& policy,
                                 Rng& rng, TraceWriter* trace = nullptr, int episode = 0);

/// Record fields for a tree decision.
DecisionRecord tree_record(const TreeSnapshot& snapshot);

}  // namespace uavxai
