#pragma once

#include "uavxai/channel.hpp"
#include "uavxai/qnetwork.hpp"
#include "uavxai/trace.hpp"
#include "uavxai/world.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace uavxai {

using Rng = std::mt19937_64;

inline constexpr int kPowerLevels = 6;

enum class AgentKind { d3qn, dqn, random };
enum class TargetMode { double_q, vanilla };

std::string_view to_string(AgentKind kind);
AgentKind parse_agent_kind(std::string_view text);

/// Movement plus one discrete power level per user. Level 0 leaves the
/// user unserved.
struct ServiceAction {
  ServiceMove move = ServiceMove::hover;
  std::vector<int> power_levels;

  std::vector<int> indices() const;
  static ServiceAction from_indices(std::span<const int> indices);
};

/// One 7-way move factor followed by a 6-way power factor per user.
FactorLayout service_layout(int users);

/// Level l maps to l * P_max / (5K) watts; the served total is scaled back
/// onto P_max if it would exceed it.
PowerAllocation decode_power(std::span<const int> levels, double p_max);

/// R(t) / 2^lambda.
double compute_reward(double rate, int lambda);

/// Linear schedule from `start` at episode 0 to `end` at the last episode.
double epsilon_at(int episode, int episodes, double start, double end);

struct Transition {
  Eigen::VectorXd state;
  std::vector<int> action;  // one index per factor
  double reward = 0.0;
  Eigen::VectorXd next_state;
  bool terminal = false;
};

/// Fixed-capacity FIFO experience store.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// Logical order: 0 is the oldest retained transition.
  const Transition& operator[](std::size_t i) const;
  /// Distinct indices drawn uniformly.
  std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // slot of the oldest element once full
  std::vector<Transition> data_;
};

/// Per-factor argmax with the lowest index winning ties.
std::vector<int> greedy_factors(const Eigen::Ref<const Eigen::VectorXd>& q,
                                const FactorLayout& layout);

/// Sum of the chosen factor values.
double joint_q(const Eigen::Ref<const Eigen::VectorXd>& q, const FactorLayout& layout,
               std::span<const int> action);

/// TD targets for a batch (one column per transition in the Q matrices).
/// Vanilla: y = r + gamma * sum_g max_a Q_target,g(s', a).
/// Double:  y = r + gamma * sum_g Q_target,g(s', argmax_a Q_online,g(s', a)).
/// Terminal transitions use y = r.
Eigen::VectorXd td_targets(const Eigen::VectorXd& rewards, const std::vector<bool>& terminal,
                           const Eigen::MatrixXd& next_q_online,
                           const Eigen::MatrixXd& next_q_target, const FactorLayout& layout,
                           double gamma, TargetMode mode);

/// Epsilon-greedy over factors. With probability epsilon every factor is
/// drawn uniformly; otherwise each factor takes its greedy action.
std::vector<int> select_action(const QNetwork<>& net, const Eigen::VectorXd& obs, double epsilon,
                               Rng& rng, bool* explored = nullptr);

struct LearnerConfig {
  double gamma = 0.95;
  int batch_size = 64;
  std::size_t buffer_capacity = 10000;
  double learning_rate = 1e-3;
  int target_sync = 200;
  std::vector<int> hidden{40, 40, 40};
};

/// Online network, frozen target copy and optimizer state.
class QLearner {
 public:
  QLearner(int inputs, FactorLayout layout, bool dueling, TargetMode mode, LearnerConfig config,
           Rng& rng);

  const QNetwork<>& online() const { return online_; }
  const QNetwork<>& target() const { return target_; }
  QNetwork<>& online_mut() { return online_; }
  const LearnerConfig& config() const { return config_; }
  TargetMode mode() const { return mode_; }
  long updates() const { return updates_; }

  /// One Adam step on the mean squared TD error of a sampled mini-batch.
  /// Returns the loss before the step, or nullopt when the buffer holds
  /// fewer than batch_size transitions.
  std::optional<double> train_step(const ReplayBuffer& buffer, Rng& rng);

  /// Same update on an explicit batch.
  double train_on(std::span<const Transition* const> batch);

  void sync_target() { target_ = online_; }

 private:
  QNetwork<> online_;
  QNetwork<> target_;
  Adam<> adam_;
  TargetMode mode_;
  LearnerConfig config_;
  long updates_ = 0;
};

/// Mean squared TD loss and its gradient for a batch; used by train_on and
/// by gradient checks.
struct TdLoss {
  double loss = 0.0;
  Eigen::VectorXd gradient;
};
TdLoss td_loss(const QNetwork<>& net, const Eigen::MatrixXd& states,
               const std::vector<std::vector<int>>& actions, const Eigen::VectorXd& targets);

// ---------------------------------------------------------------------------
// Service environment

struct ServiceScenario {
  MapBounds area{0.0, 500.0, 0.0, 500.0, 100.0, 300.0};
  int users = 10;
  double move_step = 10.0;
  double initial_altitude = 100.0;
  ChannelParams channel;
};

struct ServiceStep {
  Eigen::VectorXd observation;
  double rate = 0.0;
  double reward = 0.0;
  int lambda = 0;
  bool clamped = false;
  int qos_violations = 0;
  PowerAllocation allocation;
  LinkReport links;
};

/// Hover-coordinate and power allocation problem: users are scattered on
/// the ground, the UAV starts at the initial altitude, and each step moves
/// the UAV and reallocates power. Penalty lambda counts QoS violations plus
/// one for a clamped move.
class ServiceEnv {
 public:
  explicit ServiceEnv(ServiceScenario scenario);

  Eigen::VectorXd reset(Rng& rng);
  Eigen::VectorXd reset(const UavPose& pose, std::vector<UserState> users);
  ServiceStep step(const ServiceAction& action, Rng& rng);

  /// Normalized pose followed by normalized log-gains.
  Eigen::VectorXd observe(const Eigen::VectorXd& gains) const;
  int observation_size() const { return 3 + scenario_.users; }

  const ServiceScenario& scenario() const { return scenario_; }
  const UavPose& pose() const { return pose_; }
  const std::vector<UserState>& users() const { return users_; }
  const Eigen::VectorXd& gains() const { return gains_; }

  /// log10-gain interval used for normalization: worst case at the far
  /// corner from the ceiling, best case directly overhead at the floor.
  std::pair<double, double> log_gain_range() const { return log_gain_range_; }

 private:
  ServiceScenario scenario_;
  UavPose pose_;
  std::vector<UserState> users_;
  Eigen::VectorXd gains_;
  std::pair<double, double> log_gain_range_;
};

struct TrainingConfig {
  int episodes = 500;
  int steps_per_episode = 100;
  double epsilon_start = 0.9;
  double epsilon_end = 0.1;
  /// Learning reward is R(t) 2^-lambda / B times this factor.
  double reward_scale = 0.1;
  LearnerConfig learner;
};

struct CurvePoint {
  int episode = 0;
  double episode_return = 0.0;  // sum of R(t) 2^-lambda / B
  double epsilon = 0.0;
  double loss_mean = 0.0;       // NaN before the first update
};

struct TrainingResult {
  AgentKind agent = AgentKind::d3qn;
  std::vector<CurvePoint> curve;
  std::optional<QNetwork<>> network;
  UavPose service_point;       // terminal pose of the greedy rollout
  double greedy_return = 0.0;
  std::vector<LinkReport> greedy_links;
};

/// Trains the service agent and finishes with one greedy rollout whose
/// terminal pose becomes the planning goal. The rollout is traced when a
/// writer is given.
TrainingResult run_training(const ServiceScenario& scenario, const TrainingConfig& config,
                            AgentKind agent, std::uint64_t seed, TraceWriter* trace = nullptr);

/// Greedy rollout of a trained network (random actions for a null network).
TrainingResult greedy_rollout(const ServiceScenario& scenario, const QNetwork<>* net, int steps,
                              Rng& rng, TraceWriter* trace = nullptr);

DecisionRecord service_record(const QNetwork<>* net, const Eigen::VectorXd& obs,
                              std::span<const int> action, bool explored, int users);

void write_curve_csv(std::ostream& os, std::span<const CurvePoint> curve);

// ---------------------------------------------------------------------------
// Checkpoints
//
// Little-endian binary:
//   char[8]  magic "UAVQNET\0"
//   u32      format version (1)
//   u32      dueling flag
//   u32      inputs
//   u32      hidden layer count H, then H x u32 widths
//   u32      factor count G, then G x u32 factor sizes
//   u64      parameter count P
//   f64[P]   parameters: per trunk layer the row-major weights then the
//            bias, then the advantage (or Q) head, then the value head.

void save_checkpoint(const std::filesystem::path& path, const QNetwork<>& net);
QNetwork<> load_checkpoint(const std::filesystem::path& path);

}  // namespace uavxai
