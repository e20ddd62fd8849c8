#include "uavxai/avoidance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uavxai {

double estimate_value(const Eigen::Vector2d& ownship, const Eigen::Vector2d& goal, double diagonal) {
  return std::clamp(1.0 - (ownship - goal).norm() / diagonal, 0.0, 1.0);
}

double terminal_reward(TerminalKind kind) {
  switch (kind) {
    case TerminalKind::goal: return 1.0;
    case TerminalKind::timeout: return 0.1;
    case TerminalKind::collision: return 0.0;
    case TerminalKind::non_terminal: break;
  }
  throw std::invalid_argument("terminal reward requested for a non-terminal state");
}

// ---------------------------------------------------------------------------

EncounterModel::EncounterModel(const AvoidanceScenario& scenario, Eigen::Vector2d goal,
                               std::span<const IntruderState> intruders, int root_step, int horizon)
    : scenario_(&scenario),
      goal_(std::move(goal)),
      root_step_(root_step),
      diagonal_(scenario.map.diagonal()) {
  forecast_.reserve(static_cast<size_t>(horizon) + 1);
  forecast_.emplace_back(intruders.begin(), intruders.end());
  for (int k = 0; k < horizon; ++k) {
    forecast_.push_back(step_intruders(forecast_.back(), scenario.dt, scenario.map));
  }
}

EncounterState EncounterModel::transition(const State& s, int action) const {
  return {step_ownship(s.own, AvoidAction::from_index(action), scenario_->dt, scenario_->limits),
          s.step + 1};
}

TerminalKind EncounterModel::classify(const State& s) const {
  const auto k = static_cast<size_t>(s.step - root_step_);
  if (k >= forecast_.size()) throw std::out_of_range("state beyond the intruder forecast");
  return classify_terminal(s.own, forecast_[k], goal_, s.step, scenario_->terminal);
}

std::optional<double> EncounterModel::terminal_value(const State& s) const {
  const TerminalKind kind = classify(s);
  if (kind == TerminalKind::non_terminal) return std::nullopt;
  return terminal_reward(kind);
}

double EncounterModel::estimate(const State& s) const {
  return estimate_value(s.own.position(), goal_, diagonal_);
}

// ---------------------------------------------------------------------------

namespace {

std::string encounter_digest(const OwnshipState& own, std::span<const IntruderState> intruders) {
  std::vector<double> buf{own.x, own.y, own.speed, own.heading, own.tilt};
  for (const auto& it : intruders) {
    buf.insert(buf.end(), {it.px, it.py, it.vx, it.vy});
  }
  return digest_hex(buf.data(), buf.size() * sizeof(double));
}

}  // namespace

DecisionRecord tree_record(const TreeSnapshot& snapshot) {
  DecisionRecord rec;
  rec.phase = Phase::avoidance;
  rec.rule = SelectionRule::visit_count;
  rec.simulations = snapshot.root_visits;
  rec.exploration_constant = snapshot.exploration_constant;
  FactorDecision f;
  f.name = "avoid";
  f.chosen = snapshot.chosen;
  for (const auto& c : snapshot.children) {
    Alternative alt;
    alt.action = c.action;
    alt.label = AvoidAction::from_index(c.action).label();
    alt.visits = c.visits;
    alt.score = c.visits;
    if (c.visits > 0) {
      alt.mean_value = c.mean_value;
      alt.exploration = c.exploration;
      alt.uct = c.uct;
    }
    f.alternatives.push_back(std::move(alt));
  }
  rec.factors.push_back(std::move(f));
  return rec;
}

TreePolicy::TreePolicy(AvoidanceScenario scenario, SearchConfig config)
    : scenario_(std::move(scenario)), config_(config) {}

AvoidDecision TreePolicy::decide(const OwnshipState& own, std::span<const IntruderState> intruders,
                                 const Eigen::Vector2d& goal, int step, Rng& rng) {
  const EncounterModel model(scenario_, goal, intruders, step, config_.depth);
  auto [action, snapshot] = plan_step(model, EncounterState{own, step}, config_, rng);
  AvoidDecision out{AvoidAction::from_index(action), tree_record(snapshot)};
  out.record.observation_digest = encounter_digest(own, intruders);
  return out;
}

AvoidDecision RandomAvoidPolicy::decide(const OwnshipState& own,
                                        std::span<const IntruderState> intruders,
                                        const Eigen::Vector2d&, int, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, AvoidAction::kCount - 1);
  const int action = pick(rng);
  AvoidDecision out;
  out.action = AvoidAction::from_index(action);
  out.record.phase = Phase::avoidance;
  out.record.rule = SelectionRule::random;
  out.record.explored = true;
  out.record.observation_digest = encounter_digest(own, intruders);
  FactorDecision f;
  f.name = "avoid";
  f.chosen = action;
  for (int a = 0; a < AvoidAction::kCount; ++a) {
    Alternative alt;
    alt.action = a;
    alt.label = AvoidAction::from_index(a).label();
    f.alternatives.push_back(std::move(alt));
  }
  out.record.factors.push_back(std::move(f));
  return out;
}

Eigen::VectorXd avoid_observation(const OwnshipState& own, std::span<const IntruderState> intruders,
                                  const Eigen::Vector2d& goal, const AvoidanceScenario& scenario,
                                  int observed) {
  const auto& map = scenario.map;
  const auto& lim = scenario.limits;
  Eigen::VectorXd obs = Eigen::VectorXd::Zero(avoid_observation_size(observed));
  const Eigen::Vector2d to_goal = goal - own.position();
  const double bearing = std::atan2(to_goal.y(), to_goal.x()) - own.heading;
  obs[0] = to_goal.norm() / map.diagonal();
  obs[1] = std::cos(bearing);
  obs[2] = std::sin(bearing);
  obs[3] = (own.speed - lim.v_min) / (lim.v_max - lim.v_min);
  obs[4] = own.tilt / lim.tilt_max;
  obs[5] = (own.x - map.x_min) / map.width();
  obs[6] = (own.y - map.y_min) / map.length();

  std::vector<const IntruderState*> order;
  for (const auto& it : intruders) order.push_back(&it);
  const Eigen::Vector2d p = own.position();
  std::stable_sort(order.begin(), order.end(), [&p](const auto* a, const auto* b) {
    return (a->position() - p).squaredNorm() < (b->position() - p).squaredNorm();
  });
  const double c = std::cos(-own.heading);
  const double s = std::sin(-own.heading);
  const Eigen::Vector2d own_v(own.speed * std::cos(own.heading), own.speed * std::sin(own.heading));
  const auto shown = std::min<size_t>(order.size(), static_cast<size_t>(observed));
  for (size_t i = 0; i < shown; ++i) {
    const Eigen::Vector2d rel = order[i]->position() - p;
    const Eigen::Vector2d vel = Eigen::Vector2d(order[i]->vx, order[i]->vy) - own_v;
    const auto base = static_cast<Eigen::Index>(7 + 5 * i);
    obs[base + 0] = (c * rel.x() - s * rel.y()) / 1000.0;
    obs[base + 1] = (s * rel.x() + c * rel.y()) / 1000.0;
    obs[base + 2] = (c * vel.x() - s * vel.y()) / 100.0;
    obs[base + 3] = (s * vel.x() + c * vel.y()) / 100.0;
    obs[base + 4] = 1.0;
  }
  return obs;
}

DqnAvoidPolicy::DqnAvoidPolicy(AvoidanceScenario scenario, QNetwork<> network, int observed)
    : scenario_(std::move(scenario)), network_(std::move(network)), observed_(observed) {
  if (network_.shape().inputs != avoid_observation_size(observed_)) {
    throw std::invalid_argument("avoidance network input width does not match the observation");
  }
}

AvoidDecision DqnAvoidPolicy::decide(const OwnshipState& own,
                                     std::span<const IntruderState> intruders,
                                     const Eigen::Vector2d& goal, int, Rng&) {
  const Eigen::VectorXd obs = avoid_observation(own, intruders, goal, scenario_, observed_);
  const Eigen::VectorXd q = network_.q_values(obs);
  const int action = greedy_factors(q, network_.layout()).front();
  AvoidDecision out;
  out.action = AvoidAction::from_index(action);
  out.record.phase = Phase::avoidance;
  out.record.rule = SelectionRule::greedy_q;
  out.record.observation_digest = encounter_digest(own, intruders);
  FactorDecision f;
  f.name = "avoid";
  f.chosen = action;
  for (int a = 0; a < AvoidAction::kCount; ++a) {
    Alternative alt;
    alt.action = a;
    alt.label = AvoidAction::from_index(a).label();
    alt.score = q[a];
    alt.q = q[a];
    f.alternatives.push_back(std::move(alt));
  }
  out.record.factors.push_back(std::move(f));
  return out;
}

// ---------------------------------------------------------------------------

EpisodeResult fly_episode(const OwnshipState& start, const Eigen::Vector2d& goal,
                          std::vector<IntruderState> intruders, const AvoidanceScenario& scenario,
                          AvoidancePolicy& policy, Rng& rng, TraceWriter* trace, int episode) {
  EpisodeResult result;
  result.trajectory.push_back(start);
  OwnshipState own = start;
  int step = 0;
  TerminalKind kind = classify_terminal(own, intruders, goal, step, scenario.terminal);
  while (kind == TerminalKind::non_terminal) {
    AvoidDecision decision = policy.decide(own, intruders, goal, step, rng);
    own = step_ownship(own, decision.action, scenario.dt, scenario.limits);
    intruders = step_intruders(intruders, scenario.dt, scenario.map);
    ++step;
    kind = classify_terminal(own, intruders, goal, step, scenario.terminal);
    result.trajectory.push_back(own);
    if (trace != nullptr) {
      decision.record.episode = episode;
      decision.record.step = step - 1;
      if (kind != TerminalKind::non_terminal) {
        decision.record.verdict = kind;
        decision.record.terminal_reward = terminal_reward(kind);
      }
      trace->record(decision.record);
    }
  }
  result.outcome = kind;
  result.steps = step;
  result.reward = terminal_reward(kind);
  return result;
}

Encounter sample_encounter(const AvoidanceScenario& scenario, const EncounterConfig& config,
                           const Eigen::Vector2d& goal, int intruders, Rng& rng) {
  const auto& map = scenario.map;
  std::uniform_real_distribution<double> angle(0.0, 2.0 * kPi);
  const double margin = scenario.terminal.goal_radius;

  Encounter enc;
  Eigen::Vector2d start = goal;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double theta = angle(rng);
    start = goal + config.start_distance * Eigen::Vector2d(std::cos(theta), std::sin(theta));
    if (start.x() >= map.x_min + margin && start.x() <= map.x_max - margin &&
        start.y() >= map.y_min + margin && start.y() <= map.y_max - margin) {
      break;
    }
  }
  start.x() = std::clamp(start.x(), map.x_min + margin, map.x_max - margin);
  start.y() = std::clamp(start.y(), map.y_min + margin, map.y_max - margin);
  const Eigen::Vector2d to_goal = goal - start;
  double heading = std::atan2(to_goal.y(), to_goal.x());
  if (heading < 0.0) heading += 2.0 * kPi;
  enc.start = {start.x(), start.y(),
               std::clamp(config.initial_speed, scenario.limits.v_min, scenario.limits.v_max),
               heading, 0.0};

  std::uniform_real_distribution<double> ux(map.x_min, map.x_max);
  std::uniform_real_distribution<double> uy(map.y_min, map.y_max);
  std::uniform_real_distribution<double> speed(config.intruder_speed_min, config.intruder_speed_max);
  for (int i = 0; i < intruders; ++i) {
    Eigen::Vector2d p;
    do {
      p = {ux(rng), uy(rng)};
    } while ((p - start).norm() < config.spawn_clearance);
    const double v = speed(rng);
    const double h = angle(rng);
    enc.intruders.push_back({i, p.x(), p.y(), v * std::cos(h), v * std::sin(h)});
  }
  return enc;
}

QNetwork<> train_dqn_avoid(const AvoidanceScenario& scenario, const EncounterConfig& encounter,
                           const Eigen::Vector2d& goal, const DqnAvoidConfig& config,
                           std::uint64_t seed) {
  Rng rng(seed);
  const int observed = config.train_intruders;
  QLearner learner(avoid_observation_size(observed), FactorLayout{{AvoidAction::kCount}}, false,
                   TargetMode::vanilla, config.learner, rng);
  ReplayBuffer buffer(config.learner.buffer_capacity);
  const double diagonal = scenario.map.diagonal();

  for (int ep = 0; ep < config.episodes; ++ep) {
    const double eps = epsilon_at(ep, config.episodes, config.epsilon_start, config.epsilon_end);
    Encounter enc = sample_encounter(scenario, encounter, goal, config.train_intruders, rng);
    OwnshipState own = enc.start;
    std::vector<IntruderState> intruders = std::move(enc.intruders);
    int step = 0;
    TerminalKind kind = classify_terminal(own, intruders, goal, step, scenario.terminal);
    Eigen::VectorXd obs = avoid_observation(own, intruders, goal, scenario, observed);
    while (kind == TerminalKind::non_terminal) {
      const std::vector<int> action = select_action(learner.online(), obs, eps, rng);
      const double before = estimate_value(own.position(), goal, diagonal);
      own = step_ownship(own, AvoidAction::from_index(action.front()), scenario.dt, scenario.limits);
      intruders = step_intruders(intruders, scenario.dt, scenario.map);
      ++step;
      kind = classify_terminal(own, intruders, goal, step, scenario.terminal);
      const bool done = kind != TerminalKind::non_terminal;
      const double after = done ? 0.0 : estimate_value(own.position(), goal, diagonal);
      const double reward = (done ? terminal_reward(kind) : 0.0) +
                            config.shaping * (config.learner.gamma * after - before);
      Eigen::VectorXd next = avoid_observation(own, intruders, goal, scenario, observed);
      buffer.push({obs, action, reward, next, done});
      learner.train_step(buffer, rng);
      obs = std::move(next);
    }
  }
  return learner.online();
}

EpisodeResult dqn_avoid_baseline(const Encounter& encounter, const Eigen::Vector2d& goal,
                                 const AvoidanceScenario& scenario, DqnAvoidPolicy& policy,
                                 Rng& rng, TraceWriter* trace, int episode) {
  return fly_episode(encounter.start, goal, encounter.intruders, scenario, policy, rng, trace,
                     episode);
}

}  // namespace uavxai
