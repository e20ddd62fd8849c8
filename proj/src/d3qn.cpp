#include "uavxai/d3qn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace uavxai {

std::string_view to_string(AgentKind kind) {
  switch (kind) {
    case AgentKind::d3qn: return "d3qn";
    case AgentKind::dqn: return "dqn";
    case AgentKind::random: return "random";
  }
  return "?";
}

AgentKind parse_agent_kind(std::string_view text) {
  for (auto k : {AgentKind::d3qn, AgentKind::dqn, AgentKind::random}) {
    if (to_string(k) == text) return k;
  }
  throw std::invalid_argument("unknown agent '" + std::string(text) + "'");
}

std::vector<int> ServiceAction::indices() const {
  std::vector<int> out;
  out.reserve(power_levels.size() + 1);
  out.push_back(static_cast<int>(move));
  out.insert(out.end(), power_levels.begin(), power_levels.end());
  return out;
}

ServiceAction ServiceAction::from_indices(std::span<const int> indices) {
  if (indices.empty()) throw std::invalid_argument("service action needs a move index");
  if (indices[0] < 0 || indices[0] >= kServiceMoveCount) throw std::out_of_range("move index");
  ServiceAction a;
  a.move = static_cast<ServiceMove>(indices[0]);
  a.power_levels.assign(indices.begin() + 1, indices.end());
  return a;
}

FactorLayout service_layout(int users) {
  FactorLayout layout;
  layout.sizes.push_back(kServiceMoveCount);
  layout.sizes.insert(layout.sizes.end(), static_cast<size_t>(users), kPowerLevels);
  return layout;
}

PowerAllocation decode_power(std::span<const int> levels, double p_max) {
  const auto k_users = static_cast<Eigen::Index>(levels.size());
  PowerAllocation alloc;
  alloc.power = Eigen::VectorXd::Zero(k_users);
  alloc.served = Eigen::VectorXi::Zero(k_users);
  if (k_users == 0) return alloc;
  const double unit = p_max / (static_cast<double>(kPowerLevels - 1) * static_cast<double>(k_users));
  for (Eigen::Index k = 0; k < k_users; ++k) {
    const int level = levels[static_cast<size_t>(k)];
    if (level < 0 || level >= kPowerLevels) throw std::out_of_range("power level out of range");
    alloc.served[k] = level > 0 ? 1 : 0;
    alloc.power[k] = level * unit;
  }
  const double total = alloc.total_served_power();
  if (total > p_max) alloc.power *= p_max / total;
  return alloc;
}

double compute_reward(double rate, int lambda) {
  if (lambda < 0) throw std::invalid_argument("penalty count must be nonnegative");
  return std::ldexp(rate, -lambda);
}

double epsilon_at(int episode, int episodes, double start, double end) {
  if (episodes <= 1) return start;
  const double frac = std::clamp(static_cast<double>(episode) / (episodes - 1), 0.0, 1.0);
  return start + (end - start) * frac;
}

// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
  data_.reserve(std::min<std::size_t>(capacity, 1u << 16));
}

void ReplayBuffer::push(Transition t) {
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
    return;
  }
  data_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::operator[](std::size_t i) const {
  if (i >= data_.size()) throw std::out_of_range("replay index");
  return data_[(head_ + i) % data_.size()];
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t batch, Rng& rng) const {
  if (batch > data_.size()) throw std::invalid_argument("batch larger than buffer");
  // Floyd's algorithm: distinct indices without touching the whole range.
  std::vector<std::size_t> out;
  out.reserve(batch);
  const std::size_t n = data_.size();
  for (std::size_t j = n - batch; j < n; ++j) {
    std::uniform_int_distribution<std::size_t> dist(0, j);
    const std::size_t t = dist(rng);
    if (std::find(out.begin(), out.end(), t) == out.end()) {
      out.push_back(t);
    } else {
      out.push_back(j);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<int> greedy_factors(const Eigen::Ref<const Eigen::VectorXd>& q,
                                const FactorLayout& layout) {
  std::vector<int> out(static_cast<size_t>(layout.groups()));
  int off = 0;
  for (int g = 0; g < layout.groups(); ++g) {
    const int n = layout.sizes[static_cast<size_t>(g)];
    int best = 0;
    for (int a = 1; a < n; ++a) {
      if (q[off + a] > q[off + best]) best = a;
    }
    out[static_cast<size_t>(g)] = best;
    off += n;
  }
  return out;
}

double joint_q(const Eigen::Ref<const Eigen::VectorXd>& q, const FactorLayout& layout,
               std::span<const int> action) {
  double sum = 0.0;
  int off = 0;
  for (int g = 0; g < layout.groups(); ++g) {
    sum += q[off + action[static_cast<size_t>(g)]];
    off += layout.sizes[static_cast<size_t>(g)];
  }
  return sum;
}

Eigen::VectorXd td_targets(const Eigen::VectorXd& rewards, const std::vector<bool>& terminal,
                           const Eigen::MatrixXd& next_q_online,
                           const Eigen::MatrixXd& next_q_target, const FactorLayout& layout,
                           double gamma, TargetMode mode) {
  const Eigen::Index batch = rewards.size();
  Eigen::VectorXd y = rewards;
  for (Eigen::Index b = 0; b < batch; ++b) {
    if (terminal[static_cast<size_t>(b)]) continue;
    double bootstrap = 0.0;
    if (mode == TargetMode::vanilla) {
      int off = 0;
      for (int g = 0; g < layout.groups(); ++g) {
        const int n = layout.sizes[static_cast<size_t>(g)];
        bootstrap += next_q_target.col(b).segment(off, n).maxCoeff();
        off += n;
      }
    } else {
      const auto chosen = greedy_factors(next_q_online.col(b), layout);
      bootstrap = joint_q(next_q_target.col(b), layout, chosen);
    }
    y[b] += gamma * bootstrap;
  }
  return y;
}

std::vector<int> select_action(const QNetwork<>& net, const Eigen::VectorXd& obs, double epsilon,
                               Rng& rng, bool* explored) {
  const FactorLayout& layout = net.layout();
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const bool explore = epsilon > 0.0 && coin(rng) < epsilon;
  if (explored != nullptr) *explored = explore;
  if (explore) {
    std::vector<int> out(static_cast<size_t>(layout.groups()));
    for (int g = 0; g < layout.groups(); ++g) {
      std::uniform_int_distribution<int> pick(0, layout.sizes[static_cast<size_t>(g)] - 1);
      out[static_cast<size_t>(g)] = pick(rng);
    }
    return out;
  }
  const Eigen::VectorXd q = net.q_values(obs);
  return greedy_factors(q, layout);
}

// ---------------------------------------------------------------------------

TdLoss td_loss(const QNetwork<>& net, const Eigen::MatrixXd& states,
               const std::vector<std::vector<int>>& actions, const Eigen::VectorXd& targets) {
  const auto act = net.forward(states);
  const FactorLayout& layout = net.layout();
  const Eigen::Index batch = states.cols();
  Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(act.q.rows(), batch);
  TdLoss out;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto& a = actions[static_cast<size_t>(b)];
    const double err = joint_q(act.q.col(b), layout, a) - targets[b];
    out.loss += err * err;
    int off = 0;
    for (int g = 0; g < layout.groups(); ++g) {
      dq(off + a[static_cast<size_t>(g)], b) = 2.0 * err / static_cast<double>(batch);
      off += layout.sizes[static_cast<size_t>(g)];
    }
  }
  out.loss /= static_cast<double>(batch);
  out.gradient = net.backward(act, dq);
  return out;
}

QLearner::QLearner(int inputs, FactorLayout layout, bool dueling, TargetMode mode,
                   LearnerConfig config, Rng& rng)
    : mode_(mode), config_(std::move(config)) {
  NetworkShape shape;
  shape.inputs = inputs;
  shape.hidden = config_.hidden;
  shape.layout = std::move(layout);
  shape.dueling = dueling;
  online_ = QNetwork<>(shape, rng);
  target_ = online_;
  adam_ = Adam<>(online_.parameter_count(), {config_.learning_rate});
}

std::optional<double> QLearner::train_step(const ReplayBuffer& buffer, Rng& rng) {
  const auto batch = static_cast<std::size_t>(config_.batch_size);
  if (buffer.size() < batch) return std::nullopt;
  const auto idx = buffer.sample_indices(batch, rng);
  std::vector<const Transition*> items;
  items.reserve(batch);
  for (auto i : idx) items.push_back(&buffer[i]);
  return train_on(items);
}

double QLearner::train_on(std::span<const Transition* const> batch) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index width = online_.shape().inputs;
  Eigen::MatrixXd states(width, n);
  Eigen::MatrixXd next(width, n);
  Eigen::VectorXd rewards(n);
  std::vector<bool> terminal(batch.size());
  std::vector<std::vector<int>> actions(batch.size());
  for (Eigen::Index b = 0; b < n; ++b) {
    const Transition& t = *batch[static_cast<size_t>(b)];
    states.col(b) = t.state;
    next.col(b) = t.next_state;
    rewards[b] = t.reward;
    terminal[static_cast<size_t>(b)] = t.terminal;
    actions[static_cast<size_t>(b)] = t.action;
  }
  const Eigen::MatrixXd next_target = target_.q_values(next);
  const Eigen::MatrixXd next_online =
      mode_ == TargetMode::double_q ? online_.q_values(next) : next_target;
  const Eigen::VectorXd y =
      td_targets(rewards, terminal, next_online, next_target, online_.layout(), config_.gamma, mode_);
  const TdLoss loss = td_loss(online_, states, actions, y);
  adam_.step(online_.parameters(), loss.gradient);
  ++updates_;
  if (config_.target_sync > 0 && updates_ % config_.target_sync == 0) sync_target();
  return loss.loss;
}

// ---------------------------------------------------------------------------

ServiceEnv::ServiceEnv(ServiceScenario scenario) : scenario_(std::move(scenario)) {
  if (!scenario_.area.valid()) throw std::invalid_argument("service area bounds are invalid");
  if (scenario_.users <= 0) throw std::invalid_argument("service scenario needs users");
  const auto& a = scenario_.area;
  const auto& ch = scenario_.channel;
  const double ground_diag = std::hypot(a.width(), a.length());
  double worst = 0.0;
  for (double h : {a.h_min, a.h_max}) {
    const double d = std::hypot(ground_diag, h);
    const double elev = std::atan2(h, ground_diag) * 180.0 / kPi;
    worst = std::max(worst, mean_path_loss(d, elev, ch));
  }
  const double best = mean_path_loss(a.h_min, 90.0, ch);
  log_gain_range_ = {-worst / 10.0, -best / 10.0};
}

Eigen::VectorXd ServiceEnv::observe(const Eigen::VectorXd& gains) const {
  const auto& a = scenario_.area;
  Eigen::VectorXd obs(observation_size());
  obs[0] = (pose_.x - a.x_min) / a.width();
  obs[1] = (pose_.y - a.y_min) / a.length();
  obs[2] = (pose_.h - a.h_min) / (a.h_max - a.h_min);
  const auto [lo, hi] = log_gain_range_;
  for (Eigen::Index k = 0; k < gains.size(); ++k) {
    obs[3 + k] = (std::log10(std::max(gains[k], 1e-300)) - lo) / (hi - lo);
  }
  return obs;
}

Eigen::VectorXd ServiceEnv::reset(Rng& rng) {
  const auto& a = scenario_.area;
  std::uniform_real_distribution<double> ux(a.x_min, a.x_max);
  std::uniform_real_distribution<double> uy(a.y_min, a.y_max);
  std::vector<UserState> users(static_cast<size_t>(scenario_.users));
  for (int k = 0; k < scenario_.users; ++k) {
    users[static_cast<size_t>(k)].id = k;
    users[static_cast<size_t>(k)].x = ux(rng);
    users[static_cast<size_t>(k)].y = uy(rng);
  }
  UavPose pose{ux(rng), uy(rng), std::clamp(scenario_.initial_altitude, a.h_min, a.h_max)};
  pose_ = pose;
  users_ = std::move(users);
  gains_ = user_gains(pose_, users_, scenario_.channel,
                      draw_fading(scenario_.channel, scenario_.users, rng));
  return observe(gains_);
}

Eigen::VectorXd ServiceEnv::reset(const UavPose& pose, std::vector<UserState> users) {
  if (static_cast<int>(users.size()) != scenario_.users) throw std::invalid_argument("user count");
  pose_ = pose;
  users_ = std::move(users);
  gains_ = user_gains(pose_, users_, scenario_.channel, Eigen::VectorXd::Ones(scenario_.users));
  return observe(gains_);
}

ServiceStep ServiceEnv::step(const ServiceAction& action, Rng& rng) {
  if (static_cast<int>(action.power_levels.size()) != scenario_.users) {
    throw std::invalid_argument("action carries the wrong number of power levels");
  }
  const MoveResult moved = apply_service_move(pose_, action.move, scenario_.move_step, scenario_.area);
  pose_ = moved.pose;
  const Eigen::VectorXd fading = draw_fading(scenario_.channel, scenario_.users, rng);

  ServiceStep out;
  out.allocation = decode_power(action.power_levels, scenario_.channel.p_max);
  out.links = evaluate_links(pose_, users_, out.allocation, scenario_.channel, fading);
  gains_.resize(scenario_.users);
  for (int k = 0; k < scenario_.users; ++k) gains_[k] = out.links.users[static_cast<size_t>(k)].gain;
  out.clamped = moved.clamped;
  out.qos_violations = qos_violations(out.links, out.allocation, scenario_.channel.qos_rate);
  out.lambda = out.qos_violations + (moved.clamped ? 1 : 0);
  out.rate = out.links.system_rate;
  out.reward = compute_reward(out.rate, out.lambda);
  out.observation = observe(gains_);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<int> random_factors(const FactorLayout& layout, Rng& rng) {
  std::vector<int> out(static_cast<size_t>(layout.groups()));
  for (int g = 0; g < layout.groups(); ++g) {
    std::uniform_int_distribution<int> pick(0, layout.sizes[static_cast<size_t>(g)] - 1);
    out[static_cast<size_t>(g)] = pick(rng);
  }
  return out;
}

}  // namespace

DecisionRecord service_record(const QNetwork<>* net, const Eigen::VectorXd& obs,
                              std::span<const int> action, bool explored, int users) {
  DecisionRecord rec;
  rec.phase = Phase::service;
  rec.observation_digest = digest_hex(obs.data(), static_cast<size_t>(obs.size()) * sizeof(double));
  rec.explored = explored;
  rec.rule = net != nullptr ? SelectionRule::greedy_q : SelectionRule::random;
  rec.dueling = net != nullptr && net->shape().dueling;
  const FactorLayout layout = service_layout(users);

  QNetwork<>::Activations act;
  if (net != nullptr) act = net->forward(obs);

  int off = 0;
  for (int g = 0; g < layout.groups(); ++g) {
    FactorDecision f;
    f.name = g == 0 ? "move" : "power" + std::to_string(g - 1);
    f.chosen = action[static_cast<size_t>(g)];
    const int n = layout.sizes[static_cast<size_t>(g)];
    for (int a = 0; a < n; ++a) {
      Alternative alt;
      alt.action = a;
      alt.label = g == 0 ? std::string(to_string(static_cast<ServiceMove>(a)))
                         : "level" + std::to_string(a);
      if (net != nullptr) {
        alt.q = act.q(off + a, 0);
        alt.score = *alt.q;
        if (rec.dueling) {
          alt.value = act.value(0, 0);
          alt.advantage = act.advantage(off + a, 0);
        }
      }
      f.alternatives.push_back(std::move(alt));
    }
    rec.factors.push_back(std::move(f));
    off += n;
  }
  return rec;
}

TrainingResult greedy_rollout(const ServiceScenario& scenario, const QNetwork<>* net, int steps,
                              Rng& rng, TraceWriter* trace) {
  ServiceEnv env(scenario);
  Eigen::VectorXd obs = env.reset(rng);
  const FactorLayout layout = service_layout(scenario.users);
  TrainingResult out;
  for (int t = 0; t < steps; ++t) {
    const bool explored = net == nullptr;
    const std::vector<int> action =
        net != nullptr ? greedy_factors(net->q_values(obs), layout) : random_factors(layout, rng);
    if (trace != nullptr) {
      DecisionRecord rec = service_record(net, obs, action, explored, scenario.users);
      rec.step = t;
      trace->record(rec);
    }
    const ServiceStep s = env.step(ServiceAction::from_indices(action), rng);
    out.greedy_return += s.reward / scenario.channel.bandwidth;
    out.greedy_links.push_back(s.links);
    obs = s.observation;
  }
  out.service_point = env.pose();
  return out;
}

TrainingResult run_training(const ServiceScenario& scenario, const TrainingConfig& config,
                            AgentKind agent, std::uint64_t seed, TraceWriter* trace) {
  Rng rng(seed);
  ServiceEnv env(scenario);
  const FactorLayout layout = service_layout(scenario.users);
  const double bandwidth = scenario.channel.bandwidth;

  std::optional<QLearner> learner;
  if (agent != AgentKind::random) {
    learner.emplace(env.observation_size(), layout, agent == AgentKind::d3qn,
                    agent == AgentKind::d3qn ? TargetMode::double_q : TargetMode::vanilla,
                    config.learner, rng);
  }
  ReplayBuffer buffer(config.learner.buffer_capacity);

  TrainingResult result;
  result.agent = agent;
  for (int ep = 0; ep < config.episodes; ++ep) {
    const double eps = epsilon_at(ep, config.episodes, config.epsilon_start, config.epsilon_end);
    Eigen::VectorXd obs = env.reset(rng);
    double ret = 0.0;
    double loss_sum = 0.0;
    int loss_count = 0;
    for (int t = 0; t < config.steps_per_episode; ++t) {
      const std::vector<int> action =
          learner ? select_action(learner->online(), obs, eps, rng) : random_factors(layout, rng);
      const ServiceStep s = env.step(ServiceAction::from_indices(action), rng);
      ret += s.reward / bandwidth;
      if (learner) {
        buffer.push({obs, action, s.reward / bandwidth * config.reward_scale, s.observation, false});
        if (auto loss = learner->train_step(buffer, rng)) {
          loss_sum += *loss;
          ++loss_count;
        }
      }
      obs = s.observation;
    }
    result.curve.push_back({ep, ret, learner ? eps : 1.0,
                            loss_count > 0 ? loss_sum / loss_count
                                           : std::numeric_limits<double>::quiet_NaN()});
  }

  Rng eval_rng(seed ^ 0x5eed5eed5eed5eedULL);
  const QNetwork<>* net = learner ? &learner->online() : nullptr;
  TrainingResult rollout = greedy_rollout(scenario, net, config.steps_per_episode, eval_rng, trace);
  result.service_point = rollout.service_point;
  result.greedy_return = rollout.greedy_return;
  result.greedy_links = std::move(rollout.greedy_links);
  if (learner) result.network = learner->online();
  return result;
}

void write_curve_csv(std::ostream& os, std::span<const CurvePoint> curve) {
  os << "episode,return,epsilon,loss_mean\n";
  for (const auto& p : curve) {
    os << p.episode << ',' << p.episode_return << ',' << p.epsilon << ',';
    if (!std::isnan(p.loss_mean)) os << p.loss_mean;
    os << '\n';
  }
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'U', 'A', 'V', 'Q', 'N', 'E', 'T', '\0'};

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("checkpoint is truncated");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const QNetwork<>& net) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  const auto& shape = net.shape();
  out.write(kMagic, sizeof kMagic);
  write_pod<std::uint32_t>(out, 1);
  write_pod<std::uint32_t>(out, shape.dueling ? 1 : 0);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(shape.inputs));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(shape.hidden.size()));
  for (int h : shape.hidden) write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(h));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(shape.layout.sizes.size()));
  for (int s : shape.layout.sizes) write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s));
  write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(net.parameter_count()));
  out.write(reinterpret_cast<const char*>(net.parameters().data()),
            static_cast<std::streamsize>(net.parameter_count() * sizeof(double)));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

QNetwork<> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("not a Q-network checkpoint: " + path.string());
  }
  if (read_pod<std::uint32_t>(in) != 1) throw std::runtime_error("unsupported checkpoint version");
  NetworkShape shape;
  shape.dueling = read_pod<std::uint32_t>(in) != 0;
  shape.inputs = static_cast<int>(read_pod<std::uint32_t>(in));
  shape.hidden.resize(read_pod<std::uint32_t>(in));
  for (auto& h : shape.hidden) h = static_cast<int>(read_pod<std::uint32_t>(in));
  shape.layout.sizes.resize(read_pod<std::uint32_t>(in));
  for (auto& s : shape.layout.sizes) s = static_cast<int>(read_pod<std::uint32_t>(in));
  QNetwork<> net(shape);
  const auto count = read_pod<std::uint64_t>(in);
  if (count != static_cast<std::uint64_t>(net.parameter_count())) {
    throw std::runtime_error("checkpoint parameter count does not match its shape");
  }
  in.read(reinterpret_cast<char*>(net.parameters().data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint is truncated");
  return net;
}

}  // namespace uavxai
