#include "oracles.hpp"

#include "uavxai/d3qn.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace uavxai;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "uavxai_unit";
  std::filesystem::create_directories(dir);
  return dir / name;
}

double chi_square_uniform(const std::vector<int>& counts) {
  double n = 0.0;
  for (int c : counts) n += c;
  const double expected = n / static_cast<double>(counts.size());
  double chi = 0.0;
  for (int c : counts) chi += (c - expected) * (c - expected) / expected;
  return chi;
}

}  // namespace

TEST_SUITE("d3qn") {

TEST_CASE("service action layout and encoding") {
  const auto layout = service_layout(4);
  CHECK(layout.sizes == std::vector<int>{7, 6, 6, 6, 6});
  const ServiceAction a{ServiceMove::descend, {0, 5, 2, 1}};
  const auto idx = a.indices();
  CHECK(idx == std::vector<int>{5, 0, 5, 2, 1});
  const auto b = ServiceAction::from_indices(idx);
  CHECK(b.move == ServiceMove::descend);
  CHECK(b.power_levels == a.power_levels);
}

TEST_CASE("power decoding") {
  const std::vector<int> zero{0, 0, 0};
  const auto z = decode_power(zero, 1.0);
  CHECK(z.total_served_power() == 0.0);
  CHECK((z.served.array() == 0).all());

  const std::vector<int> full{5, 5};
  const auto f = decode_power(full, 1.0);
  CHECK(f.power[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(f.power[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(f.total_served_power() == doctest::Approx(1.0).epsilon(1e-15));

  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> lvl(0, 5);
  for (int t = 0; t < 500; ++t) {
    std::vector<int> levels(1 + t % 10);
    for (auto& l : levels) l = lvl(rng);
    const auto p = decode_power(levels, 1.0);
    CHECK(p.total_served_power() <= 1.0 + 1e-12);
    CHECK(p.valid(1.0));
    for (size_t k = 0; k < levels.size(); ++k) {
      CHECK((levels[k] == 0) == (p.served[static_cast<Eigen::Index>(k)] == 0));
    }
  }
  const std::vector<int> bad{6};
  CHECK_THROWS(decode_power(bad, 1.0));
}

TEST_CASE("penalized reward") {
  CHECK(compute_reward(123.5, 0) == 123.5);
  CHECK(compute_reward(123.5, 1) == 123.5 / 2);
  CHECK(compute_reward(123.5, 3) == 123.5 / 8);
  CHECK(compute_reward(0.0, 7) == 0.0);
  for (int l = 0; l < 12; ++l) {
    const double r = compute_reward(4.2e6, l);
    CHECK(r >= 0.0);
    CHECK(r <= 4.2e6);
    if (l > 0) CHECK(r == compute_reward(4.2e6, l - 1) / 2);
  }
  CHECK_THROWS(compute_reward(1.0, -1));
}

TEST_CASE("epsilon schedule") {
  CHECK(epsilon_at(0, 500, 0.9, 0.1) == 0.9);
  CHECK(epsilon_at(499, 500, 0.9, 0.1) == doctest::Approx(0.1).epsilon(1e-15));
  double prev = 1.0;
  for (int e = 0; e < 500; ++e) {
    const double v = epsilon_at(e, 500, 0.9, 0.1);
    CHECK(v <= prev);
    if (e > 1) {
      CHECK(v - epsilon_at(e - 1, 500, 0.9, 0.1) ==
            doctest::Approx(epsilon_at(1, 500, 0.9, 0.1) - 0.9).epsilon(1e-9));
    }
    prev = v;
  }
}

TEST_CASE("replay buffer") {
  ReplayBuffer b(5);
  for (int i = 0; i < 8; ++i) {
    Transition t;
    t.reward = i;
    b.push(t);
    CHECK(b.size() <= b.capacity());
  }
  CHECK(b.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(b[i].reward == 3.0 + static_cast<double>(i));

  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const auto idx = b.sample_indices(5, rng);
    CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == 5);
    for (auto i : idx) CHECK(i < 5);
  }
  CHECK_THROWS(b.sample_indices(6, rng));
}

TEST_CASE("greedy selection and exploration") {
  const FactorLayout layout = service_layout(2);
  QNetwork<> net(NetworkShape{5, {8}, layout, true});  // all-zero parameters
  Rng rng(1);
  const Eigen::VectorXd obs = Eigen::VectorXd::Constant(5, 0.3);

  // Ties go to the lowest index.
  CHECK(select_action(net, obs, 0.0, rng) == std::vector<int>{0, 0, 0});

  // Bump one move output and one power output.
  auto& p = net.parameters();
  const auto& head = net.advantage_layer();
  p[head.bias_offset + 3] += 1.0;
  p[head.bias_offset + 7 + 6 + 4] += 1.0;
  CHECK(select_action(net, obs, 0.0, rng) == std::vector<int>{3, 0, 4});

  // Shifting a whole group's advantages changes nothing.
  for (int a = 0; a < 6; ++a) p[head.bias_offset + 7 + a] += 2.5;
  CHECK(select_action(net, obs, 0.0, rng) == std::vector<int>{3, 0, 4});

  bool explored = false;
  std::vector<std::vector<int>> counts{std::vector<int>(7), std::vector<int>(6),
                                       std::vector<int>(6)};
  for (int t = 0; t < 10000; ++t) {
    const auto a = select_action(net, obs, 1.0, rng, &explored);
    CHECK(explored);
    for (size_t g = 0; g < 3; ++g) counts[g][static_cast<size_t>(a[g])]++;
  }
  // 0.1% critical values for 6 and 5 degrees of freedom.
  CHECK(chi_square_uniform(counts[0]) < 22.46);
  CHECK(chi_square_uniform(counts[1]) < 20.52);
  CHECK(chi_square_uniform(counts[2]) < 20.52);
}

TEST_CASE("td targets") {
  const FactorLayout layout{{2, 3}};
  Eigen::MatrixXd online(5, 2);
  Eigen::MatrixXd target(5, 2);
  online << 1, 0, 2, 0, 0, 5, 3, 0, 1, 0;
  target << 10, 4, 20, 6, 30, 7, 40, 8, 50, 9;
  const Eigen::VectorXd r = (Eigen::VectorXd(2) << 1.0, 2.0).finished();

  // vanilla: group maxima of the target: 20 + 50, then 6 + 9
  const auto v = td_targets(r, {false, false}, online, target, layout, 0.5, TargetMode::vanilla);
  CHECK(v[0] == doctest::Approx(1.0 + 0.5 * 70.0));
  CHECK(v[1] == doctest::Approx(2.0 + 0.5 * 15.0));

  // double: online argmax (1, 1) and (0, 0) evaluated on the target
  const auto d = td_targets(r, {false, false}, online, target, layout, 0.5, TargetMode::double_q);
  CHECK(d[0] == doctest::Approx(1.0 + 0.5 * (20.0 + 40.0)));
  CHECK(d[1] == doctest::Approx(2.0 + 0.5 * (4.0 + 7.0)));

  const auto t = td_targets(r, {true, false}, online, target, layout, 0.5, TargetMode::double_q);
  CHECK(t[0] == 1.0);

  const auto g0 = td_targets(r, {false, false}, online, target, layout, 0.0, TargetMode::vanilla);
  CHECK(g0 == r);

  const auto same_v = td_targets(r, {false, false}, target, target, layout, 0.9, TargetMode::vanilla);
  const auto same_d = td_targets(r, {false, false}, target, target, layout, 0.9, TargetMode::double_q);
  CHECK(same_v == same_d);
}

TEST_CASE("tabular learner converges to the enumerated optimum") {
  const oracle::Chain chain;
  const Eigen::MatrixXd q_star = oracle::chain_q_star(chain);
  for (auto mode : {TargetMode::vanilla, TargetMode::double_q}) {
    const Eigen::MatrixXd q = oracle::chain_tabular_q(chain, mode, 4000, 12);
    CHECK((q - q_star).cwiseAbs().maxCoeff() < 1e-6);
  }
  // Cycling through the 0.3 reward at state 2 beats taking the exit.
  CHECK(q_star(2, 0) > q_star(2, 1));
  CHECK(q_star(3, 0) > q_star(3, 1));
  CHECK(q_star(3, 1) == doctest::Approx(1.0));
}

TEST_CASE("training step mechanics") {
  Rng rng(6);
  LearnerConfig cfg;
  cfg.batch_size = 8;
  QLearner learner(4, FactorLayout{{3, 2}}, true, TargetMode::double_q, cfg, rng);
  ReplayBuffer buffer(100);
  for (int i = 0; i < 7; ++i) {
    buffer.push({Eigen::VectorXd::Random(4), {i % 3, i % 2}, 1.0, Eigen::VectorXd::Random(4), false});
  }
  CHECK_FALSE(learner.train_step(buffer, rng).has_value());
  buffer.push({Eigen::VectorXd::Random(4), {0, 0}, 1.0, Eigen::VectorXd::Random(4), true});
  CHECK(learner.train_step(buffer, rng).has_value());
  CHECK(learner.updates() == 1);

  // Zero learning rate leaves the parameters bit-identical.
  cfg.learning_rate = 0.0;
  QLearner frozen(4, FactorLayout{{3, 2}}, true, TargetMode::double_q, cfg, rng);
  const Eigen::VectorXd before = frozen.online().parameters();
  for (int i = 0; i < 5; ++i) frozen.train_step(buffer, rng);
  CHECK((frozen.online().parameters().array() == before.array()).all());
}

TEST_CASE("repeated updates overfit a fixed batch") {
  Rng rng(10);
  LearnerConfig cfg;
  cfg.gamma = 0.0;  // targets are the rewards, so the fit is well posed
  QLearner learner(4, service_layout(2), true, TargetMode::double_q, cfg, rng);
  std::vector<Transition> data;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 16; ++i) {
    data.push_back({Eigen::VectorXd::Random(4), {i % 7, i % 6, (i * 5) % 6}, u(rng),
                    Eigen::VectorXd::Random(4), false});
  }
  std::vector<const Transition*> batch;
  for (const auto& t : data) batch.push_back(&t);
  double loss = 0.0;
  for (int i = 0; i < 500; ++i) loss = learner.train_on(batch);
  CHECK(loss < 1e-3);
}

TEST_CASE("target network syncs on schedule") {
  Rng rng(12);
  LearnerConfig cfg;
  cfg.batch_size = 4;
  cfg.target_sync = 3;
  QLearner learner(3, FactorLayout{{2}}, false, TargetMode::vanilla, cfg, rng);
  ReplayBuffer buffer(16);
  for (int i = 0; i < 8; ++i) {
    buffer.push({Eigen::VectorXd::Random(3), {i % 2}, 0.5, Eigen::VectorXd::Random(3), false});
  }
  const Eigen::VectorXd start = learner.target().parameters();
  learner.train_step(buffer, rng);
  learner.train_step(buffer, rng);
  CHECK((learner.target().parameters().array() == start.array()).all());
  learner.train_step(buffer, rng);
  CHECK((learner.target().parameters().array() == learner.online().parameters().array()).all());
}

TEST_CASE("service environment") {
  ServiceScenario sc;
  sc.users = 3;
  ServiceEnv env(sc);
  Rng rng(2);
  const auto obs = env.reset(rng);
  CHECK(obs.size() == 6);
  for (int i = 0; i < 3; ++i) {
    CHECK(obs[i] >= 0.0);
    CHECK(obs[i] <= 1.0);
  }
  CHECK(env.pose().h == 100.0);

  // Observation bounds hold everywhere the UAV can be.
  std::uniform_int_distribution<int> pick(0, 6);
  std::uniform_int_distribution<int> lvl(0, 5);
  for (int t = 0; t < 400; ++t) {
    const ServiceAction a{static_cast<ServiceMove>(pick(rng)), {lvl(rng), lvl(rng), lvl(rng)}};
    const auto s = env.step(a, rng);
    CHECK(s.observation.allFinite());
    CHECK(s.observation.minCoeff() >= -1e-12);
    CHECK(s.observation.maxCoeff() <= 1.0 + 1e-12);
    CHECK(s.reward >= 0.0);
    CHECK(s.reward <= s.rate);
    CHECK(s.lambda == s.qos_violations + (s.clamped ? 1 : 0));
  }

  // One user served at full power from directly overhead.
  env.reset({100, 100, 100}, {{0, 100, 100}, {1, 400, 400}, {2, 0, 500}});
  const auto s = env.step({ServiceMove::hover, {5, 0, 0}}, rng);
  const double g = channel_gain(mean_path_loss(100.0, 90.0, sc.channel), 1.0);
  const double p = 1.0 / 3.0;
  CHECK(s.rate == doctest::Approx(sc.channel.bandwidth * std::log2(1 + g * p / 1e-13)).epsilon(1e-12));
  CHECK(s.lambda == 0);
  CHECK(s.reward == s.rate);
}

TEST_CASE("training is reproducible and records decisions") {
  ServiceScenario sc;
  sc.users = 2;
  TrainingConfig tc;
  tc.episodes = 4;
  tc.steps_per_episode = 30;
  tc.learner.batch_size = 16;
  const auto path = scratch("train_trace.jsonl");
  TrainingResult a;
  {
    TraceWriter w(path, {"unit", 5, "cfg", kTraceSchemaVersion, "t"});
    a = run_training(sc, tc, AgentKind::d3qn, 5, &w);
  }
  const auto b = run_training(sc, tc, AgentKind::d3qn, 5);
  REQUIRE(a.curve.size() == 4);
  for (size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].episode_return == b.curve[i].episode_return);
    CHECK(a.curve[i].epsilon == b.curve[i].epsilon);
  }
  CHECK(a.service_point == b.service_point);
  CHECK((a.network->parameters().array() == b.network->parameters().array()).all());
  CHECK(a.greedy_links.size() == 30);

  const auto trace = read_trace(path);
  CHECK(trace.records.size() == 30);
  CHECK(validate(trace).ok());
  for (const auto& r : trace.records) {
    CHECK(r.phase == Phase::service);
    CHECK(r.dueling);
    CHECK(r.factors.size() == 3);
  }

  std::ostringstream curve;
  write_curve_csv(curve, a.curve);
  CHECK(curve.str().rfind("episode,return,epsilon,loss_mean\n", 0) == 0);

  const auto r = run_training(sc, tc, AgentKind::random, 5);
  CHECK_FALSE(r.network.has_value());
  CHECK(r.curve.size() == 4);
}

TEST_CASE("checkpoint round trip") {
  Rng rng(13);
  for (bool dueling : {true, false}) {
    const QNetwork<> net(NetworkShape{7, {40, 40, 40}, service_layout(4), dueling}, rng);
    const auto path = scratch(dueling ? "d.bin" : "p.bin");
    save_checkpoint(path, net);
    const QNetwork<> back = load_checkpoint(path);
    CHECK(back.shape() == net.shape());
    CHECK((back.parameters().array() == net.parameters().array()).all());
    const std::size_t expected = 8 + 4 * 4 + 4 * 3 + 4 + 4 * 5 + 8 +
                                 8 * static_cast<std::size_t>(net.parameter_count());
    CHECK(std::filesystem::file_size(path) == expected);
  }
  const auto junk = scratch("junk.bin");
  std::ofstream(junk) << "not a network";
  CHECK_THROWS(load_checkpoint(junk));
}

}  // TEST_SUITE
