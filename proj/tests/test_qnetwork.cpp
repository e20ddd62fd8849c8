#include "oracles.hpp"

#include "uavxai/qnetwork.hpp"

#include <doctest.h>

#include <random>

using namespace uavxai;

TEST_SUITE("qnetwork") {

TEST_CASE("parameter layout") {
  const QNetwork<> net(NetworkShape{3, {40, 40, 40}, FactorLayout{{7, 6, 6}}, true});
  // trunk 3->40->40->40, advantage head 40->19, value head 40->1
  const Eigen::Index expected = (3 * 40 + 40) + 2 * (40 * 40 + 40) + (40 * 19 + 19) + (40 + 1);
  CHECK(net.parameter_count() == expected);
  const QNetwork<> plain(NetworkShape{3, {40, 40, 40}, FactorLayout{{7, 6, 6}}, false});
  CHECK(plain.parameter_count() == expected - 41);
}

TEST_CASE("dueling identity per factor group") {
  Rng rng(4);
  const FactorLayout layout{{7, 6, 6, 6}};
  const QNetwork<> net(NetworkShape{8, {40, 40, 40}, layout, true}, rng);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd x(8, 32);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n01(rng);
  const auto act = net.forward(x);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (int g = 0; g < layout.groups(); ++g) {
      const int off = layout.offset(g);
      const int n = layout.sizes[static_cast<size_t>(g)];
      const double mean_q = act.q.col(j).segment(off, n).mean();
      CHECK(std::abs(mean_q - act.value(0, j)) < 1e-9);
      const double mean_a = act.advantage.col(j).segment(off, n).mean();
      for (int a = 0; a < n; ++a) {
        CHECK(std::abs(act.q(off + a, j) - (act.value(0, j) + act.advantage(off + a, j) - mean_a)) <
              1e-12);
      }
    }
  }
}

TEST_CASE("forward is column independent") {
  Rng rng(9);
  const QNetwork<> net(NetworkShape{5, {16, 16}, FactorLayout{{3, 4}}, true}, rng);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 6);
  const Eigen::MatrixXd all = net.q_values(x);
  for (Eigen::Index j = 0; j < 6; ++j) {
    const Eigen::MatrixXd one = net.q_values(x.col(j));
    CHECK((one - all.col(j)).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(net.q_values(Eigen::MatrixXd::Zero(4, 1)), std::invalid_argument);
}

TEST_CASE("backprop matches central differences on a 4-input, 2-output net") {
  for (bool dueling : {false, true}) {
    Rng rng(21);
    QNetwork<> net(NetworkShape{4, {6, 6}, FactorLayout{{2}}, dueling}, rng);
    const auto b = oracle::random_batch(net, 5, 33);
    const auto r = oracle::check_gradient(net, b.states, b.actions, b.targets);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("backprop matches central differences on the service network shape") {
  Rng rng(2);
  QNetwork<> net(NetworkShape{3, {40, 40, 40}, FactorLayout{{7, 6, 6}}, true}, rng);
  const auto b = oracle::random_batch(net, 4, 5);
  const auto r = oracle::check_gradient(net, b.states, b.actions, b.targets);
  CHECK(r.parameters == net.parameter_count());
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("adam") {
  Eigen::VectorXd p = Eigen::VectorXd::LinSpaced(10, -1.0, 1.0);
  const Eigen::VectorXd before = p;
  Adam<> zero(p.size(), {0.0, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 5; ++i) zero.step(p, Eigen::VectorXd::Ones(10));
  CHECK((p.array() == before.array()).all());

  // First step moves every coordinate by the learning rate against the
  // gradient sign (bias-corrected m/sqrt(v) = sign(g)).
  Adam<> adam(p.size(), {0.01, 0.9, 0.999, 1e-8});
  Eigen::VectorXd g = Eigen::VectorXd::LinSpaced(10, -3.0, 3.0);
  adam.step(p, g);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double sign = g[i] > 0 ? 1.0 : -1.0;
    CHECK(p[i] == doctest::Approx(before[i] - 0.01 * sign).epsilon(1e-6));
  }
}

}  // TEST_SUITE
