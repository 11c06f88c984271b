#include "doctest.h"

#include <cmath>

#include "bcrl/net.hpp"
#include "bcrl/rng.hpp"

using namespace bcrl;

namespace {

// Central-difference derivative of <upstream, net(x)> in parameter k.
double fd_param(const TrainableNet& net, const Eigen::VectorXd& x,
                const Eigen::VectorXd& upstream, int k, double h = 1e-5) {
  TrainableNet plus = net, minus = net;
  plus.params()[k] += h;
  minus.params()[k] -= h;
  return (upstream.dot(plus.forward(x)) - upstream.dot(minus.forward(x))) /
         (2.0 * h);
}

}  // namespace

TEST_CASE("zero parameters give head(0) = 0") {
  NetConfig cfg;
  cfg.input_dim = 5;
  cfg.hidden_width = 4;
  cfg.num_hidden = 2;
  cfg.output_dim = 3;
  TrainableNet net(cfg, 1);
  net.params().setZero();
  const Eigen::VectorXd out = net.forward(Eigen::VectorXd::Ones(5));
  CHECK(out.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single linear layer with identity head has outer-product gradient") {
  NetConfig cfg;
  cfg.input_dim = 3;
  cfg.num_hidden = 0;
  cfg.output_dim = 2;
  cfg.head = HeadKind::identity;
  TrainableNet net(cfg, 5);

  Eigen::VectorXd x(3);
  x << 0.5, -1.0, 2.0;
  Eigen::VectorXd upstream(2);
  upstream << 1.5, -0.25;

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.param_count());
  net.accumulate_param_gradient(x, upstream, grad);
  // layout: W (2x3 column-major), then b
  for (int j = 0; j < 3; ++j) {
    for (int i = 0; i < 2; ++i) {
      CHECK(grad[j * 2 + i] == doctest::Approx(upstream[i] * x[j]));
    }
  }
  CHECK(grad[6] == doctest::Approx(upstream[0]));
  CHECK(grad[7] == doctest::Approx(upstream[1]));
}

TEST_CASE("bounded head keeps the output inside its ball") {
  NetConfig cfg;
  cfg.input_dim = 6;
  cfg.hidden_width = 16;
  cfg.num_hidden = 2;
  cfg.output_dim = 4;
  cfg.head_bound = 0.9;
  TrainableNet net(cfg, 3);
  // Push the parameters hard; the bound is structural, not statistical.
  net.params() *= 50.0;
  SplitMix64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd x(6);
    for (int i = 0; i < 6; ++i) x[i] = rng.next_normal();
    CHECK(net.forward(x).norm() <= 0.9 + 1e-12);
  }
}

TEST_CASE("analytic gradients match central differences") {
  NetConfig cfg;
  cfg.input_dim = 7;
  cfg.hidden_width = 8;
  cfg.num_hidden = 2;
  cfg.output_dim = 3;
  TrainableNet net(cfg, 11);

  SplitMix64 rng(21);
  Eigen::VectorXd x(7), upstream(3);
  for (int i = 0; i < 7; ++i) x[i] = rng.next_normal();
  for (int i = 0; i < 3; ++i) upstream[i] = rng.next_normal();

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.param_count());
  net.accumulate_param_gradient(x, upstream, grad);

  for (int trial = 0; trial < 20; ++trial) {
    const int k = static_cast<int>(rng.next_below(net.param_count()));
    const double fd = fd_param(net, x, upstream, k);
    const double scale = std::max({std::abs(grad[k]), std::abs(fd), 1.0});
    CHECK(std::abs(grad[k] - fd) <= 1e-6 * scale);
  }
}

TEST_CASE("gradient accumulates rather than overwrites") {
  NetConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden_width = 5;
  cfg.num_hidden = 1;
  cfg.output_dim = 2;
  TrainableNet net(cfg, 2);
  const Eigen::VectorXd x = Eigen::VectorXd::Ones(4);
  const Eigen::VectorXd upstream = Eigen::VectorXd::Ones(2);
  Eigen::VectorXd once = Eigen::VectorXd::Zero(net.param_count());
  net.accumulate_param_gradient(x, upstream, once);
  Eigen::VectorXd twice = Eigen::VectorXd::Zero(net.param_count());
  net.accumulate_param_gradient(x, upstream, twice);
  net.accumulate_param_gradient(x, upstream, twice);
  CHECK((twice - 2.0 * once).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("forward rejects mismatched input size") {
  NetConfig cfg;
  cfg.input_dim = 4;
  cfg.output_dim = 2;
  TrainableNet net(cfg, 1);
  CHECK_THROWS_AS(net.forward(Eigen::VectorXd::Ones(5)),
                  std::invalid_argument);
}
