#include "doctest.h"

#include <cmath>

#include "bcrl/features.hpp"
#include "bcrl/linalg.hpp"
#include "bcrl/lspe.hpp"
#include "bcrl/oracles.hpp"
#include "bcrl/rng.hpp"

using namespace bcrl;

namespace {

double one_hot_radius(int states, int actions, double gamma) {
  return std::sqrt(static_cast<double>(states * actions)) / (1.0 - gamma);
}

}  // namespace

TEST_CASE("gamma-zero run is one-shot reward regression") {
  const FiniteMdp mdp = make_random_tabular_mdp(3, 4, 2, 0.9, true);
  const Policy pi = Policy::uniform(4, 2);
  const FeatureMap phi = FeatureMap::one_hot(4, 2);
  const OfflineDataset data =
      sample_offline_dataset(mdp, StateActionDist::uniform(4, 2), 4000, 7);

  const LspeResult result = lspe_run(phi, data, pi, /*gamma=*/0.0, 1, 100.0);
  // With one-hot features the regression solution is the observed reward at
  // every visited pair.
  for (int s = 0; s < 4; ++s) {
    for (int a = 0; a < 2; ++a) {
      CHECK(result.final_theta()[s * 2 + a] ==
            doctest::Approx(mdp.reward(s, a)).epsilon(1e-9));
    }
  }
  const double reported = result.final_value_at(mdp.initial_dist);
  const double direct =
      mdp.initial_dist.dot((mdp.reward.array() * pi.probs.array())
                               .rowwise()
                               .sum()
                               .matrix());
  CHECK(reported == doctest::Approx(direct).epsilon(1e-9));
}

TEST_CASE("population run with one-hot features meets the horizon bound") {
  const FiniteMdp mdp = make_random_tabular_mdp(31, 6, 2, 0.9, true);
  const Policy pi = Policy::uniform(6, 2);
  const FeatureMap phi = FeatureMap::one_hot(6, 2);
  const StateActionDist nu = StateActionDist::uniform(6, 2);
  const double exact =
      expected_value(exact_value(mdp, pi), pi, mdp.initial_dist);

  for (int k : {10, 20, 50}) {
    const LspeResult result = lspe_run_population(
        phi, mdp, nu, pi, k, one_hot_radius(6, 2, mdp.gamma));
    const double bound = std::pow(mdp.gamma, k / 2.0) / (1.0 - mdp.gamma);
    CHECK(std::abs(result.final_value_at(mdp.initial_dist) - exact) <= bound);
  }
}

TEST_CASE("iterates satisfy the chaining bound on the bellman error") {
  const FiniteMdp mdp = make_random_tabular_mdp(5, 6, 2, 0.9, true);
  const Policy pi = Policy::uniform(6, 2);
  const FeatureMap phi = FeatureMap::one_hot(6, 2);
  const StateActionDist nu = StateActionDist::uniform(6, 2);
  const StateActionDist occ = occupancy(mdp, pi, mdp.initial_dist);

  LspeResult result = lspe_run_population(phi, mdp, nu, pi, 30,
                                          one_hot_radius(6, 2, mdp.gamma));
  fill_exact_bellman_errors(result, mdp, pi, phi, occ);

  // Per-step regression error in L2(occupancy): || f_k - T f_{k-1} ||.
  double eta = 0.0;
  for (std::size_t k = 1; k < result.thetas.size(); ++k) {
    ValueFunction prev;
    prev.q = Eigen::MatrixXd(6, 2);
    ValueFunction cur;
    cur.q = Eigen::MatrixXd(6, 2);
    for (int s = 0; s < 6; ++s) {
      for (int a = 0; a < 2; ++a) {
        prev.q(s, a) = result.thetas[k - 1].dot(phi.evaluate(s, a));
        cur.q(s, a) = result.thetas[k].dot(phi.evaluate(s, a));
      }
    }
    const ValueFunction backed = apply_bellman(mdp, pi, prev);
    eta = std::max(eta, l2_norm(cur.q - backed.q, occ));
  }

  for (std::size_t k = 1; k < result.thetas.size(); ++k) {
    const double bound = 4.0 * eta / (1.0 - mdp.gamma) +
                         std::pow(mdp.gamma, static_cast<double>(k) / 2.0);
    CHECK(result.exact_bellman_errors[k] <= bound + 1e-9);
  }
}

TEST_CASE("every iterate respects the ball and optimality certificates") {
  const FiniteMdp mdp = make_random_tabular_mdp(13, 4, 2, 0.9, true);
  const Policy pi = Policy::uniform(4, 2);
  const FeatureMap phi = FeatureMap::random_fixed(4, 2, 3, 5);
  const OfflineDataset data =
      sample_offline_dataset(mdp, StateActionDist::uniform(4, 2), 2000, 3);
  const double radius = 2.0;

  const LspeResult result = lspe_run(phi, data, pi, mdp.gamma, 8, radius);
  SplitMix64 rng(17);
  for (std::size_t k = 0; k < result.thetas.size(); ++k) {
    CHECK(result.thetas[k].norm() <= radius + 1e-9);
  }
  CHECK(result.thetas[0].cwiseAbs().maxCoeff() == 0.0);
  for (std::size_t k = 1; k < result.thetas.size(); ++k) {
    const double loss = lspe_empirical_loss(phi, data, pi, mdp.gamma,
                                            result.thetas[k - 1],
                                            result.thetas[k]);
    CHECK(loss ==
          doctest::Approx(result.regression_residuals[k - 1]).epsilon(1e-9));
    for (int probe = 0; probe < 50; ++probe) {
      Eigen::VectorXd y(3);
      for (int i = 0; i < 3; ++i) y[i] = rng.next_normal();
      y *= radius * rng.next_double() / y.norm();
      CHECK(loss <= lspe_empirical_loss(phi, data, pi, mdp.gamma,
                                        result.thetas[k - 1], y) +
                        1e-9);
    }
  }
}

TEST_CASE("population run converges geometrically with exact features") {
  const LowRankMdp lr = make_low_rank_mdp(2, 8, 2, 4, 0.9);
  const Policy pi = Policy::uniform(8, 2);
  const StateActionDist nu = StateActionDist::uniform(8, 2);
  const double exact =
      expected_value(exact_value(lr.mdp, pi), pi, lr.mdp.initial_dist);

  double prev_err = 1.0 / (1.0 - lr.mdp.gamma);
  for (int k : {5, 10, 20, 40}) {
    const LspeResult result =
        lspe_run_population(lr.phi_star, lr.mdp, nu, pi, k, 100.0);
    const double err = std::abs(result.final_value_at(lr.mdp.initial_dist) -
                                exact);
    CHECK(err <= std::pow(lr.mdp.gamma, k / 2.0) / (1.0 - lr.mdp.gamma));
    CHECK(err <= prev_err + 1e-12);
    prev_err = err;
  }
}

TEST_CASE("rank-deficient design with target in span still solves") {
  // Features that only span two directions; the reward is constructed
  // inside that span, so the pseudoinverse path succeeds quietly.
  FiniteMdp mdp = make_random_tabular_mdp(19, 4, 1, 0.5, true);
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(3, 4);
  table(0, 0) = 1.0;
  table(0, 1) = 1.0;
  table(1, 2) = 1.0;
  table(1, 3) = 1.0;  // coordinate 2 never used
  const FeatureMap phi(FeatureKind::random_fixed, table, 4, 1);
  const Policy pi = Policy::uniform(4, 1);
  const StateActionDist nu = StateActionDist::uniform(4, 1);

  const LspeResult result = lspe_run_population(phi, mdp, nu, pi, 10, 50.0);
  CHECK(result.gram_degenerate);
  CHECK(result.gram_rank == 2);
  CHECK(std::isfinite(result.final_value_at(mdp.initial_dist)));
}

TEST_CASE("tiny radius pins every iterate to the boundary") {
  const FiniteMdp mdp = make_random_tabular_mdp(23, 4, 2, 0.9, true);
  const Policy pi = Policy::uniform(4, 2);
  const FeatureMap phi = FeatureMap::one_hot(4, 2);
  const StateActionDist nu = StateActionDist::uniform(4, 2);
  const LspeResult result = lspe_run_population(phi, mdp, nu, pi, 6, 0.01);
  for (std::size_t k = 1; k < result.thetas.size(); ++k) {
    CHECK(result.thetas[k].norm() == doctest::Approx(0.01).epsilon(1e-6));
  }
}

TEST_CASE("identical inputs give bitwise-identical iterates") {
  const FiniteMdp mdp = make_random_tabular_mdp(29, 5, 2, 0.9, true);
  const Policy pi = Policy::uniform(5, 2);
  const FeatureMap phi = FeatureMap::random_fixed(5, 2, 4, 8);
  const OfflineDataset data =
      sample_offline_dataset(mdp, StateActionDist::uniform(5, 2), 1000, 13);
  const LspeResult a = lspe_run(phi, data, pi, mdp.gamma, 12, 5.0);
  const LspeResult b = lspe_run(phi, data, pi, mdp.gamma, 12, 5.0);
  for (std::size_t k = 0; k < a.thetas.size(); ++k) {
    CHECK(a.thetas[k] == b.thetas[k]);
  }
}

TEST_CASE("evaluate_at: point mass, d0 consistency") {
  const FiniteMdp mdp = make_random_tabular_mdp(37, 4, 2, 0.9, true);
  const Policy pi = Policy::uniform(4, 2);
  const FeatureMap phi = FeatureMap::one_hot(4, 2);
  const StateActionDist nu = StateActionDist::uniform(4, 2);
  const LspeResult result = lspe_run_population(phi, mdp, nu, pi, 20, 50.0);

  Eigen::VectorXd point = Eigen::VectorXd::Zero(4);
  point[2] = 1.0;
  const double at_state = evaluate_at(result, phi, pi, point);
  double expected = 0.0;
  for (int a = 0; a < 2; ++a) {
    expected += pi.probs(2, a) * result.final_theta().dot(phi.evaluate(2, a));
  }
  CHECK(at_state == doctest::Approx(expected).epsilon(1e-12));
  CHECK(evaluate_at(result, phi, pi, mdp.initial_dist) ==
        doctest::Approx(result.final_value_at(mdp.initial_dist))
            .epsilon(1e-12));
}

TEST_CASE("empty dataset and bad radius are rejected") {
  const FiniteMdp mdp = make_random_tabular_mdp(2, 2, 2, 0.9, true);
  const FeatureMap phi = FeatureMap::one_hot(2, 2);
  OfflineDataset empty{{}, 0, 2, 2};
  CHECK_THROWS_AS(
      lspe_run(phi, empty, Policy::uniform(2, 2), 0.9, 5, 1.0),
      std::invalid_argument);
  const OfflineDataset data =
      sample_offline_dataset(mdp, StateActionDist::uniform(2, 2), 10, 1);
  CHECK_THROWS_AS(
      lspe_run(phi, data, Policy::uniform(2, 2), 0.9, 5, 0.0),
      std::invalid_argument);
}
