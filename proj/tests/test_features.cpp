#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "bcrl/features.hpp"
#include "bcrl/oracles.hpp"
#include "bcrl/rng.hpp"

using namespace bcrl;

TEST_CASE("feature norm invariant holds for every kind") {
  CHECK(FeatureMap::one_hot(3, 2).max_norm() <= 1.0 + 1e-9);
  CHECK(FeatureMap::random_fixed(5, 3, 4, 7).max_norm() <= 1.0 + 1e-9);
  CHECK(FeatureMap::constant(4, 2, 3).max_norm() <= 1.0 + 1e-9);
  const LowRankMdp lr = make_low_rank_mdp(2, 5, 2, 3, 0.9);
  CHECK(lr.phi_star.max_norm() <= 1.0 + 1e-9);

  Eigen::MatrixXd oversized = Eigen::MatrixXd::Constant(2, 4, 1.0);
  CHECK_THROWS_AS(FeatureMap(FeatureKind::random_fixed, oversized, 2, 2),
                  std::invalid_argument);
}

TEST_CASE("one-hot covariance under uniform nu is diagonal") {
  const FeatureMap phi = FeatureMap::one_hot(2, 2);  // d = 4
  const CovarianceReport report =
      covariance(phi, StateActionDist::uniform(2, 2));
  CHECK((report.sigma - 0.25 * Eigen::MatrixXd::Identity(4, 4))
            .cwiseAbs()
            .maxCoeff() <= 1e-15);
  CHECK(report.lambda_min == doctest::Approx(0.25));
  CHECK(report.logdet == doctest::Approx(4.0 * std::log(0.25)));
  CHECK(report.condition_number == doctest::Approx(1.0));
}

TEST_CASE("constant feature is rank one with sentinel logdet") {
  const FeatureMap phi = FeatureMap::constant(3, 2, 3);
  const CovarianceReport report =
      covariance(phi, StateActionDist::uniform(3, 2));
  CHECK(report.lambda_min == 0.0);
  CHECK(std::isinf(report.logdet));
  CHECK(report.logdet < 0.0);
  CHECK(report.singular());
}

TEST_CASE("covariance eigenvalues live in [0, 1]") {
  const FeatureMap phi = FeatureMap::random_fixed(6, 3, 5, 3);
  const CovarianceReport report =
      covariance(phi, StateActionDist::uniform(6, 3));
  CHECK(report.eigenvalues.minCoeff() >= 0.0);
  CHECK(report.eigenvalues.maxCoeff() <= 1.0 + 1e-12);
  CHECK((report.sigma - report.sigma.transpose()).cwiseAbs().maxCoeff() <=
        1e-12);
}

TEST_CASE("empirical covariance converges to the exact one") {
  const FiniteMdp mdp = make_random_tabular_mdp(5, 4, 2, 0.9, true);
  const StateActionDist nu = StateActionDist::uniform(4, 2);
  const FeatureMap phi = FeatureMap::random_fixed(4, 2, 3, 9);
  const Eigen::MatrixXd exact = covariance(phi, nu).sigma;

  // Nonincreasing spectral error in median over 5 seeds for nested sizes.
  std::vector<double> med_errors;
  for (std::size_t n : {1000u, 10000u, 100000u}) {
    std::vector<double> errors;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const OfflineDataset data = sample_offline_dataset(mdp, nu, n, seed);
      const Eigen::MatrixXd emp = covariance(phi, data).sigma;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> s(emp - exact);
      errors.push_back(s.eigenvalues().cwiseAbs().maxCoeff());
    }
    std::sort(errors.begin(), errors.end());
    med_errors.push_back(errors[2]);
  }
  CHECK(med_errors[1] <= med_errors[0]);
  CHECK(med_errors[2] <= med_errors[1]);
  CHECK(med_errors[2] <= 0.02);
}

TEST_CASE("expected next feature: deterministic case is a table lookup") {
  const FiniteMdp det = make_random_tabular_mdp(3, 4, 2, 0.7, false);
  const FeatureMap phi = FeatureMap::random_fixed(4, 2, 3, 1);
  const Policy pi = Policy::uniform(4, 2);
  const Eigen::MatrixXd psi = expected_next_feature(det, phi, pi);
  const Eigen::MatrixXd phi_pi = phi.policy_averaged(pi.probs);
  for (int s = 0; s < 4; ++s) {
    for (int a = 0; a < 2; ++a) {
      int sp = -1;
      det.transition.row(det.pair_index(s, a)).maxCoeff(&sp);
      CHECK((psi.col(det.pair_index(s, a)) - 0.7 * phi_pi.col(sp))
                .cwiseAbs()
                .maxCoeff() <= 1e-14);
    }
  }
}

TEST_CASE("expected next feature matches Monte Carlo") {
  const FiniteMdp mdp = make_random_tabular_mdp(5, 3, 2, 0.9, true);
  const FeatureMap phi = FeatureMap::random_fixed(3, 2, 4, 2);
  const Policy pi = Policy::uniform(3, 2);
  const Eigen::MatrixXd psi = expected_next_feature(mdp, phi, pi);
  const Eigen::MatrixXd phi_pi = phi.policy_averaged(pi.probs);

  SplitMix64 rng(123);
  const int s = 1, a = 0;
  const Eigen::VectorXd row = mdp.transition.row(mdp.pair_index(s, a));
  Eigen::VectorXd mc = Eigen::VectorXd::Zero(4);
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.next_double();
    double acc = 0.0;
    int sp = 0;
    for (; sp < 2; ++sp) {
      acc += row[sp];
      if (u < acc) break;
    }
    mc += phi_pi.col(sp);
  }
  mc *= mdp.gamma / n;
  CHECK((mc - psi.col(mdp.pair_index(s, a))).cwiseAbs().maxCoeff() <= 0.01);
}

TEST_CASE("checkpoint round trip, descriptor mismatch rejected") {
  NetConfig cfg;
  cfg.input_dim = 7;
  cfg.hidden_width = 8;
  cfg.num_hidden = 2;
  cfg.output_dim = 3;
  const TrainableNet net(cfg, 42);
  const auto path =
      std::filesystem::temp_directory_path() / "bcrl_ckpt_test.bin";
  save_checkpoint(net, path);
  const TrainableNet loaded = load_checkpoint(path);
  CHECK(loaded.params() == net.params());
  CHECK(loaded.descriptor() == net.descriptor());

  // A different architecture must not load these parameters.
  NetConfig other = cfg;
  other.hidden_width = 16;
  const TrainableNet probe(other, 0);
  CHECK(probe.descriptor() != loaded.descriptor());
  std::filesystem::remove(path);
}
