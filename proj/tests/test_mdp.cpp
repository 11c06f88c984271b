#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "bcrl/bcrl.hpp"
#include "bcrl/features.hpp"
#include "bcrl/linalg.hpp"
#include "bcrl/mdp.hpp"
#include "bcrl/oracles.hpp"

using namespace bcrl;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("single-state deterministic MDP is a self loop") {
  const FiniteMdp mdp = make_random_tabular_mdp(7, 1, 1, 0.5, false);
  CHECK(mdp.transition(0, 0) == 1.0);
}

TEST_CASE("same seed gives bitwise-identical MDPs") {
  const FiniteMdp a = make_random_tabular_mdp(13, 5, 3, 0.9, true);
  const FiniteMdp b = make_random_tabular_mdp(13, 5, 3, 0.9, true);
  CHECK(a.transition == b.transition);
  CHECK(a.reward == b.reward);
  CHECK(a.initial_dist == b.initial_dist);
}

TEST_CASE("stochastic rows sum to one within 1e-12") {
  const FiniteMdp mdp = make_random_tabular_mdp(3, 5, 2, 0.9, true);
  for (int sa = 0; sa < mdp.num_pairs(); ++sa) {
    CHECK(std::abs(mdp.transition.row(sa).sum() - 1.0) <= 1e-12);
    CHECK((mdp.transition.row(sa).array() >= 0.0).all());
  }
  CHECK(std::abs(mdp.initial_dist.sum() - 1.0) <= 1e-12);
  CHECK((mdp.reward.array().abs() <= 1.0).all());
}

TEST_CASE("generator rejects invalid dimensions and gamma") {
  CHECK_THROWS_AS(make_random_tabular_mdp(1, 0, 2, 0.9, true),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_random_tabular_mdp(1, 2, 0, 0.9, true),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_random_tabular_mdp(1, 2, 2, 1.0, true),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_random_tabular_mdp(1, 2, 2, 0.0, true),
                  std::invalid_argument);
}

TEST_CASE("low-rank factorization reproduces the kernel exactly") {
  const LowRankMdp lr = make_low_rank_mdp(1, 6, 2, 3, 0.9);
  const Eigen::MatrixXd reconstructed =
      lr.phi_star.table().transpose() * lr.mu.transpose();
  CHECK((lr.mdp.transition - reconstructed).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(lr.phi_star.max_norm() <= 1.0 + 1e-12);
  for (int sa = 0; sa < lr.mdp.num_pairs(); ++sa) {
    CHECK(std::abs(lr.mdp.transition.row(sa).sum() - 1.0) <= 1e-12);
  }
  // reward is linear in phi* by construction
  for (int s = 0; s < 6; ++s) {
    for (int a = 0; a < 2; ++a) {
      CHECK(lr.mdp.reward(s, a) ==
            doctest::Approx(lr.reward_coef.dot(lr.phi_star.evaluate(s, a)))
                .epsilon(1e-14));
    }
  }
}

TEST_CASE("full-dimensional factorization is unrestricted") {
  const LowRankMdp lr = make_low_rank_mdp(4, 4, 2, 8, 0.8);
  const Eigen::MatrixXd reconstructed =
      lr.phi_star.table().transpose() * lr.mu.transpose();
  CHECK((lr.mdp.transition - reconstructed).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("low-rank instance certifies exact linear completeness") {
  const LowRankMdp lr = make_low_rank_mdp(1, 6, 2, 3, 0.9);
  const Policy pi = Policy::uniform(6, 2);
  const StateActionDist nu = StateActionDist::uniform(6, 2);
  const Witness w = fit_witness_exact(lr.phi_star, lr.mdp, nu, pi, 0.0, 0.0,
                                      /*constrain=*/false);
  CHECK(spectral_norm(w.m) < 1.0);
  const double radius = std::max(w.implied_w_radius(), 1.0);
  CHECK(exact_lbc_error(lr.mdp, nu, lr.phi_star, pi, radius, 16) <= 1e-8);
}

TEST_CASE("point-mass sampling hits one pair only") {
  const FiniteMdp mdp = make_random_tabular_mdp(2, 3, 2, 0.9, true);
  const StateActionDist nu = StateActionDist::point_mass(3, 2, 1, 0);
  const OfflineDataset data = sample_offline_dataset(mdp, nu, 1000, 5);
  for (const Transition& t : data.tuples) {
    CHECK(t.s == 1);
    CHECK(t.a == 0);
    CHECK(t.r == mdp.reward(1, 0));
  }
}

TEST_CASE("deterministic kernel pins every successor") {
  const FiniteMdp mdp = make_random_tabular_mdp(8, 4, 2, 0.9, false);
  const OfflineDataset data =
      sample_offline_dataset(mdp, StateActionDist::uniform(4, 2), 500, 11);
  for (const Transition& t : data.tuples) {
    int expected = -1;
    mdp.transition.row(mdp.pair_index(t.s, t.a)).maxCoeff(&expected);
    CHECK(t.next_s == expected);
  }
}

TEST_CASE("empirical pair frequencies approach nu") {
  const FiniteMdp mdp = make_random_tabular_mdp(21, 4, 2, 0.9, true);
  const StateActionDist nu = StateActionDist::uniform(4, 2);
  const OfflineDataset data = sample_offline_dataset(mdp, nu, 50000, 17);
  Eigen::MatrixXd freq = Eigen::MatrixXd::Zero(4, 2);
  for (const Transition& t : data.tuples) freq(t.s, t.a) += 1.0;
  freq /= static_cast<double>(data.tuples.size());
  CHECK((freq.array() - 0.125).abs().maxCoeff() <= 0.02);
}

TEST_CASE("dataset sampling is deterministic in all inputs") {
  const FiniteMdp mdp = make_random_tabular_mdp(2, 3, 2, 0.9, true);
  const StateActionDist nu = StateActionDist::uniform(3, 2);
  const OfflineDataset a = sample_offline_dataset(mdp, nu, 200, 3);
  const OfflineDataset b = sample_offline_dataset(mdp, nu, 200, 3);
  CHECK(a.tuples == b.tuples);
}

TEST_CASE("empty-support sampling distribution is rejected") {
  FiniteMdp mdp = make_random_tabular_mdp(2, 2, 2, 0.9, true);
  StateActionDist nu;
  nu.weights = Eigen::MatrixXd::Zero(2, 2);
  CHECK_THROWS_AS(sample_offline_dataset(mdp, nu, 10, 1),
                  std::invalid_argument);
}

TEST_CASE("mixture endpoints and idempotence") {
  const StateActionDist a = StateActionDist::point_mass(2, 2, 0, 1);
  const StateActionDist b = StateActionDist::uniform(2, 2);
  CHECK((mixture_dist(a, b, 1.0).weights - a.weights).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK((mixture_dist(a, a, 0.5).weights - a.weights).cwiseAbs().maxCoeff() ==
        0.0);
  StateActionDist wrong;
  wrong.weights = Eigen::MatrixXd::Constant(3, 2, 1.0 / 6.0);
  CHECK_THROWS_AS(mixture_dist(a, wrong, 0.5), std::invalid_argument);
}

TEST_CASE("dataset round trip is lossless, truncation is rejected") {
  const FiniteMdp mdp = make_random_tabular_mdp(2, 3, 2, 0.9, true);
  const OfflineDataset data =
      sample_offline_dataset(mdp, StateActionDist::uniform(3, 2), 321, 9);
  const auto path = temp_file("bcrl_ds_test.bin");
  save_dataset(data, path);
  const OfflineDataset loaded = load_dataset(path, &mdp);
  CHECK(loaded.tuples == data.tuples);
  CHECK(loaded.source_seed == data.source_seed);

  // Truncate mid-record: format error, nothing returned.
  const auto truncated = temp_file("bcrl_ds_trunc.bin");
  {
    std::ifstream in(path, std::ios::binary);
    std::string buf((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    std::ofstream out(truncated, std::ios::binary | std::ios::trunc);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size() - 7));
  }
  CHECK_THROWS_AS(load_dataset(truncated), std::runtime_error);

  // Reward inconsistent with the declared MDP: validation error.
  OfflineDataset tampered = data;
  tampered.tuples[5].r += 0.25;
  const auto bad = temp_file("bcrl_ds_bad.bin");
  save_dataset(tampered, bad);
  CHECK_THROWS_AS(load_dataset(bad, &mdp), std::runtime_error);
  CHECK_NOTHROW(load_dataset(bad));  // fine without the cross-check

  std::filesystem::remove(path);
  std::filesystem::remove(truncated);
  std::filesystem::remove(bad);
}

TEST_CASE("mdp text serialization round trips bit-exactly") {
  const FiniteMdp mdp = make_random_tabular_mdp(5, 4, 3, 0.93, true);
  const auto path = temp_file("bcrl_mdp_test.txt");
  save_mdp(mdp, path);
  const FiniteMdp loaded = load_mdp(path);
  CHECK(loaded.transition == mdp.transition);
  CHECK(loaded.reward == mdp.reward);
  CHECK(loaded.initial_dist == mdp.initial_dist);
  CHECK(loaded.gamma == mdp.gamma);
  CHECK(mdp_checksum(loaded) == mdp_checksum(mdp));
  std::filesystem::remove(path);
}
