#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bcrl/feature_map.hpp"

namespace bcrl {

constexpr double kRowSumTol = 1e-12;

// Discounted finite MDP with dense transition kernel.
//
// transition is (S*A) x S with row sa = s*A + a holding P(.|s,a); reward is
// S x A with entries in [-1, 1]; initial_dist sums to one. validate() checks
// all of it and throws std::invalid_argument on the first violation.
struct FiniteMdp {
  int num_states = 0;
  int num_actions = 0;
  double gamma = 0.0;
  Eigen::MatrixXd transition;
  Eigen::MatrixXd reward;
  Eigen::VectorXd initial_dist;

  int pair_index(int s, int a) const { return s * num_actions + a; }
  int num_pairs() const { return num_states * num_actions; }
  void validate() const;
};

struct Policy {
  Eigen::MatrixXd probs;  // S x A, rows sum to one

  int num_states() const { return static_cast<int>(probs.rows()); }
  int num_actions() const { return static_cast<int>(probs.cols()); }
  void validate() const;

  static Policy uniform(int num_states, int num_actions);
};

struct StateActionDist {
  Eigen::MatrixXd weights;  // S x A, total mass one

  int num_states() const { return static_cast<int>(weights.rows()); }
  int num_actions() const { return static_cast<int>(weights.cols()); }
  double mass() const { return weights.sum(); }
  void validate() const;

  // Flattened view in pair order sa = s*A + a.
  Eigen::VectorXd flat() const;

  static StateActionDist uniform(int num_states, int num_actions);
  static StateActionDist point_mass(int num_states, int num_actions, int s,
                                    int a);
  // nu(s,a) = state_dist(s) * pi(a|s)
  static StateActionDist from_policy(const Eigen::VectorXd& state_dist,
                                     const Policy& pi);
};

struct Transition {
  std::int32_t s = 0;
  std::int32_t a = 0;
  double r = 0.0;
  std::int32_t next_s = 0;

  bool operator==(const Transition&) const = default;
};

struct OfflineDataset {
  std::vector<Transition> tuples;
  std::uint64_t source_seed = 0;
  int num_states = 0;
  int num_actions = 0;

  std::size_t size() const { return tuples.size(); }
};

FiniteMdp make_random_tabular_mdp(std::uint64_t seed, int num_states,
                                  int num_actions, double gamma,
                                  bool stochastic);

struct LowRankMdp {
  FiniteMdp mdp;
  FeatureMap phi_star;
  Eigen::MatrixXd mu;           // S x d, row s' is mu(s')^T
  Eigen::VectorXd reward_coef;  // r(s,a) = reward_coef . phi*(s,a)
};

// Factored MDP: P(s'|s,a) = phi*(s,a)^T mu(s') with ||phi*(s,a)||_2 <= 1 and
// reward linear in phi*. feature_dim == S*A falls back to the one-hot
// factorization of a random kernel, which is exact for any transition.
LowRankMdp make_low_rank_mdp(std::uint64_t seed, int num_states,
                             int num_actions, int feature_dim, double gamma);

OfflineDataset sample_offline_dataset(const FiniteMdp& mdp,
                                      const StateActionDist& nu, std::size_t n,
                                      std::uint64_t seed);

StateActionDist mixture_dist(const StateActionDist& a,
                             const StateActionDist& b, double w);

// Versioned little-endian binary records plus a plain-text sidecar
// (<path>.meta) carrying seed and shape metadata.
void save_dataset(const OfflineDataset& data, const std::filesystem::path& path);
// If mdp is given, every tuple's reward is re-derived and compared; a
// mismatch raises a validation error instead of returning a partial dataset.
OfflineDataset load_dataset(const std::filesystem::path& path,
                            const FiniteMdp* mdp = nullptr);

// Structured text round trip with 17-significant-digit decimal rendering.
void save_mdp(const FiniteMdp& mdp, const std::filesystem::path& path);
FiniteMdp load_mdp(const std::filesystem::path& path);

std::uint64_t mdp_checksum(const FiniteMdp& mdp);

}  // namespace bcrl
