#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace bcrl {

enum class FeatureKind { one_hot, low_rank_truth, random_fixed, trainable };

std::string feature_kind_name(FeatureKind k);

// Immutable state-action embedding phi(s,a) in R^d over a finite state/action
// space, backed by a dense d x (S*A) table. Trained networks are snapshotted
// into a table on freeze, so every map is safe to share across threads.
//
// Invariant: ||phi(s,a)||_2 <= 1 + 1e-9 for all pairs.
class FeatureMap {
 public:
  FeatureMap(FeatureKind kind, Eigen::MatrixXd table, int num_states,
             int num_actions);

  static FeatureMap one_hot(int num_states, int num_actions);
  // Per-pair vectors drawn uniformly in the unit ball (deterministic in seed).
  static FeatureMap random_fixed(int num_states, int num_actions, int dim,
                                 std::uint64_t seed);
  // Every pair maps to the same unit vector e_1; deliberately degenerate.
  static FeatureMap constant(int num_states, int num_actions, int dim);

  int dim() const { return static_cast<int>(table_.rows()); }
  int num_states() const { return num_states_; }
  int num_actions() const { return num_actions_; }
  FeatureKind kind() const { return kind_; }

  int pair_index(int s, int a) const { return s * num_actions_ + a; }

  Eigen::VectorXd evaluate(int s, int a) const {
    return table_.col(pair_index(s, a));
  }
  const double* column(int s, int a) const {
    return table_.col(pair_index(s, a)).data();
  }

  // d x (S*A) snapshot, column sa = s*A + a.
  const Eigen::MatrixXd& table() const { return table_; }

  // pi-averaged feature per state: column s is sum_a pi(a|s) phi(s,a).
  Eigen::MatrixXd policy_averaged(const Eigen::MatrixXd& policy_probs) const;

  double max_norm() const;

 private:
  FeatureKind kind_;
  Eigen::MatrixXd table_;
  int num_states_;
  int num_actions_;
};

}  // namespace bcrl
