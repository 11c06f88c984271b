#pragma once

#include <vector>

#include "bcrl/bcrl.hpp"
#include "bcrl/mdp.hpp"
#include "bcrl/net.hpp"

namespace bcrl {

// Q-network for FQE: a bounded feature trunk with a norm-constrained linear
// head, Q(s,a) = head . trunk(s,a) with ||head|| <= head_radius, so
// |Q| <= head_radius everywhere.
struct FqeNet {
  TrainableNet trunk;
  Eigen::VectorXd head;
  double head_radius = 0.0;
  bool trunk_frozen = false;

  FqeNet(NetConfig trunk_config, double head_radius_in, std::uint64_t seed);

  double value(const Eigen::VectorXd& input) const {
    return head.dot(trunk.forward(input));
  }
};

struct FqeConfig {
  int k_iters = 20;
  int inner_steps = 100;
  double learning_rate = 0.05;
  int batch_size = 256;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FqeResult {
  std::vector<Eigen::MatrixXd> q_tables;   // S x A snapshot after each outer iter
  std::vector<double> residual_trace;      // final inner loss per outer iter
  const Eigen::MatrixXd& final_q() const { return q_tables.back(); }

  // E_{s ~ p0} sum_a pi(a|s) Q(s,a)
  double value_at(const Eigen::VectorXd& p0, const Policy& pi_e) const;
  Eigen::VectorXd state_values(const Policy& pi_e) const {
    return (final_q().array() * pi_e.probs.array()).rowwise().sum();
  }
};

// Iterated regression: each outer iteration freezes the previous Q as the
// bootstrap target and fits the network with inner gradient steps on the
// same deterministic batch schedule the representation trainer uses.
FqeResult fqe_run(FqeNet net, const OfflineDataset& data, const Policy& pi_e,
                  double gamma, const FqeConfig& config);

// Gradient of the inner regression loss at the current parameters; exposed
// for finite-difference checks. Returns {d_trunk, d_head} and the loss.
struct FqeLossGrads {
  double loss = 0.0;
  Eigen::VectorXd d_trunk;
  Eigen::VectorXd d_head;
};
FqeLossGrads fqe_regression_grads(const FqeNet& net,
                                  std::span<const Transition> batch,
                                  const Eigen::VectorXd& target_v,
                                  double gamma, int num_states,
                                  int num_actions);

enum class AblationKind { no_design, design_only };

// The reference config with one term switched off; everything else is left
// untouched so ablation runs stay paired.
TrainConfig ablation_config(AblationKind kind, const TrainConfig& reference);

}  // namespace bcrl
