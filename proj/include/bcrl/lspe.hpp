#pragma once

#include <vector>

#include "bcrl/feature_map.hpp"
#include "bcrl/mdp.hpp"

namespace bcrl {

// Iterated ball-constrained linear regression onto bootstrapped targets.
// theta_0 = 0; at step k the targets are r_i + gamma * Vhat_{k-1}(s'_i) with
// Vhat_{k-1}(s) = E_{a ~ pi_e} theta_{k-1}^T phi(s,a).
struct LspeResult {
  std::vector<Eigen::VectorXd> thetas;       // theta_0 .. theta_K
  std::vector<double> regression_residuals;  // loss at theta_k, k = 1..K
  std::vector<double> exact_bellman_errors;  // optional, via oracle fill
  Eigen::MatrixXd phi_pi;                    // d x S policy-averaged features
  double w_radius = 0.0;
  bool gram_degenerate = false;  // numerically rank-deficient design
  int gram_rank = 0;

  const Eigen::VectorXd& final_theta() const { return thetas.back(); }
  // E_{s ~ p0} Vhat_K(s)
  double final_value_at(const Eigen::VectorXd& p0) const {
    return final_theta().dot(phi_pi * p0);
  }
  // Estimated state values Vhat_K(s) for all s.
  Eigen::VectorXd state_values() const {
    return phi_pi.transpose() * final_theta();
  }
};

// Empirical variant over an offline dataset. Moments are accumulated in a
// fixed deterministic order, so identical inputs give bitwise-identical
// theta sequences. Throws on an all-zero design; a merely rank-deficient one
// runs through the pseudoinverse path and is flagged in the result.
LspeResult lspe_run(const FeatureMap& phi, const OfflineDataset& data,
                    const Policy& pi_e, double gamma, int k_iters,
                    double w_radius);

// Population variant: all regression moments are exact under nu and the
// transition kernel, removing every source of sampling noise.
LspeResult lspe_run_population(const FeatureMap& phi, const FiniteMdp& mdp,
                               const StateActionDist& nu, const Policy& pi_e,
                               int k_iters, double w_radius);

// E_{s ~ p0} fhat_K(s, pi_e) for the given feature map.
double evaluate_at(const LspeResult& result, const FeatureMap& phi,
                   const Policy& pi_e, const Eigen::VectorXd& p0);

// Empirical regression loss of `theta` against the targets built from
// `theta_prev`, matching the objective minimized at each iteration.
double lspe_empirical_loss(const FeatureMap& phi, const OfflineDataset& data,
                           const Policy& pi_e, double gamma,
                           const Eigen::VectorXd& theta_prev,
                           const Eigen::VectorXd& theta);

// Fills exact_bellman_errors with ||f_k - T^pi f_k||_{L2(dist)} for every
// iterate, f_k = theta_k^T phi.
void fill_exact_bellman_errors(LspeResult& result, const FiniteMdp& mdp,
                               const Policy& pi_e, const FeatureMap& phi,
                               const StateActionDist& dist);

}  // namespace bcrl
