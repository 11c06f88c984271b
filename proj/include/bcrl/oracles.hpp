#pragma once

#include <vector>

#include "bcrl/feature_map.hpp"
#include "bcrl/mdp.hpp"

namespace bcrl {

// State-action value table.
struct ValueFunction {
  Eigen::MatrixXd q;  // S x A

  // V(s) = sum_a pi(a|s) Q(s,a)
  Eigen::VectorXd v_under(const Policy& pi) const {
    return (q.array() * pi.probs.array()).rowwise().sum();
  }
};

// Exact Q^pi via direct linear solve of the Bellman fixed point.
ValueFunction exact_value(const FiniteMdp& mdp, const Policy& pi);

// One application of the Bellman operator:
// (T^pi f)(s,a) = r(s,a) + gamma E_{s' ~ P(s,a), a' ~ pi(s')} f(s',a').
ValueFunction apply_bellman(const FiniteMdp& mdp, const Policy& pi,
                            const ValueFunction& f);

// Discounted state-action occupancy of pi from initial state distribution p0,
// via linear solve (no rollouts).
StateActionDist occupancy(const FiniteMdp& mdp, const Policy& pi,
                          const Eigen::VectorXd& p0);

// E_{s ~ p0} V(s) under pi.
double expected_value(const ValueFunction& f, const Policy& pi,
                      const Eigen::VectorXd& p0);

// L2(dist) norm of a state-action function.
double l2_norm(const Eigen::MatrixXd& f_sa, const StateActionDist& dist);

// ||f - T^pi f||_{L2(dist)}
double bellman_error_l2(const FiniteMdp& mdp, const Policy& pi,
                        const StateActionDist& dist, const ValueFunction& f);

// Deterministic probe directions on the radius-W sphere: all 2d signed axes
// followed by n_probes low-discrepancy points (Kronecker sequence mapped
// through the normal quantile and normalized). Prefix-closed in n_probes.
std::vector<Eigen::VectorXd> probe_directions(int dim, double radius,
                                              int n_probes);

// Approximate linear Bellman completeness error of phi under nu w.r.t. pi_e:
// a lower bound on max over the W-ball of the best linear fit error of the
// Bellman backup, with the inner minimization solved exactly
// (norm-constrained least squares) and the outer maximization probed over
// probe_directions(d, W, n_probes). Monotone nondecreasing in n_probes.
// A singular feature covariance is handled by the pseudoinverse path and
// reported through `degenerate` when provided.
double exact_lbc_error(const FiniteMdp& mdp, const StateActionDist& nu,
                       const FeatureMap& phi, const Policy& pi_e,
                       double w_radius, int n_probes,
                       bool* degenerate = nullptr);

// Worst-case squared Bellman backup error of the union class
// { w^T phi_j : ||w|| <= W, phi_j in feature_class }, probed the same way.
double inherent_bellman_error(const FiniteMdp& mdp, const StateActionDist& nu,
                              const std::vector<FeatureMap>& feature_class,
                              const Policy& pi_e, double w_radius,
                              int n_probes);

// Largest generalized eigenvalue of (E_{d^pi_e_p0} phi phi^T, Sigma(phi)).
// Returns +infinity when the occupancy covariance does not vanish on the
// null space of Sigma(phi), i.e. when the ratio genuinely diverges.
double relative_condition_number(const StateActionDist& nu, const Policy& pi_e,
                                 const Eigen::VectorXd& p0,
                                 const FeatureMap& phi, const FiniteMdp& mdp);

// | V^pi_p0 - E_p0 f(s,pi') - (1/(1-gamma)) E_{d^pi_p0}[T^pi' f - f(s,pi')] |
double pdl_residual(const FiniteMdp& mdp, const Policy& pi,
                    const Policy& pi_prime, const Eigen::VectorXd& p0,
                    const ValueFunction& f);
inline double pdl_residual(const FiniteMdp& mdp, const Policy& pi,
                           const Eigen::VectorXd& p0, const ValueFunction& f) {
  return pdl_residual(mdp, pi, pi, p0, f);
}

// State marginal of pi at timestep h from d0 (exact recursion).
Eigen::VectorXd state_marginal_at(const FiniteMdp& mdp, const Policy& pi,
                                  const Eigen::VectorXd& p0, int h);

}  // namespace bcrl
