#include "bcrl/lspe.hpp"

#include <stdexcept>

#include "bcrl/features.hpp"
#include "bcrl/kernels.hpp"
#include "bcrl/linalg.hpp"
#include "bcrl/oracles.hpp"

namespace bcrl {
namespace {

// Dataset moments collapsed onto the finite pair space: visit counts per
// (s,a) and per (s,a,s'). All downstream regressions are exact functions of
// these tallies, which keeps per-iteration work independent of N.
struct PairTallies {
  Eigen::VectorXd pair_weight;      // fraction of samples at each sa
  Eigen::MatrixXd successor_weight; // (S*A) x S, fraction at (sa, s')
  Eigen::VectorXd pair_reward;      // observed reward per sa

  PairTallies(const OfflineDataset& data, int num_states, int num_actions) {
    const int pairs = num_states * num_actions;
    pair_weight = Eigen::VectorXd::Zero(pairs);
    successor_weight = Eigen::MatrixXd::Zero(pairs, num_states);
    pair_reward = Eigen::VectorXd::Zero(pairs);
    const double w = 1.0 / static_cast<double>(data.tuples.size());
    for (const Transition& t : data.tuples) {
      const int sa = t.s * num_actions + t.a;
      pair_weight[sa] += w;
      successor_weight(sa, t.next_s) += w;
      pair_reward[sa] = t.r;
    }
  }
};

struct LspeProblem {
  Eigen::MatrixXd phi_table;  // d x pairs
  Eigen::MatrixXd phi_pi;     // d x S
  Eigen::VectorXd weight;     // per-pair design weight
  Eigen::VectorXd reward;     // per-pair reward
  // Either empirical successor weights or nu-weighted exact kernel rows,
  // both shaped (pairs) x S and scaled so that row sums equal weight[sa].
  Eigen::MatrixXd successor_weight;
  double gamma = 0.0;
};

LspeResult solve(const LspeProblem& prob, int k_iters, double w_radius) {
  if (k_iters < 1) throw std::invalid_argument("lspe: k_iters must be >= 1");
  if (!(w_radius > 0.0)) throw std::invalid_argument("lspe: w_radius must be positive");

  const int d = static_cast<int>(prob.phi_table.rows());
  const int pairs = static_cast<int>(prob.phi_table.cols());
  const int states = static_cast<int>(prob.phi_pi.cols());

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
  for (int sa = 0; sa < pairs; ++sa) {
    if (prob.weight[sa] != 0.0) {
      kernels::add_scaled_outer(gram.data(), prob.phi_table.col(sa).data(),
                                prob.weight[sa], static_cast<std::size_t>(d));
    }
  }
  GramFactorization factorization(gram);
  if (factorization.degenerate()) {
    throw std::runtime_error("lspe: empirical design is numerically zero");
  }

  LspeResult result;
  result.phi_pi = prob.phi_pi;
  result.w_radius = w_radius;
  result.gram_degenerate = factorization.rank_deficient();
  result.gram_rank = factorization.rank;
  result.thetas.push_back(Eigen::VectorXd::Zero(d));

  for (int k = 1; k <= k_iters; ++k) {
    const Eigen::VectorXd& prev = result.thetas.back();
    // Vhat_{k-1}(s') for every state, then per-pair expected target.
    Eigen::VectorXd v_prev(states);
    kernels::matvec_t(prob.phi_pi.data(), d, states, prev.data(), v_prev.data());

    Eigen::VectorXd moment = Eigen::VectorXd::Zero(d);
    for (int sa = 0; sa < pairs; ++sa) {
      const double w = prob.weight[sa];
      if (w == 0.0) continue;
      double next_mass = 0.0;
      for (int sp = 0; sp < states; ++sp) {
        next_mass += prob.successor_weight(sa, sp) * v_prev[sp];
      }
      const double target_mass = w * prob.reward[sa] + prob.gamma * next_mass;
      kernels::axpy(target_mass, prob.phi_table.col(sa).data(), moment.data(),
                    static_cast<std::size_t>(d));
    }

    BallLsqSolution sol = ball_constrained_lsq(factorization, moment, w_radius);
    // Residual against the per-sample targets r + gamma Vhat(s').
    double loss = 0.0;
    for (int sa = 0; sa < pairs; ++sa) {
      if (prob.weight[sa] == 0.0) continue;
      const double pred = sol.x.dot(prob.phi_table.col(sa));
      for (int sp = 0; sp < states; ++sp) {
        const double w_sp = prob.successor_weight(sa, sp);
        if (w_sp != 0.0) {
          const double resid =
              pred - prob.reward[sa] - prob.gamma * v_prev[sp];
          loss += w_sp * resid * resid;
        }
      }
    }
    result.regression_residuals.push_back(loss);
    result.thetas.push_back(std::move(sol.x));
  }
  return result;
}

}  // namespace

LspeResult lspe_run(const FeatureMap& phi, const OfflineDataset& data,
                    const Policy& pi_e, double gamma, int k_iters,
                    double w_radius) {
  if (data.tuples.empty()) throw std::invalid_argument("lspe_run: empty dataset");
  PairTallies tallies(data, data.num_states, data.num_actions);
  LspeProblem prob;
  prob.phi_table = phi.table();
  prob.phi_pi = phi.policy_averaged(pi_e.probs);
  prob.weight = tallies.pair_weight;
  prob.reward = tallies.pair_reward;
  prob.successor_weight = tallies.successor_weight;
  prob.gamma = gamma;
  return solve(prob, k_iters, w_radius);
}

LspeResult lspe_run_population(const FeatureMap& phi, const FiniteMdp& mdp,
                               const StateActionDist& nu, const Policy& pi_e,
                               int k_iters, double w_radius) {
  const Eigen::VectorXd nu_flat = nu.flat();
  LspeProblem prob;
  prob.phi_table = phi.table();
  prob.phi_pi = phi.policy_averaged(pi_e.probs);
  prob.weight = nu_flat;
  prob.reward = Eigen::VectorXd(mdp.num_pairs());
  for (int s = 0; s < mdp.num_states; ++s)
    for (int a = 0; a < mdp.num_actions; ++a)
      prob.reward[mdp.pair_index(s, a)] = mdp.reward(s, a);
  prob.successor_weight = nu_flat.asDiagonal() * mdp.transition;
  prob.gamma = mdp.gamma;
  return solve(prob, k_iters, w_radius);
}

double evaluate_at(const LspeResult& result, const FeatureMap& phi,
                   const Policy& pi_e, const Eigen::VectorXd& p0) {
  const Eigen::MatrixXd phi_pi = phi.policy_averaged(pi_e.probs);
  return result.final_theta().dot(phi_pi * p0);
}

double lspe_empirical_loss(const FeatureMap& phi, const OfflineDataset& data,
                           const Policy& pi_e, double gamma,
                           const Eigen::VectorXd& theta_prev,
                           const Eigen::VectorXd& theta) {
  const Eigen::MatrixXd phi_pi = phi.policy_averaged(pi_e.probs);
  const Eigen::VectorXd v_prev = phi_pi.transpose() * theta_prev;
  double loss = 0.0;
  for (const Transition& t : data.tuples) {
    const double resid =
        theta.dot(phi.evaluate(t.s, t.a)) - t.r - gamma * v_prev[t.next_s];
    loss += resid * resid;
  }
  return loss / static_cast<double>(data.tuples.size());
}

void fill_exact_bellman_errors(LspeResult& result, const FiniteMdp& mdp,
                               const Policy& pi_e, const FeatureMap& phi,
                               const StateActionDist& dist) {
  result.exact_bellman_errors.clear();
  for (const Eigen::VectorXd& theta : result.thetas) {
    ValueFunction f;
    f.q = Eigen::MatrixXd(mdp.num_states, mdp.num_actions);
    for (int s = 0; s < mdp.num_states; ++s)
      for (int a = 0; a < mdp.num_actions; ++a)
        f.q(s, a) = theta.dot(phi.evaluate(s, a));
    result.exact_bellman_errors.push_back(
        bellman_error_l2(mdp, pi_e, dist, f));
  }
}

}  // namespace bcrl
