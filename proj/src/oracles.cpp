#include "bcrl/oracles.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "bcrl/features.hpp"
#include "bcrl/linalg.hpp"

namespace bcrl {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// P^pi as an S x S state chain: P^pi(s, s') = sum_a pi(a|s) P(s'|s,a).
Eigen::MatrixXd state_chain(const FiniteMdp& mdp, const Policy& pi) {
  Eigen::MatrixXd chain = Eigen::MatrixXd::Zero(mdp.num_states, mdp.num_states);
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      const double p = pi.probs(s, a);
      if (p != 0.0) chain.row(s) += p * mdp.transition.row(mdp.pair_index(s, a));
    }
  }
  return chain;
}

// Normal quantile, Acklam's rational approximation (~1e-9 absolute, which is
// far below what probe placement needs).
double normal_quantile(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - plow) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

ValueFunction exact_value(const FiniteMdp& mdp, const Policy& pi) {
  const Eigen::MatrixXd chain = state_chain(mdp, pi);
  const Eigen::VectorXd r_pi =
      (mdp.reward.array() * pi.probs.array()).rowwise().sum();
  const Eigen::MatrixXd system =
      Eigen::MatrixXd::Identity(mdp.num_states, mdp.num_states) -
      mdp.gamma * chain;
  const Eigen::VectorXd v = system.partialPivLu().solve(r_pi);

  ValueFunction out;
  out.q = Eigen::MatrixXd(mdp.num_states, mdp.num_actions);
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      out.q(s, a) = mdp.reward(s, a) +
                    mdp.gamma * mdp.transition.row(mdp.pair_index(s, a)).dot(v);
    }
  }
  return out;
}

ValueFunction apply_bellman(const FiniteMdp& mdp, const Policy& pi,
                            const ValueFunction& f) {
  if (f.q.rows() != mdp.num_states || f.q.cols() != mdp.num_actions) {
    throw std::invalid_argument("apply_bellman: shape mismatch");
  }
  const Eigen::VectorXd f_pi = f.v_under(pi);
  ValueFunction out;
  out.q = Eigen::MatrixXd(mdp.num_states, mdp.num_actions);
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      out.q(s, a) =
          mdp.reward(s, a) +
          mdp.gamma * mdp.transition.row(mdp.pair_index(s, a)).dot(f_pi);
    }
  }
  return out;
}

StateActionDist occupancy(const FiniteMdp& mdp, const Policy& pi,
                          const Eigen::VectorXd& p0) {
  if (p0.size() != mdp.num_states) {
    throw std::invalid_argument("occupancy: p0 size mismatch");
  }
  const Eigen::MatrixXd chain = state_chain(mdp, pi);
  // d_S = (1-gamma) (I - gamma P^pi^T)^-1 p0
  const Eigen::MatrixXd system =
      Eigen::MatrixXd::Identity(mdp.num_states, mdp.num_states) -
      mdp.gamma * chain.transpose();
  const Eigen::VectorXd d_state =
      (1.0 - mdp.gamma) * system.partialPivLu().solve(p0);
  return StateActionDist::from_policy(d_state, pi);
}

double expected_value(const ValueFunction& f, const Policy& pi,
                      const Eigen::VectorXd& p0) {
  return p0.dot(f.v_under(pi));
}

double l2_norm(const Eigen::MatrixXd& f_sa, const StateActionDist& dist) {
  return std::sqrt((dist.weights.array() * f_sa.array().square()).sum());
}

double bellman_error_l2(const FiniteMdp& mdp, const Policy& pi,
                        const StateActionDist& dist, const ValueFunction& f) {
  const ValueFunction backed = apply_bellman(mdp, pi, f);
  return l2_norm(f.q - backed.q, dist);
}

std::vector<Eigen::VectorXd> probe_directions(int dim, double radius,
                                              int n_probes) {
  std::vector<Eigen::VectorXd> probes;
  probes.reserve(2 * dim + n_probes);
  for (int i = 0; i < dim; ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(dim);
    e[i] = radius;
    probes.push_back(e);
    probes.push_back(-e);
  }
  // Kronecker sequence with the generalized golden ratio, one point per n.
  double g = 1.5;
  for (int iter = 0; iter < 64; ++iter) {
    g = std::pow(1.0 + g, 1.0 / (dim + 1));
  }
  Eigen::VectorXd alpha(dim);
  double power = g;
  for (int j = 0; j < dim; ++j) {
    alpha[j] = 1.0 / power - std::floor(1.0 / power);
    power *= g;
  }
  for (int n = 1; n <= n_probes; ++n) {
    Eigen::VectorXd u(dim);
    for (int j = 0; j < dim; ++j) {
      const double x = 0.5 + n * alpha[j];
      double frac = x - std::floor(x);
      // Keep quantile arguments strictly inside (0, 1).
      frac = std::min(std::max(frac, 1e-12), 1.0 - 1e-12);
      u[j] = normal_quantile(frac);
    }
    const double norm = u.norm();
    if (norm > 0.0) {
      probes.push_back(radius / norm * u);
    } else {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(dim);
      e[0] = radius;
      probes.push_back(e);
    }
  }
  return probes;
}

namespace {

// Shared inner machinery: weighted Gram and residual of the best
// ball-constrained linear fit of a target function under nu.
struct WeightedDesign {
  const FeatureMap& phi;
  Eigen::VectorXd nu_flat;
  GramFactorization gram;

  WeightedDesign(const FeatureMap& phi_in, const StateActionDist& nu)
      : phi(phi_in),
        nu_flat(nu.flat()),
        gram(weighted_gram(phi_in, nu)) {}

  static Eigen::MatrixXd weighted_gram(const FeatureMap& phi,
                                       const StateActionDist& nu) {
    return covariance_matrix(phi, nu);
  }

  // min_{||w|| <= radius} ||w^T phi - target||_nu, target indexed by pair.
  double best_fit_residual(const Eigen::VectorXd& target, double radius) const {
    Eigen::VectorXd moment = Eigen::VectorXd::Zero(phi.dim());
    for (int s = 0; s < phi.num_states(); ++s) {
      for (int a = 0; a < phi.num_actions(); ++a) {
        const int sa = phi.pair_index(s, a);
        const double w = nu_flat[sa];
        if (w != 0.0) moment += w * target[sa] * phi.evaluate(s, a);
      }
    }
    const BallLsqSolution sol = ball_constrained_lsq(gram, moment, radius);
    double acc = 0.0;
    for (int s = 0; s < phi.num_states(); ++s) {
      for (int a = 0; a < phi.num_actions(); ++a) {
        const int sa = phi.pair_index(s, a);
        const double w = nu_flat[sa];
        if (w != 0.0) {
          const double resid = sol.x.dot(phi.evaluate(s, a)) - target[sa];
          acc += w * resid * resid;
        }
      }
    }
    return std::max(acc, 0.0);
  }
};

// Bellman backup of the linear function w1^T phi, flattened by pair index.
Eigen::VectorXd backup_target(const FiniteMdp& mdp,
                              const Eigen::MatrixXd& next_feature,
                              const Eigen::VectorXd& w1) {
  Eigen::VectorXd target(mdp.num_pairs());
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      const int sa = mdp.pair_index(s, a);
      target[sa] = mdp.reward(s, a) + w1.dot(next_feature.col(sa));
    }
  }
  return target;
}

}  // namespace

double exact_lbc_error(const FiniteMdp& mdp, const StateActionDist& nu,
                       const FeatureMap& phi, const Policy& pi_e,
                       double w_radius, int n_probes, bool* degenerate) {
  if (!(w_radius > 0.0)) {
    throw std::invalid_argument("exact_lbc_error: w_radius must be positive");
  }
  const Eigen::MatrixXd next_feature = expected_next_feature(mdp, phi, pi_e);
  WeightedDesign design(phi, nu);
  if (degenerate != nullptr) *degenerate = design.gram.rank_deficient();

  double worst_sq = 0.0;
  for (const Eigen::VectorXd& w1 : probe_directions(phi.dim(), w_radius, n_probes)) {
    const Eigen::VectorXd target = backup_target(mdp, next_feature, w1);
    worst_sq = std::max(worst_sq, design.best_fit_residual(target, w_radius));
  }
  return std::sqrt(worst_sq);
}

double inherent_bellman_error(const FiniteMdp& mdp, const StateActionDist& nu,
                              const std::vector<FeatureMap>& feature_class,
                              const Policy& pi_e, double w_radius,
                              int n_probes) {
  if (feature_class.empty()) {
    throw std::invalid_argument("inherent_bellman_error: empty feature class");
  }
  std::vector<WeightedDesign> designs;
  std::vector<Eigen::MatrixXd> next_features;
  designs.reserve(feature_class.size());
  for (const FeatureMap& phi : feature_class) {
    designs.emplace_back(phi, nu);
    next_features.push_back(expected_next_feature(mdp, phi, pi_e));
  }

  double worst = 0.0;
  for (std::size_t j = 0; j < feature_class.size(); ++j) {
    for (const Eigen::VectorXd& w1 :
         probe_directions(feature_class[j].dim(), w_radius, n_probes)) {
      const Eigen::VectorXd target = backup_target(mdp, next_features[j], w1);
      double best = kInf;
      for (const WeightedDesign& design : designs) {
        best = std::min(best, design.best_fit_residual(target, w_radius));
      }
      worst = std::max(worst, best);
    }
  }
  return worst;
}

double relative_condition_number(const StateActionDist& nu, const Policy& pi_e,
                                 const Eigen::VectorXd& p0,
                                 const FeatureMap& phi, const FiniteMdp& mdp) {
  const StateActionDist occ = occupancy(mdp, pi_e, p0);
  const Eigen::MatrixXd numerator = covariance_matrix(phi, occ);
  const Eigen::MatrixXd denominator = covariance_matrix(phi, nu);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(denominator);
  const Eigen::VectorXd evs = solver.eigenvalues();
  const Eigen::MatrixXd vecs = solver.eigenvectors();
  const double cutoff = kPinvTol * std::max(evs.maxCoeff(), 0.0);

  std::vector<int> range_idx;
  for (Eigen::Index i = 0; i < evs.size(); ++i) {
    if (evs[i] > cutoff) range_idx.push_back(static_cast<int>(i));
  }
  if (range_idx.empty()) return kInf;

  const Eigen::MatrixXd projected = vecs.transpose() * numerator * vecs;
  // Any occupancy mass in the null space of Sigma makes the ratio diverge.
  const double num_scale = std::max(projected.cwiseAbs().maxCoeff(), 1.0);
  for (Eigen::Index i = 0; i < evs.size(); ++i) {
    if (evs[i] <= cutoff && projected(i, i) > 1e-10 * num_scale) {
      return kInf;
    }
  }

  const int r = static_cast<int>(range_idx.size());
  Eigen::MatrixXd reduced(r, r);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < r; ++j) {
      reduced(i, j) = projected(range_idx[i], range_idx[j]) /
                      std::sqrt(evs[range_idx[i]] * evs[range_idx[j]]);
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> reduced_solver(reduced);
  return std::max(reduced_solver.eigenvalues().maxCoeff(), 0.0);
}

double pdl_residual(const FiniteMdp& mdp, const Policy& pi,
                    const Policy& pi_prime, const Eigen::VectorXd& p0,
                    const ValueFunction& f) {
  const ValueFunction q_pi = exact_value(mdp, pi);
  const double lhs =
      expected_value(q_pi, pi, p0) - p0.dot(f.v_under(pi_prime));

  const StateActionDist occ = occupancy(mdp, pi, p0);
  const ValueFunction backed = apply_bellman(mdp, pi_prime, f);
  const Eigen::VectorXd f_prime = f.v_under(pi_prime);
  double rhs = 0.0;
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      rhs += occ.weights(s, a) * (backed.q(s, a) - f_prime[s]);
    }
  }
  rhs /= 1.0 - mdp.gamma;
  return std::abs(lhs - rhs);
}

Eigen::VectorXd state_marginal_at(const FiniteMdp& mdp, const Policy& pi,
                                  const Eigen::VectorXd& p0, int h) {
  Eigen::VectorXd d = p0;
  const Eigen::MatrixXd chain_t = state_chain(mdp, pi).transpose();
  for (int step = 0; step < h; ++step) d = chain_t * d;
  return d;
}

}  // namespace bcrl
