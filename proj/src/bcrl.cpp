#include "bcrl/bcrl.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "bcrl/features.hpp"
#include "bcrl/kernels.hpp"
#include "bcrl/linalg.hpp"
#include "bcrl/rng.hpp"

namespace bcrl {
namespace {

constexpr double kLogdetRidge = 1e-6;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Batches over a tabular space revisit the same pairs constantly, so losses
// are aggregated per distinct (s,a): one network pass per pair instead of
// one per sample, with identical arithmetic up to a fixed summation order.
struct PairGroup {
  int s = 0;
  int a = 0;
  double count = 0.0;          // samples at this pair
  Eigen::VectorXd target_sum;  // sum over samples of gamma * tphi(s', pi_e)
  double target_sq_sum = 0.0;  // sum of squared norms of the same
  double reward = 0.0;
};

// scaled_target is the gamma-scaled policy-averaged target table, d x S.
std::vector<PairGroup> group_batch(std::span<const Transition> batch,
                                   const Eigen::MatrixXd& scaled_target,
                                   int num_actions) {
  std::map<int, PairGroup> groups;
  const int d = static_cast<int>(scaled_target.rows());
  for (const Transition& t : batch) {
    const int sa = t.s * num_actions + t.a;
    auto [it, inserted] = groups.try_emplace(sa);
    PairGroup& g = it->second;
    if (inserted) {
      g.s = t.s;
      g.a = t.a;
      g.target_sum = Eigen::VectorXd::Zero(d);
      g.reward = t.r;
    }
    g.count += 1.0;
    g.target_sum += scaled_target.col(t.next_s);
    g.target_sq_sum += scaled_target.col(t.next_s).squaredNorm();
  }
  std::vector<PairGroup> out;
  out.reserve(groups.size());
  for (auto& [sa, g] : groups) out.push_back(std::move(g));
  return out;
}

struct BcBatchEval {
  double loss = 0.0;
  // Per-group upstream on u = [M; rho^T] phi(s,a), a (d+1)-vector.
  std::vector<Eigen::VectorXd> upstream;
};

// phi_at(gi) must return the feature vector of group gi.
template <typename PhiAt>
BcBatchEval bc_batch_eval(const std::vector<PairGroup>& groups,
                          std::size_t batch_size, const Witness& witness,
                          PhiAt&& phi_at, bool want_upstream) {
  const int d = static_cast<int>(witness.m.rows());
  BcBatchEval out;
  if (want_upstream) out.upstream.resize(groups.size());
  const double inv_b = 1.0 / static_cast<double>(batch_size);
  double loss = 0.0;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const PairGroup& g = groups[gi];
    const Eigen::VectorXd phi = phi_at(gi);
    Eigen::VectorXd u_head(d);
    kernels::matvec(witness.m.data(), d, d, phi.data(), u_head.data());
    const double u_tail = witness.rho.dot(phi);
    // sum_i ||u_head - t_i||^2 = n ||u_head||^2 - 2 u_head . sum_t + sum ||t||^2
    const double reward_resid = u_tail - g.reward;
    loss += g.count * u_head.squaredNorm() - 2.0 * u_head.dot(g.target_sum) +
            g.target_sq_sum + g.count * reward_resid * reward_resid;
    if (want_upstream) {
      Eigen::VectorXd up(d + 1);
      up.head(d) = 2.0 * inv_b * (g.count * u_head - g.target_sum);
      up[d] = 2.0 * inv_b * g.count * reward_resid;
      out.upstream[gi] = std::move(up);
    }
  }
  out.loss = loss * inv_b;
  return out;
}

}  // namespace

bool Witness::feasible(double tol) const {
  return rho.norm() <= rho_bound + tol &&
         spectral_norm(m) <= m_spectral_bound + tol;
}

double Witness::implied_w_radius() const {
  const double m_norm = spectral_norm(m);
  if (m_norm >= 1.0) return kInf;
  return rho.norm() / (1.0 - m_norm);
}

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("TrainConfig: learning rate must be positive");
  }
  if (!(ema_tau > 0.0 && ema_tau <= 1.0)) {
    throw std::invalid_argument("TrainConfig: ema_tau must be in (0, 1]");
  }
  if (design_weight < 0.0) {
    throw std::invalid_argument("TrainConfig: design weight must be >= 0");
  }
  if (batch_size < 1) {
    throw std::invalid_argument("TrainConfig: batch size must be >= 1");
  }
  if (inner_fit_cadence < 0) {
    throw std::invalid_argument("TrainConfig: inner fit cadence must be >= 0");
  }
  if (bc_weight < 0.0) {
    throw std::invalid_argument("TrainConfig: bc weight must be >= 0");
  }
  if (!(rho_bound > 0.0)) {
    throw std::invalid_argument("TrainConfig: rho bound must be positive");
  }
  if (!(m_spectral_bound > 0.0 && m_spectral_bound < 1.0)) {
    throw std::invalid_argument("TrainConfig: m spectral bound must be in (0, 1)");
  }
}

BcLossGrads bc_loss(const TrainableNet& phi_net, const Witness& witness,
                    std::span<const Transition> batch, const Policy& pi_e,
                    const FeatureMap& target_phi, double gamma,
                    bool want_grads) {
  if (batch.empty()) throw std::invalid_argument("bc_loss: empty batch");
  const int d = static_cast<int>(witness.m.rows());
  const int num_states = target_phi.num_states();
  const int num_actions = target_phi.num_actions();
  const Eigen::MatrixXd scaled_target =
      gamma * target_phi.policy_averaged(pi_e.probs);
  const std::vector<PairGroup> groups =
      group_batch(batch, scaled_target, num_actions);

  std::vector<Eigen::VectorXd> inputs(groups.size());
  std::vector<Eigen::VectorXd> phi_vals(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    inputs[gi] =
        onehot_input(num_states, num_actions, groups[gi].s, groups[gi].a);
    phi_vals[gi] = phi_net.forward(inputs[gi]);
  }

  const BcBatchEval eval = bc_batch_eval(
      groups, batch.size(), witness,
      [&](std::size_t gi) { return phi_vals[gi]; }, want_grads);

  BcLossGrads out;
  out.loss = eval.loss;
  if (!want_grads) return out;

  out.d_phi_params = Eigen::VectorXd::Zero(phi_net.param_count());
  out.d_m = Eigen::MatrixXd::Zero(d, d);
  out.d_rho = Eigen::VectorXd::Zero(d);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Eigen::VectorXd up_head = eval.upstream[gi].head(d);
    const double up_tail = eval.upstream[gi][d];
    const Eigen::VectorXd& phi = phi_vals[gi];
    kernels::add_ger(out.d_m.data(), up_head.data(), phi.data(), 1.0,
                     static_cast<std::size_t>(d), static_cast<std::size_t>(d));
    kernels::axpy(up_tail, phi.data(), out.d_rho.data(),
                  static_cast<std::size_t>(d));
    Eigen::VectorXd phi_upstream(d);
    kernels::matvec_t(witness.m.data(), d, d, up_head.data(),
                      phi_upstream.data());
    kernels::axpy(up_tail, witness.rho.data(), phi_upstream.data(),
                  static_cast<std::size_t>(d));
    phi_net.accumulate_param_gradient(inputs[gi], phi_upstream,
                                      out.d_phi_params);
  }
  return out;
}

double bc_loss_value(const FeatureMap& phi, const Witness& witness,
                     std::span<const Transition> batch, const Policy& pi_e,
                     const FeatureMap& target_phi, double gamma) {
  if (batch.empty()) throw std::invalid_argument("bc_loss_value: empty batch");
  const Eigen::MatrixXd scaled_target =
      gamma * target_phi.policy_averaged(pi_e.probs);
  const std::vector<PairGroup> groups =
      group_batch(batch, scaled_target, phi.num_actions());
  return bc_batch_eval(
             groups, batch.size(), witness,
             [&](std::size_t gi) {
               return phi.evaluate(groups[gi].s, groups[gi].a);
             },
             false)
      .loss;
}

double bc_loss_exact(const FeatureMap& phi, const Witness& witness,
                     const FiniteMdp& mdp, const StateActionDist& nu,
                     const Policy& pi_e) {
  const Eigen::MatrixXd next_feature = expected_next_feature(mdp, phi, pi_e);
  const int d = phi.dim();
  double loss = 0.0;
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      const double w = nu.weights(s, a);
      if (w == 0.0) continue;
      const Eigen::VectorXd f = phi.evaluate(s, a);
      Eigen::VectorXd u(d);
      kernels::matvec(witness.m.data(), d, d, f.data(), u.data());
      const double reward_resid = witness.rho.dot(f) - mdp.reward(s, a);
      loss += w * ((u - next_feature.col(mdp.pair_index(s, a))).squaredNorm() +
                   reward_resid * reward_resid);
    }
  }
  return loss;
}

double bc_loss_joint_exact(const FeatureMap& phi, const Witness& witness,
                           const FiniteMdp& mdp, const StateActionDist& nu,
                           const Policy& pi_e, const FeatureMap& target_phi) {
  const Eigen::MatrixXd scaled_target =
      mdp.gamma * target_phi.policy_averaged(pi_e.probs);
  const int d = phi.dim();
  double loss = 0.0;
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      const double w = nu.weights(s, a);
      if (w == 0.0) continue;
      const Eigen::VectorXd f = phi.evaluate(s, a);
      Eigen::VectorXd u(d);
      kernels::matvec(witness.m.data(), d, d, f.data(), u.data());
      const double reward_resid = witness.rho.dot(f) - mdp.reward(s, a);
      const int sa = mdp.pair_index(s, a);
      for (int sp = 0; sp < mdp.num_states; ++sp) {
        const double p = mdp.transition(sa, sp);
        if (p == 0.0) continue;
        loss += w * p * ((u - scaled_target.col(sp)).squaredNorm() +
                         reward_resid * reward_resid);
      }
    }
  }
  return loss;
}

namespace {

Witness witness_from_moments(const Eigen::MatrixXd& gram,
                             const Eigen::MatrixXd& cross,  // E[target phi^T]
                             const Eigen::VectorXd& reward_moment,
                             double rho_bound, double m_spectral_bound,
                             bool constrain) {
  const int d = static_cast<int>(gram.rows());
  GramFactorization factorization(gram);
  Witness w;
  w.m = Eigen::MatrixXd(d, d);
  for (int i = 0; i < d; ++i) {
    w.m.row(i) = factorization.pinv_solve(cross.row(i).transpose()).transpose();
  }
  w.rho = factorization.pinv_solve(reward_moment);
  if (constrain) {
    w.m = clamp_spectral_norm(w.m, m_spectral_bound);
    const double rho_norm = w.rho.norm();
    if (rho_norm > rho_bound) w.rho *= rho_bound / rho_norm;
    w.rho_bound = rho_bound;
    w.m_spectral_bound = m_spectral_bound;
  } else {
    w.rho_bound = w.rho.norm();
    w.m_spectral_bound = spectral_norm(w.m);
  }
  return w;
}

}  // namespace

Witness fit_witness(const FeatureMap& phi, const OfflineDataset& data,
                    const Policy& pi_e, const FeatureMap& target_phi,
                    double gamma, double rho_bound, double m_spectral_bound,
                    bool constrain) {
  if (data.tuples.empty()) throw std::invalid_argument("fit_witness: empty data");
  const int d = phi.dim();
  const Eigen::MatrixXd scaled_target =
      gamma * target_phi.policy_averaged(pi_e.probs);
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd reward_moment = Eigen::VectorXd::Zero(d);
  const double w = 1.0 / static_cast<double>(data.tuples.size());
  for (const Transition& t : data.tuples) {
    const Eigen::VectorXd f = phi.evaluate(t.s, t.a);
    kernels::add_scaled_outer(gram.data(), f.data(), w,
                              static_cast<std::size_t>(d));
    kernels::add_ger(cross.data(), scaled_target.col(t.next_s).data(),
                     f.data(), w, static_cast<std::size_t>(d),
                     static_cast<std::size_t>(d));
    kernels::axpy(w * t.r, f.data(), reward_moment.data(),
                  static_cast<std::size_t>(d));
  }
  return witness_from_moments(gram, cross, reward_moment, rho_bound,
                              m_spectral_bound, constrain);
}

Witness fit_witness_exact(const FeatureMap& phi, const FiniteMdp& mdp,
                          const StateActionDist& nu, const Policy& pi_e,
                          double rho_bound, double m_spectral_bound,
                          bool constrain) {
  const int d = phi.dim();
  const Eigen::MatrixXd next_feature = expected_next_feature(mdp, phi, pi_e);
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd reward_moment = Eigen::VectorXd::Zero(d);
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      const double w = nu.weights(s, a);
      if (w == 0.0) continue;
      const Eigen::VectorXd f = phi.evaluate(s, a);
      kernels::add_scaled_outer(gram.data(), f.data(), w,
                                static_cast<std::size_t>(d));
      kernels::add_ger(cross.data(),
                       next_feature.col(mdp.pair_index(s, a)).data(), f.data(),
                       w, static_cast<std::size_t>(d),
                       static_cast<std::size_t>(d));
      kernels::axpy(w * mdp.reward(s, a), f.data(), reward_moment.data(),
                    static_cast<std::size_t>(d));
    }
  }
  return witness_from_moments(gram, cross, reward_moment, rho_bound,
                              m_spectral_bound, constrain);
}

namespace {

struct GTermEval {
  double value = 0.0;
  std::vector<Eigen::VectorXd> upstream;  // per group, on g(s,a)
};

template <typename GAt>
GTermEval g_term_eval(const std::vector<PairGroup>& groups,
                      std::size_t batch_size, GAt&& g_at, bool want_upstream) {
  GTermEval out;
  if (want_upstream) out.upstream.resize(groups.size());
  const double inv_b = 1.0 / static_cast<double>(batch_size);
  double acc = 0.0;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const PairGroup& g = groups[gi];
    const Eigen::VectorXd gv = g_at(gi);
    acc += g.count * gv.squaredNorm() - 2.0 * gv.dot(g.target_sum) +
           g.target_sq_sum;
    if (want_upstream) {
      out.upstream[gi] = 2.0 * inv_b * (g.count * gv - g.target_sum);
    }
  }
  out.value = acc * inv_b;
  return out;
}

}  // namespace

CorrectedLossGrads double_sampling_corrected_loss(
    const TrainableNet& phi_net, const Witness& witness,
    const TrainableNet& g_net, std::span<const Transition> batch,
    const Policy& pi_e, const FeatureMap& target_phi, double gamma,
    bool want_grads) {
  CorrectedLossGrads out;
  BcLossGrads bc =
      bc_loss(phi_net, witness, batch, pi_e, target_phi, gamma, want_grads);
  out.bc = bc.loss;
  out.d_phi_params = std::move(bc.d_phi_params);
  out.d_m = std::move(bc.d_m);
  out.d_rho = std::move(bc.d_rho);

  const int num_states = target_phi.num_states();
  const int num_actions = target_phi.num_actions();
  const Eigen::MatrixXd scaled_target =
      gamma * target_phi.policy_averaged(pi_e.probs);
  const std::vector<PairGroup> groups =
      group_batch(batch, scaled_target, num_actions);

  std::vector<Eigen::VectorXd> inputs(groups.size());
  std::vector<Eigen::VectorXd> g_vals(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    inputs[gi] =
        onehot_input(num_states, num_actions, groups[gi].s, groups[gi].a);
    g_vals[gi] = g_net.forward(inputs[gi]);
  }
  const GTermEval g_eval = g_term_eval(
      groups, batch.size(), [&](std::size_t gi) { return g_vals[gi]; },
      want_grads);
  out.g_term = g_eval.value;
  out.corrected = out.bc - out.g_term;
  if (want_grads) {
    out.d_g_params = Eigen::VectorXd::Zero(g_net.param_count());
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      g_net.accumulate_param_gradient(inputs[gi], g_eval.upstream[gi],
                                      out.d_g_params);
    }
  }
  return out;
}

double double_sampling_corrected_loss_value(
    const FeatureMap& phi, const Witness& witness,
    const Eigen::MatrixXd& g_table, std::span<const Transition> batch,
    const Policy& pi_e, const FeatureMap& target_phi, double gamma) {
  const double bc =
      bc_loss_value(phi, witness, batch, pi_e, target_phi, gamma);
  const Eigen::MatrixXd scaled_target =
      gamma * target_phi.policy_averaged(pi_e.probs);
  const std::vector<PairGroup> groups =
      group_batch(batch, scaled_target, phi.num_actions());
  const GTermEval g_eval = g_term_eval(
      groups, batch.size(),
      [&](std::size_t gi) {
        return Eigen::VectorXd(
            g_table.col(groups[gi].s * phi.num_actions() + groups[gi].a));
      },
      false);
  return bc - g_eval.value;
}

double double_sampling_corrected_loss_exact(
    const FeatureMap& phi, const Witness& witness,
    const Eigen::MatrixXd& g_table, const FiniteMdp& mdp,
    const StateActionDist& nu, const Policy& pi_e,
    const FeatureMap& target_phi) {
  const double bc =
      bc_loss_joint_exact(phi, witness, mdp, nu, pi_e, target_phi);
  const Eigen::MatrixXd scaled_target =
      mdp.gamma * target_phi.policy_averaged(pi_e.probs);
  double g_term = 0.0;
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      const double w = nu.weights(s, a);
      if (w == 0.0) continue;
      const int sa = mdp.pair_index(s, a);
      for (int sp = 0; sp < mdp.num_states; ++sp) {
        const double p = mdp.transition(sa, sp);
        if (p == 0.0) continue;
        g_term +=
            w * p * (g_table.col(sa) - scaled_target.col(sp)).squaredNorm();
      }
    }
  }
  return bc - g_term;
}

PenaltyGrads design_penalty(const TrainableNet& phi_net,
                            std::span<const Transition> batch, int num_states,
                            int num_actions, DesignKind kind, bool want_grads) {
  if (batch.empty()) throw std::invalid_argument("design_penalty: empty batch");
  const int d = phi_net.config().output_dim;

  std::map<int, double> counts;
  for (const Transition& t : batch) counts[t.s * num_actions + t.a] += 1.0;

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<Eigen::VectorXd> inputs;
  std::vector<Eigen::VectorXd> phis;
  std::vector<double> weights;
  inputs.reserve(counts.size());
  phis.reserve(counts.size());
  weights.reserve(counts.size());
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(d, d);
  for (const auto& [sa, count] : counts) {
    inputs.push_back(onehot_input(num_states, num_actions, sa / num_actions,
                                  sa % num_actions));
    phis.push_back(phi_net.forward(inputs.back()));
    weights.push_back(count * inv_b);
    kernels::add_scaled_outer(sigma.data(), phis.back().data(), weights.back(),
                              static_cast<std::size_t>(d));
  }

  PenaltyGrads out;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sigma);
  const Eigen::VectorXd evs = solver.eigenvalues();  // ascending
  out.lambda_min = std::max(evs[0], 0.0);
  out.logdet =
      (evs.array() > 0.0).all() ? evs.array().log().sum() : -kInf;

  if (kind == DesignKind::none) return out;

  if (kind == DesignKind::logdet) {
    Eigen::MatrixXd ridged = sigma;
    ridged.diagonal().array() += kLogdetRidge;
    Eigen::LLT<Eigen::MatrixXd> llt(ridged);
    out.value =
        -2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    if (want_grads) {
      const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(d, d));
      out.d_phi_params = Eigen::VectorXd::Zero(phi_net.param_count());
      for (std::size_t i = 0; i < phis.size(); ++i) {
        const Eigen::VectorXd upstream = -2.0 * weights[i] * (inv * phis[i]);
        phi_net.accumulate_param_gradient(inputs[i], upstream,
                                          out.d_phi_params);
      }
    }
    return out;
  }

  out.value = -out.lambda_min;
  if (want_grads) {
    const Eigen::VectorXd v = solver.eigenvectors().col(0);
    out.d_phi_params = Eigen::VectorXd::Zero(phi_net.param_count());
    for (std::size_t i = 0; i < phis.size(); ++i) {
      const Eigen::VectorXd upstream = -2.0 * weights[i] * v.dot(phis[i]) * v;
      phi_net.accumulate_param_gradient(inputs[i], upstream, out.d_phi_params);
    }
  }
  return out;
}

TrainResult train(TrainableNet phi_net, const TrainConfig& config,
                  const OfflineDataset& data, const Policy& pi_e,
                  double gamma) {
  config.validate();
  if (data.tuples.size() < 2 * static_cast<std::size_t>(config.batch_size)) {
    throw std::invalid_argument("train: need at least 2 * batch_size samples");
  }
  const int num_states = data.num_states;
  const int num_actions = data.num_actions;
  const int d = phi_net.config().output_dim;

  // g shares the phi architecture with a gamma-bounded head.
  NetConfig g_cfg = phi_net.config();
  g_cfg.head = HeadKind::bounded;
  g_cfg.head_bound = gamma;
  SplitMix64 root(config.seed);
  TrainableNet g_net(g_cfg, root.split(0x67).next_u64());

  TrainableNet target_net = phi_net;  // EMA copy starts at the online params
  const double tau = config.use_target_net ? config.ema_tau : 1.0;

  Witness witness;
  witness.m = Eigen::MatrixXd::Zero(d, d);
  witness.rho = Eigen::VectorXd::Zero(d);
  witness.rho_bound = config.rho_bound;
  witness.m_spectral_bound = config.m_spectral_bound;

  // Per-epoch shuffle, consecutive chunks, remainder dropped so every step
  // sees exactly batch_size samples.
  SplitMix64 batch_rng = root.split(0x626174);
  std::vector<std::size_t> order(data.tuples.size());
  const std::size_t batches_per_epoch = data.tuples.size() / config.batch_size;
  std::size_t batch_cursor = batches_per_epoch;  // forces the initial shuffle

  std::vector<Transition> batch(config.batch_size);
  std::vector<TrainStepRow> trace;
  trace.reserve(config.steps);

  for (int step = 0; step < config.steps; ++step) {
    if (batch_cursor >= batches_per_epoch) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      shuffle(order, batch_rng);
      batch_cursor = 0;
    }
    const std::size_t offset = batch_cursor * config.batch_size;
    for (int i = 0; i < config.batch_size; ++i) {
      batch[i] = data.tuples[order[offset + i]];
    }
    ++batch_cursor;

    const FeatureMap target_snapshot =
        snapshot_features(target_net, num_states, num_actions);

    TrainStepRow row;
    row.step = step;

    // Witness update first, against the current phi and target.
    const bool refit = config.inner_fit_cadence > 0 &&
                       step % config.inner_fit_cadence == 0;
    if (refit) {
      const FeatureMap phi_snapshot =
          snapshot_features(phi_net, num_states, num_actions);
      witness = fit_witness(phi_snapshot, data, pi_e, target_snapshot, gamma,
                            config.rho_bound, config.m_spectral_bound,
                            config.constrain_witness);
      row.refit = 1;
    } else {
      BcLossGrads grads = bc_loss(phi_net, witness, batch, pi_e,
                                  target_snapshot, gamma, true);
      witness.m -= config.learning_rate * grads.d_m;
      witness.rho -= config.learning_rate * grads.d_rho;
      if (config.constrain_witness) {
        witness.m = clamp_spectral_norm(witness.m, config.m_spectral_bound);
        const double rho_norm = witness.rho.norm();
        if (rho_norm > config.rho_bound) {
          witness.rho *= config.rho_bound / rho_norm;
        }
      }
    }

    // g step (stochastic regime) and the phi step, both against the updated
    // witness.
    Eigen::VectorXd phi_grad;
    if (config.regime == Regime::stochastic) {
      CorrectedLossGrads grads = double_sampling_corrected_loss(
          phi_net, witness, g_net, batch, pi_e, target_snapshot, gamma, true);
      g_net.params() -= config.learning_rate * grads.d_g_params;
      row.bc_loss = grads.bc;
      row.correction = grads.g_term;
      phi_grad = std::move(grads.d_phi_params);
    } else {
      BcLossGrads grads = bc_loss(phi_net, witness, batch, pi_e,
                                  target_snapshot, gamma, true);
      row.bc_loss = grads.loss;
      phi_grad = std::move(grads.d_phi_params);
    }

    const bool want_penalty_grads =
        config.design != DesignKind::none && config.design_weight > 0.0;
    PenaltyGrads penalty =
        design_penalty(phi_net, batch, num_states, num_actions, config.design,
                       want_penalty_grads);
    row.penalty = penalty.value;
    row.lambda_min = penalty.lambda_min;
    row.logdet = penalty.logdet;

    Eigen::VectorXd total_grad = config.bc_weight * phi_grad;
    if (want_penalty_grads) {
      total_grad += config.design_weight * penalty.d_phi_params;
    }
    if (!total_grad.allFinite() || !std::isfinite(row.bc_loss) ||
        !std::isfinite(row.penalty)) {
      trace.push_back(row);
      throw TrainAbortError(
          "train: non-finite loss or gradient at step " + std::to_string(step),
          std::move(trace));
    }
    phi_net.params() -= config.learning_rate * total_grad;

    target_net.params() =
        tau * phi_net.params() + (1.0 - tau) * target_net.params();

    trace.push_back(row);
  }

  FeatureMap phi_final = snapshot_features(phi_net, num_states, num_actions);
  return TrainResult{std::move(phi_final), std::move(phi_net),
                     std::move(g_net), std::move(witness), std::move(trace)};
}

void write_trace_csv(const std::vector<TrainStepRow>& trace,
                     const std::string& method,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("write_trace_csv: cannot open " + path.string());
  }
  out << "method,step,bc_loss,correction,penalty,lambda_min,logdet,refit\n";
  char buf[512];
  for (const TrainStepRow& row : trace) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n",
                  method.c_str(), row.step, row.bc_loss, row.correction,
                  row.penalty, row.lambda_min, row.logdet, row.refit);
    out << buf;
  }
}

}  // namespace bcrl
