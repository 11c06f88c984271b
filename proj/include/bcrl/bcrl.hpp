#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bcrl/feature_map.hpp"
#include "bcrl/mdp.hpp"
#include "bcrl/net.hpp"

namespace bcrl {

// Linear certificate (rho, M) tying phi(s,a) to the reward and the expected
// next feature: [M; rho^T] phi(s,a) should reproduce
// [gamma E phi(s', pi_e); r(s,a)].
struct Witness {
  Eigen::VectorXd rho;
  Eigen::MatrixXd m;
  double rho_bound = 0.0;
  double m_spectral_bound = 0.0;

  bool feasible(double tol = 1e-9) const;
  // W >= ||rho|| / (1 - ||M||_2); +infinity when ||M||_2 >= 1.
  double implied_w_radius() const;
};

enum class DesignKind { none, logdet, min_eig };
enum class Regime { deterministic, stochastic };

struct TrainConfig {
  int steps = 2000;
  double learning_rate = 0.05;
  double ema_tau = 0.01;          // target update: ema = tau*phi + (1-tau)*ema
  double design_weight = 0.0;     // lambda
  DesignKind design = DesignKind::logdet;
  Regime regime = Regime::stochastic;
  int batch_size = 256;
  std::uint64_t seed = 0;
  int inner_fit_cadence = 25;     // closed-form witness refit period; 0 = off
  bool constrain_witness = false; // project (rho, M) onto their bounds
  bool use_target_net = true;     // off behaves like ema_tau = 1
  double bc_weight = 1.0;         // zeroed by the design-only ablation
  double rho_bound = 10.0;
  double m_spectral_bound = 0.99;

  void validate() const;
};

struct BcLossGrads {
  double loss = 0.0;
  Eigen::VectorXd d_phi_params;  // empty unless gradients were requested
  Eigen::MatrixXd d_m;
  Eigen::VectorXd d_rho;
};

// Mean over the batch of || [M; rho^T] phi(s,a) - [gamma tphi(s',pi_e); r] ||^2
// with tphi the detached target features. Gradients flow to the network
// parameters only through phi(s,a) and to the witness.
BcLossGrads bc_loss(const TrainableNet& phi_net, const Witness& witness,
                    std::span<const Transition> batch, const Policy& pi_e,
                    const FeatureMap& target_phi, double gamma,
                    bool want_grads);

// Value-only evaluation for a frozen feature table.
double bc_loss_value(const FeatureMap& phi, const Witness& witness,
                     std::span<const Transition> batch, const Policy& pi_e,
                     const FeatureMap& target_phi, double gamma);

// Ideal objective: expectation under nu with the conditional expectation
// inside the norm, both computed exactly from the kernel.
double bc_loss_exact(const FeatureMap& phi, const Witness& witness,
                     const FiniteMdp& mdp, const StateActionDist& nu,
                     const Policy& pi_e);
// Joint-expectation variant: the sampled-successor loss enumerated exactly,
// E_{nu, P} || [M; rho^T] phi(s,a) - [gamma tphi(s',pi_e); r] ||^2.
double bc_loss_joint_exact(const FeatureMap& phi, const Witness& witness,
                           const FiniteMdp& mdp, const StateActionDist& nu,
                           const Policy& pi_e, const FeatureMap& target_phi);

// Row-wise least squares for (M, rho) against (next-feature, reward)
// targets, then projection onto the witness bounds when constrained:
// singular values of M clamped to m_spectral_bound, rho rescaled onto its
// ball. Unconstrained fits record the achieved norms as their bounds.
Witness fit_witness(const FeatureMap& phi, const OfflineDataset& data,
                    const Policy& pi_e, const FeatureMap& target_phi,
                    double gamma, double rho_bound, double m_spectral_bound,
                    bool constrain);
Witness fit_witness_exact(const FeatureMap& phi, const FiniteMdp& mdp,
                          const StateActionDist& nu, const Policy& pi_e,
                          double rho_bound, double m_spectral_bound,
                          bool constrain);

struct CorrectedLossGrads {
  double corrected = 0.0;  // bc - g_term
  double bc = 0.0;
  double g_term = 0.0;
  Eigen::VectorXd d_phi_params;
  Eigen::MatrixXd d_m;
  Eigen::VectorXd d_rho;
  Eigen::VectorXd d_g_params;  // gradient of g_term for the g regression
};

// Variance-corrected loss: bc_loss minus the best-fit residual of
// g(s,a) against gamma tphi(s',pi_e) over the batch.
CorrectedLossGrads double_sampling_corrected_loss(
    const TrainableNet& phi_net, const Witness& witness,
    const TrainableNet& g_net, std::span<const Transition> batch,
    const Policy& pi_e, const FeatureMap& target_phi, double gamma,
    bool want_grads);

// Table-backed g, for exact analyses. g_table is d x (S*A).
double double_sampling_corrected_loss_value(
    const FeatureMap& phi, const Witness& witness,
    const Eigen::MatrixXd& g_table, std::span<const Transition> batch,
    const Policy& pi_e, const FeatureMap& target_phi, double gamma);
// Fully enumerated variant under (nu, P).
double double_sampling_corrected_loss_exact(
    const FeatureMap& phi, const Witness& witness,
    const Eigen::MatrixXd& g_table, const FiniteMdp& mdp,
    const StateActionDist& nu, const Policy& pi_e,
    const FeatureMap& target_phi);

struct PenaltyGrads {
  double value = 0.0;        // the term added to the minimized objective
  double lambda_min = 0.0;   // of the unridged batch covariance
  double logdet = 0.0;       // of the unridged batch covariance (may be -inf)
  Eigen::VectorXd d_phi_params;
};

// Coverage penalties on the batch feature covariance:
//   logdet:  -log det(Sigma_batch + eps I), eps = 1e-6
//   min_eig: -lambda_min(Sigma_batch)
// The min-eig gradient uses the deterministic solver's eigenvector and is a
// subgradient at eigenvalue crossings. kind == none evaluates the
// diagnostics only.
PenaltyGrads design_penalty(const TrainableNet& phi_net,
                            std::span<const Transition> batch, int num_states,
                            int num_actions, DesignKind kind, bool want_grads);

struct TrainStepRow {
  int step = 0;
  double bc_loss = 0.0;
  double correction = 0.0;
  double penalty = 0.0;
  double lambda_min = 0.0;
  double logdet = 0.0;
  int refit = 0;
};

struct TrainResult {
  FeatureMap phi;       // frozen snapshot of the trained network
  TrainableNet net;     // final online network
  TrainableNet g_net;
  Witness witness;
  std::vector<TrainStepRow> trace;
};

// Aborted training still reports how far it got.
class TrainAbortError : public std::runtime_error {
 public:
  TrainAbortError(const std::string& what, std::vector<TrainStepRow> trace)
      : std::runtime_error(what), trace(std::move(trace)) {}
  std::vector<TrainStepRow> trace;
};

// Alternating loop: witness step, g step (stochastic regime), phi step
// against the detached EMA target, then the EMA update. Batches are drawn
// without replacement per epoch, reshuffled per epoch from the config seed;
// the whole run is a pure function of (net, config, data, pi_e, gamma).
TrainResult train(TrainableNet phi_net, const TrainConfig& config,
                  const OfflineDataset& data, const Policy& pi_e,
                  double gamma);

void write_trace_csv(const std::vector<TrainStepRow>& trace,
                     const std::string& method,
                     const std::filesystem::path& path);

}  // namespace bcrl
