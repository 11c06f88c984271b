#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "bcrl/baselines.hpp"
#include "bcrl/bcrl.hpp"
#include "bcrl/mdp.hpp"
#include "bcrl/metrics.hpp"

namespace bcrl {

// Validation failures carry every violation found, not just the first.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  std::vector<std::string> problems;
};

struct MdpSpec {
  std::string kind = "random_tabular";  // or "low_rank"
  int num_states = 6;
  int num_actions = 2;
  int feature_dim = 4;  // low_rank only
  double gamma = 0.9;
  std::uint64_t seed = 1;
  bool stochastic = true;
};

struct PolicySpec {
  std::string kind = "uniform";  // "uniform" | "softmax" | "random"
  double temperature = 1.0;      // softmax
  std::uint64_t seed = 0;        // random
};

struct NuSpec {
  std::string kind = "uniform";  // "uniform" | "occupancy" | "mixture_onpolicy"
  PolicySpec behavior;           // occupancy
  double weight = 0.5;           // mixture_onpolicy
  std::string base_kind = "uniform";  // mixture base: "uniform" | "occupancy"
  PolicySpec base_behavior;
};

struct FeatureSpec {
  std::string kind = "one_hot";  // one_hot | low_rank_truth | random_fixed | trainable
  int dim = 8;
  std::uint64_t seed = 0;  // random_fixed
  int hidden_width = 64;   // trainable
  int num_hidden = 2;      // trainable
};

struct LspeSpec {
  int k_iters = 50;
  double w_radius = 0.0;  // 0 picks sqrt(S*A)/(1-gamma)
};

struct FqeSpec {
  bool enabled = false;
  int k_iters = 20;
  int inner_steps = 60;
  double learning_rate = 0.05;
  int batch_size = 256;
  double w_radius = 0.0;  // 0 picks 1/(1-gamma)
};

struct ExperimentConfig {
  MdpSpec mdp;
  PolicySpec target_policy;
  NuSpec nu;
  std::size_t dataset_n = 2000;  // per split; 2n sampled then halved
  FeatureSpec feature;
  TrainConfig train;
  LspeSpec lspe;
  FqeSpec fqe;
  std::vector<int> slices = {0, 1, 2, 4, 8, 16};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

  // Canonical serialized form; hashing and reproducibility key off it.
  std::string canonical_json() const;
  std::string hash() const;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Problem instances derived from a config, shared across run seeds.
struct ProblemInstance {
  FiniteMdp mdp;
  Policy pi_e;
  StateActionDist nu;
  double exact_value = 0.0;
  // Ground-truth feature of a low-rank instance, when one exists.
  std::unique_ptr<FeatureMap> phi_star;
};

ProblemInstance build_problem(const ExperimentConfig& config);
Policy build_policy(const PolicySpec& spec, const FiniteMdp& mdp);

struct RunOutcome {
  std::filesystem::path run_dir;
  std::vector<EvalReport> reports;
  std::vector<SummaryRow> summary;
};

// End-to-end pipeline: build problem, sample 2N, split, train (trainable
// features only) on the first half, LSPE on the second, oracle scoring,
// artifact files under <out>/<config-hash>/. Numeric outputs are a pure
// function of the config; wall-clock only appears in manifest.txt. Aborted
// runs leave partial outputs under <out>/<config-hash>/quarantine/.
RunOutcome run_experiment(const ExperimentConfig& config,
                          const std::filesystem::path& out_root);

struct SweepRow {
  std::string axis;
  double value = 0.0;
  std::string method;
  std::string config_hash;
  double rmse = 0.0;
  double median_abs_error = 0.0;
};

// axis is one of N | K | lambda | seed. Duplicate values are rejected.
std::vector<SweepRow> run_sweep(const ExperimentConfig& base,
                                const std::string& axis,
                                const std::vector<double>& values,
                                const std::filesystem::path& out_root,
                                int jobs = 1);

// Rewrites per-run artifacts into plot-ready tables
// (ope_vs_iteration.csv, spectra.csv, error_vs_slice.csv).
void emit_plotdata(const std::filesystem::path& results_root,
                   const std::filesystem::path& out_dir);

struct CertifyOutcome {
  double bc_loss = 0.0;
  double rho_norm = 0.0;
  double m_norm = 0.0;
  double implied_w = 0.0;
  double lbc_error = 0.0;
  double lambda_min = 0.0;
  bool witness_admissible = false;  // ||M|| < 1
};

// Loads a feature checkpoint and runs the exact witness + completeness
// check against the config's problem instance.
CertifyOutcome certify_checkpoint(const ExperimentConfig& config,
                                  const std::filesystem::path& checkpoint,
                                  const std::filesystem::path& report_path);

// Exit codes shared with the CLI: 0 ok, 2 validation, 3 numeric abort.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumeric = 3;

}  // namespace bcrl
