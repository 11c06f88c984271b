#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bcrl/mdp.hpp"

namespace bcrl {

// Per-run evaluation record.
struct EvalReport {
  std::string method;
  std::string config_hash;
  std::uint64_t seed = 0;
  double ope_estimate = 0.0;
  double exact_value = 0.0;
  double abs_error = 0.0;
  std::vector<double> per_seed_errors;
  double rmse = 0.0;
  std::optional<double> spearman;
  std::vector<std::pair<int, double>> beyond_d0;  // (timestep slice, abs error)
  double cov_lambda_min = 0.0;
  double cov_logdet = 0.0;
  double cov_condition = 0.0;
};

// Pearson correlation of the two rank vectors, ties broken by average rank.
// Throws on length mismatch or fewer than two points; a constant input has
// no defined correlation and yields nullopt.
std::optional<double> spearman_rank_correlation(std::span<const double> estimates,
                                                std::span<const double> truths);

// Average ranks (1-based) with ties averaged.
std::vector<double> average_ranks(std::span<const double> values);

// |E_{p0_h} est_v - E_{p0_h} V^pi| where p0_h is the exact state marginal of
// pi_e at timestep h from d0, for each requested slice.
std::vector<std::pair<int, double>> beyond_d0_profile(
    const Eigen::VectorXd& est_state_values, const FiniteMdp& mdp,
    const Policy& pi_e, std::span<const int> slices);

struct SummaryRow {
  std::string method;
  std::string config_hash;
  int count = 0;
  double rmse = 0.0;
  double median_abs_error = 0.0;
  double iqr_low = 0.0;
  double iqr_high = 0.0;
};

// Deterministic per-method aggregation. All reports must share one config
// hash; mixing configs in one aggregation is an error, as is an empty list.
std::vector<SummaryRow> aggregate(const std::vector<EvalReport>& reports);

double median_of(std::vector<double> values);

}  // namespace bcrl
