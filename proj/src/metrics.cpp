#include "bcrl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "bcrl/oracles.hpp"

namespace bcrl {

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman_rank_correlation(
    std::span<const double> estimates, std::span<const double> truths) {
  if (estimates.size() != truths.size()) {
    throw std::invalid_argument("spearman: length mismatch");
  }
  if (estimates.size() < 2) {
    throw std::invalid_argument("spearman: need at least two points");
  }
  const std::vector<double> ra = average_ranks(estimates);
  const std::vector<double> rb = average_ranks(truths);
  const double n = static_cast<double>(ra.size());
  const double mean = (n + 1.0) / 2.0;
  double cov = 0.0, var_a = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double da = ra[i] - mean;
    const double db = rb[i] - mean;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  if (var_a == 0.0 || var_b == 0.0) return std::nullopt;
  return cov / std::sqrt(var_a * var_b);
}

std::vector<std::pair<int, double>> beyond_d0_profile(
    const Eigen::VectorXd& est_state_values, const FiniteMdp& mdp,
    const Policy& pi_e, std::span<const int> slices) {
  const ValueFunction q = exact_value(mdp, pi_e);
  const Eigen::VectorXd v_exact = q.v_under(pi_e);
  std::vector<std::pair<int, double>> out;
  out.reserve(slices.size());
  for (int h : slices) {
    if (h < 0) throw std::invalid_argument("beyond_d0_profile: negative slice");
    const Eigen::VectorXd p0_h =
        state_marginal_at(mdp, pi_e, mdp.initial_dist, h);
    out.emplace_back(h, std::abs(p0_h.dot(est_state_values) -
                                 p0_h.dot(v_exact)));
  }
  return out;
}

double median_of(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median_of: empty");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

double quantile_of(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

}  // namespace

std::vector<SummaryRow> aggregate(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate: empty report list");
  const std::string& hash = reports.front().config_hash;
  for (const EvalReport& r : reports) {
    if (r.config_hash != hash) {
      throw std::invalid_argument("aggregate: mixed config hashes");
    }
  }
  std::map<std::string, std::vector<double>> grouped;
  for (const EvalReport& r : reports) {
    grouped[r.method].push_back(r.abs_error);
  }
  std::vector<SummaryRow> rows;
  for (const auto& [method, errors] : grouped) {
    SummaryRow row;
    row.method = method;
    row.config_hash = hash;
    row.count = static_cast<int>(errors.size());
    double sq = 0.0;
    for (double e : errors) sq += e * e;
    row.rmse = std::sqrt(sq / static_cast<double>(errors.size()));
    row.median_abs_error = median_of(errors);
    row.iqr_low = quantile_of(errors, 0.25);
    row.iqr_high = quantile_of(errors, 0.75);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace bcrl
