#pragma once

#include <filesystem>

#include "bcrl/feature_map.hpp"
#include "bcrl/mdp.hpp"
#include "bcrl/net.hpp"

namespace bcrl {

// Spectrum summary of a feature covariance. logdet is
// -infinity when the matrix is singular at the 1e-12 eigenvalue floor;
// condition_number is +infinity in the same case.
struct CovarianceReport {
  Eigen::MatrixXd sigma;
  Eigen::VectorXd eigenvalues;  // sorted descending, clamped at zero
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double condition_number = 0.0;
  double logdet = 0.0;

  bool singular() const { return !(lambda_min > 0.0); }
};

CovarianceReport covariance_report_of(const Eigen::MatrixXd& sigma);

// Empirical covariance (1/N) sum_i phi phi^T over the dataset.
CovarianceReport covariance(const FeatureMap& phi, const OfflineDataset& data);
// Exact weighted covariance sum_{s,a} nu(s,a) phi phi^T.
CovarianceReport covariance(const FeatureMap& phi, const StateActionDist& nu);

Eigen::MatrixXd covariance_matrix(const FeatureMap& phi,
                                  const OfflineDataset& data);
Eigen::MatrixXd covariance_matrix(const FeatureMap& phi,
                                  const StateActionDist& nu);

// gamma * E_{s' ~ P(s,a)} [ phi(s', pi) ] for every pair, as a d x (S*A)
// matrix with column sa = s*A + a.
Eigen::MatrixXd expected_next_feature(const FiniteMdp& mdp,
                                      const FeatureMap& phi, const Policy& pi);

// Snapshot a network into an immutable feature table over all pairs.
// Network inputs are onehot(s) ++ onehot(a).
FeatureMap snapshot_features(const TrainableNet& net, int num_states,
                             int num_actions);

// Checkpoints: architecture descriptor line followed by the raw
// little-endian parameter vector. Loading rejects mismatched descriptors.
void save_checkpoint(const TrainableNet& net, const std::filesystem::path& path);
TrainableNet load_checkpoint(const std::filesystem::path& path);

}  // namespace bcrl
