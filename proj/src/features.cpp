#include "bcrl/features.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "bcrl/kernels.hpp"
#include "bcrl/rng.hpp"

namespace bcrl {

namespace {
constexpr double kEigFloor = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

std::string feature_kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::one_hot:
      return "one_hot";
    case FeatureKind::low_rank_truth:
      return "low_rank_truth";
    case FeatureKind::random_fixed:
      return "random_fixed";
    case FeatureKind::trainable:
      return "trainable";
  }
  return "unknown";
}

FeatureMap::FeatureMap(FeatureKind kind, Eigen::MatrixXd table, int num_states,
                       int num_actions)
    : kind_(kind),
      table_(std::move(table)),
      num_states_(num_states),
      num_actions_(num_actions) {
  if (table_.cols() != static_cast<Eigen::Index>(num_states) * num_actions) {
    throw std::invalid_argument("FeatureMap: table must have S*A columns");
  }
  if (max_norm() > 1.0 + 1e-9) {
    throw std::invalid_argument("FeatureMap: feature norm bound violated");
  }
}

FeatureMap FeatureMap::one_hot(int num_states, int num_actions) {
  const int n = num_states * num_actions;
  return FeatureMap(FeatureKind::one_hot, Eigen::MatrixXd::Identity(n, n),
                    num_states, num_actions);
}

FeatureMap FeatureMap::random_fixed(int num_states, int num_actions, int dim,
                                    std::uint64_t seed) {
  SplitMix64 rng(seed);
  Eigen::MatrixXd table(dim, num_states * num_actions);
  for (Eigen::Index c = 0; c < table.cols(); ++c) {
    Eigen::VectorXd v(dim);
    for (int k = 0; k < dim; ++k) v[k] = rng.next_normal();
    const double norm = v.norm();
    const double radius = std::pow(rng.next_double(), 1.0 / dim);
    table.col(c) = norm > 0.0 ? Eigen::VectorXd(v * (radius / norm))
                              : Eigen::VectorXd::Zero(dim);
  }
  return FeatureMap(FeatureKind::random_fixed, std::move(table), num_states,
                    num_actions);
}

FeatureMap FeatureMap::constant(int num_states, int num_actions, int dim) {
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(dim, num_states * num_actions);
  table.row(0).setOnes();
  return FeatureMap(FeatureKind::random_fixed, std::move(table), num_states,
                    num_actions);
}

Eigen::MatrixXd FeatureMap::policy_averaged(
    const Eigen::MatrixXd& policy_probs) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dim(), num_states_);
  for (int s = 0; s < num_states_; ++s) {
    for (int a = 0; a < num_actions_; ++a) {
      const double p = policy_probs(s, a);
      if (p != 0.0) {
        kernels::axpy(p, column(s, a), out.col(s).data(),
                      static_cast<std::size_t>(dim()));
      }
    }
  }
  return out;
}

double FeatureMap::max_norm() const { return table_.colwise().norm().maxCoeff(); }

CovarianceReport covariance_report_of(const Eigen::MatrixXd& sigma) {
  CovarianceReport report;
  report.sigma = sigma;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sigma);
  Eigen::VectorXd evs = solver.eigenvalues();  // ascending
  // Symmetric-solver noise can leave tiny negatives; clamp them at zero.
  for (Eigen::Index i = 0; i < evs.size(); ++i) {
    if (evs[i] < 0.0 && evs[i] >= -kEigFloor) evs[i] = 0.0;
  }
  report.eigenvalues = evs.reverse();
  report.lambda_min = report.eigenvalues[report.eigenvalues.size() - 1];
  report.lambda_max = report.eigenvalues[0];
  if (report.lambda_min > 0.0) {
    report.condition_number = report.lambda_max / report.lambda_min;
    report.logdet = report.eigenvalues.array().log().sum();
  } else {
    report.condition_number = kInf;
    report.logdet = -kInf;
  }
  return report;
}

Eigen::MatrixXd covariance_matrix(const FeatureMap& phi,
                                  const OfflineDataset& data) {
  if (data.tuples.empty()) {
    throw std::invalid_argument("covariance: empty dataset");
  }
  const int d = phi.dim();
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(d, d);
  const double w = 1.0 / static_cast<double>(data.tuples.size());
  for (const Transition& t : data.tuples) {
    kernels::add_scaled_outer(sigma.data(), phi.column(t.s, t.a), w,
                              static_cast<std::size_t>(d));
  }
  return sigma;
}

Eigen::MatrixXd covariance_matrix(const FeatureMap& phi,
                                  const StateActionDist& nu) {
  const int d = phi.dim();
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(d, d);
  for (int s = 0; s < phi.num_states(); ++s) {
    for (int a = 0; a < phi.num_actions(); ++a) {
      const double w = nu.weights(s, a);
      if (w != 0.0) {
        kernels::add_scaled_outer(sigma.data(), phi.column(s, a), w,
                                  static_cast<std::size_t>(d));
      }
    }
  }
  return sigma;
}

CovarianceReport covariance(const FeatureMap& phi, const OfflineDataset& data) {
  return covariance_report_of(covariance_matrix(phi, data));
}

CovarianceReport covariance(const FeatureMap& phi, const StateActionDist& nu) {
  return covariance_report_of(covariance_matrix(phi, nu));
}

Eigen::MatrixXd expected_next_feature(const FiniteMdp& mdp,
                                      const FeatureMap& phi, const Policy& pi) {
  // gamma * Phi_pi * P^T with Phi_pi the d x S policy-averaged table.
  const Eigen::MatrixXd phi_pi = phi.policy_averaged(pi.probs);
  return mdp.gamma * phi_pi * mdp.transition.transpose();
}

FeatureMap snapshot_features(const TrainableNet& net, int num_states,
                             int num_actions) {
  Eigen::MatrixXd table(net.config().output_dim, num_states * num_actions);
  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a) {
      table.col(s * num_actions + a) =
          net.forward(onehot_input(num_states, num_actions, s, a));
    }
  }
  return FeatureMap(FeatureKind::trainable, std::move(table), num_states,
                    num_actions);
}

void save_checkpoint(const TrainableNet& net,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  out << net.descriptor() << "\n";
  const Eigen::VectorXd& p = net.params();
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(p[i]);
    char raw[8];
    for (int b = 0; b < 8; ++b) raw[b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    out.write(raw, 8);
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed");
}

namespace {

NetConfig parse_descriptor(const std::string& line) {
  NetConfig cfg;
  char head_buf[16] = {0};
  const int n = std::sscanf(
      line.c_str(),
      "bcrl-net v1 in=%d hidden=%d layers=%d out=%d head=%15s bound=%lg",
      &cfg.input_dim, &cfg.hidden_width, &cfg.num_hidden, &cfg.output_dim,
      head_buf, &cfg.head_bound);
  if (n != 6) throw std::runtime_error("load_checkpoint: bad descriptor: " + line);
  const std::string head_name = head_buf;
  if (head_name == "bounded") {
    cfg.head = HeadKind::bounded;
  } else if (head_name == "identity") {
    cfg.head = HeadKind::identity;
  } else {
    throw std::runtime_error("load_checkpoint: unknown head kind " + head_name);
  }
  return cfg;
}

}  // namespace

TrainableNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("load_checkpoint: missing descriptor");
  }
  const NetConfig cfg = parse_descriptor(line);
  TrainableNet probe(cfg, std::uint64_t{0});
  if (probe.descriptor() != line) {
    throw std::runtime_error("load_checkpoint: descriptor mismatch: " + line);
  }
  Eigen::VectorXd params(probe.param_count());
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    unsigned char raw[8];
    in.read(reinterpret_cast<char*>(raw), 8);
    if (!in) throw std::runtime_error("load_checkpoint: truncated parameters");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(raw[b]) << (8 * b);
    params[i] = std::bit_cast<double>(bits);
  }
  char extra;
  if (in.read(&extra, 1)) {
    throw std::runtime_error("load_checkpoint: trailing bytes");
  }
  return TrainableNet(cfg, std::move(params));
}

}  // namespace bcrl
