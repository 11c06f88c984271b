#include "bcrl/linalg.hpp"

#include <cmath>
#include <stdexcept>

namespace bcrl {

GramFactorization::GramFactorization(const Eigen::MatrixXd& gram) {
  if (gram.rows() != gram.cols()) {
    throw std::invalid_argument("GramFactorization: matrix must be square");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
  eigenvectors = solver.eigenvectors();
  eigenvalues = solver.eigenvalues();
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) {
    if (eigenvalues[i] < 0.0) eigenvalues[i] = 0.0;
  }
  const double max_ev = eigenvalues.size() ? eigenvalues.maxCoeff() : 0.0;
  cutoff = kPinvTol * max_ev;
  rank = 0;
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) {
    if (eigenvalues[i] > cutoff) ++rank;
  }
}

Eigen::VectorXd GramFactorization::pinv_solve(const Eigen::VectorXd& rhs) const {
  Eigen::VectorXd projected = eigenvectors.transpose() * rhs;
  for (Eigen::Index i = 0; i < projected.size(); ++i) {
    projected[i] = eigenvalues[i] > cutoff ? projected[i] / eigenvalues[i] : 0.0;
  }
  return eigenvectors * projected;
}

BallLsqSolution ball_constrained_lsq(const GramFactorization& gram,
                                     const Eigen::VectorXd& moment,
                                     double radius) {
  if (!(radius > 0.0)) {
    throw std::invalid_argument("ball_constrained_lsq: radius must be positive");
  }
  BallLsqSolution sol;
  const Eigen::VectorXd b = gram.eigenvectors.transpose() * moment;

  Eigen::VectorXd coeffs(b.size());
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    coeffs[i] = gram.eigenvalues[i] > gram.cutoff ? b[i] / gram.eigenvalues[i] : 0.0;
  }
  if (coeffs.norm() <= radius) {
    sol.x = gram.eigenvectors * coeffs;
    return sol;
  }

  // ||x(lam)||^2 = sum_i (b_i / (ev_i + lam))^2 is strictly decreasing, so
  // bracket and bisect until the norm matches the radius.
  auto norm_at = [&](double lam) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      const double c = b[i] / (gram.eigenvalues[i] + lam);
      acc += c * c;
    }
    return std::sqrt(acc);
  };
  double lo = 0.0;
  double hi = std::max(1.0, b.norm() / radius);
  while (norm_at(hi) > radius) hi *= 2.0;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (norm_at(mid) > radius) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 1e-10 * std::max(1.0, hi)) break;
  }
  const double lam = hi;
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    coeffs[i] = b[i] / (gram.eigenvalues[i] + lam);
  }
  sol.x = gram.eigenvectors * coeffs;
  sol.on_boundary = true;
  sol.multiplier = lam;
  return sol;
}

BallLsqSolution ball_constrained_lsq(const Eigen::MatrixXd& gram,
                                     const Eigen::VectorXd& moment,
                                     double radius) {
  return ball_constrained_lsq(GramFactorization(gram), moment, radius);
}

double spectral_norm(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()[0];
}

Eigen::MatrixXd clamp_spectral_norm(const Eigen::MatrixXd& m, double bound) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd sv = svd.singularValues();
  bool changed = false;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv[i] > bound) {
      sv[i] = bound;
      changed = true;
    }
  }
  if (!changed) return m;
  return svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
}

}  // namespace bcrl
