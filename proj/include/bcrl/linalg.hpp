#pragma once

#include <Eigen/Dense>

namespace bcrl {

// Relative threshold below which eigen/singular values count as zero.
constexpr double kPinvTol = 1e-10;

// Eigendecomposition of a PSD Gram matrix, reused across solves that share
// the same design (LSPE iterations all reuse one factorization).
struct GramFactorization {
  Eigen::MatrixXd eigenvectors;  // columns
  Eigen::VectorXd eigenvalues;   // ascending, >= 0 after clamping
  double cutoff = 0.0;           // kPinvTol * max eigenvalue
  int rank = 0;

  explicit GramFactorization(const Eigen::MatrixXd& gram);

  bool degenerate() const { return rank == 0; }
  bool rank_deficient() const {
    return rank < static_cast<int>(eigenvalues.size());
  }

  // Minimum-norm solution of gram * x = rhs on the numerical range.
  Eigen::VectorXd pinv_solve(const Eigen::VectorXd& rhs) const;
};

struct BallLsqSolution {
  Eigen::VectorXd x;
  bool on_boundary = false;  // true when the norm constraint is active
  double multiplier = 0.0;   // Tikhonov multiplier when on the boundary
};

// argmin_x x^T gram x - 2 moment^T x subject to ||x||_2 <= radius.
//
// The unconstrained minimizer is the pseudoinverse solve. If it leaves the
// ball, the exact constrained solution is x(lam) = (gram + lam I)^-1 moment
// for the unique lam > 0 with ||x(lam)|| = radius, found by safeguarded
// bisection on the secular equation in the eigenbasis.
BallLsqSolution ball_constrained_lsq(const GramFactorization& gram,
                                     const Eigen::VectorXd& moment,
                                     double radius);
BallLsqSolution ball_constrained_lsq(const Eigen::MatrixXd& gram,
                                     const Eigen::VectorXd& moment,
                                     double radius);

// Largest singular value.
double spectral_norm(const Eigen::MatrixXd& m);

// SVD clamp of singular values to at most `bound`.
Eigen::MatrixXd clamp_spectral_norm(const Eigen::MatrixXd& m, double bound);

}  // namespace bcrl
