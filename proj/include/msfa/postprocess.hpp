#pragma once

#include <string>
#include <vector>

#include "msfa/model.hpp"
#include "msfa/sampler.hpp"

namespace msfa {

// Post-hoc identification. The model is invariant to Phi -> Phi Q for
// orthogonal Q, so draws are summarized through rotation-invariant
// quantities (Sigma_Phi = mean of Phi Phi^T), ranks are read off the
// eigenvalues of Sigma_Phi, and a point estimate of the loadings is
// recovered by Orthogonal Procrustes alignment of the draws.

// Mean outer products and noise means over all retained draws.
// K_hat / J_hat are left 0 here; select_ranks fills them.
CovarianceEstimate estimate_covariances(const ChainDraws& draws);

struct SelectRankResult {
  int rank = 0;
  Vector eigenvalues;   // all P, decreasing
  Matrix basis;         // P x rank, eigenvectors of the retained eigenvalues
  std::string warning;  // non-empty if an eigenvalue < -1e-6 was seen
};

// rank = #{eigenvalues of sigma_hat > threshold}. The input must be
// symmetric within 1e-8 (it is symmetrized before decomposition; larger
// asymmetry is an InputError).
SelectRankResult select_rank(const Matrix& sigma_hat, double threshold);

struct RankSelection {
  int K_hat = 0;
  std::vector<int> J_hat;
  Vector phi_eigenvalues;                  // full spectrum, decreasing
  std::vector<Vector> lambda_eigenvalues;  // per study
  Matrix phi_basis;                        // top-K_hat eigenvectors
  std::vector<Matrix> lambda_basis;
  double threshold = 0.0;
  std::vector<std::string> warnings;
};

// Applies select_rank to sigma_phi and every sigma_lambda, and copies the
// ranks into `cov`.
RankSelection select_ranks(CovarianceEstimate& cov, double threshold);

struct OpAlignResult {
  Matrix aligned;                  // P x m, mean of rotated draws
  std::vector<Matrix> rotations;   // final-pass Q per draw
  Vector draw_loss;                // final-pass ||draw Q - aligned||_F^2 per draw
  int iterations = 0;
  double last_change = 0.0;        // Frobenius change of the target in the last pass
};

// Orthogonal Procrustes alignment. Each pass rotates every draw toward the
// current target: M_r = draw_r^T target (m x m), SVD M_r = U S V^T,
// Q_r = U V^T, new target = mean of draw_r Q_r. Converged when the target
// moves less than `tol` in Frobenius norm. One pass is the recommended
// default, with the target initialized at the last retained draw.
OpAlignResult op_align(const std::vector<Matrix>& draws, const Matrix& init, int max_iters = 1,
                       double tol = 1e-6);

// Truncates draws to `rank` columns before alignment: each draw is projected
// onto the selected eigenbasis (basis basis^T draw) and the `rank` projected
// columns with the largest total energy across draws are kept (fixed column
// choice, so draws stay comparable). rank == draw width returns the draws
// untouched.
std::vector<Matrix> truncate_draws(const std::vector<Matrix>& draws, const Matrix& basis,
                                   int rank);

// Flips each column so its largest-magnitude entry is positive.
void fix_column_signs(Matrix& m);

struct AlignedLoadings {
  Matrix phi_star;                  // P x K_hat
  std::vector<Matrix> lambda_star;  // per study, P x J_hat[s]
  // Rotation history (final pass), kept only when requested.
  std::vector<Matrix> phi_rotations;
  std::vector<std::vector<Matrix>> lambda_rotations;
};

// Truncates (see truncate_draws), aligns each loading family with op_align
// initialized at its last truncated draw, and applies the sign convention.
AlignedLoadings align_all(const ChainDraws& draws, const RankSelection& ranks,
                          int op_max_iters = 1, double op_tol = 1e-6,
                          bool keep_rotations = false);

}  // namespace msfa
