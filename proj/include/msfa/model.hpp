#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "msfa/errors.hpp"

namespace msfa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Multi-study factor model. Study s observes n_s rows of P variables:
//
//   x_is = Phi f_is + Lambda_s l_is + e_is,   e_is ~ N(0, Psi_s)
//
// with shared loadings Phi (P x K), study-specific loadings Lambda_s
// (P x J_s) and diagonal noise Psi_s. Marginally
//
//   Sigma_s = Phi Phi^T + Lambda_s Lambda_s^T + Psi_s.

// One study: n_s samples of the same P variables, centered per column.
struct StudyData {
  int id = 0;                          // 1-based study index
  Matrix x;                            // n_s x P
  std::vector<std::string> var_names;  // size P

  int n() const { return static_cast<int>(x.rows()); }
  int p() const { return static_cast<int>(x.cols()); }
};

enum class LoadingKind { Shared, Specific };

// P x m loading matrix; m = 0 means "no factors of this kind".
struct LoadingMatrix {
  Matrix values;
  LoadingKind kind = LoadingKind::Shared;
  int study = 0;  // 1-based, meaningful for Specific only

  static LoadingMatrix shared(Matrix v) { return {std::move(v), LoadingKind::Shared, 0}; }
  static LoadingMatrix specific(int study, Matrix v) {
    return {std::move(v), LoadingKind::Specific, study};
  }
};

// Latent scores for one study.
struct FactorScores {
  Matrix f;  // n_s x K   shared-factor scores
  Matrix l;  // n_s x J_s study-specific scores
};

// Diagonal of Psi_s; strictly positive.
struct NoiseVariances {
  Vector psi;
};

// Posterior summaries of the covariance decomposition.
struct CovarianceEstimate {
  Matrix sigma_phi;                  // P x P, mean of Phi Phi^T over draws
  std::vector<Matrix> sigma_lambda;  // per study, mean of Lambda_s Lambda_s^T
  std::vector<Vector> psi_hat;       // per study, mean of psi draws
  int K_hat = 0;                     // filled by rank selection
  std::vector<int> J_hat;
};

// Throws InputError unless: at least one study; all studies share P and
// var_names in identical order; every column mean is within 1e-8 of zero;
// n_s >= 2; P >= 1; all entries finite.
void validate_studies(const std::vector<StudyData>& studies);

// Phi Phi^T + Lambda_s Lambda_s^T + diag(psi). The result is exactly
// symmetric (lower triangle computed once and mirrored). Either loading
// matrix may have zero columns. Throws InputError on dimension mismatch.
Matrix assemble_sigma(const Matrix& phi, const Matrix& lambda_s, const Vector& psi);
Matrix assemble_sigma(const LoadingMatrix& phi, const LoadingMatrix& lambda_s,
                      const NoiseVariances& psi);

// Sum over rows of log N(x_i; 0, Sigma_s) with Sigma_s assembled from the
// arguments. Throws NumericalError if Sigma_s is not positive definite.
double log_likelihood(const StudyData& data, const Matrix& phi, const Matrix& lambda_s,
                      const Vector& psi);
double log_likelihood(const StudyData& data, const LoadingMatrix& phi,
                      const LoadingMatrix& lambda_s, const NoiseVariances& psi);

}  // namespace msfa
