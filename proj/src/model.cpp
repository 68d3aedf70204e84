#include "msfa/model.hpp"

#include <cmath>
#include <sstream>

namespace msfa {

namespace {

void check_loading_dims(const Matrix& m, Eigen::Index p, const char* what) {
  if (m.size() == 0) return;  // 0 x 0 and P x 0 both mean "no factors"
  if (m.rows() != p) {
    std::ostringstream msg;
    msg << what << " has " << m.rows() << " rows, expected " << p;
    throw InputError(msg.str());
  }
}

}  // namespace

void validate_studies(const std::vector<StudyData>& studies) {
  if (studies.empty()) throw InputError("no studies given");
  const StudyData& first = studies.front();
  if (first.p() < 1) throw InputError("P must be >= 1");
  for (const StudyData& s : studies) {
    std::ostringstream where;
    where << "study " << s.id;
    if (s.p() != first.p()) {
      throw InputError(where.str() + " has " + std::to_string(s.p()) +
                       " variables, expected " + std::to_string(first.p()));
    }
    if (static_cast<int>(s.var_names.size()) != s.p()) {
      throw InputError(where.str() + ": variable name count does not match columns");
    }
    if (s.var_names != first.var_names) {
      throw InputError(where.str() + ": variable names or their order differ from study " +
                       std::to_string(first.id));
    }
    if (s.n() < 2) throw InputError(where.str() + ": needs at least 2 samples");
    if (!s.x.allFinite()) throw InputError(where.str() + ": non-finite values");
    for (int j = 0; j < s.p(); ++j) {
      const double mean = s.x.col(j).mean();
      if (std::abs(mean) > 1e-8) {
        std::ostringstream msg;
        msg << where.str() << " column " << s.var_names[j] << " is not centered (mean " << mean
            << ")";
        throw InputError(msg.str());
      }
    }
  }
}

Matrix assemble_sigma(const Matrix& phi, const Matrix& lambda_s, const Vector& psi) {
  const Eigen::Index p = psi.size();
  if (p < 1) throw InputError("psi is empty");
  check_loading_dims(phi, p, "phi");
  check_loading_dims(lambda_s, p, "lambda");

  Matrix sigma = Matrix::Zero(p, p);
  if (phi.cols() > 0) sigma.selfadjointView<Eigen::Lower>().rankUpdate(phi);
  if (lambda_s.cols() > 0) sigma.selfadjointView<Eigen::Lower>().rankUpdate(lambda_s);
  // Mirror the lower triangle so the result is symmetric to the bit.
  sigma = sigma.selfadjointView<Eigen::Lower>();
  sigma.diagonal() += psi;
  return sigma;
}

Matrix assemble_sigma(const LoadingMatrix& phi, const LoadingMatrix& lambda_s,
                      const NoiseVariances& psi) {
  if (!phi.values.allFinite()) throw InputError("phi has non-finite entries");
  if (!lambda_s.values.allFinite()) throw InputError("lambda has non-finite entries");
  if ((psi.psi.array() <= 0.0).any()) throw InputError("noise variances must be positive");
  return assemble_sigma(phi.values, lambda_s.values, psi.psi);
}

double log_likelihood(const StudyData& data, const Matrix& phi, const Matrix& lambda_s,
                      const Vector& psi) {
  if (data.p() != psi.size()) {
    throw InputError("data has " + std::to_string(data.p()) + " variables, psi has " +
                     std::to_string(psi.size()));
  }
  const Matrix sigma = assemble_sigma(phi, lambda_s, psi);
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("covariance of study " + std::to_string(data.id) +
                         " is not positive definite");
  }
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  // Quadratic forms for all rows at once: sum_i x_i^T Sigma^-1 x_i = ||L^-1 X^T||_F^2.
  const Matrix half = llt.matrixL().solve(data.x.transpose());
  const double quad = half.squaredNorm();
  const double n = static_cast<double>(data.n());
  const double p = static_cast<double>(data.p());
  constexpr double log_two_pi = 1.8378770664093454836;
  return -0.5 * (n * p * log_two_pi + n * log_det + quad);
}

double log_likelihood(const StudyData& data, const LoadingMatrix& phi,
                      const LoadingMatrix& lambda_s, const NoiseVariances& psi) {
  return log_likelihood(data, phi.values, lambda_s.values, psi.psi);
}

}  // namespace msfa
