#include "msfa/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace msfa {

CovarianceEstimate estimate_covariances(const ChainDraws& draws) {
  const long r = draws.draws();
  if (r < 1) throw InputError("estimate_covariances: no retained draws");
  const int p = draws.p;
  const size_t n_studies = draws.lambda.size();

  CovarianceEstimate est;
  est.J_hat.assign(n_studies, 0);

  Matrix acc = Matrix::Zero(p, p);
  for (const Matrix& phi : draws.phi) {
    if (phi.cols() > 0) acc.selfadjointView<Eigen::Lower>().rankUpdate(phi);
  }
  acc /= static_cast<double>(r);
  est.sigma_phi = acc.selfadjointView<Eigen::Lower>();

  est.sigma_lambda.resize(n_studies);
  est.psi_hat.resize(n_studies);
  for (size_t s = 0; s < n_studies; ++s) {
    acc.setZero();
    for (const Matrix& lam : draws.lambda[s]) {
      if (lam.cols() > 0) acc.selfadjointView<Eigen::Lower>().rankUpdate(lam);
    }
    acc /= static_cast<double>(r);
    est.sigma_lambda[s] = acc.selfadjointView<Eigen::Lower>();
    Vector psi = Vector::Zero(p);
    for (const Vector& v : draws.psi[s]) psi += v;
    est.psi_hat[s] = psi / static_cast<double>(r);
  }
  return est;
}

SelectRankResult select_rank(const Matrix& sigma_hat, double threshold) {
  if (sigma_hat.rows() != sigma_hat.cols()) throw InputError("select_rank: matrix not square");
  if (sigma_hat.size() == 0) throw InputError("select_rank: empty matrix");
  const double asym = (sigma_hat - sigma_hat.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8) {
    throw InputError("select_rank: matrix asymmetric beyond tolerance (max deviation " +
                     std::to_string(asym) + ")");
  }
  const Matrix sym = 0.5 * (sigma_hat + sigma_hat.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw NumericalError("select_rank: eigendecomposition failed");
  }

  const Eigen::Index p = sym.rows();
  SelectRankResult out;
  out.eigenvalues = eig.eigenvalues().reverse();  // decreasing
  Matrix vectors = eig.eigenvectors().rowwise().reverse();
  out.rank = static_cast<int>((out.eigenvalues.array() > threshold).count());
  out.basis = vectors.leftCols(out.rank);
  const double min_eig = out.eigenvalues(p - 1);
  if (min_eig < -1e-6) {
    out.warning = "eigenvalue " + std::to_string(min_eig) +
                  " below -1e-6; covariance estimate is not PSD within tolerance";
  }
  return out;
}

RankSelection select_ranks(CovarianceEstimate& cov, double threshold) {
  RankSelection sel;
  sel.threshold = threshold;
  SelectRankResult phi = select_rank(cov.sigma_phi, threshold);
  sel.K_hat = phi.rank;
  sel.phi_eigenvalues = std::move(phi.eigenvalues);
  sel.phi_basis = std::move(phi.basis);
  if (!phi.warning.empty()) sel.warnings.push_back("sigma_phi: " + phi.warning);

  const size_t n_studies = cov.sigma_lambda.size();
  sel.J_hat.resize(n_studies);
  sel.lambda_eigenvalues.resize(n_studies);
  sel.lambda_basis.resize(n_studies);
  for (size_t s = 0; s < n_studies; ++s) {
    SelectRankResult lam = select_rank(cov.sigma_lambda[s], threshold);
    sel.J_hat[s] = lam.rank;
    sel.lambda_eigenvalues[s] = std::move(lam.eigenvalues);
    sel.lambda_basis[s] = std::move(lam.basis);
    if (!lam.warning.empty()) {
      sel.warnings.push_back("sigma_lambda_" + std::to_string(s + 1) + ": " + lam.warning);
    }
  }
  cov.K_hat = sel.K_hat;
  cov.J_hat = sel.J_hat;
  return sel;
}

OpAlignResult op_align(const std::vector<Matrix>& draws, const Matrix& init, int max_iters,
                       double tol) {
  if (draws.empty()) throw InputError("op_align: no draws");
  if (max_iters < 1) throw InputError("op_align: max_iters must be >= 1");
  const Eigen::Index p = draws.front().rows();
  const Eigen::Index m = draws.front().cols();
  for (const Matrix& d : draws) {
    if (d.rows() != p || d.cols() != m) throw InputError("op_align: draws differ in shape");
  }
  if (init.rows() != p || init.cols() != m) {
    throw InputError("op_align: init shape does not match draws");
  }
  const long r = static_cast<long>(draws.size());

  OpAlignResult out;
  if (m == 0) {
    out.aligned = Matrix::Zero(p, 0);
    out.rotations.assign(draws.size(), Matrix::Zero(0, 0));
    out.draw_loss = Vector::Zero(r);
    out.iterations = 0;
    return out;
  }

  Matrix target = init;
  out.rotations.resize(draws.size());
  for (int it = 1; it <= max_iters; ++it) {
    Matrix accum = Matrix::Zero(p, m);
    for (size_t i = 0; i < draws.size(); ++i) {
      const Matrix cross = draws[i].transpose() * target;  // m x m
      Eigen::JacobiSVD<Matrix> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
      out.rotations[i] = svd.matrixU() * svd.matrixV().transpose();
      accum.noalias() += draws[i] * out.rotations[i];
    }
    accum /= static_cast<double>(r);
    out.last_change = (accum - target).norm();
    target = std::move(accum);
    out.iterations = it;
    if (out.last_change < tol) break;
  }

  out.aligned = std::move(target);
  out.draw_loss = Vector::Zero(r);
  for (size_t i = 0; i < draws.size(); ++i) {
    out.draw_loss(static_cast<long>(i)) = (draws[i] * out.rotations[i] - out.aligned).squaredNorm();
  }
  return out;
}

std::vector<Matrix> truncate_draws(const std::vector<Matrix>& draws, const Matrix& basis,
                                   int rank) {
  if (draws.empty()) throw InputError("truncate_draws: no draws");
  const Eigen::Index m = draws.front().cols();
  if (rank == m) return draws;  // no truncation
  if (rank > m) throw InputError("truncate_draws: rank exceeds draw width");
  if (basis.cols() != rank || basis.rows() != draws.front().rows()) {
    throw InputError("truncate_draws: basis does not match the requested rank");
  }
  const Eigen::Index p = draws.front().rows();
  if (rank == 0) return std::vector<Matrix>(draws.size(), Matrix::Zero(p, 0));

  // Keep the columns that carry the projected energy, with one fixed column
  // choice across draws so they stay comparable for alignment.
  Vector energy = Vector::Zero(m);
  for (const Matrix& d : draws) {
    const Matrix coords = basis.transpose() * d;  // rank x m
    energy += coords.colwise().squaredNorm().transpose();
  }
  std::vector<int> order(static_cast<size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return energy(a) > energy(b); });
  order.resize(static_cast<size_t>(rank));

  std::vector<Matrix> out;
  out.reserve(draws.size());
  for (const Matrix& d : draws) {
    const Matrix projected = basis * (basis.transpose() * d);
    Matrix kept(p, rank);
    for (int c = 0; c < rank; ++c) kept.col(c) = projected.col(order[static_cast<size_t>(c)]);
    out.push_back(std::move(kept));
  }
  return out;
}

void fix_column_signs(Matrix& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    Eigen::Index at = 0;
    const double peak = m.col(c).cwiseAbs().maxCoeff(&at);
    if (peak > 0.0 && m(at, c) < 0.0) m.col(c) = -m.col(c);
  }
}

AlignedLoadings align_all(const ChainDraws& draws, const RankSelection& ranks, int op_max_iters,
                          double op_tol, bool keep_rotations) {
  if (draws.draws() < 1) throw InputError("align_all: no retained draws");
  AlignedLoadings out;

  // The selected rank can in principle exceed the draw width; alignment then
  // proceeds at the draw width (the rank report is unaffected).
  const int k = std::min(ranks.K_hat, draws.k_star);
  {
    const std::vector<Matrix> trunc = truncate_draws(draws.phi, ranks.phi_basis.leftCols(k), k);
    OpAlignResult res = op_align(trunc, trunc.back(), op_max_iters, op_tol);
    out.phi_star = std::move(res.aligned);
    fix_column_signs(out.phi_star);
    if (keep_rotations) out.phi_rotations = std::move(res.rotations);
  }

  const size_t n_studies = draws.lambda.size();
  out.lambda_star.resize(n_studies);
  if (keep_rotations) out.lambda_rotations.resize(n_studies);
  for (size_t s = 0; s < n_studies; ++s) {
    const int j = std::min(ranks.J_hat[s], draws.j_star[s]);
    const std::vector<Matrix> trunc =
        truncate_draws(draws.lambda[s], ranks.lambda_basis[s].leftCols(j), j);
    OpAlignResult res = op_align(trunc, trunc.back(), op_max_iters, op_tol);
    out.lambda_star[s] = std::move(res.aligned);
    fix_column_signs(out.lambda_star[s]);
    if (keep_rotations) out.lambda_rotations[s] = std::move(res.rotations);
  }
  return out;
}

}  // namespace msfa
