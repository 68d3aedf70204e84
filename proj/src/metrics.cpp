#include "msfa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace msfa {

namespace {

void check_rv_input(const Matrix& s, const char* name) {
  if (s.rows() != s.cols()) throw InputError(std::string(name) + " is not square");
  if (s.size() == 0) throw InputError(std::string(name) + " is empty");
  const double asym = (s - s.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8) throw InputError(std::string(name) + " is not symmetric within 1e-8");
}

// tr(S1 S2) for symmetric matrices is the elementwise product sum; keeping
// one summation path makes rv(s1, s2) == rv(s2, s1) bitwise.
double trace_product(const Matrix& s1, const Matrix& s2) {
  return s1.cwiseProduct(s2).sum();
}

// RV = t12 / sqrt(t11 t22), computed as sign(t12) sqrt(t12^2 / (t11 t22)) so
// identical inputs give exactly 1 (numerator and denominator are then the
// same product).
double rv_from_traces(double t12, double t11, double t22) {
  const double ratio = (t12 * t12) / (t11 * t22);
  return (t12 < 0.0 ? -1.0 : 1.0) * std::sqrt(ratio);
}

double pearson(const double* a, const double* b, long n, bool* degenerate) {
  double ma = 0.0, mb = 0.0;
  for (long i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (long i = 0; i < n; ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa == 0.0 || sbb == 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double rv_coefficient(const Matrix& s1, const Matrix& s2) {
  check_rv_input(s1, "s1");
  check_rv_input(s2, "s2");
  if (s1.rows() != s2.rows()) throw InputError("rv_coefficient: matrices differ in size");
  const double t11 = trace_product(s1, s1);
  const double t22 = trace_product(s2, s2);
  if (t11 == 0.0) throw InputError("rv_coefficient: s1 is all zero; RV undefined");
  if (t22 == 0.0) throw InputError("rv_coefficient: s2 is all zero; RV undefined");
  return rv_from_traces(trace_product(s1, s2), t11, t22);
}

double rv_modified(const Matrix& s1, const Matrix& s2) {
  check_rv_input(s1, "s1");
  check_rv_input(s2, "s2");
  if (s1.rows() != s2.rows()) throw InputError("rv_modified: matrices differ in size");
  Matrix t1 = s1;
  Matrix t2 = s2;
  t1.diagonal().setZero();
  t2.diagonal().setZero();
  const double t11 = trace_product(t1, t1);
  const double t22 = trace_product(t2, t2);
  if (t11 == 0.0) throw InputError("rv_modified: s1 has no off-diagonal signal; undefined");
  if (t22 == 0.0) throw InputError("rv_modified: s2 has no off-diagonal signal; undefined");
  return rv_from_traces(trace_product(t1, t2), t11, t22);
}

LoadingCorrelation loading_correlation(const Matrix& est, const Matrix& truth) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols()) {
    throw InputError("loading_correlation: shapes differ (" + std::to_string(est.rows()) + "x" +
                     std::to_string(est.cols()) + " vs " + std::to_string(truth.rows()) + "x" +
                     std::to_string(truth.cols()) + ")");
  }
  const long p = est.rows();
  const int m = static_cast<int>(est.cols());
  LoadingCorrelation out;
  out.permutation.assign(m, -1);
  out.signs.assign(m, 1);
  if (m == 0 || p == 0) {
    out.value = 0.0;
    return out;
  }

  // Pairwise column correlations; zero-variance columns count as corr 0.
  Matrix corr(m, m);
  for (int je = 0; je < m; ++je) {
    for (int jt = 0; jt < m; ++jt) {
      bool degenerate = false;
      corr(je, jt) = pearson(est.col(je).data(), truth.col(jt).data(), p, &degenerate);
      if (degenerate) out.zero_variance = true;
    }
  }

  // Greedy matching on |corr| without replacement; ties resolve to the
  // smallest indices so the matching is deterministic.
  std::vector<bool> est_used(m, false), truth_used(m, false);
  for (int step = 0; step < m; ++step) {
    int best_e = -1, best_t = -1;
    double best = -1.0;
    for (int je = 0; je < m; ++je) {
      if (est_used[je]) continue;
      for (int jt = 0; jt < m; ++jt) {
        if (truth_used[jt]) continue;
        if (std::abs(corr(je, jt)) > best) {
          best = std::abs(corr(je, jt));
          best_e = je;
          best_t = jt;
        }
      }
    }
    est_used[best_e] = true;
    truth_used[best_t] = true;
    out.permutation[best_t] = best_e;
    out.signs[best_t] = corr(best_e, best_t) < 0.0 ? -1 : 1;
  }

  Matrix matched(p, m);
  for (int jt = 0; jt < m; ++jt) {
    matched.col(jt) = static_cast<double>(out.signs[jt]) * est.col(out.permutation[jt]);
  }
  bool degenerate = false;
  out.value = pearson(matched.data(), truth.data(), p * m, &degenerate);
  if (degenerate) out.zero_variance = true;
  return out;
}

SignedGraph extract_network(const Matrix& sigma_phi, double threshold,
                            const std::vector<std::string>& var_names) {
  check_rv_input(sigma_phi, "sigma_phi");
  const int p = static_cast<int>(sigma_phi.rows());
  if (static_cast<int>(var_names.size()) != p) {
    throw InputError("extract_network: need one name per variable");
  }

  SignedGraph g;
  g.nodes = var_names;
  g.degree.assign(p, 0);

  // Union-find over nodes; isolated nodes stay singleton clusters.
  std::vector<int> parent(p);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  };

  for (int a = 0; a < p; ++a) {
    for (int b = a + 1; b < p; ++b) {
      const double w = sigma_phi(a, b);
      if (std::abs(w) > threshold) {
        g.edges.push_back({a, b, w, w < 0.0 ? -1 : 1});
        ++g.degree[a];
        ++g.degree[b];
        parent[find(a)] = find(b);
      }
    }
  }

  // Component labels in order of first appearance.
  g.cluster.assign(p, -1);
  int next = 0;
  std::vector<int> label(p, -1);
  for (int a = 0; a < p; ++a) {
    const int root = find(a);
    if (label[root] < 0) label[root] = next++;
    g.cluster[a] = label[root];
  }
  g.n_clusters = next;
  return g;
}

}  // namespace msfa
