#pragma once

#include <string>
#include <vector>

#include "msfa/model.hpp"

namespace msfa {

// Similarity between two covariance matrices:
//   RV(S1, S2) = tr(S1 S2) / sqrt(tr(S1 S1) tr(S2 S2)).
// In [0, 1] for positive semi-definite inputs. Inputs must be square, of
// equal size and symmetric within 1e-8; an all-zero input is an InputError
// (the coefficient is undefined, not zero).
double rv_coefficient(const Matrix& s1, const Matrix& s2);

// Modified RV: both matrices have their diagonals zeroed before the RV
// formula, removing the variance-driven inflation. Range [-1, 1]. A matrix
// whose off-diagonal part is all zero is an InputError.
double rv_modified(const Matrix& s1, const Matrix& s2);

struct LoadingCorrelation {
  double value = 0.0;
  std::vector<int> permutation;  // permutation[k] = column of est matched to truth column k
  std::vector<int> signs;        // +1/-1 applied to the matched est column
  bool zero_variance = false;    // some column had zero variance (treated as corr 0)
};

// Greedy column matching between est and truth (same shape): repeatedly pair
// the columns with the largest remaining absolute Pearson correlation,
// without replacement, resolving each sign by the correlation's sign; then
// returns the Pearson correlation of the vectorized matched matrices.
LoadingCorrelation loading_correlation(const Matrix& est, const Matrix& truth);

struct SignedEdge {
  int p = 0;       // 0-based variable indices, p < q
  int q = 0;
  double weight = 0.0;  // sigma_phi(p, q)
  int sign = 0;         // +1 / -1
};

struct SignedGraph {
  std::vector<std::string> nodes;
  std::vector<SignedEdge> edges;
  std::vector<int> cluster;  // connected-component label per node
  std::vector<int> degree;   // edge count per node (importance)
  int n_clusters = 0;
};

// Thresholded co-expression network: edge p-q iff |sigma_phi(p,q)| >
// threshold (strict), signed by the entry; clusters are the connected
// components of the resulting graph (isolated nodes are singletons).
SignedGraph extract_network(const Matrix& sigma_phi, double threshold,
                            const std::vector<std::string>& var_names);

}  // namespace msfa
