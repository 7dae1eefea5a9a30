#include <algorithm>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "madood/boundary.hpp"

namespace madood {

Matrix normalized_laplacian(const Adjacency& adjacency) {
  const Index n = adjacency.rows();
  if (adjacency.cols() != n) throw InputError("adjacency must be square");
  for (Index u = 0; u < n; ++u) {
    if (adjacency(u, u)) throw InputError("adjacency must have a zero diagonal");
    for (Index v = u + 1; v < n; ++v)
      if (adjacency(u, v) != adjacency(v, u)) throw InputError("adjacency must be symmetric");
  }
  Vector degree = adjacency.cast<double>().rowwise().sum();
  Matrix lap = Matrix::Zero(n, n);
  for (Index u = 0; u < n; ++u) {
    if (degree[u] != 0) lap(u, u) = 1.0;
    for (Index v = 0; v < n; ++v)
      if (adjacency(u, v)) lap(u, v) = -1.0 / std::sqrt(degree[u] * degree[v]);
  }
  return lap;
}

Adjacency mutual_knn_graph(const Matrix& points, int k_neighbors) {
  const Index n = points.rows();
  if (k_neighbors < 1) throw InputError("k_neighbors must be >= 1");
  if (k_neighbors >= n)
    throw InputError("k_neighbors=" + std::to_string(k_neighbors) + " needs more than " +
                     std::to_string(n) + " points");
  Adjacency knn = Adjacency::Constant(n, n, false);
  std::vector<Index> order(static_cast<std::size_t>(n));
  Vector dist(n);
  for (Index i = 0; i < n; ++i) {
    dist = (points.rowwise() - points.row(i)).rowwise().squaredNorm();
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
      if (a == i || b == i) return b == i && a != i;  // self goes last
      return dist[a] < dist[b];
    });
    for (int j = 0; j < k_neighbors; ++j) knn(i, order[static_cast<std::size_t>(j)]) = true;
  }
  Adjacency mutual = knn.array() && knn.transpose().array();
  return mutual;
}

SpectralReport spectral_diagnostics(const Matrix& embeddings, std::span<const int> labels,
                                    int k_neighbors, double threshold) {
  if (static_cast<Index>(labels.size()) != embeddings.rows())
    throw InputError("label count does not match embedding rows");
  const Adjacency graph = mutual_knn_graph(embeddings, k_neighbors);
  SpectralReport report;
  report.threshold = threshold;
  report.edge_count = graph.count() / 2;
  if (report.edge_count == 0) throw InputError("mutual kNN graph has no edges");

  Eigen::SelfAdjointEigenSolver<Matrix> solver(normalized_laplacian(graph), Eigen::EigenvaluesOnly);
  report.eigenvalues = solver.eigenvalues();
  report.near_zero_eigenvalues = static_cast<int>((report.eigenvalues.array() < threshold).count());

  const Vector degree = graph.cast<double>().rowwise().sum();
  const double total_volume = degree.sum();
  const int n_labels = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  for (int c = 0; c < n_labels; ++c) {
    double volume = 0.0, cut = 0.0;
    for (Index u = 0; u < graph.rows(); ++u) {
      if (labels[static_cast<std::size_t>(u)] != c) continue;
      volume += degree[u];
      for (Index v = 0; v < graph.cols(); ++v)
        if (graph(u, v) && labels[static_cast<std::size_t>(v)] != c) cut += 1.0;
    }
    const double denom = std::min(volume, total_volume - volume);
    report.conductance.push_back(denom > 0 ? cut / denom : std::nan(""));
  }
  return report;
}

}  // namespace madood
