#pragma once

// Per-family spherical Gaussian boundaries over embeddings and the
// multi-centroid z-score gate.
//
// Each in-distribution family k is summarized by its embedding centroid mu_k,
// an isotropic scale sigma_k, and the mean m_k / population std s_k of the
// training distances ||e - mu_k||. A new embedding gets one z-score per family,
// z_k = (||e - mu_k|| - m_k) / s_k, and is in-distribution when at least one
// z_k falls inside the band [-band, +band] (or below +band in one-sided mode).

#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "madood/common.hpp"

namespace madood {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct ClassBoundary {
  int class_id = 0;
  VectorX<Scalar> centroid;
  Scalar sigma_iso = 0;  // RMS per-coordinate deviation from the centroid
  Scalar dist_mean = 0;  // m_k
  Scalar dist_std = 0;   // s_k, population
  Index n_samples = 0;
};

template <typename Scalar>
struct BoundarySet {
  std::vector<ClassBoundary<Scalar>> boundaries;
  Index embedding_dim = 0;
  Scalar band = 1;

  int num_classes() const { return static_cast<int>(boundaries.size()); }

  /// Pooled isotropic scale, sqrt(sum n_k sigma_k^2 / sum n_k).
  Scalar shared_sigma() const {
    Scalar num = 0, den = 0;
    for (const auto& b : boundaries) {
      num += static_cast<Scalar>(b.n_samples) * b.sigma_iso * b.sigma_iso;
      den += static_cast<Scalar>(b.n_samples);
    }
    return std::sqrt(num / den);
  }
};

using ClassBoundaryd = ClassBoundary<double>;
using BoundarySetd = BoundarySet<double>;

/// Fits one boundary per class from row-wise embeddings.
template <typename Derived>
BoundarySet<typename Derived::Scalar> fit_boundaries(const Eigen::MatrixBase<Derived>& embeddings,
                                                     std::span<const int> labels, int num_classes) {
  using Scalar = typename Derived::Scalar;
  if (static_cast<Index>(labels.size()) != embeddings.rows())
    throw InputError("label count does not match embedding rows");
  if (num_classes < 1) throw InputError("need at least one class");
  const Index d = embeddings.cols();

  std::vector<std::vector<Index>> members(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw InputError("label " + std::to_string(labels[i]) + " out of range");
    members[static_cast<std::size_t>(labels[i])].push_back(static_cast<Index>(i));
  }

  BoundarySet<Scalar> set;
  set.embedding_dim = d;
  for (int k = 0; k < num_classes; ++k) {
    const auto& rows = members[static_cast<std::size_t>(k)];
    const auto n = static_cast<Index>(rows.size());
    if (n < 2)
      throw InputError("class " + std::to_string(k) + " has " + std::to_string(n) +
                       " samples; a boundary needs at least 2");
    ClassBoundary<Scalar> b;
    b.class_id = k;
    b.n_samples = n;
    b.centroid = VectorX<Scalar>::Zero(d);
    for (Index r : rows) b.centroid += embeddings.row(r).transpose();
    b.centroid /= static_cast<Scalar>(n);

    VectorX<Scalar> dist(n);
    Scalar sq_sum = 0;
    for (Index i = 0; i < n; ++i) {
      const Scalar sq = (embeddings.row(rows[static_cast<std::size_t>(i)]).transpose() - b.centroid).squaredNorm();
      sq_sum += sq;
      dist[i] = std::sqrt(sq);
    }
    b.sigma_iso = std::sqrt(sq_sum / static_cast<Scalar>(n * d));
    b.dist_mean = dist.mean();
    b.dist_std = std::sqrt((dist.array() - b.dist_mean).square().mean());
    // Below a few ulps of m_k the spread is round-off, not data.
    if (!(b.dist_std > 8 * std::numeric_limits<Scalar>::epsilon() * std::max<Scalar>(b.dist_mean, 1)))
      throw InputError("class " + std::to_string(k) +
                       " is degenerate: all training distances to its centroid are equal");
    if (!(b.sigma_iso > 0)) throw InputError("class " + std::to_string(k) + " has zero spread");
    set.boundaries.push_back(std::move(b));
  }
  return set;
}

/// log N(x | mu, sigma^2 I) = -d/2 log(2 pi sigma^2) - ||x - mu||^2 / (2 sigma^2)
template <typename DerivedX, typename DerivedMu>
typename DerivedX::Scalar log_gaussian_density(const Eigen::MatrixBase<DerivedX>& x,
                                               const Eigen::MatrixBase<DerivedMu>& mu,
                                               typename DerivedX::Scalar sigma) {
  using Scalar = typename DerivedX::Scalar;
  if (x.size() != mu.size()) throw InputError("density: dimension mismatch");
  const auto d = static_cast<Scalar>(x.size());
  const Scalar var = sigma * sigma;
  return -Scalar(0.5) * d * std::log(2 * std::numbers::pi_v<Scalar> * var) -
         (x - mu).squaredNorm() / (2 * var);
}

template <typename DerivedX, typename DerivedMu>
typename DerivedX::Scalar gaussian_density(const Eigen::MatrixBase<DerivedX>& x,
                                           const Eigen::MatrixBase<DerivedMu>& mu,
                                           typename DerivedX::Scalar sigma) {
  return std::exp(log_gaussian_density(x, mu, sigma));
}

template <typename Derived>
typename Derived::Scalar log_gaussian_density(const Eigen::MatrixBase<Derived>& x,
                                              const ClassBoundary<typename Derived::Scalar>& b) {
  return log_gaussian_density(x, b.centroid, b.sigma_iso);
}

template <typename Derived>
typename Derived::Scalar gaussian_density(const Eigen::MatrixBase<Derived>& x,
                                          const ClassBoundary<typename Derived::Scalar>& b) {
  return gaussian_density(x, b.centroid, b.sigma_iso);
}

template <typename Scalar>
Scalar z_score(Scalar value, Scalar mean, Scalar std_dev) {
  if (!(std_dev > 0)) throw InputError("z-score needs a positive standard deviation");
  return (value - mean) / std_dev;
}

/// std / mean. Diagnostic only; not on the decision path.
template <typename Scalar>
Scalar coefficient_of_variation(Scalar mean, Scalar std_dev) {
  if (mean == 0) throw InputError("coefficient of variation undefined for zero mean");
  return std_dev / mean;
}

enum class GateDecision { in_distribution, out_of_distribution };

/// Outlier tiers: |z| > 1 possible outlier, |z| > 2 highly suspicious.
enum class Suspicion { none, possible_outlier, highly_suspicious };

struct GateOptions {
  double band = 1.0;
  /// Accept z_k <= band instead of |z_k| <= band.
  bool one_sided = false;
};

template <typename Scalar>
struct OodVerdict {
  VectorX<Scalar> z_scores;
  Scalar min_abs_z = 0;
  GateDecision decision = GateDecision::out_of_distribution;
  int nearest_class = 0;
  Scalar confidence = 0;
  Suspicion suspicion = Suspicion::none;  // from min |z_k|; metadata only

  bool in_distribution() const { return decision == GateDecision::in_distribution; }
};

/// Applies the gate to a vector of per-family z-scores.
///
/// nearest_class is argmin |z_k| (argmin z_k when one-sided), lowest index on
/// ties. Confidence is the softmax of {-|z_k|} evaluated at nearest_class.
template <typename Derived>
OodVerdict<typename Derived::Scalar> decide(const Eigen::MatrixBase<Derived>& z, const GateOptions& opt = {}) {
  using Scalar = typename Derived::Scalar;
  if (z.size() == 0) throw InputError("gate needs at least one class boundary");
  if (!(opt.band > 0)) throw InputError("band must be positive");
  OodVerdict<Scalar> v;
  v.z_scores = z;
  const VectorX<Scalar> abs_z = z.cwiseAbs();
  const VectorX<Scalar>& rank = opt.one_sided ? v.z_scores : abs_z;
  Index best = 0;
  for (Index k = 1; k < rank.size(); ++k)
    if (rank[k] < rank[best]) best = k;
  v.nearest_class = static_cast<int>(best);
  v.min_abs_z = abs_z.minCoeff();

  const auto band = static_cast<Scalar>(opt.band);
  bool inside = false;
  for (Index k = 0; k < z.size(); ++k)
    inside = inside || (opt.one_sided ? z[k] <= band : abs_z[k] <= band);
  v.decision = inside ? GateDecision::in_distribution : GateDecision::out_of_distribution;

  const Scalar top = -abs_z.minCoeff();
  const Scalar norm = (-abs_z.array() - top).exp().sum();
  v.confidence = std::exp(-abs_z[best] - top) / norm;

  v.suspicion = v.min_abs_z > 2 ? Suspicion::highly_suspicious
                : v.min_abs_z > 1 ? Suspicion::possible_outlier
                                  : Suspicion::none;
  return v;
}

/// Per-family z_k = (||e - mu_k|| - m_k) / s_k.
template <typename Derived>
VectorX<typename Derived::Scalar> boundary_z_scores(const Eigen::MatrixBase<Derived>& embedding,
                                                    const BoundarySet<typename Derived::Scalar>& set) {
  using Scalar = typename Derived::Scalar;
  if (set.boundaries.empty()) throw InputError("empty boundary set");
  if (embedding.size() != set.embedding_dim)
    throw InputError("embedding has dimension " + std::to_string(embedding.size()) +
                     ", boundaries expect " + std::to_string(set.embedding_dim));
  const VectorX<Scalar> e = embedding;
  VectorX<Scalar> z(set.num_classes());
  for (int k = 0; k < set.num_classes(); ++k) {
    const auto& b = set.boundaries[static_cast<std::size_t>(k)];
    const Scalar dist = (e - b.centroid).norm();
    z[k] = z_score(dist, b.dist_mean, b.dist_std);
  }
  return z;
}

template <typename Derived>
OodVerdict<typename Derived::Scalar> classify_sample(const Eigen::MatrixBase<Derived>& embedding,
                                                     const BoundarySet<typename Derived::Scalar>& set,
                                                     const GateOptions& opt = {}) {
  return decide(boundary_z_scores(embedding, set), opt);
}

std::string to_string(GateDecision d);
std::string to_string(Suspicion s);

// BoundarySet text file:
//   K=<k> dim=<d> band=<b>
//   class_id<TAB>sigma_iso<TAB>dist_mean<TAB>dist_std<TAB>n<TAB>mu_1,...,mu_d
void write_boundaries(const std::filesystem::path& path, const BoundarySetd& set);
BoundarySetd read_boundaries(const std::filesystem::path& path);
std::string format_boundaries(const BoundarySetd& set);
BoundarySetd parse_boundaries(std::string_view text);

// ---------------------------------------------------------------------------
// Graph diagnostics over embeddings (advisory; not on the prediction path).

using Adjacency = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// L(u,u) = 1 if deg(u) != 0; L(u,v) = -1/sqrt(deg u deg v) on edges; else 0.
Matrix normalized_laplacian(const Adjacency& adjacency);

/// Mutual k-nearest-neighbour graph (Euclidean) over the rows of `points`.
Adjacency mutual_knn_graph(const Matrix& points, int k_neighbors);

struct SpectralReport {
  Vector eigenvalues;           // ascending
  int near_zero_eigenvalues = 0;  // count below `threshold`
  double threshold = 0.1;
  Index edge_count = 0;
  /// cut(S, S^c) / min(vol S, vol S^c) per label; NaN when undefined.
  std::vector<double> conductance;
};

SpectralReport spectral_diagnostics(const Matrix& embeddings, std::span<const int> labels,
                                    int k_neighbors, double threshold = 0.1);

}  // namespace madood
