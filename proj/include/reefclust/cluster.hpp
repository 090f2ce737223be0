#pragma once

#include "reefclust/core.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace reefclust::cluster {

/// One agglomeration step. Leaves are 0..N-1; the cluster created by merge m has id N+m.
struct Merge {
  std::size_t a = 0;
  std::size_t b = 0;
  double distance = 0.0;  // sqrt of ward_increase
  std::size_t size = 0;
};

struct ClusterResult {
  std::vector<int> labels;
  RowMatrix centroids;
  double inertia = 0.0;
  std::vector<double> inertia_history;
  int iterations = 0;
  std::uint64_t seed = 0;
  std::vector<Merge> merges;
  bool collapsed = false;  // fewer non-empty clusters than requested
};

/// Lloyd iterations from farthest-point seeding. Empty clusters are re-seeded with the point
/// farthest from its centroid. Nearest-centroid ties go to the lowest index.
ClusterResult kmeans(const RowMatrix& x, int k, std::uint64_t seed, int max_iter = 300, double tol = 1e-6);

std::vector<int> assign_nearest(const RowMatrix& x, const RowMatrix& centroids);

/// Twice the increase in within-cluster sum of squares for merging two clusters (squared Ward distance).
double ward_increase(double n_a, const Eigen::VectorXd& mu_a, double n_b, const Eigen::VectorXd& mu_b);

/// Full Ward dendrogram (nearest-neighbour chain, O(N) extra memory) sorted by merge distance.
std::vector<Merge> ward_linkage(const RowMatrix& x);

/// Flat labels after applying the first N-k merges; labels numbered by first appearance.
std::vector<int> cut_tree(const std::vector<Merge>& merges, std::size_t n, int k);

ClusterResult ward_agglomerative(const RowMatrix& x, int k);

struct GaussianMixture {
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;
  Eigen::VectorXd priors;

  int k() const noexcept { return static_cast<int>(means.size()); }
  /// Throws NumericError when a covariance is not SPD or priors do not sum to 1.
  void validate() const;
};

/// log p(C_k | x) up to a shared constant.
Eigen::VectorXd log_posteriors(const Eigen::VectorXd& x, const GaussianMixture& mix);

int gaussian_ml_classify(const Eigen::VectorXd& x, const GaussianMixture& mix);

struct EmResult {
  GaussianMixture mixture;
  RowMatrix responsibilities;
  std::vector<double> log_likelihood;
  int iterations = 0;
};

EmResult em_gmm(const RowMatrix& x, int k, std::uint64_t seed, int max_iter = 200, double reg = 1e-6,
                double tol = 1e-10);

double mixture_log_likelihood(const RowMatrix& x, const GaussianMixture& mix);

/// 2D Gaussian clusters with covariance R(theta) diag(var_x, var_y) R(theta)^T.
struct GaussianClusterSpec {
  std::vector<Eigen::Vector2d> means;
  double var_x = 3.0;
  double var_y = 3.0;
  std::vector<double> rotations_deg;
  std::size_t n_per_cluster = 6666;

  GaussianMixture mixture() const;
};

/// Dataset 1 (shared 3*I) or dataset 2 (rotations 120/25/0 deg, variances 6 and 3).
GaussianClusterSpec fig1_spec(int dataset);

struct LabeledPoints {
  RowMatrix points;
  std::vector<int> labels;
};

LabeledPoints gen_gaussian_clusters(const GaussianClusterSpec& spec, std::uint64_t seed);

/// perm[predicted id] = truth id, maximising agreement. Exhaustive; K > 8 is rejected.
std::vector<int> align_labels(const std::vector<int>& pred, const std::vector<int>& truth, int k);

std::vector<int> apply_permutation(const std::vector<int>& labels, const std::vector<int>& perm);

struct EvalReport {
  double accuracy = 0.0;
  std::optional<double> precision;  // empty when nothing was predicted positive
  std::optional<double> recall;     // empty when there are no positive examples
  std::vector<std::vector<std::size_t>> confusion;  // [truth][pred]
  std::vector<int> permutation;
  int positive_class = 0;
};

/// Metrics with `positive` (whale = 0) as the positive class. Labels must already be aligned.
EvalReport evaluate(const std::vector<int>& pred, const std::vector<int>& truth, int k, int positive = 0);

/// align_labels followed by evaluate; the permutation is recorded in the report.
EvalReport evaluate_aligned(const std::vector<int>& pred, const std::vector<int>& truth, int k, int positive = 0);

nlohmann::json to_json(const EvalReport& r);

void write_labels_csv(std::ostream& os, const std::vector<std::string>& event_ids, const std::vector<int>& labels);
nlohmann::json dendrogram_json(const std::vector<Merge>& merges);

}  // namespace reefclust::cluster
