#include "reefclust/cluster.hpp"
#include "reefclust/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

using namespace reefclust;
using namespace reefclust::cluster;

namespace {

RowMatrix blobs(std::size_t per, const std::vector<Eigen::Vector2d>& centres, double sd, std::uint64_t seed,
                std::vector<int>* truth = nullptr) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, sd);
  RowMatrix x(static_cast<Eigen::Index>(per * centres.size()), 2);
  Eigen::Index r = 0;
  for (std::size_t c = 0; c < centres.size(); ++c)
    for (std::size_t i = 0; i < per; ++i, ++r) {
      x(r, 0) = centres[c].x() + g(rng);
      x(r, 1) = centres[c].y() + g(rng);
      if (truth) truth->push_back(static_cast<int>(c));
    }
  return x;
}

struct OracleMerge {
  std::set<std::size_t> members;
  double distance;
};

// Naive Ward: recompute every pairwise distance at every step.
std::vector<OracleMerge> brute_force_ward(const RowMatrix& x) {
  std::vector<std::set<std::size_t>> clusters;
  for (Eigen::Index i = 0; i < x.rows(); ++i) clusters.push_back({static_cast<std::size_t>(i)});
  auto centroid = [&](const std::set<std::size_t>& s) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(x.cols());
    for (auto i : s) mu += x.row(static_cast<Eigen::Index>(i)).transpose();
    return Eigen::VectorXd(mu / static_cast<double>(s.size()));
  };
  std::vector<OracleMerge> out;
  while (clusters.size() > 1) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t ba = 0, bb = 0;
    for (std::size_t a = 0; a < clusters.size(); ++a)
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        const double na = static_cast<double>(clusters[a].size()), nb = static_cast<double>(clusters[b].size());
        const double d = 2.0 * na * nb / (na + nb) * (centroid(clusters[a]) - centroid(clusters[b])).squaredNorm();
        if (d < best) best = d, ba = a, bb = b;
      }
    clusters[ba].insert(clusters[bb].begin(), clusters[bb].end());
    clusters.erase(clusters.begin() + static_cast<long>(bb));
    out.push_back({clusters[ba], std::sqrt(best)});
  }
  return out;
}

std::set<std::size_t> merge_members(const std::vector<Merge>& merges, std::size_t n, std::size_t m) {
  std::set<std::size_t> out;
  std::vector<std::size_t> stack{merges[m].a, merges[m].b};
  while (!stack.empty()) {
    const auto id = stack.back();
    stack.pop_back();
    if (id < n) out.insert(id);
    else stack.insert(stack.end(), {merges[id - n].a, merges[id - n].b});
  }
  return out;
}

bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<int, int> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (ab.count(a[i]) && ab[a[i]] != b[i]) return false;
    if (ba.count(b[i]) && ba[b[i]] != a[i]) return false;
    ab[a[i]] = b[i];
    ba[b[i]] = a[i];
  }
  return true;
}

}  // namespace

TEST_SUITE("cluster") {

TEST_CASE("kmeans separates blobs and never increases inertia") {
  std::vector<int> truth;
  const auto x = blobs(100, {{0, 0}, {10, 0}, {0, 10}}, 1.0, 5, &truth);
  const auto r = kmeans(x, 3, 1);
  CHECK(r.labels.size() == 300);
  CHECK(!r.collapsed);
  CHECK(evaluate_aligned(r.labels, truth, 3).accuracy == 1.0);
  for (std::size_t i = 1; i < r.inertia_history.size(); ++i) CHECK(r.inertia_history[i] <= r.inertia_history[i - 1] + 1e-9);
  // Every point sits with its nearest centroid and centroids are cluster means.
  CHECK(assign_nearest(x, r.centroids) == r.labels);
  for (int k = 0; k < 3; ++k) {
    Eigen::RowVectorXd mu = Eigen::RowVectorXd::Zero(2);
    int n = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      if (r.labels[static_cast<std::size_t>(i)] == k) mu += x.row(i), ++n;
    CHECK((mu / n - r.centroids.row(k)).norm() < 1e-9);
  }
  CHECK(kmeans(x, 3, 1).labels == r.labels);
}

TEST_CASE("kmeans edge cases") {
  RowMatrix same = RowMatrix::Ones(10, 2);
  const auto r = kmeans(same, 3, 0);
  CHECK(r.collapsed);
  CHECK(r.inertia == 0.0);
  CHECK_THROWS_AS(kmeans(same, 0, 0), ConfigError);
  CHECK_THROWS_AS(kmeans(same, 11, 0), ConfigError);
  CHECK(kmeans(same, 1, 0).labels == std::vector<int>(10, 0));
}

TEST_CASE("ward increase closed form") {
  Eigen::VectorXd a(2), b(2);
  a << 0, 0;
  b << 3, 4;
  CHECK(ward_increase(1, a, 1, b) == doctest::Approx(25.0));
  CHECK(ward_increase(2, a, 3, b) == doctest::Approx(2.4 * 25.0));
}

TEST_CASE("ward merge sequence equals the brute-force oracle") {
  for (std::size_t n : {7u, 40u, 120u, 200u}) {
    CAPTURE(n);
    Rng rng(n);
    RowMatrix x(static_cast<Eigen::Index>(n), 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = uniform(rng, -5.0, 5.0);
    const auto merges = ward_linkage(x);
    const auto oracle = brute_force_ward(x);
    REQUIRE(merges.size() == n - 1);
    for (std::size_t m = 0; m < n - 1; ++m) {
      CHECK(merges[m].distance == doctest::Approx(oracle[m].distance).epsilon(1e-9));
      CHECK(merges[m].size == oracle[m].members.size());
      CHECK(merge_members(merges, n, m) == oracle[m].members);
    }
    for (int k : {1, 2, 3, 5}) {
      const auto labels = cut_tree(merges, n, k);
      CHECK(std::set<int>(labels.begin(), labels.end()).size() == static_cast<std::size_t>(k));
    }
  }
}

TEST_CASE("ward agglomerative clusters blobs") {
  std::vector<int> truth;
  const auto x = blobs(60, {{0, 0}, {8, 8}}, 1.0, 2, &truth);
  const auto r = ward_agglomerative(x, 2);
  CHECK(same_partition(r.labels, truth));
  CHECK(r.merges.size() == 119);
  CHECK(r.centroids.rows() == 2);
}

TEST_CASE("gaussian mixture classification") {
  GaussianMixture mix;
  mix.means = {Eigen::Vector2d(0, 0), Eigen::Vector2d(4, 0)};
  mix.covariances = {Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Identity()};
  mix.priors = Eigen::Vector2d(0.5, 0.5);
  CHECK(gaussian_ml_classify(Eigen::Vector2d(1.9, 3.0), mix) == 0);
  CHECK(gaussian_ml_classify(Eigen::Vector2d(2.1, -3.0), mix) == 1);
  const auto lp = log_posteriors(Eigen::Vector2d(2.0, 1.0), mix);
  CHECK(lp[0] == doctest::Approx(lp[1]));
  mix.priors = Eigen::Vector2d(0.7, 0.4);
  CHECK_THROWS_AS(mix.validate(), NumericError);
  mix.priors = Eigen::Vector2d(0.5, 0.5);
  mix.covariances[1] << 1, 2, 2, 1;
  CHECK_THROWS_AS(mix.validate(), NumericError);
}

TEST_CASE("em log-likelihood is monotone and recovers means") {
  std::vector<int> truth;
  const auto x = blobs(300, {{-3, 0}, {3, 1}}, 1.0, 11, &truth);
  const auto r = em_gmm(x, 2, 4);
  REQUIRE(r.log_likelihood.size() >= 2);
  for (std::size_t i = 1; i < r.log_likelihood.size(); ++i)
    CHECK(r.log_likelihood[i] >= r.log_likelihood[i - 1] - 1e-8 * std::abs(r.log_likelihood[i - 1]));
  std::vector<Eigen::VectorXd> means = r.mixture.means;
  std::sort(means.begin(), means.end(), [](const auto& a, const auto& b) { return a[0] < b[0]; });
  CHECK((means[0] - Eigen::Vector2d(-3, 0)).norm() < 0.2);
  CHECK((means[1] - Eigen::Vector2d(3, 1)).norm() < 0.2);
  for (Eigen::Index i = 0; i < r.responsibilities.rows(); ++i)
    CHECK(r.responsibilities.row(i).sum() == doctest::Approx(1.0));
  CHECK(mixture_log_likelihood(x, r.mixture) == doctest::Approx(r.log_likelihood.back()).epsilon(1e-6));
}

TEST_CASE("em with one component is the sample mean and covariance") {
  const auto x = blobs(200, {{1, 2}}, 2.0, 3);
  const auto r = em_gmm(x, 1, 0);
  const Eigen::VectorXd mu = x.colwise().mean().transpose();
  const RowMatrix c = x.rowwise() - mu.transpose();
  const Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(x.rows());
  CHECK((r.mixture.means[0] - mu).norm() < 1e-9);
  CHECK((r.mixture.covariances[0] - cov).norm() < 1e-5);
  CHECK(r.mixture.priors[0] == doctest::Approx(1.0));
}

TEST_CASE("fig1 datasets") {
  SUBCASE("shared isotropic covariance: kmeans matches the ML boundary") {
    const auto spec = fig1_spec(1);
    const auto pts = gen_gaussian_clusters(spec, 7);
    CHECK(pts.points.rows() == static_cast<Eigen::Index>(3 * spec.n_per_cluster));
    const auto km = kmeans(pts.points, 3, 7);
    const auto mix = spec.mixture();
    std::vector<int> ml;
    for (Eigen::Index i = 0; i < pts.points.rows(); ++i) ml.push_back(gaussian_ml_classify(pts.points.row(i).transpose(), mix));
    CHECK(evaluate_aligned(km.labels, ml, 3).accuracy >= 0.99);
  }
  SUBCASE("rotated covariances: classifier equals direct density comparison") {
    const auto spec = fig1_spec(2);
    const auto mix = spec.mixture();
    CHECK(spec.rotations_deg == std::vector<double>{120.0, 25.0, 0.0});
    // Direct evaluation of prior * N(x; mu, Sigma) with an explicit inverse and determinant.
    std::vector<Eigen::Matrix2d> inv;
    std::vector<double> norm;
    for (int k = 0; k < 3; ++k) {
      const Eigen::Matrix2d s = mix.covariances[static_cast<std::size_t>(k)];
      inv.push_back(s.inverse());
      norm.push_back(mix.priors[k] / (2.0 * std::numbers::pi * std::sqrt(s.determinant())));
    }
    std::size_t agree = 0, total = 0;
    for (int i = 0; i < 317; ++i)
      for (int j = 0; j < 317; ++j, ++total) {
        const Eigen::Vector2d x(-15.0 + 30.0 * i / 316.0, -15.0 + 30.0 * j / 316.0);
        int best = 0;
        double best_p = -1.0;
        for (int k = 0; k < 3; ++k) {
          const Eigen::Vector2d d = x - mix.means[static_cast<std::size_t>(k)];
          const double p = norm[static_cast<std::size_t>(k)] * std::exp(-0.5 * d.dot(inv[static_cast<std::size_t>(k)] * d));
          if (p > best_p) best_p = p, best = k;
        }
        agree += gaussian_ml_classify(x, mix) == best;
      }
    CHECK(total >= 100000);
    CHECK(agree == total);
  }
}

TEST_CASE("label alignment and metrics") {
  const std::vector<int> truth{0, 0, 0, 1, 1, 1, 1, 1};
  const std::vector<int> pred{1, 1, 0, 0, 0, 0, 0, 0};
  const auto perm = align_labels(pred, truth, 2);
  CHECK(perm == std::vector<int>{1, 0});
  const auto r = evaluate_aligned(pred, truth, 2, 0);
  CHECK(r.accuracy == doctest::Approx(7.0 / 8.0));
  CHECK(*r.precision == 1.0);
  CHECK(*r.recall == doctest::Approx(2.0 / 3.0));
  CHECK(r.confusion[0][0] == 2);
  CHECK(r.confusion[1][1] == 5);

  const auto none = evaluate(std::vector<int>(8, 1), truth, 2, 0);
  CHECK(!none.precision.has_value());
  CHECK(*none.recall == 0.0);
  const auto no_pos = evaluate(std::vector<int>(3, 0), std::vector<int>(3, 1), 2, 0);
  CHECK(!no_pos.recall.has_value());
  CHECK_THROWS_AS(align_labels(std::vector<int>(3, 0), std::vector<int>(2, 0), 2), DataError);
  CHECK_THROWS_AS(align_labels(pred, truth, 9), ConfigError);
}

}
