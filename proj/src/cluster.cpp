#include "reefclust/cluster.hpp"

#include "reefclust/rng.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>

namespace reefclust::cluster {
namespace {

double sq_dist(const RowMatrix& a, Eigen::Index i, const RowMatrix& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

void check_labels(const std::vector<int>& labels, int k, const char* what) {
  for (int v : labels)
    if (v < 0 || v >= k) throw DataError(std::string(what) + ": label outside [0, K)");
}

}  // namespace

std::vector<int> assign_nearest(const RowMatrix& x, const RowMatrix& centroids) {
  std::vector<int> labels(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_k = 0;
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double d = sq_dist(x, i, centroids, c);
      if (d < best) {
        best = d;
        best_k = static_cast<int>(c);
      }
    }
    labels[static_cast<std::size_t>(i)] = best_k;
  }
  return labels;
}

ClusterResult kmeans(const RowMatrix& x, int k, std::uint64_t seed, int max_iter, double tol) {
  const Eigen::Index n = x.rows();
  if (k <= 0 || k > n) throw ConfigError("kmeans: K must lie in [1, N]");

  ClusterResult res;
  res.seed = seed;
  res.centroids.resize(k, x.cols());

  // Farthest-point seeding from a seeded first pick.
  Rng rng(seed);
  std::vector<double> nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Eigen::Index pick = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
  for (int c = 0; c < k; ++c) {
    res.centroids.row(c) = x.row(pick);
    Eigen::Index far = 0;
    double far_d = -1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& d = nearest[static_cast<std::size_t>(i)];
      d = std::min(d, sq_dist(x, i, res.centroids, c));
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    pick = far;
  }

  std::vector<double> point_d(static_cast<std::size_t>(n));
  for (int it = 0; it < max_iter; ++it) {
    res.labels = assign_nearest(x, res.centroids);
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      point_d[static_cast<std::size_t>(i)] = sq_dist(x, i, res.centroids, res.labels[static_cast<std::size_t>(i)]);
      inertia += point_d[static_cast<std::size_t>(i)];
    }
    res.inertia = inertia;
    res.inertia_history.push_back(inertia);

    RowMatrix next = RowMatrix::Zero(k, x.cols());
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = res.labels[static_cast<std::size_t>(i)];
      next.row(c) += x.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        next.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // Re-seed an empty cluster with the worst-served point.
      const auto worst = std::distance(point_d.begin(), std::max_element(point_d.begin(), point_d.end()));
      next.row(c) = x.row(worst);
      point_d[static_cast<std::size_t>(worst)] = 0.0;
    }
    double shift = 0.0;
    for (int c = 0; c < k; ++c) shift = std::max(shift, (next.row(c) - res.centroids.row(c)).norm());
    res.centroids = next;
    res.iterations = it + 1;
    if (shift < tol) break;
  }
  res.labels = assign_nearest(x, res.centroids);
  res.inertia = 0.0;
  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    res.inertia += sq_dist(x, i, res.centroids, res.labels[static_cast<std::size_t>(i)]);
    ++counts[static_cast<std::size_t>(res.labels[static_cast<std::size_t>(i)])];
  }
  res.collapsed = std::any_of(counts.begin(), counts.end(), [](std::size_t c) { return c == 0; });
  return res;
}

double ward_increase(double n_a, const Eigen::VectorXd& mu_a, double n_b, const Eigen::VectorXd& mu_b) {
  return 2.0 * n_a * n_b / (n_a + n_b) * (mu_a - mu_b).squaredNorm();
}

std::vector<Merge> ward_linkage(const RowMatrix& x) {
  const std::size_t n = static_cast<std::size_t>(x.rows());
  if (n < 2) return {};
  RowMatrix centroid = x;
  std::vector<double> size(n, 1.0);
  std::vector<char> active(n, 1);

  struct RawMerge {
    std::size_t rep_a, rep_b;
    double d;
    std::size_t size;
  };
  std::vector<RawMerge> raw;
  raw.reserve(n - 1);

  auto dist = [&](std::size_t a, std::size_t b) {
    const double na = size[a], nb = size[b];
    return 2.0 * na * nb / (na + nb) *
           (centroid.row(static_cast<Eigen::Index>(a)) - centroid.row(static_cast<Eigen::Index>(b))).squaredNorm();
  };

  std::vector<std::size_t> chain;
  chain.reserve(n);
  std::size_t first_active = 0;
  while (raw.size() < n - 1) {
    if (chain.empty()) {
      while (!active[first_active]) ++first_active;
      chain.push_back(first_active);
    }
    std::size_t a = 0, b = 0;
    double d_ab = 0.0;
    while (true) {
      a = chain.back();
      const bool has_prev = chain.size() >= 2;
      const std::size_t prev = has_prev ? chain[chain.size() - 2] : 0;
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_c = n;
      for (std::size_t c = 0; c < n; ++c) {
        if (!active[c] || c == a) continue;
        const double d = dist(a, c);
        if (d < best) {
          best = d;
          best_c = c;
        }
      }
      // Prefer the chain predecessor on ties so the chain always terminates.
      if (has_prev && dist(a, prev) <= best) {
        best_c = prev;
        best = dist(a, prev);
      }
      if (has_prev && best_c == prev) {
        b = prev;
        d_ab = best;
        break;
      }
      chain.push_back(best_c);
    }
    chain.pop_back();
    chain.pop_back();

    const std::size_t keep = std::min(a, b), drop = std::max(a, b);
    const auto ki = static_cast<Eigen::Index>(keep), di = static_cast<Eigen::Index>(drop);
    const double total = size[keep] + size[drop];
    centroid.row(ki) = (size[keep] * centroid.row(ki) + size[drop] * centroid.row(di)) / total;
    size[keep] = total;
    active[drop] = 0;
    raw.push_back({keep, drop, d_ab, static_cast<std::size_t>(total)});
  }

  std::stable_sort(raw.begin(), raw.end(), [](const RawMerge& l, const RawMerge& r) { return l.d < r.d; });

  // Translate leaf representatives into dendrogram node ids.
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<std::size_t> node_of(n);
  std::iota(node_of.begin(), node_of.end(), 0);
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  std::vector<Merge> out;
  out.reserve(raw.size());
  for (std::size_t m = 0; m < raw.size(); ++m) {
    const std::size_t ra = find(raw[m].rep_a), rb = find(raw[m].rep_b);
    const std::size_t ida = node_of[ra], idb = node_of[rb];
    parent[rb] = ra;
    node_of[ra] = n + m;
    out.push_back({std::min(ida, idb), std::max(ida, idb), std::sqrt(raw[m].d), raw[m].size});
  }
  return out;
}

std::vector<int> cut_tree(const std::vector<Merge>& merges, std::size_t n, int k) {
  if (k <= 0) throw ConfigError("cut_tree: K must be positive");
  std::vector<std::size_t> parent(2 * n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  const std::size_t steps = n > static_cast<std::size_t>(k) ? n - static_cast<std::size_t>(k) : 0;
  for (std::size_t m = 0; m < steps && m < merges.size(); ++m) {
    parent[find(merges[m].a)] = n + m;
    parent[find(merges[m].b)] = n + m;
  }
  std::vector<int> labels(n);
  std::vector<std::size_t> roots;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = find(i);
    auto it = std::find(roots.begin(), roots.end(), r);
    if (it == roots.end()) {
      roots.push_back(r);
      it = roots.end() - 1;
    }
    labels[i] = static_cast<int>(it - roots.begin());
  }
  return labels;
}

ClusterResult ward_agglomerative(const RowMatrix& x, int k) {
  if (k <= 0) throw ConfigError("ward: K must be positive");
  if (k > x.rows()) throw ConfigError("ward: K exceeds the number of points");
  ClusterResult res;
  res.merges = ward_linkage(x);
  res.labels = cut_tree(res.merges, static_cast<std::size_t>(x.rows()), k);
  res.centroids = RowMatrix::Zero(k, x.cols());
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    res.centroids.row(res.labels[static_cast<std::size_t>(i)]) += x.row(i);
    counts[static_cast<std::size_t>(res.labels[static_cast<std::size_t>(i)])] += 1.0;
  }
  for (int c = 0; c < k; ++c) res.centroids.row(c) /= counts[static_cast<std::size_t>(c)];
  for (Eigen::Index i = 0; i < x.rows(); ++i) res.inertia += sq_dist(x, i, res.centroids, res.labels[static_cast<std::size_t>(i)]);
  return res;
}

void GaussianMixture::validate() const {
  if (means.empty() || means.size() != covariances.size() || static_cast<std::size_t>(priors.size()) != means.size())
    throw NumericError("mixture: inconsistent component counts");
  if (std::abs(priors.sum() - 1.0) > 1e-12 || (priors.array() <= 0.0).any())
    throw NumericError("mixture: priors must be positive and sum to 1");
  for (const auto& cov : covariances)
    if (Eigen::LLT<Eigen::MatrixXd>(cov).info() != Eigen::Success) throw NumericError("mixture: covariance is not SPD");
}

namespace {

// log N(x | mu, Sigma) for each row, given a Cholesky factor.
struct GaussianTerm {
  Eigen::VectorXd mean;
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_norm = 0.0;  // -0.5 log|2 pi Sigma|

  GaussianTerm(const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov) : mean(mu), llt(cov) {
    if (llt.info() != Eigen::Success) throw NumericError("covariance is ill-conditioned (Cholesky failed)");
    const Eigen::MatrixXd l = llt.matrixL();
    const double log_det = 2.0 * l.diagonal().array().log().sum();
    if (!std::isfinite(log_det)) throw NumericError("covariance is ill-conditioned (singular)");
    log_norm = -0.5 * (static_cast<double>(mu.size()) * std::log(2.0 * std::numbers::pi) + log_det);
  }

  double log_density(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd z = llt.matrixL().solve(x - mean);
    return log_norm - 0.5 * z.squaredNorm();
  }
};

std::vector<GaussianTerm> terms_of(const GaussianMixture& mix) {
  std::vector<GaussianTerm> t;
  for (int c = 0; c < mix.k(); ++c) t.emplace_back(mix.means[static_cast<std::size_t>(c)], mix.covariances[static_cast<std::size_t>(c)]);
  return t;
}

}  // namespace

Eigen::VectorXd log_posteriors(const Eigen::VectorXd& x, const GaussianMixture& mix) {
  const auto terms = terms_of(mix);
  Eigen::VectorXd out(mix.k());
  for (int c = 0; c < mix.k(); ++c) out[c] = std::log(mix.priors[c]) + terms[static_cast<std::size_t>(c)].log_density(x);
  return out;
}

int gaussian_ml_classify(const Eigen::VectorXd& x, const GaussianMixture& mix) {
  const Eigen::VectorXd lp = log_posteriors(x, mix);
  int best = 0;
  for (int c = 1; c < lp.size(); ++c)
    if (lp[c] > lp[best]) best = c;
  return best;
}

double mixture_log_likelihood(const RowMatrix& x, const GaussianMixture& mix) {
  const auto terms = terms_of(mix);
  double ll = 0.0;
  Eigen::VectorXd lp(mix.k());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::VectorXd xi = x.row(i).transpose();
    for (int c = 0; c < mix.k(); ++c) lp[c] = std::log(mix.priors[c]) + terms[static_cast<std::size_t>(c)].log_density(xi);
    const double m = lp.maxCoeff();
    ll += m + std::log((lp.array() - m).exp().sum());
  }
  return ll;
}

EmResult em_gmm(const RowMatrix& x, int k, std::uint64_t seed, int max_iter, double reg, double tol) {
  const Eigen::Index n = x.rows(), p = x.cols();
  if (k <= 0) throw ConfigError("em_gmm: K must be positive");
  if (n < static_cast<Eigen::Index>(k) * (p + 1)) throw ConfigError("em_gmm: need N >= K (P + 1)");

  EmResult res;
  res.responsibilities = RowMatrix::Zero(n, k);
  const auto init = kmeans(x, k, seed);
  for (Eigen::Index i = 0; i < n; ++i) res.responsibilities(i, init.labels[static_cast<std::size_t>(i)]) = 1.0;

  auto& mix = res.mixture;
  Eigen::VectorXd lp(k);
  for (int it = 0; it < max_iter; ++it) {
    // M step.
    mix.means.assign(static_cast<std::size_t>(k), Eigen::VectorXd::Zero(p));
    mix.covariances.assign(static_cast<std::size_t>(k), Eigen::MatrixXd::Zero(p, p));
    mix.priors = Eigen::VectorXd::Zero(k);
    for (int c = 0; c < k; ++c) {
      const double nk = res.responsibilities.col(c).sum();
      if (!(nk > 0.0)) throw NumericError("em_gmm: component " + std::to_string(c) + " lost all responsibility");
      Eigen::VectorXd mu = (res.responsibilities.col(c).transpose() * x).transpose() / nk;
      Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(p, p);
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd d = x.row(i).transpose() - mu;
        cov.noalias() += res.responsibilities(i, c) * d * d.transpose();
      }
      cov /= nk;
      cov += reg * Eigen::MatrixXd::Identity(p, p);
      mix.means[static_cast<std::size_t>(c)] = mu;
      mix.covariances[static_cast<std::size_t>(c)] = cov;
      mix.priors[c] = nk / static_cast<double>(n);
    }
    mix.priors /= mix.priors.sum();

    // E step.
    const auto terms = terms_of(mix);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd xi = x.row(i).transpose();
      for (int c = 0; c < k; ++c) lp[c] = std::log(mix.priors[c]) + terms[static_cast<std::size_t>(c)].log_density(xi);
      const double m = lp.maxCoeff();
      const double lse = m + std::log((lp.array() - m).exp().sum());
      ll += lse;
      res.responsibilities.row(i) = (lp.array() - lse).exp().transpose();
    }
    if (!std::isfinite(ll)) throw NumericError("em_gmm: non-finite log-likelihood");
    res.log_likelihood.push_back(ll);
    res.iterations = it + 1;
    if (it > 0 && ll - res.log_likelihood[res.log_likelihood.size() - 2] < tol * std::abs(ll)) break;
  }
  mix.validate();
  return res;
}

GaussianMixture GaussianClusterSpec::mixture() const {
  GaussianMixture mix;
  const std::size_t k = means.size();
  for (std::size_t c = 0; c < k; ++c) {
    const double th = (c < rotations_deg.size() ? rotations_deg[c] : 0.0) * std::numbers::pi / 180.0;
    Eigen::Matrix2d r;
    r << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    const Eigen::Matrix2d cov = r * Eigen::Vector2d(var_x, var_y).asDiagonal() * r.transpose();
    mix.means.emplace_back(means[c]);
    mix.covariances.emplace_back(cov);
  }
  mix.priors = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(k), 1.0 / static_cast<double>(k));
  return mix;
}

GaussianClusterSpec fig1_spec(int dataset) {
  GaussianClusterSpec spec;
  spec.means = {Eigen::Vector2d(0.0, 2.0), Eigen::Vector2d(10.0, -8.0), Eigen::Vector2d(21.0, 3.0)};
  spec.n_per_cluster = 6666;
  if (dataset == 1) {
    spec.var_x = spec.var_y = 3.0;
    spec.rotations_deg = {0.0, 0.0, 0.0};
  } else if (dataset == 2) {
    spec.var_x = 6.0;
    spec.var_y = 3.0;
    spec.rotations_deg = {120.0, 25.0, 0.0};
  } else {
    throw ConfigError("fig1 dataset must be 1 or 2");
  }
  return spec;
}

LabeledPoints gen_gaussian_clusters(const GaussianClusterSpec& spec, std::uint64_t seed) {
  const auto mix = spec.mixture();
  Rng rng(seed);
  LabeledPoints out;
  const std::size_t k = spec.means.size();
  out.points.resize(static_cast<Eigen::Index>(k * spec.n_per_cluster), 2);
  out.labels.reserve(k * spec.n_per_cluster);
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const Eigen::Matrix2d l = Eigen::LLT<Eigen::Matrix2d>(Eigen::Matrix2d(mix.covariances[c])).matrixL();
    for (std::size_t i = 0; i < spec.n_per_cluster; ++i, ++row) {
      const Eigen::Vector2d z(normal(rng), normal(rng));
      out.points.row(row) = (spec.means[c] + l * z).transpose();
      out.labels.push_back(static_cast<int>(c));
    }
  }
  return out;
}

std::vector<int> align_labels(const std::vector<int>& pred, const std::vector<int>& truth, int k) {
  if (pred.size() != truth.size()) throw DataError("align_labels: length mismatch");
  if (k <= 0) throw ConfigError("align_labels: K must be positive");
  if (k > 8) throw ConfigError("align_labels: exhaustive alignment limited to K <= 8");
  check_labels(pred, k, "align_labels");
  check_labels(truth, k, "align_labels");
  std::vector<std::vector<std::size_t>> conf(static_cast<std::size_t>(k), std::vector<std::size_t>(static_cast<std::size_t>(k), 0));
  for (std::size_t i = 0; i < pred.size(); ++i) ++conf[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];

  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  std::size_t best_hits = 0;
  bool first = true;
  do {
    std::size_t hits = 0;
    for (int p = 0; p < k; ++p) hits += conf[static_cast<std::size_t>(perm[static_cast<std::size_t>(p)])][static_cast<std::size_t>(p)];
    if (first || hits > best_hits) {
      best_hits = hits;
      best = perm;
      first = false;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<int> apply_permutation(const std::vector<int>& labels, const std::vector<int>& perm) {
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = perm.at(static_cast<std::size_t>(labels[i]));
  return out;
}

EvalReport evaluate(const std::vector<int>& pred, const std::vector<int>& truth, int k, int positive) {
  if (pred.size() != truth.size()) throw DataError("evaluate: length mismatch");
  if (pred.empty()) throw DataError("evaluate: no labels");
  check_labels(pred, k, "evaluate");
  check_labels(truth, k, "evaluate");
  EvalReport r;
  r.positive_class = positive;
  r.permutation.resize(static_cast<std::size_t>(k));
  std::iota(r.permutation.begin(), r.permutation.end(), 0);
  r.confusion.assign(static_cast<std::size_t>(k), std::vector<std::size_t>(static_cast<std::size_t>(k), 0));
  for (std::size_t i = 0; i < pred.size(); ++i) ++r.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];

  std::size_t correct = 0, predicted_pos = 0, actual_pos = 0;
  for (int t = 0; t < k; ++t) {
    correct += r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(t)];
    predicted_pos += r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(positive)];
    actual_pos += r.confusion[static_cast<std::size_t>(positive)][static_cast<std::size_t>(t)];
  }
  const auto tp = static_cast<double>(r.confusion[static_cast<std::size_t>(positive)][static_cast<std::size_t>(positive)]);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
  if (predicted_pos > 0) r.precision = tp / static_cast<double>(predicted_pos);
  if (actual_pos > 0) r.recall = tp / static_cast<double>(actual_pos);
  return r;
}

EvalReport evaluate_aligned(const std::vector<int>& pred, const std::vector<int>& truth, int k, int positive) {
  const auto perm = align_labels(pred, truth, k);
  EvalReport r = evaluate(apply_permutation(pred, perm), truth, k, positive);
  r.permutation = perm;
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["accuracy"] = r.accuracy;
  j["precision"] = r.precision ? nlohmann::json(*r.precision) : nlohmann::json(nullptr);
  j["recall"] = r.recall ? nlohmann::json(*r.recall) : nlohmann::json(nullptr);
  j["precision_undefined"] = !r.precision.has_value();
  j["recall_undefined"] = !r.recall.has_value();
  j["confusion"] = r.confusion;
  j["permutation"] = r.permutation;
  j["positive_class"] = r.positive_class;
  return j;
}

void write_labels_csv(std::ostream& os, const std::vector<std::string>& event_ids, const std::vector<int>& labels) {
  if (event_ids.size() != labels.size()) throw DataError("write_labels_csv: length mismatch");
  os << "event_id,label\n";
  for (std::size_t i = 0; i < labels.size(); ++i) os << event_ids[i] << ',' << labels[i] << '\n';
}

nlohmann::json dendrogram_json(const std::vector<Merge>& merges) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : merges) arr.push_back({m.a, m.b, m.distance, m.size});
  return arr;
}

}  // namespace reefclust::cluster
