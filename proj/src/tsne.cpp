#include "reefclust/tsne.hpp"

#include "reefclust/parallel.hpp"
#include "reefclust/rng.hpp"
#include "text.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace reefclust::tsne {

void TsneConfig::validate(std::size_t n) const {
  if (!(perplexity > 1.0) || !(perplexity < static_cast<double>(n)))
    throw ConfigError("tsne: perplexity must satisfy 1 < perplexity < N");
  if (n_iter < 250) throw ConfigError("tsne: n_iter must be at least 250");
  if (!(learning_rate > 0.0)) throw ConfigError("tsne: learning rate must be positive");
}

namespace {

// Entropy (nats) and normalised row for precision beta. Distances are shifted
// by their minimum so the largest weight is exactly 1.
double row_entropy(std::span<const double> d, double d_min, double beta, std::vector<double>& p) {
  p.resize(d.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < d.size(); ++j) {
    p[j] = std::exp(-beta * (d[j] - d_min));
    sum += p[j];
  }
  double weighted = 0.0;
  for (std::size_t j = 0; j < d.size(); ++j) {
    p[j] /= sum;
    weighted += p[j] * (d[j] - d_min);
  }
  return beta * weighted + std::log(sum);
}

}  // namespace

std::vector<double> conditional_row(std::span<const double> sq_distances, double beta) {
  std::vector<double> p;
  if (sq_distances.empty()) return p;
  row_entropy(sq_distances, *std::min_element(sq_distances.begin(), sq_distances.end()), beta, p);
  return p;
}

PerplexityResult perplexity_search(std::span<const double> d, double target, double rel_tol, int max_steps) {
  if (d.size() < 2) throw ConfigError("perplexity_search: need at least two neighbours");
  if (!(target > 0.0)) throw ConfigError("perplexity_search: target must be positive");
  const double d_min = *std::min_element(d.begin(), d.end());
  const double spread = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size()) - d_min;

  PerplexityResult res;
  std::vector<double> p;
  double beta = spread > 0.0 ? 1.0 / spread : 1.0;
  double lo = 0.0, hi = std::numeric_limits<double>::infinity();
  const double ln2 = std::log(2.0);
  double best_err = std::numeric_limits<double>::infinity();
  for (int step = 0; step < max_steps; ++step) {
    const double h = row_entropy(d, d_min, beta, p);
    const double perp = std::exp(h);
    res.steps = step + 1;
    const double err = std::abs(perp - target) / target;
    if (err < best_err) {
      best_err = err;
      res.beta = beta;
      res.perplexity = std::exp2(h / ln2);
    }
    if (err <= rel_tol) break;
    if (perp > target) {
      lo = beta;
      beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (lo + hi);
    } else {
      hi = beta;
      beta = 0.5 * (lo + hi);
    }
  }
  res.clamped = best_err > rel_tol;
  res.sigma = std::sqrt(0.5 / res.beta);
  return res;
}

Affinities compute_affinities(const RowMatrix& x, double perplexity) {
  const std::size_t n = static_cast<std::size_t>(x.rows());
  Affinities a;
  a.conditional = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  a.rows.resize(n);
  parallel_for(n, [&](std::size_t i) {
    std::vector<double> d;
    d.reserve(n - 1);
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) d.push_back((x.row(ii) - x.row(static_cast<Eigen::Index>(j))).squaredNorm());
    a.rows[i] = perplexity_search(d, perplexity);
    const auto p = conditional_row(d, a.rows[i].beta);
    for (std::size_t j = 0, k = 0; j < n; ++j)
      if (j != i) a.conditional(ii, static_cast<Eigen::Index>(j)) = p[k++];
  });
  a.joint = (a.conditional + a.conditional.transpose()) / (2.0 * static_cast<double>(n));
  return a;
}

double kl_divergence(const RowMatrix& joint, const RowMatrix& y) {
  const Eigen::Index n = y.rows();
  double z = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) z += 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
  double kl = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double p = joint(i, j);
      if (i == j || p <= 0.0) continue;
      const double q = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm()) / z;
      kl += p * std::log(p / q);
    }
  return kl;
}

Embedding2D tsne(const RowMatrix& x, const TsneConfig& cfg) {
  const std::size_t n = static_cast<std::size_t>(x.rows());
  if (n < 10) throw ConfigError("tsne: need at least 10 points");
  cfg.validate(n);
  const Affinities aff = compute_affinities(x, cfg.perplexity);

  Embedding2D emb;
  emb.config = cfg;
  emb.clamped_rows = static_cast<std::size_t>(
      std::count_if(aff.rows.begin(), aff.rows.end(), [](const PerplexityResult& r) { return r.clamped; }));

  const auto ni = static_cast<Eigen::Index>(n);
  RowMatrix& y = emb.points;
  y.resize(ni, 2);
  Rng rng(cfg.seed);
  for (Eigen::Index i = 0; i < ni; ++i)
    for (int c = 0; c < 2; ++c) y(i, c) = normal(rng, 0.0, 1e-2);

  RowMatrix update = RowMatrix::Zero(ni, 2);
  RowMatrix gains = RowMatrix::Ones(ni, 2);
  RowMatrix grad(ni, 2);
  std::vector<double> row_z(n), row_plogp(n), row_plogw(n);
  double entropy_term = 0.0;  // sum p log p, constant across iterations
  for (Eigen::Index i = 0; i < ni; ++i)
    for (Eigen::Index j = 0; j < ni; ++j)
      if (aff.joint(i, j) > 0.0) entropy_term += aff.joint(i, j) * std::log(aff.joint(i, j));

  for (int it = 0; it < cfg.n_iter; ++it) {
    const double exag = (cfg.exaggerate && it < cfg.exaggeration_iters) ? cfg.exaggeration : 1.0;
    // Pass 1: per-row kernel sums.
    parallel_for(n, [&](std::size_t i) {
      const auto ii = static_cast<Eigen::Index>(i);
      double zs = 0.0, plw = 0.0;
      for (Eigen::Index j = 0; j < ni; ++j) {
        if (j == ii) continue;
        const double w = 1.0 / (1.0 + (y.row(ii) - y.row(j)).squaredNorm());
        zs += w;
        plw += aff.joint(ii, j) * std::log(w);
      }
      row_z[i] = zs;
      row_plogw[i] = plw;
    });
    const double z = std::accumulate(row_z.begin(), row_z.end(), 0.0);
    // KL = sum p log p - sum p log w + log Z (sum p = 1).
    const double kl = entropy_term - std::accumulate(row_plogw.begin(), row_plogw.end(), 0.0) + std::log(z);
    emb.kl_history.push_back(kl);

    // Pass 2: gradient.
    parallel_for(n, [&](std::size_t i) {
      const auto ii = static_cast<Eigen::Index>(i);
      double gx = 0.0, gy = 0.0;
      for (Eigen::Index j = 0; j < ni; ++j) {
        if (j == ii) continue;
        const double dx = y(ii, 0) - y(j, 0), dy = y(ii, 1) - y(j, 1);
        const double w = 1.0 / (1.0 + dx * dx + dy * dy);
        const double m = (exag * aff.joint(ii, j) - w / z) * w;
        gx += m * dx;
        gy += m * dy;
      }
      grad(ii, 0) = 4.0 * gx;
      grad(ii, 1) = 4.0 * gy;
    });
    if (!grad.allFinite()) throw NumericError("tsne: non-finite gradient at iteration " + std::to_string(it));

    const double momentum = it < cfg.momentum_switch ? cfg.momentum_initial : cfg.momentum_final;
    for (Eigen::Index i = 0; i < ni; ++i)
      for (int c = 0; c < 2; ++c) {
        double& g = gains(i, c);
        g = ((grad(i, c) > 0.0) != (update(i, c) > 0.0)) ? g + 0.2 : g * 0.8;
        g = std::max(g, 0.01);
        update(i, c) = momentum * update(i, c) - cfg.learning_rate * g * grad(i, c);
        y(i, c) += update(i, c);
      }
    const Eigen::RowVector2d mean = y.colwise().mean();
    y.rowwise() -= mean;
  }
  emb.kl = kl_divergence(aff.joint, y);
  return emb;
}

void write_embedding_csv(std::ostream& os, const std::vector<std::string>& event_ids, const Embedding2D& emb,
                         const std::vector<int>& labels) {
  const auto n = static_cast<std::size_t>(emb.points.rows());
  if (event_ids.size() != n) throw DataError("embedding csv: id count mismatch");
  if (!labels.empty() && labels.size() != n) throw DataError("embedding csv: label count mismatch");
  os << "event_id,y1,y2" << (labels.empty() ? "" : ",label") << '\n';
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    os << event_ids[i] << ',' << detail::fmt_double(emb.points(ii, 0)) << ',' << detail::fmt_double(emb.points(ii, 1));
    if (!labels.empty()) os << ',' << labels[i];
    os << '\n';
  }
}

}  // namespace reefclust::tsne
