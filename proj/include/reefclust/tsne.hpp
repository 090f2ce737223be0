#pragma once

#include "reefclust/core.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace reefclust::tsne {

struct TsneConfig {
  double perplexity = 30.0;
  int n_iter = 1000;
  double learning_rate = 200.0;
  double momentum_initial = 0.5;
  double momentum_final = 0.8;
  int momentum_switch = 250;
  bool exaggerate = false;  // early exaggeration is off unless requested
  double exaggeration = 12.0;
  int exaggeration_iters = 250;
  std::uint64_t seed = 0;

  void validate(std::size_t n) const;
};

struct PerplexityResult {
  double beta = 1.0;   // precision 1 / (2 sigma^2)
  double sigma = 1.0;
  double perplexity = 0.0;  // achieved 2^H
  int steps = 0;
  bool clamped = false;  // target unreachable, best effort returned
};

/// Bisection on the Gaussian precision so that 2^H(P_i) hits the target
/// within `rel_tol` relative error.
PerplexityResult perplexity_search(std::span<const double> sq_distances, double target, double rel_tol = 1e-4,
                                   int max_steps = 100);

/// Conditional neighbour distribution p_{j|i} for one row at precision beta.
std::vector<double> conditional_row(std::span<const double> sq_distances, double beta);

struct Affinities {
  RowMatrix conditional;  // row i holds p_{j|i}, zero diagonal
  RowMatrix joint;        // (p_{j|i} + p_{i|j}) / 2N
  std::vector<PerplexityResult> rows;
};

Affinities compute_affinities(const RowMatrix& x, double perplexity);

/// KL(P || Q) for a candidate embedding under the Student-t kernel.
double kl_divergence(const RowMatrix& joint, const RowMatrix& y);

struct Embedding2D {
  RowMatrix points;  // N x 2
  double kl = 0.0;
  std::vector<double> kl_history;  // one entry per iteration
  TsneConfig config;
  std::size_t clamped_rows = 0;
};

/// Exact O(N^2) t-SNE. Throws NumericError when the gradient stops being finite.
Embedding2D tsne(const RowMatrix& x, const TsneConfig& cfg);

void write_embedding_csv(std::ostream& os, const std::vector<std::string>& event_ids, const Embedding2D& emb,
                         const std::vector<int>& labels = {});

}  // namespace reefclust::tsne
