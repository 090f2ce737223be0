#include "reefclust/dec.hpp"
#include "reefclust/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

using namespace reefclust;
using namespace reefclust::dec;

namespace {

RowMatrix random_images(Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  RowMatrix x(n, kImageSize);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = uniform(rng, 0.0, 1.0);
  return x;
}

struct FdStats {
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double worst = 0.0;
};

// Central differences (h = 1e-4) on a sample of entries. Entries where a much
// smaller step disagrees with h have a ReLU kink within +-h and are skipped.
template <typename Get, typename Loss>
void fd_check(std::size_t index, double analytic, Get&& slot, Loss&& loss, FdStats& st) {
  double& w = slot(index);
  const double w0 = w;
  auto central = [&](double h) {
    w = w0 + h;
    const double fp = loss();
    w = w0 - h;
    const double fm = loss();
    w = w0;
    return (fp - fm) / (2.0 * h);
  };
  const double fd = central(1e-4);
  const double fine = central(1e-6);
  const double scale = std::max({std::abs(fd), std::abs(analytic), 1e-6});
  if (std::abs(fd - fine) > 1e-4 * scale + 1e-9) {
    ++st.skipped;
    return;
  }
  ++st.checked;
  st.worst = std::max(st.worst, std::abs(fd - analytic) / scale);
}

}  // namespace

TEST_SUITE("dec") {

TEST_CASE("architecture matches the published shape column") {
  const auto m = build_model(10, 2, 1);
  const std::vector<Shape> expect{{45, 10, 8}, {44, 10, 8}, {22, 5, 16}, {22, 4, 16}, {11, 4, 32}, {10, 4, 64},
                                  {5, 4, 64},  {1, 1, 10},  {5, 4, 64},  {10, 4, 32}, {11, 4, 32}, {22, 4, 16},
                                  {22, 5, 16}, {44, 10, 8}, {45, 10, 8}, {90, 20, 1}};
  CHECK(shape_chain(m) == expect);
  const std::vector<std::size_t> params{80, 136, 1168, 528, 1056, 4160, 8256, 12810, 14080, 4128, 2080, 1040, 528, 1160, 136, 73};
  REQUIRE(m.arch.layers.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) CHECK(m.arch.layers[i].param_count() == params[i]);
  CHECK(m.arch.param_count == 51419);
  CHECK(m.params.size() == 51419);
  CHECK(!m.arch.layers.back().spec.relu);
  CHECK(build_model(15, 3, 1).arch.layers[7].param_count() == 1280 * 15 + 15);
  CHECK_THROWS_AS(build_model(0, 2, 1), ConfigError);
  CHECK_THROWS_AS(build_model(10, 1, 1), ConfigError);
}

TEST_CASE("initial weights are fan-in scaled") {
  const auto m = build_model(10, 2, 7);
  for (const auto& l : m.arch.layers) {
    const int fan_in = l.spec.kind == LayerKind::Dense ? l.in.size() : l.spec.kh * l.spec.kw * l.in.c;
    const double limit = std::sqrt(6.0 / fan_in);
    for (std::size_t i = 0; i < l.weight_count; ++i) CHECK(std::abs(m.params[l.weight_offset + i]) <= limit);
  }
  CHECK(build_model(10, 2, 7).params == m.params);
  CHECK(build_model(10, 2, 8).params != m.params);
}

TEST_CASE("forward properties") {
  const auto m = build_model(6, 2, 3);
  const auto x = random_images(5, 1);
  const auto a = forward(m, x);
  CHECK(a.latents.rows() == 5);
  CHECK(a.latents.cols() == 6);
  CHECK(a.reconstructions.cols() == kImageSize);
  CHECK(a.latents.minCoeff() >= 0.0);
  const auto b = forward(m, x);
  CHECK(a.latents == b.latents);
  CHECK(a.reconstructions == b.reconstructions);
  for (Eigen::Index i = 0; i < 5; ++i) {
    const auto one = forward(m, x.row(i));
    CHECK((one.latents - a.latents.row(i)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((one.reconstructions - a.reconstructions.row(i)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("zero input with zero weights reconstructs the bias image") {
    auto z = m;
    for (const auto& l : z.arch.layers) std::fill_n(z.params.begin() + static_cast<long>(l.weight_offset), l.weight_count, 0.0);
    const auto& out = z.arch.layers.back();
    z.params[out.bias_offset] = 0.37;
    const auto r = forward(z, RowMatrix::Zero(2, kImageSize));
    CHECK(r.latents.minCoeff() >= 0.0);
    CHECK(r.reconstructions.minCoeff() == doctest::Approx(0.37));
    CHECK(r.reconstructions.maxCoeff() == doctest::Approx(0.37));
  }
  CHECK_THROWS_AS(forward(m, RowMatrix::Zero(2, 100)), DataError);
}

TEST_CASE("soft assignment and target distribution") {
  RowMatrix mu(2, 2);
  mu << -1, 0, 1, 0;
  RowMatrix z(3, 2);
  z << 0, 3, -1, 0, 50, 0;
  const auto s = soft_assign(z, mu);
  CHECK(s.q(0, 0) == doctest::Approx(0.5));
  const auto sym = soft_assign(z.topRows(1), mu);
  CHECK(sym.p(0, 0) == doctest::Approx(0.5));
  CHECK(s.q(1, 0) == doctest::Approx(1.0 / (1.0 + 1.0 / 5.0)));
  for (Eigen::Index i = 0; i < 3; ++i) {
    CHECK(s.q.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.q.row(i).minCoeff() > 0.0);
  }
  RowMatrix q(2, 2);
  q << 0.8, 0.2, 0.2, 0.8;
  const auto p = target_distribution(q);
  CHECK(p(0, 0) == doctest::Approx(0.94118).epsilon(1e-5));
  CHECK(p(0, 1) == doctest::Approx(0.05882).epsilon(1e-4));
}

TEST_CASE("finite-difference gradients") {
  auto m = build_model(4, 2, 5);
  const auto x = random_images(4, 2);
  m.centroids = RowMatrix(2, 4);
  Rng rng(9);
  for (Eigen::Index i = 0; i < m.centroids.size(); ++i) m.centroids.data()[i] = uniform(rng, 0.0, 1.0);
  const auto z = forward(m, x).latents;
  RowMatrix target = target_distribution(soft_assign(z, m.centroids).q);
  // Push the target away from q so the KL term has a real gradient.
  target.col(0).array() = 0.5 * (target.col(0).array() + 0.9);
  target.col(1) = (1.0 - target.col(0).array()).matrix();

  for (const LossSpec spec : {LossSpec{0.0, 1.0, nullptr}, LossSpec{0.1, 0.9, &target}, LossSpec{1.0, 0.0, &target}}) {
    CAPTURE(spec.w_kl);
    const auto g = gradients(m, x, spec);
    CHECK(g.loss == doctest::Approx(loss_value(m, x, spec)).epsilon(1e-12));
    FdStats st;
    Rng pick(11);
    auto loss = [&] { return loss_value(m, x, spec); };
    auto param = [&](std::size_t i) -> double& { return m.params[i]; };
    for (const auto& l : m.arch.layers) {
      for (int s = 0; s < 12; ++s) {
        const auto i = l.weight_offset + static_cast<std::size_t>(uniform(pick, 0.0, static_cast<double>(l.weight_count)));
        fd_check(i, g.net[i], param, loss, st);
      }
      for (std::size_t b = 0; b < std::min<std::size_t>(l.bias_count, 3); ++b)
        fd_check(l.bias_offset + b, g.net[l.bias_offset + b], param, loss, st);
    }
    if (spec.w_kl > 0.0) {
      auto centroid = [&](std::size_t i) -> double& { return m.centroids.data()[i]; };
      for (std::size_t i = 0; i < static_cast<std::size_t>(m.centroids.size()); ++i)
        fd_check(i, g.centroids.data()[i], centroid, loss, st);
    } else {
      CHECK(g.kl == 0.0);
    }
    CHECK(st.checked > 150);
    CHECK(st.worst < 1e-3);
  }
}

TEST_CASE("gradient linearity and zero loss") {
  auto m = build_model(3, 2, 2);
  const auto x = random_images(3, 4);
  const auto g1 = gradients(m, x, {0.0, 1.0, nullptr});
  const auto g3 = gradients(m, x, {0.0, 3.0, nullptr});
  for (std::size_t i = 0; i < g1.net.size(); i += 97) CHECK(g3.net[i] == doctest::Approx(3.0 * g1.net[i]));
  const auto recon = forward(m, x).reconstructions;
  const auto zero = gradients(m, recon, {0.0, 1.0, nullptr});
  CHECK(zero.mse > 0.0);  // input differs from reconstruction of itself in general
  // Constant network (all weights zero) reproducing a constant image.
  for (const auto& l : m.arch.layers) std::fill_n(m.params.begin() + static_cast<long>(l.weight_offset), l.weight_count, 0.0);
  m.params[m.arch.layers.back().bias_offset] = 0.25;
  const auto flat = gradients(m, RowMatrix::Constant(2, kImageSize, 0.25), {0.0, 1.0, nullptr});
  CHECK(flat.loss == 0.0);
  for (double v : flat.net) CHECK(v == 0.0);
}

TEST_CASE("KL weight zero matches reconstruction-only training") {
  auto a = build_model(5, 2, 3);
  a.centroids = RowMatrix::Ones(2, 5);
  a.centroids(1, 0) = 3.0;
  auto b = a;
  const auto x = random_images(6, 8);
  const RowMatrix target = RowMatrix::Constant(6, 2, 0.5);
  train_step(a, x, {0.0, 1.0, nullptr}, {});
  train_step(b, x, {0.0, 1.0, &target}, {});
  CHECK(a.params == b.params);
  CHECK(a.centroids == b.centroids);
  SUBCASE("q equal to p leaves only the reconstruction term") {
    auto c = build_model(5, 2, 3);
    c.centroids = a.centroids;
    const auto q = soft_assign(forward(c, x).latents, c.centroids).q;
    const auto g = gradients(c, x, {0.1, 0.9, &q});
    CHECK(std::abs(g.kl) < 1e-12);
    CHECK(g.loss == doctest::Approx(0.9 * g.mse));
  }
}

TEST_CASE("short pretraining lowers the loss") {
  auto m = build_model(4, 2, 1);
  RowMatrix x = random_images(32, 3);
  // Structured images: a bright band at a random row.
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    x.row(i) *= 0.1;
    const auto r = (i * 7) % kImageRows;
    for (int c = 0; c < kImageCols; ++c) x(i, r * kImageCols + c) = 1.0;
  }
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.batch_size = 8;
  cfg.seed = 4;
  auto m2 = m;
  const auto h = pretrain(m, x, cfg);
  REQUIRE(h.loss.size() == 12);
  CHECK(h.loss.back() < h.loss.front());
  CHECK(pretrain(m2, x, cfg).loss == h.loss);
  CHECK(m2.params == m.params);

  SUBCASE("cluster init and joint training") {
    const auto mu = init_clusters(m, x, 2, 5);
    CHECK(mu.rows() == 2);
    JointConfig jc;
    jc.epochs = 2;
    jc.batch_size = 8;
    jc.seed = 6;
    const auto r = train_joint(m, x, jc);
    CHECK(r.labels.size() == 32);
    CHECK(r.history.loss.size() == 2);
    CHECK(assign(m, x) == r.labels);
    for (Eigen::Index i = 0; i < r.q.rows(); ++i) CHECK(r.q.row(i).sum() == doctest::Approx(1.0));
  }
  SUBCASE("one cluster is the mean latent") {
    const auto mu = init_clusters(m, x, 1, 5);
    const Eigen::RowVectorXd mean = forward(m, x).latents.colwise().mean();
    CHECK((mu.row(0) - mean).norm() < 1e-9);
  }
}

TEST_CASE("collapsed latents are rejected") {
  auto m = build_model(4, 2, 1);
  const auto& enc = m.arch.layers[m.arch.encoder_layers - 1];
  std::fill_n(m.params.begin() + static_cast<long>(enc.weight_offset), enc.weight_count, 0.0);
  CHECK_THROWS_AS(init_clusters(m, random_images(10, 1), 2, 0), NumericError);
}

TEST_CASE("checkpoint round trip") {
  auto m = build_model(7, 3, 12);
  const auto x = random_images(4, 1);
  m.centroids = RowMatrix::Random(3, 7);
  train_step(m, x, {0.0, 1.0, nullptr}, {});
  const auto dir = std::filesystem::temp_directory_path() / "reefclust_ckpt_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(m, dir / "model.json");
  CHECK(std::filesystem::exists(dir / "model.rcwt"));
  const auto back = load_checkpoint(dir / "model.json");
  CHECK(back.latent_dim() == 7);
  CHECK(back.n_clusters == 3);
  CHECK(back.params == m.params);
  CHECK(back.centroids == m.centroids);
  CHECK(back.adam_net.step == m.adam_net.step);
  CHECK(back.adam_net.m == m.adam_net.m);
  CHECK(back.adam_net.v == m.adam_net.v);
  CHECK(forward(back, x).reconstructions == forward(m, x).reconstructions);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), DataError);
  std::filesystem::remove_all(dir);
}

}
