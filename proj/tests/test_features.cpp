#include "reefclust/dsp.hpp"
#include "reefclust/features.hpp"
#include "reefclust/sim.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace reefclust;
using namespace reefclust::features;

namespace {

std::vector<double> gaussian(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

}  // namespace

TEST_SUITE("features") {

TEST_CASE("kurtosis of reference signals") {
  SUBCASE("gaussian noise") {
    for (std::uint64_t s = 1; s <= 20; ++s) CHECK(std::abs(kurtosis(gaussian(5000, s)) - 3.0) <= 0.3);
  }
  SUBCASE("square wave") {
    std::vector<double> sq(400);
    for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = (i / 10) % 2 ? 1.0 : -1.0;
    CHECK(kurtosis(sq) == doctest::Approx(1.0));
  }
  SUBCASE("single spike") {
    std::vector<double> spike(1000, 0.0);
    spike[321] = 5.0;
    // One nonzero sample: (n^2 - 3n + 3) / (n - 1).
    CHECK(kurtosis(spike) == doctest::Approx((1e6 - 3000.0 + 3.0) / 999.0));
  }
  SUBCASE("sine") {
    std::vector<double> s(1000);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::sin(2.0 * std::numbers::pi * i / 50.0);
    CHECK(kurtosis(s) == doctest::Approx(1.5).epsilon(1e-6));
  }
  SUBCASE("invariant to affine scaling") {
    auto v = gaussian(300, 9);
    const double k = kurtosis(v);
    for (double& x : v) x = -4.0 * x + 11.0;
    CHECK(kurtosis(v) == doctest::Approx(k).epsilon(1e-9));
  }
  SUBCASE("degenerate input") {
    CHECK_THROWS_AS(kurtosis(std::vector<double>(10, 1.0)), DataError);
    CHECK_THROWS_AS(kurtosis(std::vector<double>{1.0, 2.0}), DataError);
  }
}

TEST_CASE("peak prominence") {
  const std::vector<double> x{0, 3, 1, 5, 2, 2, 4, 0};
  const auto p = peak_prominences(x);
  REQUIRE(p.size() == 3);
  CHECK(p[0] == std::pair<std::size_t, double>{1, 2.0});
  CHECK(p[1] == std::pair<std::size_t, double>{3, 5.0});
  CHECK(p[2] == std::pair<std::size_t, double>{6, 2.0});
  const std::vector<double> plateau{0, 2, 2, 2, 0};
  const auto q = peak_prominences(plateau);
  REQUIRE(q.size() == 1);
  CHECK(q[0].first == 2);
}

TEST_CASE("peak count of pulse trains") {
  for (int n : {1, 2, 3, 5}) {
    sim::PulseTrainParams p;
    p.n_peaks = n;
    p.pulse_width = 0.005;
    p.peak_spacing = 0.05;
    p.center_freq = 200.0;
    CHECK(n_peaks(dsp::hilbert_envelope(sim::gen_pulse_train(p))) == n);
  }
  TimeSeries flat{std::vector<double>(100, 1.0), 1000.0, 0.0};
  CHECK(n_peaks(flat) == 0);
}

TEST_CASE("peak frequency") {
  Grid<double> pw(10, 4, 0.0);
  pw(7, 2) = 3.0;
  pw(2, 0) = 1.0;
  CHECK(peak_frequency(pw, 4.0) == 28.0);
  CHECK(peak_frequency(pw, 4.0, 100.0) == 128.0);
  CHECK(peak_frequency(pw, 4.0, 0.0, 0, 2) == 8.0);
  CHECK_THROWS_AS(peak_frequency(pw, 4.0, 0.0, 3, 3), DataError);

  sim::FmSweepParams fm;
  fm.f0 = 300.0;
  fm.duration = 0.3;
  const auto feats = extract_sim_features(sim::gen_fm_sweep(fm));
  CHECK(std::abs(feats.peak_freq - 300.0) <= 1000.0 / 256.0);
}

TEST_CASE("median psd") {
  Grid<double> pw(2, 3, 1.0);
  pw(0, 0) = 10.0, pw(0, 1) = 100.0, pw(1, 2) = 1000.0;
  Grid<std::uint8_t> mask(2, 3, 0);
  mask(0, 0) = mask(0, 1) = mask(1, 2) = 1;
  CHECK(median_psd(pw, mask) == doctest::Approx(20.0));
  mask(1, 1) = 1;  // even count: mean of 10 and 20 dB
  CHECK(median_psd(pw, mask) == doctest::Approx(15.0));
  CHECK_THROWS_AS(median_psd(pw, Grid<std::uint8_t>(2, 3, 0)), DataError);
  CHECK_THROWS_AS(median_psd(pw, Grid<std::uint8_t>(3, 2, 1)), DataError);
}

TEST_CASE("envelope coherence") {
  TimeSeries a{gaussian(300, 4), 1000.0, 0.0};
  SUBCASE("self") { CHECK(coherence(a, a) == doctest::Approx(1.0)); }
  SUBCASE("shifted copy peaks at the lag") {
    TimeSeries b = a;
    b.samples.insert(b.samples.begin(), 17, 0.0);
    b.samples.resize(a.size() + 17, 0.0);
    const double c = coherence(a, b);
    CHECK(c > 0.95);
    CHECK(c <= 1.0 + 1e-12);
  }
  SUBCASE("bounded and symmetric") {
    TimeSeries b{gaussian(300, 5), 1000.0, 0.0};
    const double c = coherence(a, b);
    CHECK(std::abs(c) <= 1.0);
    CHECK(coherence(b, a) == doctest::Approx(c));
  }
  SUBCASE("sum norm of identical envelopes") {
    CHECK(coherence(a, a, CoherenceNorm::Sum) > 0.0);
  }
  SUBCASE("errors") {
    TimeSeries flat{std::vector<double>(50, 2.0), 1000.0, 0.0};
    CHECK_THROWS_AS(coherence(a, flat), DataError);
    TimeSeries other = a;
    other.fs = 500.0;
    CHECK_THROWS_AS(coherence(a, other), DataError);
  }
}

TEST_CASE("standardization") {
  std::vector<FeatureRow> rows;
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    FeatureRow r;
    r.event_id = "e" + std::to_string(i);
    r.features.peak_freq = uniform(rng, 100.0, 400.0);
    r.features.kurtosis = uniform(rng, 1.0, 30.0);
    r.features.n_peaks = std::floor(uniform(rng, 0.0, 6.0));
    r.label = i % 2;
    rows.push_back(r);
  }
  const auto m = build_feature_matrix(rows, FeatureSet::Sim3);
  REQUIRE(m.rows() == 50);
  REQUIRE(m.cols() == 3);
  for (Eigen::Index c = 0; c < 3; ++c) {
    CHECK(m.values.col(c).mean() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK((m.values.col(c).array().square().mean()) == doctest::Approx(1.0));
  }
  CHECK(m.labels.size() == 50);
  const auto raw = build_feature_matrix(rows, FeatureSet::Sim3, false);
  CHECK(raw.values == raw.raw);
  CHECK(apply_standardization(m.raw, m.means, m.stds) == m.values);

  SUBCASE("csv round trip") {
    std::stringstream ss;
    write_feature_csv(ss, m);
    const auto stats = standardization_json(m);
    const auto back = read_feature_csv(ss, &stats);
    REQUIRE(back.rows() == 50);
    CHECK(back.event_ids == m.event_ids);
    CHECK((back.raw - m.raw).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.values - m.values).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("constant column is left unscaled") {
    for (auto& r : rows) r.features.n_peaks = 2.0;
    const auto c = build_feature_matrix(rows, FeatureSet::Sim3);
    CHECK(c.values.col(2).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("rows missing full features are dropped") {
    rows[4].features.duration = 0.3;
    const auto full = build_feature_matrix(rows, FeatureSet::Full6);
    CHECK(full.rows() == 0);
    CHECK(full.dropped.size() == 50);
  }
}

}
