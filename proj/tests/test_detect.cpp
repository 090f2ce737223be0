#include "reefclust/detect.hpp"
#include "reefclust/scene.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

using namespace reefclust;
using namespace reefclust::detect;

namespace {

struct Interval {
  double t1, t2;
};

// Frames whose Hann-squared-weighted signal energy reaches the noise energy of
// the frame. Frame j covers samples [25 j, 25 j + 256) and is stamped at the
// frame centre; the interval runs from the first such frame to one hop past the last.
Interval energy_oracle(const sim::PlantedSource& s, double snr_db, double record_seconds) {
  const double snr = std::pow(10.0, snr_db / 10.0);
  const std::size_t nfft = 256, hop = 25, fs = 1000;
  std::vector<double> w2(nfft);
  double total = 0.0;
  for (std::size_t n = 0; n < nfft; ++n) {
    const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / nfft);
    w2[n] = w * w;
    total += w2[n];
  }
  const auto on = static_cast<long>(std::llround(s.t_on * fs));
  const auto off = static_cast<long>(std::llround((s.t_on + s.duration) * fs));
  const std::size_t frames = (static_cast<std::size_t>(record_seconds * fs) - nfft) / hop + 1;
  long first = -1, last = -1;
  for (std::size_t j = 0; j < frames; ++j) {
    double e = 0.0;
    for (std::size_t n = 0; n < nfft; ++n) {
      const long t = static_cast<long>(j * hop + n);
      if (t >= on && t < off) e += w2[n] * snr;
    }
    if (e >= total) {
      if (first < 0) first = static_cast<long>(j);
      last = static_cast<long>(j);
    }
  }
  const double t0 = 0.128, dt = 0.025;
  return {t0 + first * dt, t0 + (last + 1) * dt};
}

sim::SceneSpec planted_spec(std::uint64_t seed, double clock_offset) {
  auto spec = sim::random_scene_spec(60.0, 5, 20.0, seed);
  spec.clock_offset = clock_offset;
  for (auto& s : spec.sources) {
    s.bearing_n = 100.0;
    s.bearing_s = 80.0;
  }
  return spec;
}

}  // namespace

TEST_SUITE("detect") {

TEST_CASE("sector set and membership") {
  const auto sectors = sector_set(90.0);
  REQUIRE(sectors.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(sectors[i].lo == doctest::Approx(45.0 * static_cast<double>(i)));
    CHECK(std::fmod(sectors[i].hi - sectors[i].lo + 360.0, 360.0) == doctest::Approx(90.0));
  }
  const Sector east{45.0, 135.0};
  CHECK(east.contains(90.0));
  CHECK(east.contains(135.0));
  CHECK(!east.contains(45.0));
  const Sector north{315.0, 45.0};
  CHECK(north.contains(0.0));
  CHECK(north.contains(359.0));
  CHECK(north.contains(45.0));
  CHECK(!north.contains(315.0));
  CHECK(!north.contains(180.0));
  CHECK(!north.contains(std::nan("")));
  CHECK_THROWS_AS(sector_set(70.0), ConfigError);
}

TEST_CASE("sector masks and map combination") {
  dsp::Azigram az;
  az.degrees = Grid<double>(4, 3, 90.0);
  const auto all = sector_mask(az, {45.0, 135.0});
  for (auto v : all.data()) CHECK(v == 1);
  az.degrees = Grid<double>(4, 3, 0.0);
  const auto wrap = sector_mask(az, {315.0, 45.0});
  for (auto v : wrap.data()) CHECK(v == 1);
  const auto miss = sector_mask(az, {45.0, 135.0});
  for (auto v : miss.data()) CHECK(v == 0);

  BinaryMap a(3, 3, 0), b(3, 3, 0);
  a(0, 0) = a(1, 1) = a(2, 2) = 1;
  b(1, 1) = b(2, 0) = 1;
  CHECK(combine_maps(a, a) == a);
  const auto c = combine_maps(a, b);
  for (std::size_t k = 0; k < c.size(); ++k) {
    CHECK(c.data()[k] <= a.data()[k]);
    CHECK(c.data()[k] <= b.data()[k]);
  }
  CHECK(c(1, 1) == 1);
  CHECK(std::accumulate(c.data().begin(), c.data().end(), 0) == 1);
  CHECK_THROWS_AS(combine_maps(a, BinaryMap(2, 3)), DataError);
}

TEST_CASE("detection series") {
  BinaryMap b(129, 3, 0);
  for (std::size_t i = 0; i < 31; ++i) b(i, 0) = 1;
  for (std::size_t i = 0; i < 129; ++i) b(i, 2) = 1;
  const auto d = detection_series(b, 3.90625);
  CHECK(d[0] == doctest::Approx(121.09).epsilon(1e-4));
  CHECK(d[0] > 120.0);
  CHECK(d[1] == 0.0);
  CHECK(d[2] == doctest::Approx(503.9).epsilon(1e-4));
}

TEST_CASE("run extraction rules") {
  DetectorConfig cfg;
  const double dt = 0.025;
  SUBCASE("single run") {
    std::vector<double> d(40, 0.0);
    for (int j = 5; j < 15; ++j) d[static_cast<std::size_t>(j)] = 200.0;
    const auto ev = extract_events(d, cfg, dt, 100.0);
    REQUIRE(ev.size() == 1);
    CHECK(ev[0].t1 == doctest::Approx(100.125));
    CHECK(ev[0].duration() == doctest::Approx(10 * dt));
    CHECK(ev[0].bandwidth_peak == 200.0);
    CHECK(ev[0].integrated_bandwidth == 2000.0);
  }
  SUBCASE("threshold is strict") {
    std::vector<double> d(10, 120.0);
    CHECK(extract_runs(d, cfg, dt).empty());
  }
  SUBCASE("one-frame gaps merge, two-frame gaps do not") {
    std::vector<double> d{0, 200, 200, 0, 200, 0, 0, 200, 0};
    const auto runs = extract_runs(d, cfg, dt);
    REQUIRE(runs.size() == 2);
    CHECK(runs[0].begin == 1);
    CHECK(runs[0].end == 5);
    CHECK(runs[1].begin == 7);
  }
  SUBCASE("long runs are dropped") {
    std::vector<double> d(200, 500.0);  // 5 s
    CHECK(extract_runs(d, cfg, dt).empty());
    std::vector<double> ok(80, 500.0);  // exactly 2 s
    CHECK(extract_runs(ok, cfg, dt).size() == 1);
  }
  SUBCASE("invalid config") {
    cfg.bandwidth_threshold = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("circular median") {
  CHECK(circular_median({350.0, 10.0, 5.0}) == doctest::Approx(5.0));
  CHECK(circular_median({90.0, 100.0, 110.0, std::nan("")}) == doctest::Approx(100.0));
  CHECK(std::isnan(circular_median({})));
}

TEST_CASE("planted broadband events are recovered") {
  for (double offset : {0.0, 0.1}) {
    CAPTURE(offset);
    for (std::uint64_t seed : {3u, 17u}) {
      CAPTURE(seed);
      const auto spec = planted_spec(seed, offset);
      const auto scene = sim::gen_two_sensor_scene(spec, seed);
      const auto events = scan(scene.north, scene.south, DetectorConfig{});
      REQUIRE(events.size() == spec.sources.size());
      for (std::size_t i = 0; i < events.size(); ++i) {
        const auto truth = energy_oracle(spec.sources[i], spec.snr_db, spec.duration);
        CHECK(std::abs(events[i].t1 - truth.t1) <= 2 * 0.025 + 1e-9);
        CHECK(std::abs(events[i].t2 - truth.t2) <= 2 * 0.025 + 1e-9);
        CHECK(events[i].sector_n.contains(100.0));
        CHECK(events[i].sector_s.contains(80.0));
        CHECK(std::abs(events[i].az_n - 100.0) < 5.0);
        CHECK(std::abs(events[i].az_s - 80.0) < 5.0);
        CHECK(events[i].duration() <= 2.0);
        if (offset > 0.0) CHECK(events[i].clock_lag == doctest::Approx(offset));
      }
    }
  }
}

TEST_CASE("pure noise produces no events") {
  int clean = 0;
  DetectorConfig cfg;
  cfg.clock = ClockSync::None;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    sim::SceneSpec spec;
    spec.duration = 60.0;
    const auto scene = sim::gen_two_sensor_scene(spec, seed);
    clean += scan(scene.north, scene.south, cfg).empty();
  }
  CHECK(clean >= 99);
}

TEST_CASE("narrowband tone is below the bandwidth threshold") {
  sim::SceneSpec spec;
  spec.duration = 30.0;
  sim::PlantedSource tone;
  tone.t_on = 10.0;
  tone.kind = sim::SourceKind::Tone;
  tone.bearing_n = 100.0;
  tone.bearing_s = 80.0;
  spec.sources = {tone};
  const auto scene = sim::gen_two_sensor_scene(spec, 5);
  DetectorConfig cfg;
  cfg.clock = ClockSync::None;
  CHECK(scan(scene.north, scene.south, cfg).empty());
}

TEST_CASE("scan is deterministic and scale invariant") {
  const auto spec = planted_spec(21, 0.0);
  const auto scene = sim::gen_two_sensor_scene(spec, 21);
  const DetectorConfig cfg;
  const auto a = scan(scene.north, scene.south, cfg);
  const auto b = scan(scene.north, scene.south, cfg);
  auto scaled = scene;
  for (auto* rec : {&scaled.north, &scaled.south})
    for (auto* ts : {&rec->pressure, &rec->vx, &rec->vy})
      for (double& v : ts->samples) v *= 1000.0;
  const auto c = scan(scaled.north, scaled.south, cfg);
  REQUIRE(a.size() == b.size());
  REQUIRE(a.size() == c.size());
  std::ostringstream sa, sb;
  write_events_jsonl(sa, a);
  write_events_jsonl(sb, b);
  CHECK(sa.str() == sb.str());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].t1 == c[i].t1);
    CHECK(a[i].t2 == c[i].t2);
    CHECK(a[i].sector_n == c[i].sector_n);
    CHECK(a[i].az_n == doctest::Approx(c[i].az_n));
    if (i > 0) CHECK(a[i - 1].t1 <= a[i].t1);
  }
  std::istringstream in(sa.str());
  const auto back = read_events_jsonl(in);
  REQUIRE(back.size() == a.size());
  CHECK(back[0].event_id == a[0].event_id);
  CHECK(back[0].sector_s == a[0].sector_s);
  CHECK(back[0].az_s == doctest::Approx(a[0].az_s));
}

TEST_CASE("spatial filter") {
  std::vector<Event> events(3);
  events[0].az_n = 135.0, events[0].az_s = 45.0;  // rays cross at (50, 50)
  events[1].az_n = 90.0, events[1].az_s = 90.0;   // parallel
  events[2].az_n = 100.0, events[2].az_s = 80.0;  // crosses near (283, 50)
  CHECK(spatial_filter(events).size() == 3);
  CHECK(spatial_filter(events, [](const Event&) { return false; }).empty());

  Position p;
  CHECK(ray_intersection({0, 100}, 135.0, {0, 0}, 45.0, p));
  CHECK(p.x == doctest::Approx(50.0));
  CHECK(p.y == doctest::Approx(50.0));
  CHECK(!ray_intersection({0, 100}, 90.0, {0, 0}, 90.0, p));
  CHECK(!ray_intersection({0, 100}, 315.0, {0, 0}, 225.0, p));  // behind both sensors

  const auto keep = ray_intersection_predicate({0, 100}, {0, 0}, {50, 50}, 100.0);
  const auto kept = spatial_filter(events, keep);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].az_s == 45.0);
}

}
