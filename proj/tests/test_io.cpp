#include "reefclust/io.hpp"
#include "reefclust/plot.hpp"
#include "reefclust/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>

using namespace reefclust;
using namespace reefclust::io;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("reefclust_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

// Hand-built mono 16-bit PCM file.
std::string pcm16_file(const std::vector<std::int16_t>& samples, std::uint32_t rate) {
  std::string fmt;
  put_u16(fmt, 1);
  put_u16(fmt, 1);
  put_u32(fmt, rate);
  put_u32(fmt, rate * 2);
  put_u16(fmt, 2);
  put_u16(fmt, 16);
  std::string data;
  for (auto v : samples) put_u16(data, static_cast<std::uint16_t>(v));
  std::string out = "RIFF";
  put_u32(out, static_cast<std::uint32_t>(4 + 8 + fmt.size() + 8 + data.size()));
  out += "WAVEfmt ";
  put_u32(out, static_cast<std::uint32_t>(fmt.size()));
  out += fmt + "data";
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  return out + data;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("wav round trip is within one LSB") {
  Rng rng(4);
  WavData w;
  w.fs = 1000.0;
  w.channels.assign(3, std::vector<double>(500));
  for (auto& ch : w.channels)
    for (double& v : ch) v = uniform(rng, -0.999, 0.999);
  for (auto [enc, bits] : {std::pair{WavEncoding::Pcm16, 16}, {WavEncoding::Pcm24, 24}, {WavEncoding::Pcm32, 32}, {WavEncoding::Float32, 0}}) {
    CAPTURE(encoding_name(enc));
    w.encoding = enc;
    std::stringstream ss;
    write_wav(ss, w);
    const auto back = read_wav(ss);
    CHECK(back.fs == 1000.0);
    CHECK(back.encoding == enc);
    REQUIRE(back.channels.size() == 3);
    const double lsb = bits ? std::ldexp(1.0, -(bits - 1)) : 1e-7;
    double worst = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      REQUIRE(back.channels[c].size() == 500);
      for (std::size_t i = 0; i < 500; ++i) worst = std::max(worst, std::abs(back.channels[c][i] - w.channels[c][i]));
    }
    CHECK(worst <= lsb);
    CHECK(encoding_from_name(encoding_name(enc)) == enc);
  }
  CHECK_THROWS_AS(encoding_from_name("pcm8"), ConfigError);
}

TEST_CASE("integer scaling and clipping") {
  std::stringstream ss(pcm16_file({-32768, 0, 16384, 32767}, 8000));
  const auto w = read_wav(ss);
  CHECK(w.fs == 8000.0);
  CHECK(w.encoding == WavEncoding::Pcm16);
  REQUIRE(w.channels.size() == 1);
  CHECK(w.channels[0][0] == -1.0);
  CHECK(w.channels[0][1] == 0.0);
  CHECK(w.channels[0][2] == 0.5);
  CHECK(w.channels[0][3] == doctest::Approx(32767.0 / 32768.0));

  WavData loud;
  loud.fs = 10.0;
  loud.encoding = WavEncoding::Pcm16;
  loud.channels = {{2.0, -2.0, -1.0}};
  std::stringstream out;
  write_wav(out, loud);
  const auto clipped = read_wav(out);
  CHECK(clipped.channels[0][0] == doctest::Approx(32767.0 / 32768.0));
  CHECK(clipped.channels[0][1] == -1.0);
  CHECK(clipped.channels[0][2] == -1.0);
}

TEST_CASE("malformed wav input") {
  std::stringstream junk("RIFF1234WAVEjunk");
  CHECK_THROWS_AS(read_wav(junk), DataError);
  std::stringstream empty;
  CHECK_THROWS_AS(read_wav(empty), DataError);
  auto bytes = pcm16_file({1, 2, 3}, 1000);
  bytes.resize(bytes.size() - 4);  // data chunk shorter than declared
  std::stringstream truncated(bytes);
  CHECK_THROWS_AS(read_wav(truncated), DataError);
}

TEST_CASE("vector sensor ingestion") {
  const auto dir = scratch_dir("ingest");
  MultiChannelRecord rec;
  for (auto* ts : {&rec.pressure, &rec.vx, &rec.vy}) ts->samples.assign(100, 0.0), ts->fs = 1000.0;
  for (std::size_t i = 0; i < 100; ++i) {
    rec.pressure.samples[i] = 50.0 * std::sin(0.1 * static_cast<double>(i));
    rec.vx.samples[i] = 20.0 * std::cos(0.1 * static_cast<double>(i));
    rec.vy.samples[i] = -10.0;
  }
  write_wav(dir / "s.wav", record_to_wav(rec, WavEncoding::Float32, 100.0));
  const auto back = ingest_wav(dir / "s.wav", {}, 100.0, "N");
  CHECK(back.sensor_id == "N");
  for (std::size_t i = 0; i < 100; ++i) {
    CHECK(back.pressure.samples[i] == doctest::Approx(rec.pressure.samples[i]).epsilon(1e-6));
    CHECK(back.vx.samples[i] == doctest::Approx(rec.vx.samples[i]).epsilon(1e-6));
    CHECK(back.vy.samples[i] == doctest::Approx(rec.vy.samples[i]).epsilon(1e-6));
  }
  const auto swapped = ingest_wav(dir / "s.wav", {2, 1, 0}, 100.0);
  CHECK(swapped.pressure.samples[3] == doctest::Approx(-10.0));
  CHECK_THROWS_AS(ingest_wav(dir / "s.wav", {0, 1, 5}), DataError);
  CHECK_THROWS_AS(ingest_wav(dir / "missing.wav"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("sha256 and manifests") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const auto dir = scratch_dir("manifest");
  write_text_atomic(dir / "in.csv", "a,b\n1,2\n");
  CHECK(read_text(dir / "in.csv") == "a,b\n1,2\n");
  CHECK(sha256_file(dir / "in.csv") == sha256_hex("a,b\n1,2\n"));
  RunManifest m;
  m.tool_version = "test";
  m.command = "cluster";
  m.add_input(dir / "in.csv");
  m.write(dir / "manifest.json");
  const auto j = load_config(dir / "manifest.json");
  CHECK(j.at("command") == "cluster");
  CHECK(changed_inputs(j).empty());
  write_text_atomic(dir / "in.csv", "a,b\n1,3\n");
  CHECK(changed_inputs(j).size() == 1);
  fs::remove_all(dir);
}

TEST_CASE("config precedence") {
  const nlohmann::json defaults{{"k", 2}, {"method", "kmeans"}, {"nested", {{"a", 1}, {"b", 2}}}};
  const nlohmann::json file{{"k", 3}, {"nested", {{"b", 5}}}};
  const nlohmann::json flags{{"method", "ward"}, {"k", 4}};
  const auto merged = merge_config(defaults, file, flags);
  CHECK(merged["k"] == 4);
  CHECK(merged["method"] == "ward");
  CHECK(merged["nested"]["a"] == 1);
  CHECK(merged["nested"]["b"] == 5);
  CHECK(merge_config(defaults, file, nlohmann::json::object())["k"] == 3);
  const auto dir = scratch_dir("config");
  write_text_atomic(dir / "bad.json", "{not json");
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("plot output is deterministic") {
  const auto dir = scratch_dir("plot");
  const std::vector<double> x{0.0, 1.0, 2.5}, y{1.0, -1.0, 0.5};
  plot::scatter2d(dir / "a", x, y, {0, 1, 0}, "scatter");
  plot::scatter2d(dir / "b", x, y, {0, 1, 0}, "scatter");
  CHECK(read_text(dir / "a.svg") == read_text(dir / "b.svg"));
  CHECK(read_text(dir / "a.csv") == read_text(dir / "b.csv"));
  CHECK(read_text(dir / "a.svg").starts_with("<svg"));

  plot::scatter2d(dir / "single", {3.0}, {3.0}, {0}, "one point");
  CHECK(read_text(dir / "single.svg").find("nan") == std::string::npos);

  plot::RegionMap regions;
  regions.labels = Grid<int>(4, 4, 1);
  plot::scatter2d(dir / "regions", x, y, {0, 1, 2}, "regions", regions);
  CHECK(fs::exists(dir / "regions.svg"));

  Grid<double> db(5, 6, -20.0);
  plot::spectrogram(dir / "spec", db, 3.9, 0.025, 0.0, "flat");
  plot::loss_curve(dir / "loss", {1.0, 0.5, 0.25}, "loss");
  plot::timeseries(dir / "ts", {{"a", {0, 1, 2}, {0, 1, 0}}}, "ts");
  for (const char* f : {"spec.svg", "spec.csv", "loss.svg", "loss.csv", "ts.svg", "ts.csv"}) CHECK(fs::exists(dir / f));
  CHECK_THROWS_AS(plot::scatter2d(dir / "bad", x, {1.0}, {0, 0, 0}, "bad"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("percentile levels") {
  std::vector<double> t, v;
  for (int i = 0; i < 11; ++i) t.push_back(10.0 * i), v.push_back(i + 1.0);
  t.push_back(2000.0);
  v.push_back(7.0);
  const auto bins = plot::percentile_levels(t, v, 900.0);
  REQUIRE(bins.size() == 2);
  CHECK(bins[0].count == 11);
  CHECK(bins[0].p10 == doctest::Approx(2.0));
  CHECK(bins[0].p50 == doctest::Approx(6.0));
  CHECK(bins[0].p90 == doctest::Approx(10.0));
  CHECK(bins[1].t_start == doctest::Approx(1800.0));
  CHECK(bins[1].p10 == 7.0);
  CHECK(bins[1].p90 == 7.0);
}

}
