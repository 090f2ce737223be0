#include "reefclust/scene.hpp"

#include "reefclust/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace reefclust::sim {

void SceneSpec::validate() const {
  if (!(duration > 0.0) || !(fs > 0.0)) throw ConfigError("scene: duration and fs must be positive");
  if (!(noise_sd >= 0.0) || !(impedance > 0.0)) throw ConfigError("scene: noise_sd must be non-negative, impedance positive");
  for (const auto& s : sources) {
    if (!(s.duration > 0.0)) throw ConfigError("scene: source duration must be positive");
    if (s.t_on < 0.0 || s.t_on + s.duration > duration) throw ConfigError("scene: source lies outside the scene");
    if (s.kind == SourceKind::Tone && !(s.tone_freq > 0.0 && s.tone_freq < fs / 2.0))
      throw ConfigError("scene: tone frequency must lie below Nyquist");
  }
}

namespace {

MultiChannelRecord noise_record(const SceneSpec& spec, std::size_t n, std::uint64_t seed, const char* id) {
  MultiChannelRecord r;
  r.sensor_id = id;
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  for (TimeSeries* ts : {&r.pressure, &r.vx, &r.vy}) {
    ts->fs = spec.fs;
    ts->samples.resize(n);
  }
  for (std::size_t i = 0; i < n; ++i) {
    r.pressure.samples[i] = spec.noise_sd * g(rng);
    r.vx.samples[i] = spec.noise_sd / spec.impedance * g(rng);
    r.vy.samples[i] = spec.noise_sd / spec.impedance * g(rng);
  }
  return r;
}

void add_plane_wave(MultiChannelRecord& r, const std::vector<double>& wave, std::size_t start, double bearing,
                    double impedance) {
  const double th = bearing * std::numbers::pi / 180.0;
  const double ex = std::sin(th) / impedance, ny = std::cos(th) / impedance;
  for (std::size_t k = 0; k < wave.size() && start + k < r.pressure.size(); ++k) {
    r.pressure.samples[start + k] += wave[k];
    r.vx.samples[start + k] += ex * wave[k];
    r.vy.samples[start + k] += ny * wave[k];
  }
}

}  // namespace

Scene gen_two_sensor_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto n = static_cast<std::size_t>(std::llround(spec.duration * spec.fs));
  Scene scene;
  scene.north = noise_record(spec, n, derive_seed(seed, 5, 0), "N");
  scene.south = noise_record(spec, n, derive_seed(seed, 5, 1), "S");
  scene.sources = spec.sources;
  const double amp = spec.noise_sd * std::pow(10.0, spec.snr_db / 20.0);
  for (std::size_t s = 0; s < spec.sources.size(); ++s) {
    const auto& src = spec.sources[s];
    const auto len = static_cast<std::size_t>(std::llround(src.duration * spec.fs));
    std::vector<double> wave(len);
    if (src.kind == SourceKind::Broadband) {
      Rng rng(derive_seed(seed, 6, s));
      std::normal_distribution<double> g(0.0, amp);
      for (double& v : wave) v = g(rng);
    } else {
      // Raised-cosine ramps keep the switch-on from splattering energy across the band.
      const auto ramp = std::min(len / 2, static_cast<std::size_t>(std::llround(kToneRampSeconds * spec.fs)));
      for (std::size_t k = 0; k < len; ++k) {
        double gain = 1.0;
        const std::size_t edge = std::min(k, len - 1 - k);
        if (edge < ramp) gain = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(edge) / static_cast<double>(ramp));
        wave[k] = gain * amp * std::sqrt(2.0) * std::sin(2.0 * std::numbers::pi * src.tone_freq * static_cast<double>(k) / spec.fs);
      }
    }
    const auto on_n = static_cast<std::size_t>(std::llround(src.t_on * spec.fs));
    const auto on_s = static_cast<std::size_t>(std::llround((src.t_on + spec.clock_offset) * spec.fs));
    add_plane_wave(scene.north, wave, on_n, src.bearing_n, spec.impedance);
    add_plane_wave(scene.south, wave, on_s, src.bearing_s, spec.impedance);
  }
  return scene;
}

SceneSpec random_scene_spec(double duration, int n_sources, double snr_db, std::uint64_t seed) {
  if (n_sources < 0) throw ConfigError("scene: source count must be non-negative");
  SceneSpec spec;
  spec.duration = duration;
  spec.snr_db = snr_db;
  Rng rng(derive_seed(seed, 7, 0));
  const double slot = duration / static_cast<double>(n_sources + 1);
  for (int i = 0; i < n_sources; ++i) {
    PlantedSource s;
    s.duration = std::min(0.5, slot / 2.0);
    s.t_on = slot * (i + 1) - s.duration / 2.0;
    s.bearing_n = uniform(rng, 0.0, 360.0);
    s.bearing_s = uniform(rng, 0.0, 360.0);
    spec.sources.push_back(s);
  }
  return spec;
}

nlohmann::json to_json(const PlantedSource& s) {
  return {{"t_on", s.t_on},
          {"duration", s.duration},
          {"bearing_n", s.bearing_n},
          {"bearing_s", s.bearing_s},
          {"kind", s.kind == SourceKind::Broadband ? "broadband" : "tone"},
          {"tone_freq", s.tone_freq}};
}

}  // namespace reefclust::sim
