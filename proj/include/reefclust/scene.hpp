#pragma once

#include "reefclust/core.hpp"

#include <json.hpp>

#include <cstdint>
#include <vector>

namespace reefclust::sim {

enum class SourceKind { Broadband, Tone };

/// Tones fade in and out over this many seconds.
inline constexpr double kToneRampSeconds = 0.1;

/// One source planted in a two-sensor scene. Bearings point from each sensor toward the source.
struct PlantedSource {
  double t_on = 0.0;  // seconds, north-sensor clock
  double duration = 0.5;
  double bearing_n = 0.0;
  double bearing_s = 0.0;
  SourceKind kind = SourceKind::Broadband;
  double tone_freq = 150.0;
};

struct SceneSpec {
  double duration = 60.0;
  double fs = 1000.0;
  double noise_sd = 1.0;  // pressure noise; velocity noise is scaled by 1/impedance
  double snr_db = 20.0;   // source variance over pressure noise variance
  double impedance = 1025.0 * 1500.0;
  /// Seconds by which the south recorder's clock runs behind the north one.
  double clock_offset = 0.0;
  std::vector<PlantedSource> sources;

  void validate() const;
};

struct Scene {
  MultiChannelRecord north;
  MultiChannelRecord south;
  std::vector<PlantedSource> sources;
};

/// Plane-wave sources in independent white noise on every channel of two vector sensors.
Scene gen_two_sensor_scene(const SceneSpec& spec, std::uint64_t seed);

/// Evenly spaced broadband sources with bearings drawn from the seed.
SceneSpec random_scene_spec(double duration, int n_sources, double snr_db, std::uint64_t seed);

nlohmann::json to_json(const PlantedSource& s);

}  // namespace reefclust::sim
