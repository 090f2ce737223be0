#pragma once

#include "reefclust/core.hpp"
#include "reefclust/dsp.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace reefclust::detect {

/// Half-open compass interval (lo, hi]; wraps through North when lo > hi.
struct Sector {
  double lo = 0.0;
  double hi = 90.0;

  bool contains(double deg) const noexcept;
  bool operator==(const Sector&) const = default;
};

/// Sectors of width `width_deg` starting every width/2 degrees around the compass.
std::vector<Sector> sector_set(double width_deg);

using BinaryMap = Grid<std::uint8_t>;

BinaryMap sector_mask(const dsp::Azigram& az, const Sector& sector);
BinaryMap combine_maps(const BinaryMap& a, const BinaryMap& b);

/// Bandwidth per frame: df times the number of active bins.
std::vector<double> detection_series(const BinaryMap& b, double df);

enum class ClockSync { Estimate, None };

struct DetectorConfig {
  double sector_width = 90.0;        // degrees
  double bandwidth_threshold = 120.0;  // Hz, strict d > T
  int merge_gap = 1;                  // frames
  double max_duration = 2.0;          // seconds
  double spatial_box = 100.0;         // metres, passed to the spatial filter
  double chunk_seconds = 300.0;
  ClockSync clock = ClockSync::Estimate;
  dsp::ClockAlignConfig clock_config{};
  dsp::StftConfig stft{};

  void validate() const;
};

/// Frame interval [begin, end) of one detection.
struct Run {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Runs with d > T, merged across gaps of at most `merge_gap` frames, longer
/// than max_duration dropped.
std::vector<Run> extract_runs(const std::vector<double>& d, const DetectorConfig& cfg, double dt);

struct Event {
  std::string event_id;
  double t1 = 0.0;
  double t2 = 0.0;
  Sector sector_n;
  Sector sector_s;
  double az_n = 0.0;
  double az_s = 0.0;
  double bandwidth_peak = 0.0;
  double integrated_bandwidth = 0.0;  // sum of d over the event frames
  std::vector<double> d;
  BinaryMap mask;  // [Nf x event frames]
  double df = 0.0;
  double dt = 0.0;
  double clock_lag = 0.0;  // seconds the second sensor lagged in this chunk

  double duration() const noexcept { return t2 - t1; }
};

/// Events from one detection series, without azimuths or sectors.
std::vector<Event> extract_events(const std::vector<double>& d, const DetectorConfig& cfg, double dt,
                                  double t_start = 0.0);

/// Circular median of bearings in degrees: linear median after unwrapping
/// around the circular mean. NaN values are ignored; NaN when none remain.
double circular_median(std::vector<double> degrees);

/// Two-sensor directional scan over all sector pairs, chunked, with overlapping
/// detections reduced to the pair of largest integrated bandwidth.
std::vector<Event> scan(const MultiChannelRecord& north, const MultiChannelRecord& south, const DetectorConfig& cfg);

using EventPredicate = std::function<bool(const Event&)>;

bool accept_all(const Event&);

std::vector<Event> spatial_filter(const std::vector<Event>& events, const EventPredicate& keep = accept_all);

struct Position {
  double x = 0.0;  // metres east
  double y = 0.0;  // metres north
};

/// Keeps events whose bearing rays from both sensors cross inside a square of
/// side `box` centred on `centre`.
EventPredicate ray_intersection_predicate(Position north, Position south, Position centre, double box);

/// Crossing point of two compass-bearing rays; false when they are parallel or
/// meet behind either sensor.
bool ray_intersection(Position a, double bearing_a, Position b, double bearing_b, Position& out);

void write_events_jsonl(std::ostream& os, const std::vector<Event>& events);
/// Reads the exported fields back; masks and bandwidth series are not stored.
std::vector<Event> read_events_jsonl(std::istream& is);

}  // namespace reefclust::detect
