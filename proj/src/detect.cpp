#include "reefclust/detect.hpp"

#include "reefclust/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <numbers>
#include <istream>
#include <ostream>

namespace reefclust::detect {

bool Sector::contains(double deg) const noexcept {
  if (std::isnan(deg)) return false;
  if (lo <= hi) return lo < deg && deg <= hi;
  return deg > lo || deg <= hi;
}

std::vector<Sector> sector_set(double width_deg) {
  if (!(width_deg > 0.0) || width_deg > 360.0) throw ConfigError("sector width must lie in (0, 360]");
  const double step = width_deg / 2.0;
  const double count = 360.0 / step;
  if (std::abs(count - std::round(count)) > 1e-9) throw ConfigError("sector width / 2 must divide 360");
  std::vector<Sector> out;
  for (int k = 0; k < static_cast<int>(std::lround(count)); ++k) {
    const double lo = k * step;
    double hi = lo + width_deg;
    if (hi > 360.0) hi -= 360.0;
    out.push_back({lo, hi});
  }
  return out;
}

BinaryMap sector_mask(const dsp::Azigram& az, const Sector& sector) {
  BinaryMap out(az.degrees.rows(), az.degrees.cols(), 0);
  for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] = sector.contains(az.degrees.data()[k]) ? 1 : 0;
  return out;
}

BinaryMap combine_maps(const BinaryMap& a, const BinaryMap& b) {
  if (!a.same_shape(b)) throw DataError("combine_maps: shape mismatch");
  BinaryMap out(a.rows(), a.cols(), 0);
  for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] = (a.data()[k] && b.data()[k]) ? 1 : 0;
  return out;
}

std::vector<double> detection_series(const BinaryMap& b, double df) {
  std::vector<double> d(b.cols(), 0.0);
  for (std::size_t j = 0; j < b.cols(); ++j) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < b.rows(); ++i) count += b(i, j);
    d[j] = df * static_cast<double>(count);
  }
  return d;
}

void DetectorConfig::validate() const {
  sector_set(sector_width);
  if (!(bandwidth_threshold > 0.0)) throw ConfigError("detector: bandwidth threshold must be positive");
  if (!(max_duration > 0.0)) throw ConfigError("detector: max duration must be positive");
  if (merge_gap < 0) throw ConfigError("detector: merge gap must be non-negative");
  if (!(chunk_seconds > 0.0)) throw ConfigError("detector: chunk length must be positive");
}

std::vector<Run> extract_runs(const std::vector<double>& d, const DetectorConfig& cfg, double dt) {
  std::vector<Run> runs;
  for (std::size_t j = 0; j < d.size();) {
    if (!(d[j] > cfg.bandwidth_threshold)) {
      ++j;
      continue;
    }
    std::size_t e = j;
    while (e < d.size() && d[e] > cfg.bandwidth_threshold) ++e;
    if (!runs.empty() && j - runs.back().end <= static_cast<std::size_t>(cfg.merge_gap))
      runs.back().end = e;
    else
      runs.push_back({j, e});
    j = e;
  }
  std::erase_if(runs, [&](const Run& r) { return static_cast<double>(r.end - r.begin) * dt > cfg.max_duration + 1e-12; });
  return runs;
}

std::vector<Event> extract_events(const std::vector<double>& d, const DetectorConfig& cfg, double dt, double t_start) {
  std::vector<Event> out;
  for (const Run& r : extract_runs(d, cfg, dt)) {
    Event ev;
    ev.t1 = t_start + static_cast<double>(r.begin) * dt;
    ev.t2 = t_start + static_cast<double>(r.end) * dt;
    ev.dt = dt;
    ev.d.assign(d.begin() + static_cast<std::ptrdiff_t>(r.begin), d.begin() + static_cast<std::ptrdiff_t>(r.end));
    ev.bandwidth_peak = *std::max_element(ev.d.begin(), ev.d.end());
    for (double v : ev.d) ev.integrated_bandwidth += v;
    out.push_back(std::move(ev));
  }
  return out;
}

double circular_median(std::vector<double> degrees) {
  std::erase_if(degrees, [](double v) { return std::isnan(v); });
  if (degrees.empty()) return std::nan("");
  const double to_rad = std::numbers::pi / 180.0;
  double s = 0.0, c = 0.0;
  for (double v : degrees) {
    s += std::sin(v * to_rad);
    c += std::cos(v * to_rad);
  }
  const double centre = std::atan2(s, c) / to_rad;
  for (double& v : degrees) v = std::remainder(v - centre, 360.0);
  const std::size_t n = degrees.size();
  std::nth_element(degrees.begin(), degrees.begin() + static_cast<std::ptrdiff_t>(n / 2), degrees.end());
  double med = degrees[n / 2];
  if (n % 2 == 0) {
    const double lower = *std::max_element(degrees.begin(), degrees.begin() + static_cast<std::ptrdiff_t>(n / 2));
    med = 0.5 * (med + lower);
  }
  double out = std::fmod(med + centre, 360.0);
  if (out < 0.0) out += 360.0;
  return out;
}

namespace {

struct Candidate {
  Event event;
  std::size_t pair = 0;
  std::size_t begin = 0, end = 0;  // frames within the chunk
};

double masked_median(const dsp::Azigram& az, const BinaryMap& mask, std::size_t begin) {
  std::vector<double> vals;
  for (std::size_t i = 0; i < mask.rows(); ++i)
    for (std::size_t j = 0; j < mask.cols(); ++j)
      if (mask(i, j)) vals.push_back(az.degrees(i, begin + j));
  return circular_median(std::move(vals));
}

std::vector<Event> scan_chunk(const MultiChannelRecord& north, const MultiChannelRecord& south, const DetectorConfig& cfg,
                              const std::vector<Sector>& sectors) {
  auto spec_n = std::array{dsp::stft(north.pressure, cfg.stft), dsp::stft(north.vx, cfg.stft), dsp::stft(north.vy, cfg.stft)};
  auto spec_s = std::array{dsp::stft(south.pressure, cfg.stft), dsp::stft(south.vx, cfg.stft), dsp::stft(south.vy, cfg.stft)};
  double lag = 0.0;
  if (cfg.clock == ClockSync::Estimate) {
    lag = dsp::clock_align(spec_n[0], spec_s[0], cfg.clock_config);
    const long lag_frames = std::lround(lag / spec_n[0].dt);
    for (auto& s : spec_s) s = dsp::shift_frames(s, lag_frames);
  }
  const dsp::Azigram az_n = dsp::azigram(spec_n[0], spec_n[1], spec_n[2]);
  const dsp::Azigram az_s = dsp::azigram(spec_s[0], spec_s[1], spec_s[2]);
  const double df = spec_n[0].df, dt = spec_n[0].dt, t0 = spec_n[0].t_start;

  std::vector<BinaryMap> masks_n, masks_s;
  for (const auto& sec : sectors) {
    masks_n.push_back(sector_mask(az_n, sec));
    masks_s.push_back(sector_mask(az_s, sec));
  }
  const std::size_t ns = sectors.size();
  std::vector<std::vector<Candidate>> per_pair(ns * ns);
  parallel_for(ns * ns, [&](std::size_t pair) {
    const BinaryMap b = combine_maps(masks_n[pair / ns], masks_s[pair % ns]);
    const auto d = detection_series(b, df);
    for (const Run& r : extract_runs(d, cfg, dt)) {
      Candidate c;
      c.pair = pair;
      c.begin = r.begin;
      c.end = r.end;
      Event& ev = c.event;
      ev.t1 = t0 + static_cast<double>(r.begin) * dt;
      ev.t2 = t0 + static_cast<double>(r.end) * dt;
      ev.df = df;
      ev.dt = dt;
      ev.clock_lag = lag;
      ev.sector_n = sectors[pair / ns];
      ev.sector_s = sectors[pair % ns];
      ev.d.assign(d.begin() + static_cast<std::ptrdiff_t>(r.begin), d.begin() + static_cast<std::ptrdiff_t>(r.end));
      ev.bandwidth_peak = *std::max_element(ev.d.begin(), ev.d.end());
      for (double v : ev.d) ev.integrated_bandwidth += v;
      ev.mask = BinaryMap(b.rows(), r.end - r.begin, 0);
      for (std::size_t i = 0; i < b.rows(); ++i)
        for (std::size_t j = r.begin; j < r.end; ++j) ev.mask(i, j - r.begin) = b(i, j);
      per_pair[pair].push_back(std::move(c));
    }
  });

  std::vector<Candidate> all;
  for (auto& v : per_pair)
    for (auto& c : v) all.push_back(std::move(c));
  // Strongest support first; ties resolved by time then pair index.
  std::stable_sort(all.begin(), all.end(), [](const Candidate& a, const Candidate& b) {
    if (a.event.integrated_bandwidth != b.event.integrated_bandwidth)
      return a.event.integrated_bandwidth > b.event.integrated_bandwidth;
    if (a.begin != b.begin) return a.begin < b.begin;
    return a.pair < b.pair;
  });
  std::vector<Candidate> kept;
  for (auto& c : all) {
    const bool overlaps = std::any_of(kept.begin(), kept.end(), [&](const Candidate& k) { return c.begin < k.end && k.begin < c.end; });
    if (!overlaps) kept.push_back(std::move(c));
  }
  std::sort(kept.begin(), kept.end(), [](const Candidate& a, const Candidate& b) {
    return a.begin != b.begin ? a.begin < b.begin : a.pair < b.pair;
  });
  std::vector<Event> out;
  for (auto& c : kept) {
    c.event.az_n = masked_median(az_n, c.event.mask, c.begin);
    c.event.az_s = masked_median(az_s, c.event.mask, c.begin);
    out.push_back(std::move(c.event));
  }
  return out;
}

MultiChannelRecord slice_record(const MultiChannelRecord& r, double t1, double t2) {
  MultiChannelRecord out;
  out.sensor_id = r.sensor_id;
  out.pressure = r.pressure.slice(t1, t2);
  out.vx = r.vx.slice(t1, t2);
  out.vy = r.vy.slice(t1, t2);
  return out;
}

}  // namespace

std::vector<Event> scan(const MultiChannelRecord& north, const MultiChannelRecord& south, const DetectorConfig& cfg) {
  cfg.validate();
  north.validate();
  south.validate();
  if (north.pressure.fs != south.pressure.fs) throw DataError("scan: sensors have different sample rates");
  const auto sectors = sector_set(cfg.sector_width);
  const double fs = north.pressure.fs;
  const double start = std::max(north.pressure.t_start, south.pressure.t_start);
  const double stop = std::min(north.pressure.t_start + north.pressure.duration(), south.pressure.t_start + south.pressure.duration());
  if (!(stop > start)) throw DataError("scan: sensor records do not overlap in time");

  std::vector<Event> events;
  const auto total = static_cast<std::size_t>(std::llround((stop - start) * fs));
  const auto chunk = static_cast<std::size_t>(std::llround(cfg.chunk_seconds * fs));
  for (std::size_t s0 = 0; s0 < total; s0 += chunk) {
    const std::size_t s1 = std::min(total, s0 + chunk);
    if (s1 - s0 < cfg.stft.nfft) break;  // trailing fragment shorter than one frame
    const double t1 = start + static_cast<double>(s0) / fs, t2 = start + static_cast<double>(s1) / fs;
    auto part = scan_chunk(slice_record(north, t1, t2), slice_record(south, t1, t2), cfg, sectors);
    for (auto& e : part) events.push_back(std::move(e));
  }
  for (std::size_t i = 0; i < events.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "e%06zu", i);
    events[i].event_id = id;
  }
  return events;
}

bool accept_all(const Event&) { return true; }

std::vector<Event> spatial_filter(const std::vector<Event>& events, const EventPredicate& keep) {
  std::vector<Event> out;
  for (const auto& e : events)
    if (keep(e)) out.push_back(e);
  return out;
}

bool ray_intersection(Position a, double bearing_a, Position b, double bearing_b, Position& out) {
  const double to_rad = std::numbers::pi / 180.0;
  const double ux = std::sin(bearing_a * to_rad), uy = std::cos(bearing_a * to_rad);
  const double vx = std::sin(bearing_b * to_rad), vy = std::cos(bearing_b * to_rad);
  // a + s u = b + t v
  const double det = ux * (-vy) - uy * (-vx);
  if (std::abs(det) < 1e-12) return false;
  const double rx = b.x - a.x, ry = b.y - a.y;
  const double s = (rx * (-vy) - ry * (-vx)) / det;
  const double t = (ux * ry - uy * rx) / det;
  if (s < 0.0 || t < 0.0) return false;
  out = {a.x + s * ux, a.y + s * uy};
  return true;
}

EventPredicate ray_intersection_predicate(Position north, Position south, Position centre, double box) {
  return [=](const Event& e) {
    Position p;
    if (!ray_intersection(north, e.az_n, south, e.az_s, p)) return false;
    return std::abs(p.x - centre.x) <= box / 2.0 && std::abs(p.y - centre.y) <= box / 2.0;
  };
}

void write_events_jsonl(std::ostream& os, const std::vector<Event>& events) {
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  for (const auto& e : events) {
    nlohmann::json j;
    j["event_id"] = e.event_id;
    j["t1"] = e.t1;
    j["t2"] = e.t2;
    j["sector_n"] = {e.sector_n.lo, e.sector_n.hi};
    j["sector_s"] = {e.sector_s.lo, e.sector_s.hi};
    j["az_n"] = num(e.az_n);
    j["az_s"] = num(e.az_s);
    j["bandwidth_peak"] = e.bandwidth_peak;
    os << j.dump() << '\n';
  }
}

std::vector<Event> read_events_jsonl(std::istream& is) {
  std::vector<Event> out;
  std::string line;
  auto num = [](const nlohmann::json& v) { return v.is_null() ? std::nan("") : v.get<double>(); };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Event e;
      e.event_id = j.at("event_id");
      e.t1 = j.at("t1");
      e.t2 = j.at("t2");
      e.sector_n = {j.at("sector_n")[0], j.at("sector_n")[1]};
      e.sector_s = {j.at("sector_s")[0], j.at("sector_s")[1]};
      e.az_n = num(j.at("az_n"));
      e.az_s = num(j.at("az_s"));
      e.bandwidth_peak = j.at("bandwidth_peak");
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(std::string("events file: ") + ex.what());
    }
  }
  return out;
}

}  // namespace reefclust::detect
