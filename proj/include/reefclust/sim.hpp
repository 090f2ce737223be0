#pragma once

#include "reefclust/core.hpp"
#include "reefclust/rng.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <vector>

namespace reefclust::sim {

inline constexpr double kSampleRate = 1000.0;
inline constexpr double kWindowSeconds = 0.5;

/// Quadratic FM sweep. Times are relative to the window centre.
struct FmSweepParams {
  double duration = 0.3;  // T
  double delay = 0.0;     // t0
  double f0 = 200.0;
  double delta_f = 0.0;  // signed bandwidth
  double snr_db = 25.0;
  double amplitude = 1.0;

  /// Chirp rate so that the instantaneous frequency runs f0 -> f0+delta_f over T.
  double chirp_rate() const noexcept;
  void validate(double fs) const;
};

/// Train of Gaussian-modulated sinusoids. `delay` shifts the train centre from the window centre.
struct PulseTrainParams {
  double pulse_width = 0.005;  // half-power width tau
  double delay = 0.0;
  double center_freq = 200.0;
  double peak_spacing = 0.05;
  int n_peaks = 1;
  double snr_db = 15.0;
  double amplitude = 1.0;

  /// Envelope decay a = 2 log 2 / tau^2.
  double envelope_rate() const noexcept;
  /// Absolute (window-relative) centre of pulse i.
  double pulse_center(int i, double window_len) const noexcept;
  void validate(double fs) const;
};

struct SimEvent {
  std::size_t event_id = 0;
  TimeSeries timeseries;
  Label label = Label::Whale;
  std::optional<FmSweepParams> fm;
  std::optional<PulseTrainParams> pulse;
  std::uint64_t seed = 0;
};

TimeSeries gen_fm_sweep(const FmSweepParams& p, double fs = kSampleRate, double window_len = kWindowSeconds);
TimeSeries gen_pulse_train(const PulseTrainParams& p, double fs = kSampleRate, double window_len = kWindowSeconds);

/// Mean power of the continuous sweep over its support [start, start+T).
/// With `bandwidth_normalized` the result is further divided by |delta_f|.
double signal_power(const FmSweepParams& p, bool bandwidth_normalized = false);
/// Mean power of the continuous train over [c0 - 2 tau, c0 + 2 tau] around the first pulse.
double signal_power(const PulseTrainParams& p, double window_len = kWindowSeconds);

/// Adds N(0, sigma_s2 * 10^(-snr/10)) to every sample.
TimeSeries add_noise_snr(const TimeSeries& ts, double snr_db, double sigma_s2, std::uint64_t seed);

FmSweepParams draw_fm_params(Rng& rng, double fs = kSampleRate);
PulseTrainParams draw_pulse_params(Rng& rng, double window_len = kWindowSeconds);
/// 0.47 * Beta(4, 23)
double draw_peak_spacing(Rng& rng);
/// 13 * Beta(3.5, 8), before flooring.
double draw_peak_count_raw(Rng& rng);

/// Builds one labelled event from its own seed.
SimEvent generate_event(Label label, std::uint64_t seed, std::size_t event_id = 0);

struct DatasetSpec {
  std::size_t n_total = 10000;
  std::map<Label, double> class_mix{{Label::Whale, 0.5}, {Label::Fish, 0.5}};
};

/// Per-class counts by largest remainder; sums to n_total.
std::map<Label, std::size_t> class_counts(const DatasetSpec& spec);

/// Shuffled labelled events; event i uses derive_seed(root, 1, i).
std::vector<SimEvent> sample_dataset(const DatasetSpec& spec, std::uint64_t seed);

nlohmann::json to_json(const SimEvent& ev);
/// Rebuilds the event (including its waveform) from a JSON record.
SimEvent event_from_json(const nlohmann::json& j);

void write_dataset_jsonl(std::ostream& os, const std::vector<SimEvent>& events);
std::vector<SimEvent> read_dataset_jsonl(std::istream& is);

/// "RCTS" sidecar: u32 count, then per record u32 length and f64 samples.
void write_waveforms(std::ostream& os, const std::vector<TimeSeries>& series);
std::vector<std::vector<double>> read_waveforms(std::istream& is);

}  // namespace reefclust::sim
