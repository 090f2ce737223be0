#include "reefclust/sim.hpp"

#include "binio.hpp"
#include "reefclust/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <string>

namespace reefclust::sim {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Stream ids for derive_seed.
constexpr std::uint64_t kShuffleStream = 0;
constexpr std::uint64_t kEventStream = 1;
constexpr std::uint64_t kNoiseSalt = 0x6E6F697365ULL;

double sweep_start(const FmSweepParams& p, double window_len) { return window_len / 2.0 - p.duration / 2.0 + p.delay; }

double sweep_value(const FmSweepParams& p, double tau) {
  const double beta = p.chirp_rate();
  return p.amplitude * std::sin(kTwoPi * p.f0 * tau + beta / 3.0 * tau * tau * tau);
}

double train_value(const PulseTrainParams& p, double t, double window_len) {
  const double a = p.envelope_rate();
  double y = 0.0;
  for (int i = 0; i < p.n_peaks; ++i) {
    const double u = t - p.pulse_center(i, window_len);
    y += std::exp(-a * u * u) * std::sin(kTwoPi * p.center_freq * u);
  }
  return p.amplitude * y;
}

// Composite 8-point Gauss-Legendre quadrature.
template <typename F>
double integrate(F&& f, double lo, double hi, std::size_t panels) {
  static constexpr double x[4] = {0.1834346424956498, 0.5255324099163290, 0.7966664774136267, 0.9602898564975363};
  static constexpr double w[4] = {0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};
  const double h = (hi - lo) / static_cast<double>(panels);
  double total = 0.0;
  for (std::size_t k = 0; k < panels; ++k) {
    const double mid = lo + (static_cast<double>(k) + 0.5) * h;
    const double half = h / 2.0;
    double s = 0.0;
    for (int q = 0; q < 4; ++q) s += w[q] * (f(mid - half * x[q]) + f(mid + half * x[q]));
    total += s * half;
  }
  return total;
}

std::size_t sample_count(double fs, double window_len) { return static_cast<std::size_t>(std::lround(fs * window_len)); }

}  // namespace

double FmSweepParams::chirp_rate() const noexcept { return kTwoPi * delta_f / (duration * duration); }

void FmSweepParams::validate(double fs) const {
  if (!(duration > 0.0)) throw ConfigError("fm sweep: duration must be positive");
  if (!(f0 > 0.0)) throw ConfigError("fm sweep: f0 must be positive");
  const double f_end = f0 + delta_f;
  if (!(f_end > 0.0 && f_end < fs / 2.0) || !(f0 < fs / 2.0))
    throw ConfigError("fm sweep: frequency range leaves (0, fs/2) and would alias");
}

double PulseTrainParams::envelope_rate() const noexcept { return 2.0 * std::log(2.0) / (pulse_width * pulse_width); }

double PulseTrainParams::pulse_center(int i, double window_len) const noexcept {
  return window_len / 2.0 + delay - static_cast<double>(n_peaks - 1) * peak_spacing / 2.0 +
         static_cast<double>(i) * peak_spacing;
}

void PulseTrainParams::validate(double fs) const {
  if (!(pulse_width > 0.0)) throw ConfigError("pulse train: pulse width must be positive");
  if (n_peaks < 1) throw ConfigError("pulse train: need at least one pulse");
  if (!(peak_spacing >= 0.0)) throw ConfigError("pulse train: negative peak spacing");
  if (!(center_freq > 0.0 && center_freq < fs / 2.0)) throw ConfigError("pulse train: centre frequency outside (0, fs/2)");
}

TimeSeries gen_fm_sweep(const FmSweepParams& p, double fs, double window_len) {
  p.validate(fs);
  if (window_len < p.duration) throw ConfigError("fm sweep: window shorter than the sweep");
  TimeSeries ts{std::vector<double>(sample_count(fs, window_len), 0.0), fs, 0.0};
  const double start = sweep_start(p, window_len);
  for (std::size_t n = 0; n < ts.size(); ++n) {
    const double tau = static_cast<double>(n) / fs - start;
    if (tau >= 0.0 && tau < p.duration) ts.samples[n] = sweep_value(p, tau);
  }
  return ts;
}

TimeSeries gen_pulse_train(const PulseTrainParams& p, double fs, double window_len) {
  p.validate(fs);
  if (static_cast<double>(p.n_peaks - 1) * p.peak_spacing > window_len)
    throw ConfigError("pulse train: train is longer than the window");
  TimeSeries ts{std::vector<double>(sample_count(fs, window_len), 0.0), fs, 0.0};
  for (std::size_t n = 0; n < ts.size(); ++n) ts.samples[n] = train_value(p, static_cast<double>(n) / fs, window_len);
  return ts;
}

double signal_power(const FmSweepParams& p, bool bandwidth_normalized) {
  if (!(p.duration > 0.0)) throw ConfigError("signal_power: zero-duration sweep");
  // About 64 nodes per cycle of the highest instantaneous frequency.
  const double f_max = std::max(p.f0, std::abs(p.f0 + p.delta_f)) + 1.0;
  const auto panels = static_cast<std::size_t>(std::ceil(f_max * p.duration * 8.0)) + 8;
  const double energy = integrate([&](double tau) { const double y = sweep_value(p, tau); return y * y; }, 0.0,
                                  p.duration, panels);
  double power = energy / p.duration;
  if (bandwidth_normalized) {
    if (p.delta_f == 0.0) throw ConfigError("signal_power: bandwidth normalisation undefined for a tonal sweep");
    power /= std::abs(p.delta_f);
  }
  return power;
}

double signal_power(const PulseTrainParams& p, double window_len) {
  if (!(p.pulse_width > 0.0)) throw ConfigError("signal_power: zero-width pulse");
  const double c0 = p.pulse_center(0, window_len);
  const double span = 4.0 * p.pulse_width;
  const auto panels = static_cast<std::size_t>(std::ceil(p.center_freq * span * 8.0)) + 16;
  const double energy = integrate([&](double t) { const double y = train_value(p, t, window_len); return y * y; },
                                  c0 - span / 2.0, c0 + span / 2.0, panels);
  return energy / span;
}

TimeSeries add_noise_snr(const TimeSeries& ts, double snr_db, double sigma_s2, std::uint64_t seed) {
  if (!(sigma_s2 > 0.0)) throw ConfigError("add_noise_snr: signal power must be positive");
  const double sigma_n = std::sqrt(sigma_s2 * std::pow(10.0, -snr_db / 10.0));
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, sigma_n);
  TimeSeries out = ts;
  for (double& v : out.samples) v += noise(rng);
  return out;
}

double draw_peak_spacing(Rng& rng) { return 0.47 * beta(rng, 4.0, 23.0); }

double draw_peak_count_raw(Rng& rng) { return 13.0 * beta(rng, 3.5, 8.0); }

FmSweepParams draw_fm_params(Rng& rng, double fs) {
  FmSweepParams p;
  p.duration = uniform(rng, 0.2, 0.4);
  p.delay = uniform(rng, -0.1, 0.1);
  // Reject (f0, delta_f) pairs whose end frequency would alias.
  do {
    p.f0 = uniform(rng, 100.0, 400.0);
    p.delta_f = uniform(rng, -150.0, 150.0);
  } while (!(p.f0 + p.delta_f > 0.0 && p.f0 + p.delta_f < fs / 2.0));
  p.snr_db = uniform(rng, 15.0, 30.0);
  return p;
}

PulseTrainParams draw_pulse_params(Rng& rng, double window_len) {
  PulseTrainParams p;
  p.pulse_width = 0.005;
  p.center_freq = 200.0;
  p.delay = uniform(rng, -0.1, 0.1);
  do {
    p.peak_spacing = draw_peak_spacing(rng);
    p.n_peaks = std::max(1, static_cast<int>(std::floor(draw_peak_count_raw(rng))));
  } while (static_cast<double>(p.n_peaks - 1) * p.peak_spacing > window_len);
  p.snr_db = uniform(rng, 0.0, 30.0);
  return p;
}

SimEvent generate_event(Label label, std::uint64_t seed, std::size_t event_id) {
  Rng rng(seed);
  SimEvent ev;
  ev.event_id = event_id;
  ev.label = label;
  ev.seed = seed;
  const std::uint64_t noise_seed = splitmix64(seed ^ kNoiseSalt);

  switch (label) {
    case Label::Whale: {
      ev.fm = draw_fm_params(rng);
      const TimeSeries clean = gen_fm_sweep(*ev.fm);
      ev.timeseries = add_noise_snr(clean, ev.fm->snr_db, signal_power(*ev.fm), noise_seed);
      break;
    }
    case Label::Fish: {
      ev.pulse = draw_pulse_params(rng);
      const TimeSeries clean = gen_pulse_train(*ev.pulse);
      ev.timeseries = add_noise_snr(clean, ev.pulse->snr_db, signal_power(*ev.pulse), noise_seed);
      break;
    }
    case Label::Both: {
      ev.fm = draw_fm_params(rng);
      ev.pulse = draw_pulse_params(rng);
      TimeSeries clean = gen_fm_sweep(*ev.fm);
      const TimeSeries train = gen_pulse_train(*ev.pulse);
      for (std::size_t i = 0; i < clean.size(); ++i) clean.samples[i] += train.samples[i];
      // Noise level follows the sweep alone; the train keeps its own amplitude.
      ev.timeseries = add_noise_snr(clean, ev.fm->snr_db, signal_power(*ev.fm), noise_seed);
      break;
    }
  }
  return ev;
}

std::map<Label, std::size_t> class_counts(const DatasetSpec& spec) {
  double total = 0.0;
  for (const auto& [label, frac] : spec.class_mix) {
    if (frac < 0.0) throw ConfigError("class fractions must be non-negative");
    total += frac;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("class fractions must sum to 1");
  std::size_t active = 0;
  for (const auto& [label, frac] : spec.class_mix) active += frac > 0.0 ? 1 : 0;
  if (spec.n_total < active) throw ConfigError("n_total is smaller than the number of classes");

  std::map<Label, std::size_t> counts;
  std::vector<std::pair<double, Label>> remainders;
  std::size_t assigned = 0;
  for (const auto& [label, frac] : spec.class_mix) {
    const double exact = frac * static_cast<double>(spec.n_total);
    counts[label] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[label];
    remainders.emplace_back(exact - std::floor(exact), label);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < spec.n_total; ++k, ++assigned) ++counts[remainders[k % remainders.size()].second];
  return counts;
}

std::vector<SimEvent> sample_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  const auto counts = class_counts(spec);
  std::vector<Label> labels;
  labels.reserve(spec.n_total);
  for (const auto& [label, count] : counts) labels.insert(labels.end(), count, label);

  // Fisher-Yates with an explicit generator so the order is library-independent.
  Rng shuffle_rng(derive_seed(seed, kShuffleStream, 0));
  for (std::size_t i = labels.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(shuffle_rng() % i);
    std::swap(labels[i - 1], labels[j]);
  }

  std::vector<SimEvent> events(labels.size());
  parallel_for(labels.size(), [&](std::size_t i) {
    events[i] = generate_event(labels[i], derive_seed(seed, kEventStream, i), i);
  });
  return events;
}

nlohmann::json to_json(const SimEvent& ev) {
  nlohmann::json params = nlohmann::json::object();
  if (ev.fm) {
    const auto& p = *ev.fm;
    params["fm"] = {{"duration", p.duration}, {"delay", p.delay}, {"f0", p.f0},
                    {"delta_f", p.delta_f},   {"snr_db", p.snr_db}, {"amplitude", p.amplitude}};
  }
  if (ev.pulse) {
    const auto& p = *ev.pulse;
    params["pulse"] = {{"pulse_width", p.pulse_width}, {"delay", p.delay},   {"center_freq", p.center_freq},
                       {"peak_spacing", p.peak_spacing}, {"n_peaks", p.n_peaks}, {"snr_db", p.snr_db},
                       {"amplitude", p.amplitude}};
  }
  return {{"event_id", ev.event_id}, {"label", label_name(ev.label)}, {"params", params}, {"seed", ev.seed}};
}

SimEvent event_from_json(const nlohmann::json& j) {
  try {
    const Label label = label_from_name(j.at("label").get<std::string>());
    return generate_event(label, j.at("seed").get<std::uint64_t>(), j.at("event_id").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed dataset record: ") + e.what());
  }
}

void write_dataset_jsonl(std::ostream& os, const std::vector<SimEvent>& events) {
  for (const auto& ev : events) os << to_json(ev).dump() << '\n';
}

std::vector<SimEvent> read_dataset_jsonl(std::istream& is) {
  std::vector<nlohmann::json> records;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      records.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed dataset line: ") + e.what());
    }
  }
  std::vector<SimEvent> events(records.size());
  parallel_for(records.size(), [&](std::size_t i) { events[i] = event_from_json(records[i]); });
  return events;
}

void write_waveforms(std::ostream& os, const std::vector<TimeSeries>& series) {
  detail::write_magic(os, "RCTS");
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(series.size()));
  for (const auto& ts : series) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ts.size()));
    for (double v : ts.samples) detail::write_le<double>(os, v);
  }
}

std::vector<std::vector<double>> read_waveforms(std::istream& is) {
  detail::expect_magic(is, "RCTS");
  const auto count = detail::read_le<std::uint32_t>(is);
  std::vector<std::vector<double>> out(count);
  for (auto& rec : out) {
    const auto len = detail::read_le<std::uint32_t>(is);
    rec.resize(len);
    for (double& v : rec) v = detail::read_le<double>(is);
  }
  return out;
}

}  // namespace reefclust::sim
