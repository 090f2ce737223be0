#include "reefclust/dsp.hpp"

#include "binio.hpp"
#include "fft.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numbers>
#include <numeric>

namespace reefclust::dsp {

long SpectrogramComplex::frame_index(double t) const noexcept {
  return static_cast<long>(std::lround((t - t_start) / dt));
}

Grid<double> SpectrogramComplex::power() const {
  Grid<double> out(n_freq(), n_time());
  std::transform(data.data().begin(), data.data().end(), out.data().begin(), [](Complex z) { return std::norm(z); });
  return out;
}

bool SpectrogramComplex::same_grid(const SpectrogramComplex& other) const noexcept {
  return data.same_shape(other.data) && df == other.df && dt == other.dt && f_min == other.f_min;
}

SpectrogramComplex stft(const TimeSeries& ts, const StftConfig& cfg) {
  ts.validate();
  if (cfg.nfft < 2 || cfg.hop == 0) throw ConfigError("stft: nfft must be >= 2 and hop >= 1");
  const std::size_t nfft = cfg.nfft;
  const std::size_t pad = cfg.center ? nfft / 2 : 0;

  std::vector<double> padded(ts.size() + 2 * pad, 0.0);
  std::copy(ts.samples.begin(), ts.samples.end(), padded.begin() + static_cast<long>(pad));
  if (padded.size() < nfft) throw DataError("stft: input shorter than the FFT length");

  const std::size_t n_frames = cfg.center ? ts.size() / cfg.hop + 1 : (padded.size() - nfft) / cfg.hop + 1;
  const std::size_t n_bins = nfft / 2 + 1;

  // Periodic Hann.
  std::vector<double> window(nfft);
  for (std::size_t n = 0; n < nfft; ++n)
    window[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(nfft));

  SpectrogramComplex out;
  out.data = Grid<Complex>(n_bins, n_frames);
  out.df = ts.fs / static_cast<double>(nfft);
  out.dt = static_cast<double>(cfg.hop) / ts.fs;
  out.f_min = 0.0;
  // Frame 0 is centred on sample nfft/2 of the (possibly padded) buffer.
  out.t_start = ts.t_start + (static_cast<double>(nfft / 2) - static_cast<double>(pad)) / ts.fs;

  std::vector<double> frame(nfft);
  std::vector<Complex> spectrum(n_bins);
  for (std::size_t j = 0; j < n_frames; ++j) {
    const std::size_t offset = j * cfg.hop;
    for (std::size_t n = 0; n < nfft; ++n) {
      const std::size_t idx = offset + n;
      frame[n] = idx < padded.size() ? padded[idx] * window[n] : 0.0;
    }
    detail::rfft(frame.data(), spectrum.data(), nfft);
    for (std::size_t i = 0; i < n_bins; ++i) out.data(i, j) = spectrum[i];
  }
  return out;
}

TimeSeries hilbert_envelope(const TimeSeries& ts) {
  if (ts.samples.empty()) throw DataError("hilbert_envelope: empty input");
  const std::size_t n = ts.size();
  std::vector<Complex> x(n), spectrum(n), analytic(n);
  std::transform(ts.samples.begin(), ts.samples.end(), x.begin(), [](double v) { return Complex(v, 0.0); });
  detail::cfft(x.data(), spectrum.data(), n, -1);

  // Keep DC (and Nyquist for even n), double positive frequencies, drop negative ones.
  const std::size_t half = n / 2;
  for (std::size_t k = 1; k < n; ++k) {
    if (k < (n + 1) / 2)
      spectrum[k] *= 2.0;
    else if (!(n % 2 == 0 && k == half))
      spectrum[k] = 0.0;
  }
  detail::cfft(spectrum.data(), analytic.data(), n, +1);

  TimeSeries out{std::vector<double>(n), ts.fs, ts.t_start};
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = std::abs(analytic[i]) * scale;
  return out;
}

TimeSeries beamform(const MultiChannelRecord& rec, const BeamformConfig& cfg) {
  rec.validate();
  if (!(cfg.rho > 0.0) || !(cfg.c > 0.0)) throw ConfigError("beamform: rho and c must be positive");
  const double theta = cfg.azimuth_deg * std::numbers::pi / 180.0;
  const double wx = cfg.impedance() * std::sin(theta);
  const double wy = cfg.impedance() * std::cos(theta);
  TimeSeries out = rec.pressure;
  for (std::size_t i = 0; i < out.size(); ++i) out.samples[i] += wx * rec.vx.samples[i] + wy * rec.vy.samples[i];
  return out;
}

Azigram azigram(const SpectrogramComplex& pressure, const SpectrogramComplex& vx, const SpectrogramComplex& vy) {
  if (!pressure.data.same_shape(vx.data) || !pressure.data.same_shape(vy.data))
    throw DataError("azigram: spectrogram shape mismatch");
  Azigram out;
  out.degrees = Grid<double>(pressure.n_freq(), pressure.n_time());
  out.df = pressure.df;
  out.dt = pressure.dt;
  out.t_start = pressure.t_start;
  const auto& s = pressure.data.data();
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double east = std::real(s[k] * std::conj(vx.data.data()[k]));
    const double north = std::real(s[k] * std::conj(vy.data.data()[k]));
    if (east == 0.0 && north == 0.0) {
      out.degrees.data()[k] = std::nan("");
      continue;
    }
    double deg = std::atan2(east, north) * 180.0 / std::numbers::pi;
    if (deg < 0.0) deg += 360.0;
    if (deg >= 360.0) deg -= 360.0;
    out.degrees.data()[k] = deg;
  }
  return out;
}

namespace {

std::vector<double> summed_log_power(const SpectrogramComplex& s) {
  std::vector<double> series(s.n_time(), 0.0);
  for (std::size_t i = 0; i < s.n_freq(); ++i)
    for (std::size_t j = 0; j < s.n_time(); ++j) series[j] += std::log10(std::norm(s.data(i, j)) + 1e-300);
  return series;
}

// Zero-mean, unit-norm copy; false when the series is constant.
bool standardize(std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double& x : v) {
    x -= mean;
    ss += x * x;
  }
  if (!(ss > 1e-18 * static_cast<double>(v.size()))) return false;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(v.size()));
  for (double& x : v) x *= inv;
  return true;
}

}  // namespace

double clock_align(const SpectrogramComplex& a, const SpectrogramComplex& b, const ClockAlignConfig& cfg) {
  if (a.df != b.df || a.dt != b.dt || a.n_freq() != b.n_freq()) throw DataError("clock_align: spectrogram grids differ");
  const std::size_t n = std::min(a.n_time(), b.n_time());
  if (static_cast<double>(n) * a.dt < cfg.min_duration_s) throw DataError("clock_align: need at least 10 s of data");

  auto sa = summed_log_power(a);
  auto sb = summed_log_power(b);
  sa.resize(n);
  sb.resize(n);
  if (!standardize(sa) || !standardize(sb)) throw DataError("clock_align: degenerate (constant) spectrogram");

  const long max_lag = std::min(static_cast<long>(cfg.max_lag_s / a.dt), static_cast<long>(n / 4));
  long best_lag = 0;
  double best = -2.0;
  for (long lag = -max_lag; lag <= max_lag; ++lag) {
    double acc = 0.0;
    for (long j = 0; j < static_cast<long>(n); ++j) {
      const long k = j + lag;
      if (k >= 0 && k < static_cast<long>(n)) acc += sa[static_cast<std::size_t>(j)] * sb[static_cast<std::size_t>(k)];
    }
    // Normalise by the full length so that short overlaps cannot win on noise.
    const double r = acc / static_cast<double>(n);
    if (r > best) {
      best = r;
      best_lag = lag;
    }
  }
  if (best < cfg.min_correlation)
    throw DataError("clock_align: no common structure between sensors (peak correlation " + std::to_string(best) + ")");
  return static_cast<double>(best_lag) * a.dt;
}

SpectrogramComplex shift_frames(const SpectrogramComplex& s, long lag_frames) {
  SpectrogramComplex out = s;
  const long nt = static_cast<long>(s.n_time());
  for (std::size_t i = 0; i < s.n_freq(); ++i)
    for (long j = 0; j < nt; ++j) {
      const long src = j + lag_frames;
      out.data(i, static_cast<std::size_t>(j)) = (src >= 0 && src < nt) ? s.data(i, static_cast<std::size_t>(src)) : Complex{};
    }
  return out;
}

void minmax_normalize(Grid<double>& image) {
  auto& v = image.data();
  if (v.empty()) return;
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  if (!(range > 0.0)) {
    std::fill(v.begin(), v.end(), 0.5);
    return;
  }
  for (double& x : v) x = std::clamp((x - lo) / range, 0.0, 1.0);
}

DecInput dec_input(const SpectrogramComplex& spec, double t1, double t2, std::string event_id) {
  if (!(t2 > t1)) throw DataError("dec_input: empty event");
  if (spec.n_freq() < kDecRows + 1) throw DataError("dec_input: spectrogram has fewer than 91 frequency bins");
  const long first = spec.frame_index(t1);
  if (first < 0 || first >= static_cast<long>(spec.n_time())) throw DataError("dec_input: event outside spectrogram span");
  const long event_frames = std::max(spec.frame_index(t2) - first, 1L);
  const long available = static_cast<long>(spec.n_time()) - first;
  const auto used = static_cast<std::size_t>(std::min({event_frames, available, static_cast<long>(kDecCols)}));

  double peak = 0.0;
  for (std::size_t i = 1; i <= kDecRows; ++i)
    for (std::size_t c = 0; c < used; ++c)
      peak = std::max(peak, std::norm(spec.data(i, static_cast<std::size_t>(first) + c)));
  // 120 dB floor below the image peak keeps exact zeros finite.
  const double floor = peak > 0.0 ? peak * 1e-12 : 1e-300;

  DecInput out{Grid<double>(kDecRows, kDecCols), std::move(event_id)};
  double lowest = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < kDecRows; ++r)
    for (std::size_t c = 0; c < used; ++c) {
      const double v = std::log10(std::max(std::norm(spec.data(r + 1, static_cast<std::size_t>(first) + c)), floor));
      out.image(r, c) = v;
      lowest = std::min(lowest, v);
    }
  for (std::size_t r = 0; r < kDecRows; ++r)
    for (std::size_t c = used; c < kDecCols; ++c) out.image(r, c) = lowest;
  minmax_normalize(out.image);
  return out;
}

void write_spectrogram(std::ostream& os, const SpectrogramComplex& s) {
  detail::write_magic(os, "RCSG");
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.n_freq()));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.n_time()));
  detail::write_le<double>(os, s.df);
  detail::write_le<double>(os, s.dt);
  detail::write_le<double>(os, s.f_min);
  detail::write_le<double>(os, s.t_start);
  for (const Complex& z : s.data.data()) {
    detail::write_le<double>(os, z.real());
    detail::write_le<double>(os, z.imag());
  }
}

SpectrogramComplex read_spectrogram(std::istream& is) {
  detail::expect_magic(is, "RCSG");
  const auto nf = detail::read_le<std::uint32_t>(is);
  const auto nt = detail::read_le<std::uint32_t>(is);
  SpectrogramComplex s;
  s.df = detail::read_le<double>(is);
  s.dt = detail::read_le<double>(is);
  s.f_min = detail::read_le<double>(is);
  s.t_start = detail::read_le<double>(is);
  s.data = Grid<Complex>(nf, nt);
  for (Complex& z : s.data.data()) {
    const double re = detail::read_le<double>(is);
    const double im = detail::read_le<double>(is);
    z = Complex(re, im);
  }
  return s;
}

}  // namespace reefclust::dsp
