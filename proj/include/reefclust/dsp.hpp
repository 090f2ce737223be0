#pragma once

#include "reefclust/core.hpp"

#include <complex>
#include <cstddef>
#include <iosfwd>
#include <string>

namespace reefclust::dsp {

using Complex = std::complex<double>;

/// One-sided complex STFT. Rows are frequency bins, columns are frames.
/// `t_start` is the time of frame 0, taken at the centre of its analysis window.
struct SpectrogramComplex {
  Grid<Complex> data;
  double df = 0.0;
  double dt = 0.0;
  double f_min = 0.0;
  double t_start = 0.0;

  std::size_t n_freq() const noexcept { return data.rows(); }
  std::size_t n_time() const noexcept { return data.cols(); }
  double frame_time(std::size_t j) const noexcept { return t_start + static_cast<double>(j) * dt; }
  /// Nearest frame index for an absolute time (may be negative or past the end).
  long frame_index(double t) const noexcept;
  double bin_frequency(std::size_t i) const noexcept { return f_min + static_cast<double>(i) * df; }

  Grid<double> power() const;
  bool same_grid(const SpectrogramComplex& other) const noexcept;
};

/// Compass bearing of active intensity per time-frequency bin, degrees clockwise from North.
/// Bins with zero intensity carry NaN.
struct Azigram {
  Grid<double> degrees;
  double df = 0.0;
  double dt = 0.0;
  double t_start = 0.0;
};

struct StftConfig {
  std::size_t nfft = 256;
  /// 90% of 256 is 25.6 samples; the hop is rounded down to an integer.
  std::size_t hop = 25;
  /// Zero-pad nfft/2 samples at both ends so frame j is centred on sample j*hop.
  bool center = false;
};

SpectrogramComplex stft(const TimeSeries& ts, const StftConfig& cfg = {});

/// Magnitude of the analytic signal.
TimeSeries hilbert_envelope(const TimeSeries& ts);

struct BeamformConfig {
  double rho = 1025.0;
  double c = 1500.0;
  double azimuth_deg = 0.0;

  double impedance() const noexcept { return rho * c; }
};

/// y + rho*c*(vx*sin(theta) + vy*cos(theta)).
TimeSeries beamform(const MultiChannelRecord& rec, const BeamformConfig& cfg);

Azigram azigram(const SpectrogramComplex& pressure, const SpectrogramComplex& vx, const SpectrogramComplex& vy);

struct ClockAlignConfig {
  double max_lag_s = 5.0;
  /// Peak normalised correlation below this is treated as "no common structure".
  double min_correlation = 0.5;
  double min_duration_s = 10.0;
};

/// Delay of B relative to A (positive when B lags), from the cross-correlation of
/// per-frame summed log power. Throws DataError when the pair carries no usable structure.
double clock_align(const SpectrogramComplex& a, const SpectrogramComplex& b, const ClockAlignConfig& cfg = {});

/// Spectrogram with its columns shifted so that a sensor lagging by `lag_frames`
/// lines up with the reference; vacated columns are zero.
SpectrogramComplex shift_frames(const SpectrogramComplex& s, long lag_frames);

inline constexpr std::size_t kDecRows = 90;
inline constexpr std::size_t kDecCols = 20;

/// Normalised log-power image fed to the autoencoder.
struct DecInput {
  Grid<double> image;  // [kDecRows x kDecCols], values in [0, 1]
  std::string event_id;
};

/// 20 frames from t1 (fewer if the event ends first; remaining columns padded),
/// bins 1..90, log10 power, min-max scaled per image. Constant images map to 0.5.
DecInput dec_input(const SpectrogramComplex& spec, double t1, double t2, std::string event_id = {});

/// Rescales an image to [0, 1]; constant images become 0.5.
void minmax_normalize(Grid<double>& image);

void write_spectrogram(std::ostream& os, const SpectrogramComplex& s);
SpectrogramComplex read_spectrogram(std::istream& is);

}  // namespace reefclust::dsp
