#pragma once

#include "reefclust/core.hpp"
#include "reefclust/dsp.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace reefclust::features {

/// Fourth central moment over the squared variance (3 for Gaussian noise).
double kurtosis(std::span<const double> y);

/// Topographic prominence of every local maximum, in sample order.
std::vector<std::pair<std::size_t, double>> peak_prominences(std::span<const double> x);

/// Local maxima of an envelope whose prominence exceeds std(envelope) * sqrt(10).
int n_peaks(const TimeSeries& envelope);

/// Frequency of the global maximum of a power spectrogram restricted to columns [col_begin, col_end).
double peak_frequency(const Grid<double>& power, double df, double f_min = 0.0, std::size_t col_begin = 0,
                      std::size_t col_end = static_cast<std::size_t>(-1));

/// Median of 10 log10(power) over the bins where mask is set. Shapes must match.
double median_psd(const Grid<double>& power, const Grid<std::uint8_t>& mask);

enum class CoherenceNorm {
  Product,  // sqrt(|a|^2 |b|^2), bounded by 1
  Sum,      // sqrt(|a|^2 + |b|^2)
};

/// Peak over lags of the cross-correlation of two mean-removed envelopes.
double coherence(const TimeSeries& env_a, const TimeSeries& env_b, CoherenceNorm norm = CoherenceNorm::Product);

struct FeatureVector {
  double kurtosis = 0.0;
  double n_peaks = 0.0;
  double peak_freq = 0.0;
  std::optional<double> duration;
  std::optional<double> coherence;
  std::optional<double> median_psd;
};

enum class FeatureSet { Sim3, Full6 };

std::vector<std::string> feature_columns(FeatureSet set);

/// STFT settings used for simulated 0.5 s windows: centred frames so the window spans 20 frames.
dsp::StftConfig sim_stft_config();

/// Peak frequency, kurtosis and peak count of one simulated window (no velocity channels).
FeatureVector extract_sim_features(const TimeSeries& window);

/// Inputs for the six features of a detected event.
struct EventFeatureInput {
  const MultiChannelRecord* reference = nullptr;  // sensor the features are measured on
  const MultiChannelRecord* partner = nullptr;    // second sensor, for coherence
  double t1 = 0.0;
  double t2 = 0.0;
  double azimuth_reference = 0.0;
  double azimuth_partner = 0.0;
  /// Event-local detection mask [Nf x frames]; the full event rectangle is used when null.
  const Grid<std::uint8_t>* mask = nullptr;
  dsp::BeamformConfig beamform{};
  CoherenceNorm coherence_norm = CoherenceNorm::Product;
};

FeatureVector extract_event_features(const EventFeatureInput& in);

struct FeatureRow {
  std::string event_id;
  FeatureVector features;
  std::optional<int> label;
};

struct FeatureMatrix {
  std::vector<std::string> event_ids;
  std::vector<std::string> columns;
  RowMatrix raw;
  RowMatrix values;  // standardised copy of raw (or raw itself when standardisation is off)
  Eigen::VectorXd means;
  Eigen::VectorXd stds;
  bool standardized = true;
  std::vector<int> labels;  // empty when unknown
  std::vector<std::pair<std::string, std::string>> dropped;  // (event_id, reason)

  std::size_t rows() const noexcept { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(values.cols()); }
};

FeatureMatrix build_feature_matrix(const std::vector<FeatureRow>& rows, FeatureSet set, bool standardize = true);

/// Applies stored means/stds (from a fitted matrix) to new raw rows.
RowMatrix apply_standardization(const RowMatrix& raw, const Eigen::VectorXd& means, const Eigen::VectorXd& stds);

void write_feature_csv(std::ostream& os, const FeatureMatrix& m);
nlohmann::json standardization_json(const FeatureMatrix& m);
/// Reads a feature CSV (and optional stats sidecar) back; values are re-standardised from the sidecar when given.
FeatureMatrix read_feature_csv(std::istream& is, const nlohmann::json* stats = nullptr);

}  // namespace reefclust::features
