#include "reefclust/features.hpp"

#include "text.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace reefclust::features {

double kurtosis(std::span<const double> y) {
  if (y.size() < 4) throw DataError("kurtosis: need at least 4 samples");
  const double n = static_cast<double>(y.size());
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double m2 = 0.0, m4 = 0.0;
  for (double v : y) {
    const double d = (v - mean) * (v - mean);
    m2 += d;
    m4 += d * d;
  }
  m2 /= n;
  m4 /= n;
  if (!(m2 > 0.0) || !(m2 * m2 > 0.0)) throw DataError("kurtosis: zero variance");
  return m4 / (m2 * m2);
}

std::vector<std::pair<std::size_t, double>> peak_prominences(std::span<const double> x) {
  std::vector<std::pair<std::size_t, double>> peaks;
  const std::size_t n = x.size();
  std::size_t i = 1;
  while (i + 1 < n) {
    if (x[i - 1] < x[i]) {
      // Walk over a plateau; the peak sits at its middle.
      std::size_t ahead = i + 1;
      while (ahead < n && x[ahead] == x[i]) ++ahead;
      if (ahead < n && x[ahead] < x[i]) {
        const std::size_t peak = (i + ahead - 1) / 2;
        const double h = x[peak];
        double left_min = h;
        for (std::size_t k = i; k-- > 0;) {
          if (x[k] > h) break;
          left_min = std::min(left_min, x[k]);
        }
        double right_min = h;
        for (std::size_t k = ahead - 1; k < n; ++k) {
          if (x[k] > h) break;
          right_min = std::min(right_min, x[k]);
        }
        peaks.emplace_back(peak, h - std::max(left_min, right_min));
      }
      i = ahead;
    } else {
      ++i;
    }
  }
  return peaks;
}

int n_peaks(const TimeSeries& envelope) {
  if (envelope.samples.empty()) throw DataError("n_peaks: empty envelope");
  const auto& x = envelope.samples;
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sigma = std::sqrt(var / n);
  if (!(sigma > 0.0)) return 0;
  const double threshold = sigma * std::sqrt(10.0);
  int count = 0;
  for (const auto& [idx, prom] : peak_prominences(x)) count += prom > threshold ? 1 : 0;
  return count;
}

double peak_frequency(const Grid<double>& power, double df, double f_min, std::size_t col_begin, std::size_t col_end) {
  col_end = std::min(col_end, power.cols());
  if (power.rows() == 0 || col_begin >= col_end) throw DataError("peak_frequency: empty window");
  std::size_t best_row = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < power.rows(); ++i)
    for (std::size_t j = col_begin; j < col_end; ++j)
      if (power(i, j) > best) {
        best = power(i, j);
        best_row = i;
      }
  return f_min + static_cast<double>(best_row) * df;
}

double median_psd(const Grid<double>& power, const Grid<std::uint8_t>& mask) {
  if (!power.same_shape(Grid<double>(mask.rows(), mask.cols()))) throw DataError("median_psd: mask shape mismatch");
  std::vector<double> db;
  for (std::size_t k = 0; k < power.size(); ++k)
    if (mask.data()[k]) db.push_back(10.0 * std::log10(std::max(power.data()[k], 1e-300)));
  if (db.empty()) throw DataError("median_psd: empty mask");
  const std::size_t mid = db.size() / 2;
  std::nth_element(db.begin(), db.begin() + static_cast<long>(mid), db.end());
  if (db.size() % 2 == 1) return db[mid];
  const double upper = db[mid];
  const double lower = *std::max_element(db.begin(), db.begin() + static_cast<long>(mid));
  return 0.5 * (lower + upper);
}

double coherence(const TimeSeries& env_a, const TimeSeries& env_b, CoherenceNorm norm) {
  if (env_a.fs != env_b.fs) throw DataError("coherence: sampling rates differ");
  if (env_a.samples.empty() || env_b.samples.empty()) throw DataError("coherence: empty envelope");
  auto centered = [](const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    std::vector<double> out(v.size());
    std::transform(v.begin(), v.end(), out.begin(), [mean](double x) { return x - mean; });
    return out;
  };
  const auto a = centered(env_a.samples);
  const auto b = centered(env_b.samples);
  const double ea = std::inner_product(a.begin(), a.end(), a.begin(), 0.0);
  const double eb = std::inner_product(b.begin(), b.end(), b.begin(), 0.0);
  if (!(ea > 0.0) || !(eb > 0.0)) throw DataError("coherence: zero-energy envelope");
  const double c = norm == CoherenceNorm::Product ? std::sqrt(ea * eb) : std::sqrt(ea + eb);

  const long na = static_cast<long>(a.size());
  const long nb = static_cast<long>(b.size());
  double best = -std::numeric_limits<double>::infinity();
  for (long lag = -(nb - 1); lag <= na - 1; ++lag) {
    double acc = 0.0;
    const long m_lo = std::max(0L, lag);
    const long m_hi = std::min(na, nb + lag);
    for (long m = m_lo; m < m_hi; ++m) acc += a[static_cast<std::size_t>(m)] * b[static_cast<std::size_t>(m - lag)];
    best = std::max(best, acc);
  }
  return best / c;
}

std::vector<std::string> feature_columns(FeatureSet set) {
  if (set == FeatureSet::Sim3) return {"peak_freq", "kurtosis", "n_peaks"};
  return {"peak_freq", "kurtosis", "n_peaks", "duration", "coherence", "median_psd"};
}

dsp::StftConfig sim_stft_config() {
  dsp::StftConfig cfg;
  cfg.center = true;
  return cfg;
}

FeatureVector extract_sim_features(const TimeSeries& window) {
  FeatureVector fv;
  fv.kurtosis = kurtosis(window.samples);
  fv.n_peaks = static_cast<double>(n_peaks(dsp::hilbert_envelope(window)));
  const auto spec = dsp::stft(window, sim_stft_config());
  // Frames whose centre lies inside the window.
  const std::size_t frames = std::min<std::size_t>(spec.n_time(), static_cast<std::size_t>(spec.frame_index(window.t_start + window.duration())));
  fv.peak_freq = peak_frequency(spec.power(), spec.df, spec.f_min, 0, std::max<std::size_t>(frames, 1));
  return fv;
}

FeatureVector extract_event_features(const EventFeatureInput& in) {
  if (!in.reference || !in.partner) throw ConfigError("extract_event_features: both sensors are required");
  if (!(in.t2 > in.t1)) throw DataError("extract_event_features: empty event");

  auto beamformed = [&](const MultiChannelRecord& rec, double az) {
    dsp::BeamformConfig cfg = in.beamform;
    cfg.azimuth_deg = az;
    return dsp::beamform(rec, cfg).slice(in.t1, in.t2);
  };
  const TimeSeries y_ref = beamformed(*in.reference, in.azimuth_reference);
  const TimeSeries y_partner = beamformed(*in.partner, in.azimuth_partner);
  const TimeSeries env_ref = dsp::hilbert_envelope(y_ref);
  const TimeSeries env_partner = dsp::hilbert_envelope(y_partner);

  FeatureVector fv;
  fv.duration = in.t2 - in.t1;
  fv.kurtosis = kurtosis(y_ref.samples);
  fv.n_peaks = static_cast<double>(n_peaks(env_ref));
  fv.coherence = coherence(env_ref, env_partner, in.coherence_norm);

  const auto spec = dsp::stft(in.reference->pressure);
  const long first = std::max(0L, spec.frame_index(in.t1));
  const long last = std::min(static_cast<long>(spec.n_time()), std::max(spec.frame_index(in.t2), first + 1));
  if (first >= last) throw DataError("extract_event_features: event outside spectrogram span");
  const auto full = spec.power();
  Grid<double> power(full.rows(), static_cast<std::size_t>(last - first));
  for (std::size_t i = 0; i < power.rows(); ++i)
    for (std::size_t j = 0; j < power.cols(); ++j) power(i, j) = full(i, static_cast<std::size_t>(first) + j);

  fv.peak_freq = peak_frequency(power, spec.df, spec.f_min);
  Grid<std::uint8_t> rect(power.rows(), power.cols(), 1);
  const Grid<std::uint8_t>* mask = &rect;
  if (in.mask && in.mask->rows() == power.rows() && in.mask->cols() == power.cols() &&
      std::any_of(in.mask->data().begin(), in.mask->data().end(), [](std::uint8_t v) { return v != 0; }))
    mask = in.mask;
  fv.median_psd = median_psd(power, *mask);
  return fv;
}

namespace {

std::vector<double> as_row(const FeatureVector& fv, FeatureSet set) {
  std::vector<double> row{fv.peak_freq, fv.kurtosis, fv.n_peaks};
  if (set == FeatureSet::Full6) {
    if (!fv.duration || !fv.coherence || !fv.median_psd) throw DataError("missing experimental feature");
    row.insert(row.end(), {*fv.duration, *fv.coherence, *fv.median_psd});
  }
  for (double v : row)
    if (!std::isfinite(v)) throw DataError("non-finite feature value");
  return row;
}

}  // namespace

RowMatrix apply_standardization(const RowMatrix& raw, const Eigen::VectorXd& means, const Eigen::VectorXd& stds) {
  if (raw.cols() != means.size() || raw.cols() != stds.size()) throw DataError("standardization: column count mismatch");
  RowMatrix out = raw;
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    const double scale = stds[c] > 0.0 ? stds[c] : 1.0;
    out.col(c) = (raw.col(c).array() - means[c]) / scale;
  }
  return out;
}

FeatureMatrix build_feature_matrix(const std::vector<FeatureRow>& rows, FeatureSet set, bool standardize) {
  FeatureMatrix m;
  m.columns = feature_columns(set);
  m.standardized = standardize;
  std::vector<std::vector<double>> kept;
  bool all_labelled = !rows.empty();
  for (const auto& r : rows) all_labelled = all_labelled && r.label.has_value();
  for (const auto& r : rows) {
    try {
      kept.push_back(as_row(r.features, set));
      m.event_ids.push_back(r.event_id);
      if (all_labelled) m.labels.push_back(*r.label);
    } catch (const Error& e) {
      m.dropped.emplace_back(r.event_id, e.what());
    }
  }
  const auto n = static_cast<Eigen::Index>(kept.size());
  const auto p = static_cast<Eigen::Index>(m.columns.size());
  m.raw.resize(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index c = 0; c < p; ++c) m.raw(i, c) = kept[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];

  m.means = Eigen::VectorXd::Zero(p);
  m.stds = Eigen::VectorXd::Ones(p);
  if (n > 0) {
    m.means = m.raw.colwise().mean().transpose();
    for (Eigen::Index c = 0; c < p; ++c) {
      const double var = (m.raw.col(c).array() - m.means[c]).square().mean();
      m.stds[c] = std::sqrt(var);
    }
  }
  m.values = standardize ? apply_standardization(m.raw, m.means, m.stds) : m.raw;
  return m;
}

void write_feature_csv(std::ostream& os, const FeatureMatrix& m) {
  os << "event_id";
  for (const auto& c : m.columns) os << ',' << c;
  const bool labelled = !m.labels.empty();
  if (labelled) os << ",label";
  os << '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    os << m.event_ids[i];
    for (std::size_t c = 0; c < m.cols(); ++c)
      os << ',' << detail::fmt_double(m.raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)));
    if (labelled) os << ',' << m.labels[i];
    os << '\n';
  }
}

nlohmann::json standardization_json(const FeatureMatrix& m) {
  nlohmann::json j;
  j["columns"] = m.columns;
  j["means"] = std::vector<double>(m.means.data(), m.means.data() + m.means.size());
  j["stds"] = std::vector<double>(m.stds.data(), m.stds.data() + m.stds.size());
  j["standardized"] = m.standardized;
  j["n_rows"] = m.rows();
  return j;
}

FeatureMatrix read_feature_csv(std::istream& is, const nlohmann::json* stats) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("feature CSV is empty");
  auto header = detail::split_csv_line(line);
  if (header.empty() || header[0] != "event_id") throw DataError("feature CSV must start with an event_id column");
  const bool labelled = header.back() == "label";
  FeatureMatrix m;
  m.columns.assign(header.begin() + 1, header.end() - (labelled ? 1 : 0));
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) throw DataError("feature CSV row has the wrong number of cells");
    m.event_ids.push_back(cells[0]);
    std::vector<double> row;
    try {
      for (std::size_t c = 1; c <= m.columns.size(); ++c) row.push_back(std::stod(cells[c]));
      if (labelled) m.labels.push_back(std::stoi(cells.back()));
    } catch (const std::exception&) {
      throw DataError("feature CSV contains a non-numeric cell");
    }
    rows.push_back(std::move(row));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(m.columns.size());
  m.raw.resize(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index c = 0; c < p; ++c) m.raw(i, c) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];

  if (stats) {
    try {
      const auto means = stats->at("means").get<std::vector<double>>();
      const auto stds = stats->at("stds").get<std::vector<double>>();
      m.means = Eigen::Map<const Eigen::VectorXd>(means.data(), static_cast<Eigen::Index>(means.size()));
      m.stds = Eigen::Map<const Eigen::VectorXd>(stds.data(), static_cast<Eigen::Index>(stds.size()));
      m.standardized = stats->value("standardized", true);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed standardisation sidecar: ") + e.what());
    }
    m.values = m.standardized ? apply_standardization(m.raw, m.means, m.stds) : m.raw;
  } else {
    m.standardized = false;
    m.means = Eigen::VectorXd::Zero(p);
    m.stds = Eigen::VectorXd::Ones(p);
    m.values = m.raw;
  }
  return m;
}

}  // namespace reefclust::features
