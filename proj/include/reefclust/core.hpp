#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace reefclust {

/// Exit-code classes shared by the library and the CLI.
enum class ErrorCode : int { Config = 2, Data = 3, Numeric = 4 };

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorCode::Config, what) {}
};
struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorCode::Data, what) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorCode::Numeric, what) {}
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major 2D array. Rows are frequency bins for spectrogram-like data.
template <typename T>
class Grid {
public:
  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, T fill = T{}) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  bool same_shape(const Grid& other) const noexcept { return rows_ == other.rows_ && cols_ == other.cols_; }
  bool operator==(const Grid& other) const = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// Sampled waveform with an absolute start time.
struct TimeSeries {
  std::vector<double> samples;
  double fs = 1000.0;
  double t_start = 0.0;

  std::size_t size() const noexcept { return samples.size(); }
  double duration() const noexcept { return static_cast<double>(samples.size()) / fs; }
  /// Throws DataError when fs <= 0 or any sample is non-finite.
  void validate() const;
  /// Copy of samples in [t1, t2) (absolute seconds), clamped to the record.
  TimeSeries slice(double t1, double t2) const;
};

/// Pressure plus the two horizontal particle-velocity channels of one vector sensor.
struct MultiChannelRecord {
  TimeSeries pressure;
  TimeSeries vx;
  TimeSeries vy;
  std::string sensor_id;

  void validate() const;
};

enum class Label : int { Whale = 0, Fish = 1, Both = 2 };

const char* label_name(Label label);
Label label_from_name(const std::string& name);

}  // namespace reefclust
