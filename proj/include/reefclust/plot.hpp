#pragma once

#include "reefclust/core.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace reefclust::plot {

/// Every emitter writes `<base>.svg` and a `<base>.csv` twin. Output is a pure function of the inputs.

struct RegionMap {
  Grid<int> labels;  // rows run along y (row 0 at y_min), columns along x
  double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
};

void scatter2d(const std::filesystem::path& base, const std::vector<double>& x, const std::vector<double>& y,
               const std::vector<int>& labels, const std::string& title, const std::optional<RegionMap>& regions = {});

/// Power in dB, rows are frequency bins starting at f_min.
void spectrogram(const std::filesystem::path& base, const Grid<double>& db, double df, double dt, double t_start,
                 const std::string& title, double f_min = 0.0);

struct Line {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

void timeseries(const std::filesystem::path& base, const std::vector<Line>& lines, const std::string& title,
                const std::string& x_label = "time (s)");

void loss_curve(const std::filesystem::path& base, const std::vector<double>& loss, const std::string& title);

struct LevelBin {
  double t_start = 0.0;
  std::size_t count = 0;
  double p10 = 0.0, p50 = 0.0, p90 = 0.0;
};

/// 10/50/90 percentile levels of `values` in consecutive bins of `bin_seconds` (empty bins omitted).
std::vector<LevelBin> percentile_levels(const std::vector<double>& times, const std::vector<double>& values,
                                        double bin_seconds = 900.0);

/// One panel per feature, each showing the three percentile levels per time bin.
void feature_levels(const std::filesystem::path& base, const std::vector<std::string>& names,
                    const std::vector<double>& times, const std::vector<std::vector<double>>& columns,
                    double bin_seconds = 900.0);

}  // namespace reefclust::plot
