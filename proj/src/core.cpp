#include "reefclust/core.hpp"

#include <algorithm>
#include <cmath>

namespace reefclust {

void TimeSeries::validate() const {
  if (!(fs > 0.0)) throw DataError("sampling rate must be positive");
  if (!std::all_of(samples.begin(), samples.end(), [](double v) { return std::isfinite(v); }))
    throw DataError("time series contains non-finite samples");
}

TimeSeries TimeSeries::slice(double t1, double t2) const {
  const auto n = static_cast<long>(samples.size());
  long i1 = std::clamp(static_cast<long>(std::lround((t1 - t_start) * fs)), 0L, n);
  long i2 = std::clamp(static_cast<long>(std::lround((t2 - t_start) * fs)), i1, n);
  TimeSeries out;
  out.fs = fs;
  out.t_start = t_start + static_cast<double>(i1) / fs;
  out.samples.assign(samples.begin() + i1, samples.begin() + i2);
  return out;
}

void MultiChannelRecord::validate() const {
  pressure.validate();
  vx.validate();
  vy.validate();
  for (const TimeSeries* ch : {&vx, &vy}) {
    if (ch->size() != pressure.size()) throw DataError("channel length mismatch in record " + sensor_id);
    if (ch->fs != pressure.fs || ch->t_start != pressure.t_start)
      throw DataError("channel timing mismatch in record " + sensor_id);
  }
}

const char* label_name(Label label) {
  switch (label) {
    case Label::Whale: return "whale";
    case Label::Fish: return "fish";
    case Label::Both: return "both";
  }
  return "?";
}

Label label_from_name(const std::string& name) {
  if (name == "whale" || name == "0") return Label::Whale;
  if (name == "fish" || name == "1") return Label::Fish;
  if (name == "both" || name == "2") return Label::Both;
  throw ConfigError("unknown label '" + name + "'");
}

}  // namespace reefclust
