#pragma once

// Spike / current encoders with exposure-time expansion, and the matching
// decoders that compress an exposure window back to one score per cell.

#include <optional>

#include "lsm/spectra.hpp"

namespace lsm {

/// [time x exposure x channel] sequence; step k = t * exposure + j is the
/// k-th simulation step and row(k) its channel vector.
template <class T>
struct Train {
  int time_steps = 0;
  int exposure = 1;
  int channels = 0;
  std::vector<T> data;

  Train() = default;
  Train(int t, int e, int c, T fill = T{})
      : time_steps(t), exposure(e), channels(c), data(std::size_t(t) * e * c, fill) {}

  int total_steps() const { return time_steps * exposure; }
  T& operator()(int t, int j, int c) { return data[(std::size_t(t) * exposure + j) * channels + c]; }
  const T& operator()(int t, int j, int c) const {
    return data[(std::size_t(t) * exposure + j) * channels + c];
  }
  std::span<const T> row(int step) const {
    return {data.data() + std::size_t(step) * channels, std::size_t(channels)};
  }
  bool operator==(const Train&) const = default;
};

using SpikeTrain = Train<std::uint8_t>;
using CurrentTrain = Train<float>;
/// Per-cell real scores in [0, 1], rows are time.
using ScoreMap = Grid<double>;

enum class Encoding { Latency, Rate, Direct };

inline std::string_view to_string(Encoding e) {
  switch (e) {
    case Encoding::Latency: return "latency";
    case Encoding::Rate: return "rate";
    case Encoding::Direct: return "direct";
  }
  return "?";
}

inline Encoding parse_encoding(std::string_view s) {
  if (s == "latency") return Encoding::Latency;
  if (s == "rate") return Encoding::Rate;
  if (s == "direct") return Encoding::Direct;
  throw ConfigError("unknown encoding '" + std::string(s) + "'");
}

/// Exposure menu accepted on the command line.
inline constexpr std::array<int, 6> kExposureMenu{1, 2, 4, 8, 16, 32};

namespace detail {
inline void check_encodable(const Patch& p, int e) {
  if (e < 1) throw ConfigError("exposure must be >= 1");
  for (float v : p.data.data)
    if (!(v >= 0.0f && v <= 1.0f)) throw EncodingError("patch value outside [0, 1]");
}
}  // namespace detail

/// Step of the single latency spike for value v (v > 0). Larger values fire earlier.
inline int latency_step(double v, int e) {
  return e == 1 ? 0 : int(std::lround((1.0 - v) * (e - 1)));
}

inline SpikeTrain encode_latency(const Patch& p, int e) {
  detail::check_encodable(p, e);
  SpikeTrain out(p.data.rows, e, p.data.cols, 0);
  for (int t = 0; t < p.data.rows; ++t)
    for (int c = 0; c < p.data.cols; ++c) {
      const double v = p.data(t, c);
      if (v > 0) out(t, latency_step(v, e), c) = 1;
    }
  return out;
}

/// True iff slot j of e holds a spike when n spikes are spread evenly.
constexpr bool rate_slot(int j, int n, int e) {
  return (std::int64_t(j + 1) * n) / e > (std::int64_t(j) * n) / e;
}

inline SpikeTrain encode_rate(const Patch& p, int e) {
  detail::check_encodable(p, e);
  SpikeTrain out(p.data.rows, e, p.data.cols, 0);
  for (int t = 0; t < p.data.rows; ++t)
    for (int c = 0; c < p.data.cols; ++c) {
      const int n = int(std::lround(double(p.data(t, c)) * e));
      for (int j = 0; j < e; ++j) out(t, j, c) = rate_slot(j, n, e) ? 1 : 0;
    }
  return out;
}

inline CurrentTrain encode_direct(const Patch& p, int e) {
  detail::check_encodable(p, e);
  CurrentTrain out(p.data.rows, e, p.data.cols, 0.0f);
  for (int t = 0; t < p.data.rows; ++t)
    for (int j = 0; j < e; ++j)
      for (int c = 0; c < p.data.cols; ++c) out(t, j, c) = p.data(t, c);
  return out;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double z = std::exp(x);
  return z / (1.0 + z);
}

/// scores[t, c] = sigmoid(mean_j readout[t, j, c]).
inline ScoreMap decode_rate(const Train<double>& readout) {
  if (readout.exposure < 1) throw ConfigError("exposure must be >= 1");
  ScoreMap out(readout.time_steps, readout.channels);
  for (int t = 0; t < readout.time_steps; ++t)
    for (int c = 0; c < readout.channels; ++c) {
      double sum = 0;
      for (int j = 0; j < readout.exposure; ++j) sum += readout(t, j, c);
      if (!std::isfinite(sum)) throw NumericError("non-finite readout at time step " + std::to_string(t));
      out(t, c) = sigmoid(sum / readout.exposure);
    }
  return out;
}

/// scores[t, c] = 1 - first_spike / max(e - 1, 1), or 0 for a silent window.
inline ScoreMap decode_latency(const SpikeTrain& spikes) {
  if (spikes.exposure < 1) throw ConfigError("exposure must be >= 1");
  ScoreMap out(spikes.time_steps, spikes.channels, 0.0);
  const double denom = std::max(spikes.exposure - 1, 1);
  for (int t = 0; t < spikes.time_steps; ++t)
    for (int c = 0; c < spikes.channels; ++c)
      for (int j = 0; j < spikes.exposure; ++j)
        if (spikes(t, j, c)) {
          out(t, c) = 1.0 - j / denom;
          break;
        }
  return out;
}

/// Readout pre-activations above zero count as output spikes.
inline SpikeTrain threshold_readout(const Train<double>& readout) {
  SpikeTrain out(readout.time_steps, readout.exposure, readout.channels, 0);
  for (std::size_t i = 0; i < readout.data.size(); ++i) out.data[i] = readout.data[i] > 0.0 ? 1 : 0;
  return out;
}

}  // namespace lsm
