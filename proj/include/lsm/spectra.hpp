#pragma once

// Spectrogram data model, synthetic RFI-contaminated spectrogram generation,
// divisive normalization, patch tiling and the patch dataset file format.

#include <array>
#include <numeric>
#include <random>

#include "lsm/common.hpp"

namespace lsm {

/// Time x frequency magnitudes (rows are time steps, columns frequency channels).
struct Spectrogram {
  Grid<double> data;

  int time_steps() const { return data.rows; }
  int freq_channels() const { return data.cols; }

  void validate() const {
    if (data.rows < 1 || data.cols < 1) throw DataError("spectrogram must be at least 1x1");
    for (double v : data.data) {
      if (!std::isfinite(v)) throw DataError("spectrogram contains a non-finite value");
      if (v < 0) throw DataError("spectrogram contains a negative magnitude");
    }
  }
};

struct RFIMask {
  Grid<std::uint8_t> flags;

  double density() const {
    if (flags.size() == 0) return 0.0;
    auto n = std::count_if(flags.data.begin(), flags.data.end(), [](auto f) { return f != 0; });
    return double(n) / double(flags.size());
  }
};

struct PatchOrigin {
  std::uint16_t time_offset = 0;
  std::uint16_t freq_offset = 0;
  std::uint32_t source_id = 0;
  bool operator==(const PatchOrigin&) const = default;
};

/// A square tile of a normalized spectrogram with its mask. Rows are time.
struct Patch {
  Grid<float> data;
  Grid<std::uint8_t> mask;
  PatchOrigin origin;

  int size() const { return data.rows; }
  bool operator==(const Patch&) const = default;
};

inline constexpr int kDefaultPatchSize = 32;

// ---------------------------------------------------------------------------
// Synthetic generation

enum class RfiKind { NarrowbandPersistent = 0, NarrowbandBurst = 1, WidebandTransient = 2, Periodic = 3 };

struct BackgroundParams {
  int blob_count = 6;
  double blob_scale = 0.15;  // blob sigma as a fraction of the spectrogram size
  double noise_floor = 0.1;  // multiplicative noise std-dev
};

struct SynthConfig {
  int n_spectrograms = 1;
  int size = 512;
  double target_contamination = 0.03;
  /// Weights over RfiKind. All-zero means "no RFI"; otherwise they must sum to 1.
  std::array<double, 4> rfi_mix{0.3, 0.3, 0.2, 0.2};
  BackgroundParams background;
  std::uint64_t seed = 0;
  double amplitude_min = 2.0;  // RFI amplitude range in units of background RMS
  double amplitude_max = 10.0;

  bool rfi_enabled() const {
    return std::any_of(rfi_mix.begin(), rfi_mix.end(), [](double w) { return w != 0.0; });
  }

  void validate() const {
    if (n_spectrograms < 1) throw ConfigError("n_spectrograms must be >= 1");
    if (size < 1 || size > 65535) throw ConfigError("size must be in [1, 65535]");
    for (double w : rfi_mix)
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("rfi_mix weights must be non-negative");
    if (rfi_enabled()) {
      double sum = std::accumulate(rfi_mix.begin(), rfi_mix.end(), 0.0);
      if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("rfi_mix weights must sum to 1");
      if (!(target_contamination > 0.0 && target_contamination < 1.0))
        throw ConfigError("target_contamination must be in (0, 1)");
    }
    if (background.blob_count < 0 || background.blob_scale <= 0 || background.noise_floor < 0)
      throw ConfigError("invalid background parameters");
    if (!(amplitude_min > 0 && amplitude_max >= amplitude_min))
      throw ConfigError("invalid RFI amplitude range");
  }
};

struct LabeledSpectrogram {
  Spectrogram spectrogram;
  RFIMask mask;
};

namespace detail {

inline Grid<double> synth_background(const SynthConfig& cfg, std::mt19937_64& rng) {
  const int n = cfg.size;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Grid<double> bg(n, n);

  // Smooth bandpass over frequency and a slow gain drift over time.
  const double band_cycles = 0.5 + 1.5 * unit(rng);
  const double band_phase = 2 * M_PI * unit(rng);
  const double drift_phase = 2 * M_PI * unit(rng);
  std::vector<double> band(n), drift(n);
  for (int f = 0; f < n; ++f)
    band[f] = 1.0 + 0.3 * std::sin(2 * M_PI * band_cycles * f / n + band_phase);
  for (int t = 0; t < n; ++t) drift[t] = 1.0 + 0.1 * std::sin(2 * M_PI * t / n + drift_phase);
  for (int t = 0; t < n; ++t)
    for (int f = 0; f < n; ++f) bg(t, f) = band[f] * drift[t];

  // Extended emission blobs.
  for (int b = 0; b < cfg.background.blob_count; ++b) {
    const double ct = unit(rng) * n, cf = unit(rng) * n;
    const double sigma = std::max(1.0, cfg.background.blob_scale * n * (0.5 + unit(rng)));
    const double amp = 0.5 + 1.5 * unit(rng);
    const int reach = int(std::ceil(4 * sigma));
    const int t0 = std::max(0, int(ct) - reach), t1 = std::min(n, int(ct) + reach + 1);
    const int f0 = std::max(0, int(cf) - reach), f1 = std::min(n, int(cf) + reach + 1);
    for (int t = t0; t < t1; ++t)
      for (int f = f0; f < f1; ++f) {
        const double d2 = (t - ct) * (t - ct) + (f - cf) * (f - cf);
        bg(t, f) += amp * std::exp(-0.5 * d2 / (sigma * sigma));
      }
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  for (double& v : bg.data) v = v * std::abs(1.0 + cfg.background.noise_floor * gauss(rng));
  return bg;
}

// Adds one RFI component; returns nothing, writes into data and mask.
inline void inject_component(RfiKind kind, double amplitude, Grid<double>& data,
                             Grid<std::uint8_t>& mask, std::mt19937_64& rng) {
  const int T = data.rows, F = data.cols;
  auto uniform_int = [&](int lo, int hi) {  // inclusive
    return std::uniform_int_distribution<int>(lo, std::max(lo, hi))(rng);
  };
  auto paint = [&](int t0, int t1, int f0, int f1, double amp) {
    t0 = std::clamp(t0, 0, T);
    t1 = std::clamp(t1, 0, T);
    f0 = std::clamp(f0, 0, F);
    f1 = std::clamp(f1, 0, F);
    for (int t = t0; t < t1; ++t)
      for (int f = f0; f < f1; ++f) {
        data(t, f) += amp;
        mask(t, f) = 1;
      }
  };
  switch (kind) {
    case RfiKind::NarrowbandPersistent: {
      const int width = uniform_int(1, 3);
      const int f0 = uniform_int(0, F - width);
      const int len = uniform_int(std::max(1, T / 2), T);
      const int t0 = uniform_int(0, T - len);
      paint(t0, t0 + len, f0, f0 + width, amplitude);
      break;
    }
    case RfiKind::NarrowbandBurst: {
      const int width = uniform_int(1, 4);
      const int f0 = uniform_int(0, F - width);
      const int len = uniform_int(std::max(1, T / 128), std::max(1, T / 16));
      const int t0 = uniform_int(0, T - len);
      paint(t0, t0 + len, f0, f0 + width, amplitude);
      break;
    }
    case RfiKind::WidebandTransient: {
      const int span = uniform_int(std::max(1, int(0.3 * F)), F);
      const int f0 = uniform_int(0, F - span);
      const int t0 = uniform_int(0, T - 1);
      paint(t0, t0 + 1, f0, f0 + span, amplitude);
      break;
    }
    case RfiKind::Periodic: {
      const int width = uniform_int(1, 3);
      const int f0 = uniform_int(0, F - width);
      const int burst = uniform_int(1, std::max(1, std::min(4, T / 32)));
      const int period = uniform_int(std::max(burst + 1, T / 32), std::max(burst + 1, T / 8));
      const int len = uniform_int(std::max(1, T / 4), T);
      const int start = uniform_int(0, T - len);
      for (int t = start; t < start + len; t += period)
        paint(t, std::min(t + burst, start + len), f0, f0 + width, amplitude);
      break;
    }
  }
}

inline LabeledSpectrogram synth_one(const SynthConfig& cfg, std::size_t index) {
  std::mt19937_64 rng(seed_hash(cfg.seed, index));
  LabeledSpectrogram out;
  auto bg = synth_background(cfg, rng);
  Grid<std::uint8_t> mask(cfg.size, cfg.size, 0);

  if (cfg.rfi_enabled()) {
    double ms = 0;
    for (double v : bg.data) ms += v * v;
    const double rms = std::sqrt(ms / double(bg.size()));
    std::discrete_distribution<int> pick(cfg.rfi_mix.begin(), cfg.rfi_mix.end());
    std::uniform_real_distribution<double> amp(cfg.amplitude_min, cfg.amplitude_max);
    const auto target = std::size_t(std::llround(cfg.target_contamination * double(mask.size())));
    std::size_t flagged = 0;
    // Components are added until the union footprint reaches the target.
    for (int guard = 0; flagged < target && guard < 1'000'000; ++guard) {
      inject_component(RfiKind(pick(rng)), amp(rng) * rms, bg, mask, rng);
      flagged = std::size_t(std::count(mask.data.begin(), mask.data.end(), std::uint8_t{1}));
    }
  }
  out.spectrogram.data = std::move(bg);
  out.mask.flags = std::move(mask);
  return out;
}

}  // namespace detail

/// Deterministic in cfg.seed; spectrogram i is seeded by seed_hash(seed, i),
/// so the output does not depend on the worker count.
inline std::vector<LabeledSpectrogram> generate_synthetic(const SynthConfig& cfg, int threads = 1) {
  cfg.validate();
  std::vector<LabeledSpectrogram> out(std::size_t(cfg.n_spectrograms));
  parallel_for(out.size(), threads, [&](std::size_t i) { out[i] = detail::synth_one(cfg, i); });
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

/// out = s / (k + local mean over a window x window edge-clamped neighbourhood),
/// then min-max rescaled to [0, 1] (a constant field maps to 0).
inline Spectrogram normalize_divisive(const Spectrogram& s, int window, double k) {
  if (window < 1 || window % 2 == 0) throw ConfigError("window must be odd and >= 1");
  if (!(k > 0) || !std::isfinite(k)) throw ConfigError("k must be > 0");
  s.validate();
  const int T = s.time_steps(), F = s.freq_channels(), h = window / 2;

  // Summed-area table over the replicate-padded field.
  const int PT = T + 2 * h, PF = F + 2 * h;
  std::vector<double> sat(std::size_t(PT + 1) * (PF + 1), 0.0);
  auto at = [&](int r, int c) -> double& { return sat[std::size_t(r) * (PF + 1) + c]; };
  for (int r = 0; r < PT; ++r) {
    const int t = std::clamp(r - h, 0, T - 1);
    double run = 0;
    for (int c = 0; c < PF; ++c) {
      run += s.data(t, std::clamp(c - h, 0, F - 1));
      at(r + 1, c + 1) = at(r, c + 1) + run;
    }
  }
  const double area = double(window) * double(window);
  Spectrogram out{Grid<double>(T, F)};
  for (int t = 0; t < T; ++t)
    for (int f = 0; f < F; ++f) {
      const double sum = at(t + window, f + window) - at(t, f + window) - at(t + window, f) + at(t, f);
      out.data(t, f) = s.data(t, f) / (k + sum / area);
    }

  auto [lo, hi] = std::minmax_element(out.data.data.begin(), out.data.data.end());
  const double mn = *lo, range = *hi - *lo;
  for (double& v : out.data.data) v = range > 0 ? std::clamp((v - mn) / range, 0.0, 1.0) : 0.0;
  return out;
}

inline constexpr int kDefaultNormWindow = 9;

/// The pipeline's normalization: window 9, k = 1e-2 x global mean.
inline Spectrogram normalize_default(const Spectrogram& s) {
  s.validate();
  double mean = std::accumulate(s.data.data.begin(), s.data.data.end(), 0.0) / double(s.data.size());
  return normalize_divisive(s, kDefaultNormWindow, std::max(1e-2 * mean, 1e-12));
}

// ---------------------------------------------------------------------------
// Chunking

/// Non-overlapping row-major tiling; ragged edges are padded with zeros
/// and false mask cells.
inline std::vector<Patch> chunk(const Spectrogram& s, const RFIMask& m, int patch,
                                std::uint32_t source_id = 0) {
  if (!s.data.same_shape(m.flags)) throw DataError("spectrogram and mask shapes differ");
  if (patch < 1) throw ConfigError("patch size must be >= 1");
  const int T = s.time_steps(), F = s.freq_channels();
  if ((T + patch - 1) / patch * patch > 65535 + patch) throw ConfigError("spectrogram too large");
  std::vector<Patch> out;
  for (int t0 = 0; t0 < T; t0 += patch)
    for (int f0 = 0; f0 < F; f0 += patch) {
      Patch p{Grid<float>(patch, patch, 0.0f), Grid<std::uint8_t>(patch, patch, 0),
              PatchOrigin{std::uint16_t(t0), std::uint16_t(f0), source_id}};
      for (int t = 0; t < patch && t0 + t < T; ++t)
        for (int f = 0; f < patch && f0 + f < F; ++f) {
          p.data(t, f) = float(s.data(t0 + t, f0 + f));
          p.mask(t, f) = m.flags(t0 + t, f0 + f) ? 1 : 0;
        }
      out.push_back(std::move(p));
    }
  return out;
}

/// Inverse of chunk for the patches of one source; the result covers
/// [0, rows) x [0, cols) and padding beyond it is dropped.
inline std::pair<Grid<float>, Grid<std::uint8_t>> reassemble(std::span<const Patch> patches, int rows,
                                                            int cols) {
  Grid<float> data(rows, cols, 0.0f);
  Grid<std::uint8_t> mask(rows, cols, 0);
  for (const auto& p : patches)
    for (int t = 0; t < p.size(); ++t)
      for (int f = 0; f < p.size(); ++f) {
        const int r = p.origin.time_offset + t, c = p.origin.freq_offset + f;
        if (r < rows && c < cols) {
          data(r, c) = p.data(t, f);
          mask(r, c) = p.mask(t, f);
        }
      }
  return {std::move(data), std::move(mask)};
}

/// Normalizes and tiles a labelled set; source ids are first_source_id + index.
inline std::vector<Patch> prepare_patches(std::span<const LabeledSpectrogram> set, int patch = kDefaultPatchSize,
                                          std::uint32_t first_source_id = 0) {
  std::vector<Patch> out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto tiles = chunk(normalize_default(set[i].spectrogram), set[i].mask, patch,
                       first_source_id + std::uint32_t(i));
    std::move(tiles.begin(), tiles.end(), std::back_inserter(out));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset file: magic "LSMDS1\0", u32 count, u16 patch size, then per patch
// u32 source id, u16 time offset, u16 freq offset, size^2 float32 values and
// ceil(size^2 / 8) bytes of LSB-first bit-packed mask, all row-major.

inline constexpr std::string_view kDatasetMagic{"LSMDS1\0", 7};

inline std::string serialize_dataset(std::span<const Patch> patches) {
  ByteWriter w;
  w.put_bytes(kDatasetMagic);
  w.put<std::uint32_t>(std::uint32_t(patches.size()));
  const int size = patches.empty() ? kDefaultPatchSize : patches.front().size();
  if (size < 1 || size > 65535) throw ConfigError("patch size out of range");
  w.put<std::uint16_t>(std::uint16_t(size));
  const std::size_t cells = std::size_t(size) * size;
  std::vector<std::uint8_t> packed((cells + 7) / 8);
  for (const auto& p : patches) {
    if (p.data.rows != size || p.data.cols != size || !p.data.same_shape(p.mask))
      throw DataError("all patches in a dataset must share one square size");
    w.put<std::uint32_t>(p.origin.source_id);
    w.put<std::uint16_t>(p.origin.time_offset);
    w.put<std::uint16_t>(p.origin.freq_offset);
    w.put_array(std::span<const float>(p.data.data));
    std::fill(packed.begin(), packed.end(), 0);
    for (std::size_t i = 0; i < cells; ++i)
      if (p.mask.data[i]) packed[i / 8] |= std::uint8_t(1u << (i % 8));
    w.put_array(std::span<const std::uint8_t>(packed));
  }
  return w.take();
}

inline std::vector<Patch> parse_dataset(std::string_view bytes) {
  ByteReader r(bytes);
  if (bytes.size() >= 6 && bytes.substr(0, 5) == "LSMDS" && bytes[5] != '1')
    throw FormatError("unsupported dataset version '" + std::string(1, bytes[5]) + "', expected '1'", 5);
  if (bytes.size() < kDatasetMagic.size() || bytes.substr(0, kDatasetMagic.size()) != kDatasetMagic)
    throw FormatError("bad magic, expected \"LSMDS1\\0\"", 0);
  r.get_bytes(kDatasetMagic.size(), "magic");
  const auto count = r.get<std::uint32_t>("patch count");
  const auto size = r.get<std::uint16_t>("patch size");
  if (size == 0 && count > 0) throw FormatError("patch size is zero", r.offset() - 2);
  const std::size_t cells = std::size_t(size) * size;
  const std::size_t record = 8 + cells * 4 + (cells + 7) / 8;
  if (count > 0 && r.remaining() / record < count)
    throw FormatError("truncated file: " + std::to_string(count) + " patches declared", r.offset());
  std::vector<Patch> out;
  out.reserve(count);
  std::vector<std::uint8_t> packed((cells + 7) / 8);
  for (std::uint32_t i = 0; i < count; ++i) {
    Patch p{Grid<float>(size, size), Grid<std::uint8_t>(size, size), {}};
    p.origin.source_id = r.get<std::uint32_t>("source id");
    p.origin.time_offset = r.get<std::uint16_t>("time offset");
    p.origin.freq_offset = r.get<std::uint16_t>("freq offset");
    const auto data_offset = r.offset();
    r.get_array(std::span<float>(p.data.data), "patch data");
    for (float v : p.data.data)
      if (!(v >= 0.0f && v <= 1.0f)) throw FormatError("patch value outside [0, 1]", data_offset);
    r.get_array(std::span<std::uint8_t>(packed), "patch mask");
    for (std::size_t c = 0; c < cells; ++c) p.mask.data[c] = (packed[c / 8] >> (c % 8)) & 1u;
    out.push_back(std::move(p));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last patch", r.offset());
  return out;
}

inline void save_dataset(std::span<const Patch> patches, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_dataset(patches));
}

inline std::vector<Patch> load_dataset(const std::filesystem::path& path) {
  return parse_dataset(read_file(path));
}

}  // namespace lsm
