#pragma once

// The frozen liquid: a randomly connected network of second-order leaky
// integrate-and-fire neurons with an 80/20 excitatory/inhibitory split.

#include <optional>
#include <random>

#include "lsm/encode.hpp"

namespace lsm {

struct NeuronParams {
  std::vector<float> tau_syn;  // seconds, per neuron
  std::vector<float> tau_mem;  // seconds, per neuron
  std::vector<float> bias;     // per neuron
  double threshold = 1.0;
  double dt = 1e-3;
  double noise_sigma = 0.0;
};

/// Build-time knobs. Defaults reproduce the standard liquid.
struct ReservoirOptions {
  double threshold = 1.0;
  double dt = 1e-3;
  double noise_sigma = 0.0;
  double spectral_radius = 0.9;
  double bias = 0.0;
  double tau_min = 0.001;
  double tau_max = 0.01;
  double excitatory_fraction = 0.8;
  /// Input weight scale; when unset, 10 / sqrt(input_sparsity * c_in).
  std::optional<double> input_gain;
  int power_iterations = 100;
};

inline constexpr double kDefaultGainNumerator = 10.0;

inline double default_input_gain(double input_sparsity, int c_in) {
  const double fan = input_sparsity * c_in;
  return fan > 0 ? kDefaultGainNumerator / std::sqrt(fan) : 0.0;
}

struct Reservoir {
  int n = 0;
  int c_in = 0;
  std::vector<float> w_in;   // [c_in x n]
  std::vector<float> w_rec;  // [n x n]; row i holds the outgoing weights of neuron i
  std::vector<std::int8_t> ei_sign;
  NeuronParams params;
  double spectral_radius = 0.9;
  std::uint64_t seed = 0;

  // Derived from params; recomputed by refresh().
  std::vector<double> syn_decay;
  std::vector<double> mem_decay;

  void refresh() {
    syn_decay.resize(std::size_t(n));
    mem_decay.resize(std::size_t(n));
    for (int i = 0; i < n; ++i) {
      syn_decay[i] = std::exp(-params.dt / double(params.tau_syn[i]));
      mem_decay[i] = std::exp(-params.dt / double(params.tau_mem[i]));
    }
  }

  float in_weight(int c, int j) const { return w_in[std::size_t(c) * n + j]; }
  float rec_weight(int i, int j) const { return w_rec[std::size_t(i) * n + j]; }
  int excitatory_count() const { return int(std::count(ei_sign.begin(), ei_sign.end(), std::int8_t{1})); }

  /// Shapes, E/I sign structure, zero diagonal and parameter ranges.
  void validate() const {
    const auto N = std::size_t(n);
    if (n < 1 || c_in < 1) throw DataError("reservoir dimensions must be >= 1");
    if (w_in.size() != std::size_t(c_in) * N || w_rec.size() != N * N || ei_sign.size() != N ||
        params.tau_syn.size() != N || params.tau_mem.size() != N || params.bias.size() != N)
      throw DataError("reservoir array shapes are inconsistent");
    if (!(params.dt > 0) || !(params.threshold > 0) || !(params.noise_sigma >= 0))
      throw DataError("reservoir dt and threshold must be positive, sigma non-negative");
    for (std::size_t i = 0; i < N; ++i) {
      const int s = ei_sign[i];
      if (s != 1 && s != -1) throw DataError("E/I sign must be +1 or -1");
      if (w_rec[i * N + i] != 0.0f) throw DataError("reservoir has a self-connection");
      for (std::size_t j = 0; j < N; ++j) {
        const float w = w_rec[i * N + j];
        if (!std::isfinite(w) || (s > 0 ? w < 0.0f : w > 0.0f))
          throw DataError("recurrent weight violates the sign of neuron " + std::to_string(i));
      }
      if (!(params.tau_syn[i] > 0) || !(params.tau_mem[i] > 0))
        throw DataError("time constants must be positive");
    }
    for (float w : w_in)
      if (!std::isfinite(w)) throw DataError("non-finite input weight");
  }
};

// ---------------------------------------------------------------------------

/// Perron root of |w| (n x n, row-major) by power iteration.
inline double abs_spectral_radius(std::span<const float> w, int n, int iterations) {
  std::vector<double> x(static_cast<std::size_t>(n), 1.0 / std::sqrt(double(n)));
  std::vector<double> y(static_cast<std::size_t>(n));
  double lambda = 0;
  for (int it = 0; it < iterations; ++it) {
    std::fill(y.begin(), y.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      const double xi = x[i];
      if (xi == 0) continue;
      const float* row = w.data() + std::size_t(i) * n;
      for (int j = 0; j < n; ++j) y[j] += std::abs(double(row[j])) * xi;
    }
    double norm = 0;
    for (double v : y) norm += v * v;
    norm = std::sqrt(norm);
    lambda = norm;  // x has unit norm
    if (norm == 0) return 0.0;
    for (int j = 0; j < n; ++j) x[j] = y[j] / norm;
  }
  return lambda;
}

/// Builds a frozen liquid. `input_sparsity` is the connection probability of
/// each input-channel -> neuron synapse. Deterministic in `seed`.
inline Reservoir build_reservoir(int n, int c_in, double input_sparsity, std::uint64_t seed,
                                 const ReservoirOptions& opt = {}) {
  if (n < 1) throw ConfigError("reservoir size must be >= 1");
  if (n > 65535) throw ConfigError("reservoir size must be <= 65535");
  if (c_in < 1) throw ConfigError("input channel count must be >= 1");
  if (!(input_sparsity >= 0.0 && input_sparsity <= 1.0))
    throw ConfigError("input sparsity must be in [0, 1]");
  if (!(opt.dt > 0) || !(opt.threshold > 0) || !(opt.noise_sigma >= 0) || !(opt.spectral_radius >= 0))
    throw ConfigError("dt, threshold must be > 0; sigma, spectral radius >= 0");
  if (!(opt.tau_min > 0 && opt.tau_max >= opt.tau_min)) throw ConfigError("invalid tau range");

  Reservoir r;
  r.n = n;
  r.c_in = c_in;
  r.seed = seed;
  r.spectral_radius = opt.spectral_radius;
  r.params.threshold = opt.threshold;
  r.params.dt = opt.dt;
  r.params.noise_sigma = opt.noise_sigma;
  const auto N = std::size_t(n);
  auto stream = [&](std::uint64_t k) { return std::mt19937_64(seed_hash(seed, k)); };
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int n_exc = int(std::lround(opt.excitatory_fraction * n));
  r.ei_sign.assign(N, -1);
  std::fill_n(r.ei_sign.begin(), n_exc, std::int8_t{1});
  {
    auto g = stream(1);
    std::shuffle(r.ei_sign.begin(), r.ei_sign.end(), g);
  }

  {
    auto g = stream(2);
    std::uniform_real_distribution<double> tau(opt.tau_min, opt.tau_max);
    r.params.tau_syn.resize(N);
    r.params.tau_mem.resize(N);
    for (auto& t : r.params.tau_syn) t = float(tau(g));
    for (auto& t : r.params.tau_mem) t = float(tau(g));
    r.params.bias.assign(N, float(opt.bias));
  }

  {
    auto g = stream(3);
    const double gain = opt.input_gain.value_or(default_input_gain(input_sparsity, c_in));
    r.w_in.assign(std::size_t(c_in) * N, 0.0f);
    for (auto& w : r.w_in) {
      const bool connected = unit(g) < input_sparsity;
      const double value = unit(g);
      if (connected) w = float(value * gain);
    }
  }

  {
    auto g = stream(4);
    r.w_rec.assign(N * N, 0.0f);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        const double v = unit(g);
        if (i != j) r.w_rec[i * N + j] = float(r.ei_sign[i] * v);
      }
    const double lambda = abs_spectral_radius(r.w_rec, n, opt.power_iterations);
    if (lambda > 0) {
      const double scale = opt.spectral_radius / lambda;
      for (auto& w : r.w_rec) w = float(w * scale);
    }
  }

  r.refresh();
  r.validate();
  return r;
}

// ---------------------------------------------------------------------------
// Simulation

struct LiquidState {
  std::vector<double> i_syn;
  std::vector<double> v_mem;
  std::vector<std::uint8_t> spikes;  // emitted on the previous step

  static LiquidState zero(int n) {
    return {std::vector<double>(std::size_t(n), 0.0), std::vector<double>(std::size_t(n), 0.0),
            std::vector<std::uint8_t>(std::size_t(n), 0)};
  }
};

/// Binary [steps x n] raster, stored as one 64-bit word bitset per step.
struct SpikeRaster {
  int steps = 0;
  int n = 0;
  int words = 0;
  std::vector<std::uint64_t> bits;

  SpikeRaster() = default;
  SpikeRaster(int s, int neurons)
      : steps(s), n(neurons), words((neurons + 63) / 64), bits(std::size_t(s) * words, 0) {}

  bool test(int t, int i) const { return (bits[std::size_t(t) * words + i / 64] >> (i % 64)) & 1u; }
  void set(int t, int i) { bits[std::size_t(t) * words + i / 64] |= std::uint64_t{1} << (i % 64); }

  template <class Fn>
  void for_each_active(int t, Fn&& fn) const {
    const std::uint64_t* row = bits.data() + std::size_t(t) * words;
    for (int w = 0; w < words; ++w)
      for (std::uint64_t b = row[w]; b != 0; b &= b - 1) fn(w * 64 + std::countr_zero(b));
  }

  std::size_t count() const {
    std::size_t c = 0;
    for (auto w : bits) c += std::size_t(std::popcount(w));
    return c;
  }

  /// First `k` steps.
  SpikeRaster prefix(int k) const {
    SpikeRaster out(k, n);
    std::copy_n(bits.begin(), std::size_t(k) * words, out.bits.begin());
    return out;
  }

  static SpikeRaster from_dense(const Grid<std::uint8_t>& g) {
    SpikeRaster r(g.rows, g.cols);
    for (int t = 0; t < g.rows; ++t)
      for (int i = 0; i < g.cols; ++i)
        if (g(t, i)) r.set(t, i);
    return r;
  }

  Grid<std::uint8_t> to_dense() const {
    Grid<std::uint8_t> g(steps, n, 0);
    for (int t = 0; t < steps; ++t) for_each_active(t, [&](int i) { g(t, i) = 1; });
    return g;
  }

  bool operator==(const SpikeRaster&) const = default;
};

namespace detail {

template <class T>
void liquid_step(const Reservoir& r, LiquidState& st, std::span<const T> input, std::mt19937_64* rng,
                 std::int64_t step_index, std::vector<int>& prev_active) {
  const int n = r.n;
  if (int(input.size()) != r.c_in)
    throw ConfigError("input has " + std::to_string(input.size()) + " channels, reservoir expects " +
                      std::to_string(r.c_in));
  double* isyn = st.i_syn.data();
  double* vmem = st.v_mem.data();

  // (1) integrate feed-forward and recurrent input
  for (int c = 0; c < r.c_in; ++c) {
    const double x = double(input[c]);
    if (x == 0.0) continue;
    const float* w = r.w_in.data() + std::size_t(c) * n;
    for (int j = 0; j < n; ++j) isyn[j] += x * double(w[j]);
  }
  for (int i : prev_active) {
    const float* w = r.w_rec.data() + std::size_t(i) * n;
    for (int j = 0; j < n; ++j) isyn[j] += double(w[j]);
  }
  // (2), (3) exponential decay
  for (int j = 0; j < n; ++j) {
    isyn[j] *= r.syn_decay[j];
    vmem[j] *= r.mem_decay[j];
  }
  // (4) membrane integration
  const float* bias = r.params.bias.data();
  for (int j = 0; j < n; ++j) vmem[j] += isyn[j] + double(bias[j]);
  if (r.params.noise_sigma > 0) {
    if (rng == nullptr) throw ConfigError("noisy reservoir needs a random stream");
    std::normal_distribution<double> zeta(0.0, 1.0);
    for (int j = 0; j < n; ++j) vmem[j] += r.params.noise_sigma * zeta(*rng);
  }
  // (5), (6) threshold and reset by subtraction
  const double theta = r.params.threshold;
  prev_active.clear();
  for (int j = 0; j < n; ++j) {
    if (!std::isfinite(vmem[j]) || !std::isfinite(isyn[j]))
      throw NumericError("liquid state diverged at step " + std::to_string(step_index));
    const bool fire = vmem[j] >= theta;
    st.spikes[j] = fire ? 1 : 0;
    if (fire) {
      vmem[j] -= theta;
      prev_active.push_back(j);
    }
  }
}

}  // namespace detail

/// One synchronous update of every neuron. Recurrent input comes from
/// st.spikes (the previous step); on return st.spikes holds this step's spikes.
template <class T>
std::span<const std::uint8_t> step(const Reservoir& r, LiquidState& st, std::span<const T> input,
                                   std::mt19937_64* rng = nullptr, std::int64_t step_index = 0) {
  if (st.i_syn.size() != std::size_t(r.n) || st.v_mem.size() != std::size_t(r.n) ||
      st.spikes.size() != std::size_t(r.n))
    throw ConfigError("liquid state size does not match reservoir");
  std::vector<int> active;
  for (int i = 0; i < r.n; ++i)
    if (st.spikes[i]) active.push_back(i);
  detail::liquid_step(r, st, input, rng, step_index, active);
  return st.spikes;
}

/// Runs the liquid over every exposure-expanded step of one patch. State
/// carries across exposure windows; callers start each patch from `initial`
/// (zero by default). `noise_seed` seeds the per-patch noise stream.
template <class T>
SpikeRaster run(const Reservoir& r, const Train<T>& input, std::optional<LiquidState> initial = std::nullopt,
                std::uint64_t noise_seed = 0) {
  if (input.channels != r.c_in)
    throw ConfigError("input has " + std::to_string(input.channels) + " channels, reservoir expects " +
                      std::to_string(r.c_in));
  LiquidState st = initial ? std::move(*initial) : LiquidState::zero(r.n);
  if (st.i_syn.size() != std::size_t(r.n)) throw ConfigError("liquid state size does not match reservoir");
  std::vector<int> active;
  for (int i = 0; i < r.n; ++i)
    if (st.spikes[i]) active.push_back(i);
  std::mt19937_64 rng(noise_seed);
  SpikeRaster out(input.total_steps(), r.n);
  for (int k = 0; k < input.total_steps(); ++k) {
    detail::liquid_step(r, st, input.row(k), &rng, k, active);
    for (int i : active) out.set(k, i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: magic "LSMRES1\0", u32 n, u32 c_in, f64 dt, threshold,
// spectral radius, sigma, then float32 w_in, w_rec, tau_syn, tau_mem, bias
// and int8 ei_sign.

inline constexpr std::string_view kReservoirMagic{"LSMRES1\0", 8};

inline std::string serialize_reservoir(const Reservoir& r) {
  ByteWriter w;
  w.put_bytes(kReservoirMagic);
  w.put<std::uint32_t>(std::uint32_t(r.n));
  w.put<std::uint32_t>(std::uint32_t(r.c_in));
  w.put<double>(r.params.dt);
  w.put<double>(r.params.threshold);
  w.put<double>(r.spectral_radius);
  w.put<double>(r.params.noise_sigma);
  w.put_array(std::span<const float>(r.w_in));
  w.put_array(std::span<const float>(r.w_rec));
  w.put_array(std::span<const float>(r.params.tau_syn));
  w.put_array(std::span<const float>(r.params.tau_mem));
  w.put_array(std::span<const float>(r.params.bias));
  w.put_array(std::span<const std::int8_t>(r.ei_sign));
  return w.take();
}

inline Reservoir parse_reservoir(std::string_view bytes) {
  if (bytes.size() < kReservoirMagic.size() || bytes.substr(0, kReservoirMagic.size()) != kReservoirMagic)
    throw FormatError("bad magic, expected \"LSMRES1\\0\"", 0);
  ByteReader rd(bytes);
  rd.get_bytes(kReservoirMagic.size(), "magic");
  Reservoir r;
  r.n = int(rd.get<std::uint32_t>("n"));
  r.c_in = int(rd.get<std::uint32_t>("c_in"));
  if (r.n < 1 || r.n > 65535 || r.c_in < 1 || r.c_in > 65535)
    throw FormatError("reservoir dimensions out of range", 8);
  r.params.dt = rd.get<double>("dt");
  r.params.threshold = rd.get<double>("threshold");
  r.spectral_radius = rd.get<double>("spectral radius");
  r.params.noise_sigma = rd.get<double>("sigma");
  const auto N = std::size_t(r.n);
  const std::size_t need = (std::size_t(r.c_in) * N + N * N + 3 * N) * 4 + N;
  if (rd.remaining() < need) throw FormatError("truncated reservoir arrays", rd.offset());
  r.w_in.resize(std::size_t(r.c_in) * N);
  r.w_rec.resize(N * N);
  r.params.tau_syn.resize(N);
  r.params.tau_mem.resize(N);
  r.params.bias.resize(N);
  r.ei_sign.resize(N);
  rd.get_array(std::span<float>(r.w_in), "w_in");
  rd.get_array(std::span<float>(r.w_rec), "w_rec");
  rd.get_array(std::span<float>(r.params.tau_syn), "tau_syn");
  rd.get_array(std::span<float>(r.params.tau_mem), "tau_mem");
  rd.get_array(std::span<float>(r.params.bias), "bias");
  rd.get_array(std::span<std::int8_t>(r.ei_sign), "ei_sign");
  if (rd.remaining() != 0) throw FormatError("trailing bytes after reservoir", rd.offset());
  r.validate();
  r.refresh();
  return r;
}

/// Fingerprint of everything that defines the liquid's behaviour.
inline std::uint64_t reservoir_hash(const Reservoir& r) { return fnv1a(serialize_reservoir(r)); }

inline void save_reservoir(const Reservoir& r, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_reservoir(r));
}

inline Reservoir load_reservoir(const std::filesystem::path& path) { return parse_reservoir(read_file(path)); }

}  // namespace lsm
