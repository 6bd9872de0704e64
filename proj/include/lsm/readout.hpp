#pragma once

// Trainable readout heads mapping reservoir spikes to per-channel logits:
// a linear map, a one-hidden-layer ReLU MLP, and a single transformer-decoder
// block that cross-attends from the current step into the patch's spike history.

#include <random>

#include "lsm/autodiff.hpp"

namespace lsm {

using ad::Mat;
using ad::ParamMap;

enum class ReadoutKind : std::uint8_t { Linear = 0, ReLU = 1, Transformer = 2 };

inline std::string_view to_string(ReadoutKind k) {
  switch (k) {
    case ReadoutKind::Linear: return "linear";
    case ReadoutKind::ReLU: return "relu";
    case ReadoutKind::Transformer: return "transformer";
  }
  return "?";
}

inline ReadoutKind parse_readout(std::string_view s) {
  if (s == "linear") return ReadoutKind::Linear;
  if (s == "relu") return ReadoutKind::ReLU;
  if (s == "transformer") return ReadoutKind::Transformer;
  throw ConfigError("unknown readout '" + std::string(s) + "'");
}

inline constexpr int kOutputChannels = 32;

/// Sizes for the non-linear heads. d_ff is also the ReLU head's hidden width.
/// max_memory = 0 lets every step attend to the whole patch prefix.
struct AttentionConfig {
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 256;
  int max_memory = 0;

  void validate() const {
    if (d_model < 1 || n_heads < 1 || d_ff < 1 || max_memory < 0) throw ConfigError("invalid attention config");
    if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  }
};

struct ReadoutHead {
  ReadoutKind kind = ReadoutKind::Linear;
  int in_dim = 0;
  int out_dim = kOutputChannels;
  AttentionConfig attn;
  ParamMap params;

  const Mat& p(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("readout head has no parameter '" + name + "'");
    return it->second;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, m] : params) n += std::size_t(m.size());
    return n;
  }
};

namespace detail {

struct ParamSpec {
  std::string name;
  int rows, cols;
  enum Init { Uniform, Ones, Zeros } init;
  int fan_in;
};

inline std::vector<ParamSpec> head_layout(ReadoutKind kind, int in, int out, const AttentionConfig& a) {
  using P = ParamSpec;
  switch (kind) {
    case ReadoutKind::Linear:
      return {P{"linear.weight", in, out, P::Uniform, in}, P{"linear.bias", 1, out, P::Uniform, in}};
    case ReadoutKind::ReLU:
      return {P{"hidden.weight", in, a.d_ff, P::Uniform, in}, P{"hidden.bias", 1, a.d_ff, P::Uniform, in},
              P{"out.weight", a.d_ff, out, P::Uniform, a.d_ff}, P{"out.bias", 1, out, P::Uniform, a.d_ff}};
    case ReadoutKind::Transformer: {
      const int d = a.d_model;
      return {P{"embed.weight", in, d, P::Uniform, in},       P{"embed.bias", 1, d, P::Uniform, in},
              P{"attn.q.weight", d, d, P::Uniform, d},        P{"attn.q.bias", 1, d, P::Uniform, d},
              P{"attn.k.weight", d, d, P::Uniform, d},        P{"attn.k.bias", 1, d, P::Uniform, d},
              P{"attn.v.weight", d, d, P::Uniform, d},        P{"attn.v.bias", 1, d, P::Uniform, d},
              P{"attn.out.weight", d, d, P::Uniform, d},      P{"attn.out.bias", 1, d, P::Uniform, d},
              P{"norm1.gain", 1, d, P::Ones, 0},              P{"norm1.bias", 1, d, P::Zeros, 0},
              P{"ff.in.weight", d, a.d_ff, P::Uniform, d},    P{"ff.in.bias", 1, a.d_ff, P::Uniform, d},
              P{"ff.out.weight", a.d_ff, d, P::Uniform, a.d_ff}, P{"ff.out.bias", 1, d, P::Uniform, a.d_ff},
              P{"norm2.gain", 1, d, P::Ones, 0},              P{"norm2.bias", 1, d, P::Zeros, 0},
              P{"out.weight", d, out, P::Uniform, d},         P{"out.bias", 1, out, P::Uniform, d}};
    }
  }
  return {};
}

}  // namespace detail

/// Fresh head; weights and biases uniform in +-1/sqrt(fan_in), norm gains 1, norm biases 0.
inline ReadoutHead make_head(ReadoutKind kind, int in_dim, std::uint64_t seed, const AttentionConfig& attn = {},
                             int out_dim = kOutputChannels) {
  if (in_dim < 1 || out_dim < 1) throw ConfigError("head dimensions must be >= 1");
  attn.validate();
  ReadoutHead h{kind, in_dim, out_dim, attn, {}};
  std::mt19937_64 rng(seed_hash(seed, 0x4ead));
  for (const auto& s : detail::head_layout(kind, in_dim, out_dim, attn)) {
    Mat m(s.rows, s.cols);
    if (s.init == detail::ParamSpec::Uniform) {
      const double bound = 1.0 / std::sqrt(double(s.fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    } else {
      m.setConstant(s.init == detail::ParamSpec::Ones ? 1.0 : 0.0);
    }
    h.params.emplace(s.name, std::move(m));
  }
  return h;
}

/// Checks parameter names and shapes against the variant layout.
inline void validate_head(const ReadoutHead& h) {
  h.attn.validate();
  const auto layout = detail::head_layout(h.kind, h.in_dim, h.out_dim, h.attn);
  if (layout.size() != h.params.size()) throw DataError("readout head has unexpected parameters");
  for (const auto& s : layout) {
    auto it = h.params.find(s.name);
    if (it == h.params.end()) throw DataError("readout head is missing '" + s.name + "'");
    if (it->second.rows() != s.rows || it->second.cols() != s.cols)
      throw DataError("readout parameter '" + s.name + "' has the wrong shape");
    if (!it->second.allFinite()) throw NumericError("readout parameter '" + s.name + "' is not finite");
  }
}

/// Sinusoidal encoding of step index `pos` in a d-wide row.
inline void positional_row(Eigen::Ref<Eigen::RowVectorXd> row, int pos) {
  const auto d = row.size();
  for (Eigen::Index i = 0; i < d; ++i) {
    const double freq = std::pow(10000.0, -double(i - i % 2) / double(d));
    row(i) = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
  }
}

inline Mat positional_encoding(std::span<const int> positions, int d) {
  Mat pe(Eigen::Index(positions.size()), d);
  for (std::size_t r = 0; r < positions.size(); ++r) {
    Eigen::RowVectorXd row(d);
    positional_row(row, positions[r]);
    pe.row(Eigen::Index(r)) = row;
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Graph construction

/// A head's parameters registered on a tape.
class HeadGraph {
 public:
  HeadGraph(ad::Tape& tape, const ReadoutHead& head) : tape_(tape), head_(head) {
    for (const auto& [name, m] : head.params) vars_.emplace(name, tape.param(name, m));
  }

  ad::Var operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ConfigError("readout head has no parameter '" + name + "'");
    return it->second;
  }

  /// Logits [steps x out] for every step of a patch raster. The transformer
  /// attends causally within the raster.
  ad::Var logits(const SpikeRaster& raster) {
    check_input(raster.n);
    switch (head_.kind) {
      case ReadoutKind::Linear:
        return tape_.add_row(tape_.spike_matmul(raster, (*this)["linear.weight"]), (*this)["linear.bias"]);
      case ReadoutKind::ReLU:
        return relu_tail(tape_.spike_matmul(raster, (*this)["hidden.weight"]));
      case ReadoutKind::Transformer: {
        auto emb = tape_.add_row(tape_.spike_matmul(raster, (*this)["embed.weight"]), (*this)["embed.bias"]);
        std::vector<int> pos(std::size_t(raster.steps));
        std::iota(pos.begin(), pos.end(), 0);
        auto h0 = tape_.add(emb, tape_.constant(positional_encoding(pos, head_.attn.d_model)));
        return decoder_block(h0, h0, true);
      }
    }
    throw ConfigError("unknown readout kind");
  }

  /// Logits [rows x out] for dense real-valued spike rows (no attention memory).
  ad::Var logits_dense(const Mat& x) {
    check_input(int(x.cols()));
    auto in = tape_.constant(x);
    switch (head_.kind) {
      case ReadoutKind::Linear:
        return tape_.add_row(tape_.matmul(in, (*this)["linear.weight"]), (*this)["linear.bias"]);
      case ReadoutKind::ReLU:
        return relu_tail(tape_.matmul(in, (*this)["hidden.weight"]));
      case ReadoutKind::Transformer:
        throw ConfigError("transformer logits need a spike history");
    }
    throw ConfigError("unknown readout kind");
  }

  /// Transformer logits for one query row at step `t` against `history`
  /// (rows are steps 0.., at most t + 1 of them). An empty history makes the
  /// query its own single memory row.
  ad::Var transformer_step(const Eigen::RowVectorXd& spikes_t, int t, const Mat& history) {
    if (head_.kind != ReadoutKind::Transformer) throw ConfigError("head is not a transformer");
    check_input(int(spikes_t.size()));
    const int d = head_.attn.d_model;
    auto embed = [&](const Mat& rows, std::span<const int> pos) {
      auto e = tape_.add_row(tape_.matmul(tape_.constant(rows), (*this)["embed.weight"]), (*this)["embed.bias"]);
      return tape_.add(e, tape_.constant(positional_encoding(pos, d)));
    };
    const int tq[] = {t};
    auto query = embed(Mat(spikes_t), tq);
    if (history.rows() == 0) return decoder_block(query, query, false);
    check_input(int(history.cols()));
    Eigen::Index first = 0;
    if (head_.attn.max_memory > 0) first = std::max<Eigen::Index>(0, history.rows() - head_.attn.max_memory);
    std::vector<int> pos;
    for (Eigen::Index r = first; r < history.rows(); ++r) pos.push_back(int(r));
    Mat mem_rows = history.middleRows(first, history.rows() - first);
    return decoder_block(query, embed(mem_rows, pos), false);
  }

 private:
  void check_input(int n) const {
    if (n != head_.in_dim)
      throw ConfigError("readout expects " + std::to_string(head_.in_dim) + " inputs, got " + std::to_string(n));
  }

  ad::Var relu_tail(ad::Var pre) {
    auto hidden = tape_.relu(tape_.add_row(pre, (*this)["hidden.bias"]));
    return tape_.add_row(tape_.matmul(hidden, (*this)["out.weight"]), (*this)["out.bias"]);
  }

  ad::Var linear(ad::Var x, const std::string& prefix) {
    return tape_.add_row(tape_.matmul(x, (*this)[prefix + ".weight"]), (*this)[prefix + ".bias"]);
  }

  // Cross-attention from query rows into memory rows, then add & norm,
  // ReLU feed-forward, add & norm and the output projection.
  ad::Var decoder_block(ad::Var query, ad::Var memory, bool causal) {
    const auto& a = head_.attn;
    const int dh = a.d_model / a.n_heads;
    auto q = linear(query, "attn.q");
    auto k = linear(memory, "attn.k");
    auto v = linear(memory, "attn.v");
    std::vector<ad::Var> heads;
    for (int h = 0; h < a.n_heads; ++h) {
      auto qh = tape_.slice_cols(q, h * dh, dh);
      auto kh = tape_.slice_cols(k, h * dh, dh);
      auto vh = tape_.slice_cols(v, h * dh, dh);
      auto scores = tape_.scale(tape_.matmul_nt(qh, kh), 1.0 / std::sqrt(double(dh)));
      auto weights = tape_.softmax_rows(scores, causal, causal ? a.max_memory : 0);
      heads.push_back(tape_.matmul(weights, vh));
    }
    auto attended = linear(tape_.concat_cols(heads), "attn.out");
    auto h1 = tape_.layer_norm_rows(tape_.add(query, attended), (*this)["norm1.gain"], (*this)["norm1.bias"]);
    auto ff = linear(tape_.relu(linear(h1, "ff.in")), "ff.out");
    auto h2 = tape_.layer_norm_rows(tape_.add(h1, ff), (*this)["norm2.gain"], (*this)["norm2.bias"]);
    return linear(h2, "out");
  }

  ad::Tape& tape_;
  const ReadoutHead& head_;
  std::map<std::string, ad::Var> vars_;
};

// ---------------------------------------------------------------------------
// Single-step forward passes

namespace detail {
inline std::vector<double> row_to_vector(const Mat& m) {
  return std::vector<double>(m.data(), m.data() + m.cols());
}
}  // namespace detail

/// logits = W * spikes_t + c
inline std::vector<double> forward_linear(const ReadoutHead& head, std::span<const double> spikes_t) {
  if (head.kind != ReadoutKind::Linear) throw ConfigError("head is not linear");
  ad::Tape tape;
  HeadGraph g(tape, head);
  Mat x = Eigen::Map<const Eigen::RowVectorXd>(spikes_t.data(), Eigen::Index(spikes_t.size()));
  return detail::row_to_vector(tape.value(g.logits_dense(x)));
}

/// logits = W2 * relu(W1 * spikes_t + c1) + c2
inline std::vector<double> forward_relu(const ReadoutHead& head, std::span<const double> spikes_t) {
  if (head.kind != ReadoutKind::ReLU) throw ConfigError("head is not a ReLU head");
  ad::Tape tape;
  HeadGraph g(tape, head);
  Mat x = Eigen::Map<const Eigen::RowVectorXd>(spikes_t.data(), Eigen::Index(spikes_t.size()));
  return detail::row_to_vector(tape.value(g.logits_dense(x)));
}

/// Logits for step t given the spike history of steps <= t of the current patch.
inline std::vector<double> forward_transformer(const ReadoutHead& head, std::span<const double> spikes_t, int t,
                                               const Mat& history) {
  ad::Tape tape;
  HeadGraph g(tape, head);
  Eigen::RowVectorXd x = Eigen::Map<const Eigen::RowVectorXd>(spikes_t.data(), Eigen::Index(spikes_t.size()));
  return detail::row_to_vector(tape.value(g.transformer_step(x, t, history)));
}

/// Logits [steps x out] for a whole patch raster, without recording gradients.
inline Mat head_logits(const ReadoutHead& head, const SpikeRaster& raster) {
  ad::Tape tape;
  HeadGraph g(tape, head);
  return tape.value(g.logits(raster));
}

// ---------------------------------------------------------------------------
// Serialization: magic "LSMHEAD1", u8 variant, u32 tensor count, then per
// tensor u16 name length, name, u8 rank, u32 dims, float32 data (row-major).

inline constexpr std::string_view kHeadMagic{"LSMHEAD1", 8};

inline std::string serialize_head(const ReadoutHead& h) {
  ByteWriter w;
  w.put_bytes(kHeadMagic);
  w.put<std::uint8_t>(std::uint8_t(h.kind));
  w.put<std::uint32_t>(std::uint32_t(h.params.size()));
  std::vector<float> buf;
  for (const auto& [name, m] : h.params) {
    w.put<std::uint16_t>(std::uint16_t(name.size()));
    w.put_bytes(name);
    w.put<std::uint8_t>(2);
    w.put<std::uint32_t>(std::uint32_t(m.rows()));
    w.put<std::uint32_t>(std::uint32_t(m.cols()));
    buf.assign(m.data(), m.data() + m.size());
    w.put_array(std::span<const float>(buf));
  }
  return w.take();
}

inline ReadoutHead parse_head(std::string_view bytes) {
  if (bytes.size() < kHeadMagic.size() || bytes.substr(0, kHeadMagic.size()) != kHeadMagic)
    throw FormatError("bad magic, expected \"LSMHEAD1\"", 0);
  ByteReader r(bytes);
  r.get_bytes(kHeadMagic.size(), "magic");
  ReadoutHead h;
  const auto tag = r.get<std::uint8_t>("variant");
  if (tag > 2) throw FormatError("unknown readout variant " + std::to_string(tag), 8);
  h.kind = ReadoutKind(tag);
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name(r.get_bytes(len, "tensor name"));
    const auto rank_at = r.offset();
    if (r.get<std::uint8_t>("rank") != 2) throw FormatError("tensor '" + name + "' is not rank 2", rank_at);
    const auto rows = r.get<std::uint32_t>("rows"), cols = r.get<std::uint32_t>("cols");
    if (std::uint64_t(rows) * cols * 4 > r.remaining())
      throw FormatError("truncated tensor '" + name + "'", r.offset());
    std::vector<float> buf(std::size_t(rows) * cols);
    r.get_array(std::span<float>(buf), "tensor data");
    Mat m(rows, cols);
    for (std::size_t k = 0; k < buf.size(); ++k) m.data()[k] = buf[k];
    h.params.emplace(std::move(name), std::move(m));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after head", r.offset());

  auto shape = [&](const char* name) -> const Mat& {
    auto it = h.params.find(name);
    if (it == h.params.end()) throw FormatError(std::string("head is missing tensor '") + name + "'", 0);
    return it->second;
  };
  switch (h.kind) {
    case ReadoutKind::Linear:
      h.in_dim = int(shape("linear.weight").rows());
      h.out_dim = int(shape("linear.weight").cols());
      break;
    case ReadoutKind::ReLU:
      h.in_dim = int(shape("hidden.weight").rows());
      h.attn.d_ff = int(shape("hidden.weight").cols());
      h.out_dim = int(shape("out.weight").cols());
      break;
    case ReadoutKind::Transformer:
      h.in_dim = int(shape("embed.weight").rows());
      h.attn.d_model = int(shape("embed.weight").cols());
      h.attn.d_ff = int(shape("ff.in.weight").cols());
      h.out_dim = int(shape("out.weight").cols());
      break;
  }
  validate_head(h);
  return h;
}

inline std::uint64_t head_checksum(const ReadoutHead& h) { return fnv1a(serialize_head(h)); }

inline void save_head(const ReadoutHead& h, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_head(h));
}

inline ReadoutHead load_head(const std::filesystem::path& path) { return parse_head(read_file(path)); }

}  // namespace lsm
