#pragma once

// Readout-only supervision: BCE on decoded scores, Adam, reduce-on-plateau
// learning-rate scheduling and the epoch loop.

#include <chrono>
#include <functional>
#include <limits>
#include <json.hpp>
#include <sstream>

#include "lsm/liquid.hpp"
#include "lsm/readout.hpp"

namespace lsm {

struct TrainConfig {
  double lr0 = 1e-4;
  double plateau_factor = 0.5;
  int plateau_patience = 10;
  double plateau_threshold = 1e-4;  // relative improvement needed to reset patience
  int epochs = 100;
  int batch = 32;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  double pos_weight = 1.0;  // weight of the positive (RFI) class in the loss

  void validate() const {
    if (!(lr0 > 0)) throw ConfigError("lr0 must be > 0");
    if (!(plateau_factor > 0 && plateau_factor < 1)) throw ConfigError("plateau factor must be in (0, 1)");
    if (plateau_patience < 1) throw ConfigError("plateau patience must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("val_fraction must be in [0, 1)");
    if (!(pos_weight > 0)) throw ConfigError("pos_weight must be > 0");
  }
};

inline constexpr double kBceEps = 1e-7;

/// Mean binary cross-entropy over all cells; scores clamped to [eps, 1 - eps].
inline double loss_bce(const ScoreMap& scores, const Grid<std::uint8_t>& mask, double pos_weight = 1.0,
                       double eps = kBceEps) {
  if (!scores.same_shape(mask)) throw DataError("score map and mask shapes differ");
  if (scores.size() == 0) throw DataError("empty score map");
  double total = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double c = std::clamp(scores.data[i], eps, 1.0 - eps);
    total -= mask.data[i] ? pos_weight * std::log(c) : std::log(1.0 - c);
  }
  return total / double(scores.size());
}

// ---------------------------------------------------------------------------

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  ParamMap m;
  ParamMap v;
};

/// Bias-corrected Adam update of every parameter that has a gradient.
inline void adam_step(ParamMap& params, const ParamMap& grads, AdamState& st, double lr) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("gradient for unknown parameter '" + name + "'");
    if (it->second.rows() != g.rows() || it->second.cols() != g.cols())
      throw ConfigError("gradient shape mismatch for '" + name + "'");
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, double(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, double(st.step));
  for (const auto& [name, g] : grads) {
    Mat& p = params.at(name);
    auto [mi, fresh_m] = st.m.try_emplace(name, Mat::Zero(g.rows(), g.cols()));
    auto [vi, fresh_v] = st.v.try_emplace(name, Mat::Zero(g.rows(), g.cols()));
    Mat& m = mi->second;
    Mat& v = vi->second;
    m = st.beta1 * m + (1.0 - st.beta1) * g;
    v = st.beta2 * v + (1.0 - st.beta2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + st.eps);
    if (!p.allFinite()) throw NumericError("non-finite Adam update for '" + name + "'");
  }
}

/// Reduce-on-plateau: after `patience` consecutive epochs without a relative
/// improvement of `threshold` over the best loss, lr *= factor.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr0, double factor, int patience, double threshold = 1e-4)
      : lr_(lr0), factor_(factor), patience_(patience), threshold_(threshold) {}

  double lr() const { return lr_; }

  double step(double val_loss) {
    if (!std::isfinite(val_loss)) throw NumericError("validation loss is not finite");
    if (val_loss < best_ * (1.0 - threshold_)) {
      best_ = val_loss;
      bad_ = 0;
    } else if (++bad_ >= patience_) {
      lr_ *= factor_;
      bad_ = 0;
    }
    return lr_;
  }

 private:
  double lr_;
  double factor_;
  int patience_;
  double threshold_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

// ---------------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double lr = 0;
  double seconds = 0;
};

/// Epoch 0 holds the losses of the untrained head.
struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::uint64_t head_checksum = 0;

  double initial_train_loss() const { return epochs.empty() ? 0 : epochs.front().train_loss; }
  double final_train_loss() const { return epochs.empty() ? 0 : epochs.back().train_loss; }

  /// Without `timing` the seconds column is written as 0, which makes
  /// reports of identical runs byte-identical.
  std::string to_csv(bool timing = true) const {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,train_loss,val_loss,lr,seconds\n";
    for (const auto& e : epochs)
      os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.lr << ','
         << (timing ? e.seconds : 0.0) << '\n';
    return os.str();
  }

  nlohmann::ordered_json to_json(bool timing = true) const {
    nlohmann::ordered_json j;
    j["epochs"] = epochs.empty() ? 0 : epochs.back().epoch;
    j["initial_train_loss"] = initial_train_loss();
    j["final_train_loss"] = final_train_loss();
    j["final_val_loss"] = epochs.empty() ? 0.0 : epochs.back().val_loss;
    j["final_lr"] = epochs.empty() ? 0.0 : epochs.back().lr;
    j["head_checksum"] = hex64(head_checksum);
    double total = 0;
    if (timing)
      for (const auto& e : epochs) total += e.seconds;
    j["seconds"] = total;
    return j;
  }

  /// Equality of everything except wall-clock time.
  bool same_trajectory(const TrainReport& o) const {
    if (epochs.size() != o.epochs.size() || head_checksum != o.head_checksum) return false;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      const auto &a = epochs[i], &b = o.epochs[i];
      if (a.epoch != b.epoch || a.train_loss != b.train_loss || a.val_loss != b.val_loss || a.lr != b.lr)
        return false;
    }
    return true;
  }
};

inline Mat mask_matrix(const Grid<std::uint8_t>& mask) {
  Mat m(mask.rows, mask.cols);
  for (std::size_t i = 0; i < mask.size(); ++i) m.data()[i] = mask.data[i] ? 1.0 : 0.0;
  return m;
}

/// Loss of one patch: decode_rate on the head's logits, then BCE against the
/// mask. Fills `grads` when given.
inline double patch_loss(const ReadoutHead& head, const SpikeRaster& raster, const Grid<std::uint8_t>& mask,
                         int exposure, double pos_weight, ParamMap* grads = nullptr) {
  if (raster.steps != mask.rows * exposure || mask.cols != head.out_dim)
    throw DataError("raster / mask shapes do not line up with the exposure");
  ad::Tape tape;
  HeadGraph g(tape, head);
  auto pooled = tape.mean_row_groups(g.logits(raster), exposure);
  auto loss = tape.bce(tape.sigmoid(pooled), mask_matrix(mask), kBceEps, pos_weight);
  const double value = tape.value(loss)(0, 0);
  if (!std::isfinite(value)) throw NumericError("non-finite loss");
  if (grads != nullptr) {
    tape.backward(loss);
    *grads = tape.gradients();
  }
  return value;
}

struct FitOptions {
  int threads = 1;
  /// Simulate the liquid once per patch up front instead of once per use.
  bool cache_liquid = true;
  std::optional<std::filesystem::path> cache_dir;
  std::optional<std::filesystem::path> checkpoint;
  std::uint64_t noise_seed = 0;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct FitResult {
  ReadoutHead head;
  TrainReport report;
};

/// Deterministic split of [0, n) into (train, val) by seed.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double val_fraction,
                                                                                   std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed_hash(seed, 0x5a11));
  std::shuffle(idx.begin(), idx.end(), rng);
  std::size_t n_val = std::size_t(std::floor(val_fraction * double(n)));
  if (val_fraction > 0 && n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  if (n < 2) n_val = 0;
  std::vector<std::size_t> val(idx.begin(), idx.begin() + std::ptrdiff_t(n_val));
  std::vector<std::size_t> train(idx.begin() + std::ptrdiff_t(n_val), idx.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {std::move(train), std::move(val)};
}

/// Trains only the head; the reservoir is read-only throughout.
inline FitResult fit(const Reservoir& reservoir, ReadoutHead head, std::span<const Patch> dataset, Encoding enc,
                     int exposure, const TrainConfig& cfg, const FitOptions& opt = {}) {
  cfg.validate();
  if (dataset.empty()) throw ConfigError("training dataset is empty");
  if (exposure < 1) throw ConfigError("exposure must be >= 1");
  validate_head(head);
  if (head.in_dim != reservoir.n) throw ConfigError("head input width differs from reservoir size");
  using clock = std::chrono::steady_clock;

  auto [train_idx, val_idx] = split_indices(dataset.size(), cfg.val_fraction, cfg.seed);

  std::vector<SpikeRaster> cached;
  if (opt.cache_liquid)
    cached = liquid_responses(reservoir, dataset, enc, exposure,
                              LiquidRunOptions{opt.threads, opt.noise_seed, opt.cache_dir});
  auto raster_of = [&](std::size_t i, SpikeRaster& scratch) -> const SpikeRaster& {
    if (opt.cache_liquid) return cached[i];
    scratch = liquid_response(reservoir, dataset[i], enc, exposure, seed_hash(opt.noise_seed, i));
    return scratch;
  };
  auto mean_loss = [&](const std::vector<std::size_t>& idx) {
    std::vector<double> losses(idx.size());
    parallel_for(idx.size(), opt.threads, [&](std::size_t k) {
      SpikeRaster scratch;
      const auto i = idx[k];
      losses[k] = patch_loss(head, raster_of(i, scratch), dataset[i].mask, exposure, cfg.pos_weight);
    });
    double s = 0;
    for (double l : losses) s += l;
    return idx.empty() ? 0.0 : s / double(idx.size());
  };

  TrainReport report;
  PlateauScheduler sched(cfg.lr0, cfg.plateau_factor, cfg.plateau_patience, cfg.plateau_threshold);
  AdamState adam;
  {
    auto t0 = clock::now();
    const double tl = mean_loss(train_idx);
    const double vl = val_idx.empty() ? tl : mean_loss(val_idx);
    report.epochs.push_back({0, tl, vl, sched.lr(), std::chrono::duration<double>(clock::now() - t0).count()});
    if (opt.on_epoch) opt.on_epoch(report.epochs.back());
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = clock::now();
    std::vector<std::size_t> order = train_idx;
    std::mt19937_64 rng(seed_hash(cfg.seed, 0xe90c, std::uint64_t(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = sched.lr();
    double loss_sum = 0;

    for (std::size_t b = 0; b < order.size(); b += std::size_t(cfg.batch)) {
      const std::size_t count = std::min(order.size() - b, std::size_t(cfg.batch));
      std::vector<ParamMap> grads(count);
      std::vector<double> losses(count);
      parallel_for(count, opt.threads, [&](std::size_t k) {
        SpikeRaster scratch;
        const auto i = order[b + k];
        try {
          losses[k] = patch_loss(head, raster_of(i, scratch), dataset[i].mask, exposure, cfg.pos_weight, &grads[k]);
        } catch (const NumericError& e) {
          throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", patch " +
                             std::to_string(i) + ")");
        }
      });
      ParamMap total = std::move(grads[0]);
      for (std::size_t k = 1; k < count; ++k)
        for (auto& [name, g] : grads[k]) total.at(name) += g;
      for (auto& [_, g] : total) g /= double(count);
      for (double l : losses) loss_sum += l;
      adam_step(head.params, total, adam, lr);
    }

    const double train_loss = loss_sum / double(order.size());
    const double val_loss = val_idx.empty() ? mean_loss(train_idx) : mean_loss(val_idx);
    report.epochs.push_back(
        {epoch, train_loss, val_loss, lr, std::chrono::duration<double>(clock::now() - t0).count()});
    sched.step(val_loss);
    if (opt.checkpoint) save_head(head, *opt.checkpoint);
    if (opt.on_epoch) opt.on_epoch(report.epochs.back());
  }
  report.head_checksum = head_checksum(head);
  return {std::move(head), std::move(report)};
}

}  // namespace lsm
