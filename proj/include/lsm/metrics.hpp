#pragma once

// Pixel-level evaluation: accuracy and F1 at a threshold, rank-based AUROC
// and average-precision AUPRC. All metrics pool pixels over the whole set.

#include <json.hpp>
#include <optional>

#include "lsm/encode.hpp"

namespace lsm {

struct Confusion {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  double accuracy() const { return total() ? double(tp + tn) / double(total()) : 0.0; }
  /// 2tp / (2tp + fp + fn), 0 when the denominator is 0.
  double f1() const {
    const auto d = 2 * tp + fp + fn;
    return d ? double(2 * tp) / double(d) : 0.0;
  }
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  bool operator==(const Confusion&) const = default;
};

inline Confusion confusion_at(std::span<const double> scores, std::span<const std::uint8_t> truth, double thr) {
  if (scores.size() != truth.size()) throw DataError("scores and truth have different lengths");
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool flag = scores[i] > thr, pos = truth[i] != 0;
    if (flag && pos) ++c.tp;
    else if (flag) ++c.fp;
    else if (pos) ++c.fn;
    else ++c.tn;
  }
  return c;
}

struct ThresholdMetrics {
  double accuracy = 0;
  double f1 = 0;
  Confusion confusion;
};

inline ThresholdMetrics threshold_metrics(std::span<const ScoreMap> scores, std::span<const Grid<std::uint8_t>> truth,
                                          double thr = 0.5) {
  if (!(thr > 0 && thr < 1)) throw ConfigError("threshold must be in (0, 1)");
  if (scores.size() != truth.size()) throw DataError("score and mask lists differ in length");
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!scores[i].same_shape(truth[i])) throw DataError("score map and mask shapes differ");
    c += confusion_at(scores[i].data, truth[i].data, thr);
  }
  return {c.accuracy(), c.f1(), c};
}

/// Mann-Whitney AUROC with mid-ranks for ties.
inline double auroc(std::span<const double> scores, std::span<const std::uint8_t> truth) {
  if (scores.size() != truth.size()) throw DataError("scores and truth have different lengths");
  const std::size_t n = scores.size();
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  std::uint64_t pos = 0, twice_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // 1-based ranks i+1 .. j share the mid-rank (i + 1 + j) / 2
    const std::uint64_t twice_mid = i + 1 + j;
    for (std::size_t k = i; k < j; ++k)
      if (truth[order[k]]) {
        ++pos;
        twice_rank_sum += twice_mid;
      }
    i = j;
  }
  const std::uint64_t neg = n - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("AUROC needs both positive and negative pixels");
  const std::uint64_t twice_u = twice_rank_sum - pos * (pos + 1);
  return double(twice_u) / (2.0 * double(pos) * double(neg));
}

/// Average precision: sum over descending distinct thresholds of
/// (R_k - R_{k-1}) * P_k.
inline double auprc(std::span<const double> scores, std::span<const std::uint8_t> truth) {
  if (scores.size() != truth.size()) throw DataError("scores and truth have different lengths");
  const std::size_t n = scores.size();
  const auto total_pos = std::uint64_t(std::count_if(truth.begin(), truth.end(), [](auto t) { return t != 0; }));
  if (total_pos == 0) throw UndefinedMetricError("AUPRC needs at least one positive pixel");
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  std::uint64_t tp = 0, fp = 0, prev_tp = 0;
  double ap = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      if (truth[order[j]]) ++tp;
      else ++fp;
      ++j;
    }
    ap += double(tp - prev_tp) / double(total_pos) * (double(tp) / double(tp + fp));
    prev_tp = tp;
    i = j;
  }
  return ap;
}

struct EvalResult {
  double accuracy = 0;
  double f1 = 0;
  std::optional<double> auroc;  // absent when undefined for the labels
  std::optional<double> auprc;
  Confusion confusion;
  std::uint64_t n_pixels = 0;
  double threshold = 0.5;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["accuracy"] = accuracy;
    j["auroc"] = auroc ? nlohmann::ordered_json(*auroc) : nlohmann::ordered_json(nullptr);
    j["auprc"] = auprc ? nlohmann::ordered_json(*auprc) : nlohmann::ordered_json(nullptr);
    j["f1"] = f1;
    j["threshold"] = threshold;
    j["confusion"] = {{"tp", confusion.tp}, {"fp", confusion.fp}, {"tn", confusion.tn}, {"fn", confusion.fn}};
    j["n_pixels"] = n_pixels;
    return j;
  }
};

/// Pools score/mask pairs so that patch-by-patch accumulation equals
/// evaluating the concatenation.
class MetricAccumulator {
 public:
  void add(const ScoreMap& scores, const Grid<std::uint8_t>& mask) {
    if (!scores.same_shape(mask)) throw DataError("score map and mask shapes differ");
    for (double s : scores.data)
      if (!(s >= 0.0 && s <= 1.0)) throw DataError("score outside [0, 1]");
    scores_.insert(scores_.end(), scores.data.begin(), scores.data.end());
    truth_.insert(truth_.end(), mask.data.begin(), mask.data.end());
  }

  std::span<const double> scores() const { return scores_; }
  std::span<const std::uint8_t> truth() const { return truth_; }

  EvalResult result(double thr = 0.5) const {
    if (!(thr > 0 && thr < 1)) throw ConfigError("threshold must be in (0, 1)");
    EvalResult r;
    r.threshold = thr;
    r.confusion = confusion_at(scores_, truth_, thr);
    r.accuracy = r.confusion.accuracy();
    r.f1 = r.confusion.f1();
    r.n_pixels = scores_.size();
    try {
      r.auroc = lsm::auroc(scores_, truth_);
    } catch (const UndefinedMetricError&) {
    }
    try {
      r.auprc = lsm::auprc(scores_, truth_);
    } catch (const UndefinedMetricError&) {
    }
    return r;
  }

 private:
  std::vector<double> scores_;
  std::vector<std::uint8_t> truth_;
};

/// (threshold, fpr, tpr) and (threshold, recall, precision) points at every
/// distinct score, descending.
struct Curves {
  std::vector<std::array<double, 3>> roc;
  std::vector<std::array<double, 3>> pr;
};

inline Curves curves(std::span<const double> scores, std::span<const std::uint8_t> truth) {
  const std::size_t n = scores.size();
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  const auto P = std::uint64_t(std::count_if(truth.begin(), truth.end(), [](auto t) { return t != 0; }));
  const auto N = n - P;
  Curves c;
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (truth[order[j]] ? tp : fp)++;
      ++j;
    }
    const double thr = scores[order[i]];
    c.roc.push_back({thr, N ? double(fp) / double(N) : 0.0, P ? double(tp) / double(P) : 0.0});
    c.pr.push_back({thr, P ? double(tp) / double(P) : 0.0, double(tp) / double(tp + fp)});
    i = j;
  }
  return c;
}

}  // namespace lsm
