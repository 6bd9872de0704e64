#pragma once

// Hyper-parameter search: a small search-space description, a univariate
// tree-structured Parzen estimator, and a study runner that persists every
// trial as one JSON line and resumes from an existing file.

#include <chrono>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include "lsm/common.hpp"

namespace lsm {

struct Dimension {
  enum class Kind { Continuous, Categorical };
  std::string name;
  Kind kind = Kind::Continuous;
  double lo = 0, hi = 1;        // continuous bounds
  std::vector<double> choices;  // categorical menu

  static Dimension continuous(std::string name, double lo, double hi) {
    return {std::move(name), Kind::Continuous, lo, hi, {}};
  }
  static Dimension categorical(std::string name, std::vector<double> choices) {
    return {std::move(name), Kind::Categorical, 0, 0, std::move(choices)};
  }

  bool contains(double v) const {
    if (kind == Kind::Continuous) return v >= lo && v <= hi;
    return std::find(choices.begin(), choices.end(), v) != choices.end();
  }
};

/// Parameter name -> value. Categorical values are the menu entries.
using Config = std::map<std::string, double>;

struct SearchSpace {
  std::vector<Dimension> dims;

  /// input_sparsity in [0, 1], exposure and liquid size from fixed menus.
  static SearchSpace liquid_menus() {
    return {{Dimension::continuous("input_sparsity", 0.0, 1.0),
             Dimension::categorical("exposure", {1, 2, 4, 8, 16, 32}),
             Dimension::categorical("liquid_size", {512, 1024, 2048, 4096, 8192})}};
  }

  void validate() const {
    if (dims.empty()) throw ConfigError("search space is empty");
    for (const auto& d : dims) {
      if (d.kind == Dimension::Kind::Continuous && !(d.lo < d.hi && std::isfinite(d.lo) && std::isfinite(d.hi)))
        throw ConfigError("dimension '" + d.name + "' has an empty interval");
      if (d.kind == Dimension::Kind::Categorical && d.choices.empty())
        throw ConfigError("dimension '" + d.name + "' has no choices");
    }
  }

  bool contains(const Config& c) const {
    if (c.size() != dims.size()) return false;
    for (const auto& d : dims) {
      auto it = c.find(d.name);
      if (it == c.end() || !d.contains(it->second)) return false;
    }
    return true;
  }
};

enum class TrialStatus { Complete, Failed };

struct Trial {
  int index = 0;
  Config config;
  std::optional<double> objective;  // set iff complete
  TrialStatus status = TrialStatus::Complete;
  std::uint64_t seed = 0;
  double seconds = 0;
  std::optional<double> best_so_far;
  std::string error;

  bool complete() const { return status == TrialStatus::Complete; }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["trial"] = index;
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    for (const auto& [k, v] : config) {
      if (v == std::floor(v) && std::abs(v) < 1e15) cfg[k] = std::int64_t(v);
      else cfg[k] = v;
    }
    j["config"] = cfg;
    j["objective"] = objective ? nlohmann::ordered_json(*objective) : nlohmann::ordered_json(nullptr);
    j["status"] = complete() ? "complete" : "failed";
    j["seed"] = seed;
    j["seconds"] = seconds;
    j["best_so_far"] = best_so_far ? nlohmann::ordered_json(*best_so_far) : nlohmann::ordered_json(nullptr);
    if (!error.empty()) j["error"] = error;
    return j;
  }

  static Trial from_json(const nlohmann::json& j) {
    Trial t;
    t.index = j.at("trial").get<int>();
    for (const auto& [k, v] : j.at("config").items()) t.config[k] = v.get<double>();
    if (!j.at("objective").is_null()) t.objective = j.at("objective").get<double>();
    const auto status = j.at("status").get<std::string>();
    if (status == "complete") t.status = TrialStatus::Complete;
    else if (status == "failed") t.status = TrialStatus::Failed;
    else throw FormatError("unknown trial status '" + status + "'", 0);
    t.seed = j.at("seed").get<std::uint64_t>();
    t.seconds = j.at("seconds").get<double>();
    if (!j.at("best_so_far").is_null()) t.best_so_far = j.at("best_so_far").get<double>();
    if (j.contains("error")) t.error = j.at("error").get<std::string>();
    if (t.complete() != t.objective.has_value()) throw FormatError("trial status and objective disagree", 0);
    return t;
  }

  bool operator==(const Trial&) const = default;
};

struct Study {
  SearchSpace space;
  int budget = 25;
  std::uint64_t seed = 0;
  std::vector<Trial> trials;

  std::size_t completed() const {
    return std::size_t(std::count_if(trials.begin(), trials.end(), [](const Trial& t) { return t.complete(); }));
  }
  const Trial* best() const {
    const Trial* b = nullptr;
    for (const auto& t : trials)
      if (t.complete() && (b == nullptr || *t.objective > *b->objective)) b = &t;
    return b;
  }

  std::string to_jsonl() const {
    std::string out;
    for (const auto& t : trials) out += t.to_json().dump() + "\n";
    return out;
  }
};

inline std::uint64_t trial_seed(std::uint64_t study_seed, int index) {
  return seed_hash(study_seed, std::uint64_t(index));
}

/// Parses a JSON-lines study file; blank lines are ignored.
inline std::vector<Trial> parse_study(std::string_view text) {
  std::vector<Trial> trials;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
      try {
        trials.push_back(Trial::from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad study line: ") + e.what(), pos);
      }
    }
    pos = end + 1;
  }
  return trials;
}

// ---------------------------------------------------------------------------
// Sampling

struct TpeOptions {
  double gamma = 0.25;
  int n_startup = 8;
  int n_candidates = 24;
  double prior_weight = 1.0;
};

inline double sample_uniform_dim(const Dimension& d, std::mt19937_64& rng) {
  if (d.kind == Dimension::Kind::Continuous) return std::uniform_real_distribution<double>(d.lo, d.hi)(rng);
  return d.choices[std::uniform_int_distribution<std::size_t>(0, d.choices.size() - 1)(rng)];
}

inline Config sample_uniform(const SearchSpace& space, std::mt19937_64& rng) {
  space.validate();
  Config c;
  for (const auto& d : space.dims) c[d.name] = sample_uniform_dim(d, rng);
  return c;
}

namespace detail {

/// Mixture of Gaussians truncated to [lo, hi], one kernel per observation
/// plus a broad prior kernel at the interval midpoint.
class Parzen {
 public:
  Parzen(std::vector<double> obs, double lo, double hi, double prior_weight) : lo_(lo), hi_(hi) {
    const double range = hi - lo;
    mus_ = std::move(obs);
    weights_.assign(mus_.size(), 1.0);
    mus_.push_back(0.5 * (lo + hi));
    weights_.push_back(prior_weight);

    std::vector<std::size_t> order(mus_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return mus_[a] < mus_[b]; });
    sigmas_.assign(mus_.size(), range);
    const double min_bw = range / std::min(100.0, 1.0 + double(mus_.size() - 1));
    for (std::size_t k = 0; k < order.size(); ++k) {
      const double left = k == 0 ? lo : mus_[order[k - 1]];
      const double right = k + 1 == order.size() ? hi : mus_[order[k + 1]];
      const double here = mus_[order[k]];
      sigmas_[order[k]] = std::clamp(std::max(here - left, right - here), min_bw, range);
    }
    sigmas_.back() = range;  // prior kernel
    double total = 0;
    for (double w : weights_) total += w;
    for (double& w : weights_) w /= total;
  }

  double sample(std::mt19937_64& rng) const {
    std::discrete_distribution<std::size_t> pick(weights_.begin(), weights_.end());
    const std::size_t k = pick(rng);
    std::normal_distribution<double> z(mus_[k], sigmas_[k]);
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const double x = z(rng);
      if (x >= lo_ && x <= hi_) return x;
    }
    return std::clamp(mus_[k], lo_, hi_);
  }

  double log_pdf(double x) const {
    double p = 0;
    for (std::size_t k = 0; k < mus_.size(); ++k) {
      const double s = sigmas_[k];
      const double mass = normal_cdf((hi_ - mus_[k]) / s) - normal_cdf((lo_ - mus_[k]) / s);
      const double u = (x - mus_[k]) / s;
      p += weights_[k] * std::exp(-0.5 * u * u) / (s * std::sqrt(2 * std::numbers::pi) * std::max(mass, 1e-300));
    }
    return std::log(std::max(p, 1e-300));
  }

 private:
  static double normal_cdf(double u) { return 0.5 * std::erfc(-u / std::sqrt(2.0)); }

  double lo_, hi_;
  std::vector<double> mus_, sigmas_, weights_;
};

/// Smoothed category frequencies: (count + prior / K) / (n + prior).
inline std::vector<double> categorical_probs(const Dimension& d, std::span<const Trial* const> trials,
                                             double prior_weight) {
  const double k = double(d.choices.size());
  std::vector<double> p(d.choices.size(), prior_weight / k);
  for (const Trial* t : trials) {
    auto it = std::find(d.choices.begin(), d.choices.end(), t->config.at(d.name));
    if (it != d.choices.end()) p[std::size_t(it - d.choices.begin())] += 1.0;
  }
  const double total = double(trials.size()) + prior_weight;
  for (double& v : p) v /= total;
  return p;
}

}  // namespace detail

/// Next configuration for `study`. Uniform until `n_startup` trials have
/// completed, then the candidate (drawn from the good density) with the
/// largest good/bad log-density ratio; ties broken at random.
inline Config sample_tpe(const Study& study, std::mt19937_64& rng, const TpeOptions& opt = {}) {
  study.space.validate();
  if (!(opt.gamma > 0 && opt.gamma < 1)) throw ConfigError("gamma must be in (0, 1)");
  if (opt.n_candidates < 1) throw ConfigError("n_candidates must be >= 1");

  std::vector<const Trial*> done;
  for (const auto& t : study.trials)
    if (t.complete()) done.push_back(&t);
  if (done.size() < std::size_t(std::max(opt.n_startup, 2))) return sample_uniform(study.space, rng);
  const bool all_equal = std::all_of(done.begin(), done.end(),
                                     [&](const Trial* t) { return *t->objective == *done.front()->objective; });
  if (all_equal) return sample_uniform(study.space, rng);

  std::stable_sort(done.begin(), done.end(), [](const Trial* a, const Trial* b) { return *a->objective > *b->objective; });
  const auto n_good = std::clamp<std::size_t>(std::size_t(std::ceil(opt.gamma * double(done.size()))), 1,
                                              done.size() - 1);
  std::span<const Trial* const> good(done.data(), n_good), bad(done.data() + n_good, done.size() - n_good);

  std::vector<Config> candidates(std::size_t(opt.n_candidates));
  std::vector<double> score(candidates.size(), 0.0);
  for (const auto& d : study.space.dims) {
    if (d.kind == Dimension::Kind::Continuous) {
      auto values = [&](std::span<const Trial* const> ts) {
        std::vector<double> v;
        for (const Trial* t : ts) v.push_back(t->config.at(d.name));
        return v;
      };
      const detail::Parzen l(values(good), d.lo, d.hi, opt.prior_weight);
      const detail::Parzen g(values(bad), d.lo, d.hi, opt.prior_weight);
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        const double x = l.sample(rng);
        candidates[c][d.name] = x;
        score[c] += l.log_pdf(x) - g.log_pdf(x);
      }
    } else {
      const auto pl = detail::categorical_probs(d, good, opt.prior_weight);
      const auto pg = detail::categorical_probs(d, bad, opt.prior_weight);
      std::discrete_distribution<std::size_t> pick(pl.begin(), pl.end());
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        const std::size_t k = pick(rng);
        candidates[c][d.name] = d.choices[k];
        score[c] += std::log(pl[k]) - std::log(pg[k]);
      }
    }
  }
  const double top = *std::max_element(score.begin(), score.end());
  std::vector<std::size_t> best;
  for (std::size_t c = 0; c < score.size(); ++c)
    if (score[c] == top) best.push_back(c);
  return candidates[best[std::uniform_int_distribution<std::size_t>(0, best.size() - 1)(rng)]];
}

// ---------------------------------------------------------------------------
// Study runner

/// objective(config, trial_seed) -> value to maximize.
using Objective = std::function<double(const Config&, std::uint64_t)>;

struct StudyOptions {
  TpeOptions tpe;
  std::optional<std::filesystem::path> file;  // JSON-lines persistence / resume
  std::function<void(const Trial&)> on_trial;
};

/// Runs trials until `budget` trials exist. With a study file, existing
/// trials are loaded first and never re-executed; the file is rewritten
/// after every trial.
inline Study run_study(const SearchSpace& space, int budget, const Objective& objective, std::uint64_t seed,
                       const StudyOptions& opt = {}) {
  space.validate();
  if (budget < 1) throw ConfigError("budget must be >= 1");
  Study study{space, budget, seed, {}};

  if (opt.file && std::filesystem::exists(*opt.file)) {
    study.trials = parse_study(read_file(*opt.file));
    for (std::size_t i = 0; i < study.trials.size(); ++i) {
      const auto& t = study.trials[i];
      if (t.index != int(i)) throw FormatError("study trials are not numbered consecutively", 0);
      if (t.seed != trial_seed(seed, t.index))
        throw ConfigError("study file was written with a different seed");
      if (!space.contains(t.config)) throw ConfigError("study file holds a config outside the search space");
    }
    if (study.trials.size() > std::size_t(budget)) throw ConfigError("study file already exceeds the budget");
  }

  std::optional<double> best;
  for (const auto& t : study.trials)
    if (t.complete()) best = best ? std::max(*best, *t.objective) : *t.objective;

  while (study.trials.size() < std::size_t(budget)) {
    Trial t;
    t.index = int(study.trials.size());
    t.seed = trial_seed(seed, t.index);
    std::mt19937_64 rng(seed_hash(seed, std::uint64_t(t.index), 0x7e5));
    t.config = sample_tpe(study, rng, opt.tpe);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const double v = objective(t.config, t.seed);
      if (!std::isfinite(v)) throw NumericError("objective is not finite");
      t.objective = v;
      t.status = TrialStatus::Complete;
      best = best ? std::max(*best, v) : v;
    } catch (const std::exception& e) {
      t.status = TrialStatus::Failed;
      t.objective.reset();
      t.error = e.what();
    }
    t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    t.best_so_far = best;
    study.trials.push_back(std::move(t));
    if (opt.file) write_file_atomic(*opt.file, study.to_jsonl());
    if (opt.on_trial) opt.on_trial(study.trials.back());
  }
  return study;
}

// ---------------------------------------------------------------------------
// Marginal summaries: best objective per parameter bin.

struct MarginalBin {
  std::string label;
  double lo = 0, hi = 0;  // value range covered by the bin
  int count = 0;
  std::optional<double> best;
};

inline std::map<std::string, std::vector<MarginalBin>> marginal_summary(const Study& study, int continuous_bins = 5) {
  std::map<std::string, std::vector<MarginalBin>> out;
  for (const auto& d : study.space.dims) {
    auto& bins = out[d.name];
    if (d.kind == Dimension::Kind::Continuous) {
      const double w = (d.hi - d.lo) / continuous_bins;
      for (int b = 0; b < continuous_bins; ++b) {
        const double lo = d.lo + b * w, hi = b + 1 == continuous_bins ? d.hi : d.lo + (b + 1) * w;
        std::ostringstream label;
        label << "[" << lo << ", " << hi << (b + 1 == continuous_bins ? "]" : ")");
        bins.push_back({label.str(), lo, hi, 0, std::nullopt});
      }
    } else {
      for (double c : d.choices) {
        std::ostringstream label;
        label << c;
        bins.push_back({label.str(), c, c, 0, std::nullopt});
      }
    }
    for (const auto& t : study.trials) {
      if (!t.complete()) continue;
      const double v = t.config.at(d.name);
      std::size_t b = 0;
      if (d.kind == Dimension::Kind::Continuous)
        b = std::min(std::size_t((v - d.lo) / (d.hi - d.lo) * continuous_bins), std::size_t(continuous_bins - 1));
      else
        b = std::size_t(std::find(d.choices.begin(), d.choices.end(), v) - d.choices.begin());
      auto& bin = bins[b];
      ++bin.count;
      bin.best = bin.best ? std::max(*bin.best, *t.objective) : *t.objective;
    }
  }
  return out;
}

inline nlohmann::ordered_json study_report(const Study& study) {
  nlohmann::ordered_json j;
  j["budget"] = study.budget;
  j["seed"] = study.seed;
  j["trials"] = study.trials.size();
  j["completed"] = study.completed();
  if (const Trial* b = study.best()) j["best"] = b->to_json();
  else j["best"] = nullptr;
  nlohmann::ordered_json marg = nlohmann::ordered_json::object();
  for (const auto& [name, bins] : marginal_summary(study)) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& b : bins)
      arr.push_back({{"bin", b.label},
                     {"count", b.count},
                     {"best", b.best ? nlohmann::ordered_json(*b.best) : nlohmann::ordered_json(nullptr)}});
    marg[name] = arr;
  }
  j["marginals"] = marg;
  return j;
}

}  // namespace lsm
