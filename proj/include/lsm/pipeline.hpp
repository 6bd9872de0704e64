#pragma once

// End-to-end model: frozen liquid + trained head + the encoding it was
// trained with. Prediction, evaluation and on-disk model directories.

#include "lsm/hpo.hpp"
#include "lsm/metrics.hpp"
#include "lsm/train.hpp"

namespace lsm {

struct Model {
  Reservoir reservoir;
  ReadoutHead head;
  Encoding encoding = Encoding::Direct;
  int exposure = 1;
};

/// Reshapes [steps x channels] logits into a Train.
inline Train<double> logits_train(const Mat& logits, int exposure) {
  if (exposure < 1 || logits.rows() % exposure != 0) throw DataError("logit rows are not a multiple of the exposure");
  Train<double> out(int(logits.rows()) / exposure, exposure, int(logits.cols()));
  std::copy(logits.data(), logits.data() + logits.size(), out.data.begin());
  return out;
}

/// Per-cell scores. Latency-coded models threshold logits into output spikes
/// and decode the first-spike time; the others decode the mean logit.
inline ScoreMap predict_scores(const ReadoutHead& head, const SpikeRaster& raster, Encoding enc, int exposure) {
  auto logits = logits_train(head_logits(head, raster), exposure);
  if (enc == Encoding::Latency) return decode_latency(threshold_readout(logits));
  return decode_rate(logits);
}

struct EvalOptions {
  int threads = 1;
  double threshold = 0.5;
  std::uint64_t noise_seed = 0;
  std::optional<std::filesystem::path> cache_dir;
};

struct Evaluation {
  EvalResult result;
  std::vector<ScoreMap> scores;  // one per patch, in input order
  MetricAccumulator pooled;
};

inline Evaluation evaluate(const Model& m, std::span<const Patch> patches, const EvalOptions& opt = {}) {
  if (patches.empty()) throw ConfigError("evaluation dataset is empty");
  auto rasters =
      liquid_responses(m.reservoir, patches, m.encoding, m.exposure, {opt.threads, opt.noise_seed, opt.cache_dir});
  Evaluation ev;
  ev.scores.resize(patches.size());
  parallel_for(patches.size(), opt.threads,
               [&](std::size_t i) { ev.scores[i] = predict_scores(m.head, rasters[i], m.encoding, m.exposure); });
  for (std::size_t i = 0; i < patches.size(); ++i) ev.pooled.add(ev.scores[i], patches[i].mask);
  ev.result = ev.pooled.result(opt.threshold);
  return ev;
}

// ---------------------------------------------------------------------------
// Model directory: head.bin, reservoir.bin, model.json.

inline nlohmann::ordered_json model_meta(const Model& m) {
  nlohmann::ordered_json j;
  j["encoding"] = std::string(to_string(m.encoding));
  j["exposure"] = m.exposure;
  j["readout"] = std::string(to_string(m.head.kind));
  j["liquid_size"] = m.reservoir.n;
  j["reservoir_hash"] = hex64(reservoir_hash(m.reservoir));
  j["head_checksum"] = hex64(head_checksum(m.head));
  return j;
}

inline void save_model(const Model& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_head(m.head, dir / "head.bin");
  save_reservoir(m.reservoir, dir / "reservoir.bin");
  write_file_atomic(dir / "model.json", model_meta(m).dump(2) + "\n");
}

inline Model load_model(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("model directory not found: " + dir.string());
  Model m;
  m.head = load_head(dir / "head.bin");
  m.reservoir = load_reservoir(dir / "reservoir.bin");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(dir / "model.json"));
    m.encoding = parse_encoding(meta.at("encoding").get<std::string>());
    m.exposure = meta.at("exposure").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model.json: ") + e.what(), 0);
  }
  if (m.exposure < 1) throw FormatError("bad model.json: exposure < 1", 0);
  if (m.head.in_dim != m.reservoir.n) throw FormatError("head input width differs from reservoir size", 0);
  return m;
}

// ---------------------------------------------------------------------------
// Search objective: validation F1 of a model trained on a fixed subset.

struct HpoObjectiveOptions {
  Encoding encoding = Encoding::Direct;
  ReadoutKind readout = ReadoutKind::Linear;
  double subset_fraction = 0.1;   // of the full training set, fixed per study
  double holdout_fraction = 0.2;  // of the subset, scored by the objective
  std::uint64_t subset_seed = 0;
  TrainConfig train;              // train.seed is replaced per trial
  ReservoirOptions reservoir;
  AttentionConfig attention;
  int threads = 1;
  std::optional<std::filesystem::path> cache_dir;
};

/// Expects configs with input_sparsity, exposure and liquid_size. The
/// reservoir, head and training order are all drawn from the trial seed.
inline Objective make_hpo_objective(std::span<const Patch> data, const HpoObjectiveOptions& opt) {
  if (data.size() < 2) throw ConfigError("search needs at least two training patches");
  if (!(opt.subset_fraction > 0 && opt.subset_fraction <= 1)) throw ConfigError("subset fraction must be in (0, 1]");
  if (!(opt.holdout_fraction > 0 && opt.holdout_fraction < 1)) throw ConfigError("holdout fraction must be in (0, 1)");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed_hash(opt.subset_seed, 0x5b5e7));
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_sub = std::clamp<std::size_t>(std::size_t(std::ceil(opt.subset_fraction * double(data.size()))), 2,
                                             data.size());
  idx.resize(n_sub);
  std::sort(idx.begin(), idx.end());
  auto [fit_idx, hold_idx] = split_indices(n_sub, opt.holdout_fraction, opt.subset_seed);
  auto fit_set = std::make_shared<std::vector<Patch>>();
  auto hold_set = std::make_shared<std::vector<Patch>>();
  for (auto i : fit_idx) fit_set->push_back(data[idx[i]]);
  for (auto i : hold_idx) hold_set->push_back(data[idx[i]]);
  const int channels = data.front().data.cols;

  return [=](const Config& cfg, std::uint64_t seed) {
    const int n = int(cfg.at("liquid_size"));
    const int e = int(cfg.at("exposure"));
    Model m;
    m.reservoir = build_reservoir(n, channels, cfg.at("input_sparsity"), seed_hash(seed, 1), opt.reservoir);
    m.encoding = opt.encoding;
    m.exposure = e;
    TrainConfig tc = opt.train;
    tc.seed = seed_hash(seed, 3);
    FitOptions fo;
    fo.threads = opt.threads;
    fo.cache_dir = opt.cache_dir;
    m.head = fit(m.reservoir, make_head(opt.readout, n, seed_hash(seed, 2), opt.attention), *fit_set, opt.encoding,
                 e, tc, fo)
                 .head;
    EvalOptions eo;
    eo.threads = opt.threads;
    eo.cache_dir = opt.cache_dir;
    return evaluate(m, *hold_set, eo).result.f1;
  };
}

}  // namespace lsm
