// lsm: command-line driver for the liquid-state-machine RFI pipeline.
//
//   lsm generate  --count N --size S --contamination C --seed K --out data.bin
//   lsm train     --data data.bin --encoding direct --exposure 4 --readout linear
//                 --liquid-size 512 --input-sparsity 0.25 --epochs 30 --seed 1 --out model/
//   lsm eval      --model model/ --data test.bin --out report.json
//   lsm hpo       --data data.bin --encoding direct --readout linear --budget 25 --seed 1 --study study.json
//   lsm render    --model model/ --data test.bin --out figure
//   lsm reproduce --manifest model/manifest.json
//
// Exit codes: 0 success, 2 configuration error, 3 data/format error,
// 4 numeric divergence.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "lsm/lsm.hpp"
#include "lsm/render.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// key=value lines on stderr; values with spaces are quoted.
std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(" \t\"") == std::string::npos) return s;
  std::ostringstream os;
  os << std::quoted(s);
  return os.str();
}

void log_line(std::string_view event, const std::vector<std::pair<std::string, std::string>>& kv) {
  std::string line = "event=" + std::string(event);
  for (const auto& [k, v] : kv) line += " " + k + "=" + quote_if_needed(v);
  std::cerr << line << '\n';
}

template <class T>
std::string str(const T& v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

// --------------------------------------------------------------------------
// Options per subcommand. Each knows how to turn itself into manifest flags
// and back into a command line.

struct GenerateOpts {
  int count = 20;
  int size = 512;
  double contamination = 0.03;
  int patch = lsm::kDefaultPatchSize;
  std::uint32_t source_offset = 0;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out;
};

struct ReservoirFlags {
  int liquid_size = 512;
  double input_sparsity = 0.25;
  std::optional<double> input_gain;
  double spectral_radius = lsm::ReservoirOptions{}.spectral_radius;
  double noise_sigma = 0.0;

  lsm::ReservoirOptions options() const {
    lsm::ReservoirOptions o;
    o.input_gain = input_gain;
    o.spectral_radius = spectral_radius;
    o.noise_sigma = noise_sigma;
    return o;
  }
  void to(ordered_json& j) const {
    j["liquid-size"] = liquid_size;
    j["input-sparsity"] = input_sparsity;
    if (input_gain) j["input-gain"] = *input_gain;
    j["spectral-radius"] = spectral_radius;
    j["noise-sigma"] = noise_sigma;
  }
};

struct TrainOpts {
  std::string data;
  std::string encoding = "direct";
  int exposure = 4;
  std::string readout = "linear";
  ReservoirFlags res;
  int epochs = 100;
  int batch = 32;
  double lr = 1e-4;
  double val_fraction = 0.1;
  double pos_weight = 1.0;
  std::uint64_t seed = 0;
  int threads = 1;
  bool no_timing = false;
  bool no_cache = false;
  std::string out;
};

struct EvalOpts {
  std::string model;
  std::string data;
  std::string out;
  double threshold = 0.5;
  std::string curves;
  int threads = 1;
};

struct HpoOpts {
  std::string data;
  std::string encoding = "direct";
  std::string readout = "linear";
  int budget = 25;
  int epochs = 50;
  double subset = 0.1;
  std::optional<double> input_gain;
  double spectral_radius = lsm::ReservoirOptions{}.spectral_radius;
  double pos_weight = 1.0;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string study;
};

struct RenderOpts {
  std::string model;
  std::string data;
  std::uint32_t source = 0;
  double threshold = 0.5;
  int scale = 1;
  int threads = 1;
  std::string out;
};

lsm::Encoding encoding_of(const std::string& s) {
  return lsm::parse_encoding(s);
}

void check_threads(int t) {
  if (t < 1) throw lsm::ConfigError("--threads must be >= 1");
}

void check_exposure(int e) {
  if (std::find(lsm::kExposureMenu.begin(), lsm::kExposureMenu.end(), e) == lsm::kExposureMenu.end())
    throw lsm::ConfigError("--exposure must be one of 1, 2, 4, 8, 16, 32");
}

void check_liquid_size(int n) {
  if (n < 1) throw lsm::ConfigError("--liquid-size must be >= 1");
}

fs::path manifest_path_for_file(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

// --------------------------------------------------------------------------
// Commands

int run_generate(const GenerateOpts& o) {
  check_threads(o.threads);
  if (o.out.empty()) throw lsm::ConfigError("--out is required");
  lsm::SynthConfig cfg;
  cfg.n_spectrograms = o.count;
  cfg.size = o.size;
  cfg.target_contamination = o.contamination;
  cfg.seed = o.seed;
  cfg.validate();
  if (o.patch < 1 || o.patch > 65535) throw lsm::ConfigError("--patch-size must be in [1, 65535]");
  const auto set = lsm::generate_synthetic(cfg, o.threads);
  const auto patches = lsm::prepare_patches(set, o.patch, o.source_offset);
  lsm::save_dataset(patches, o.out);

  double flagged = 0, cells = 0;
  for (const auto& s : set) {
    flagged += s.mask.density() * double(s.mask.flags.size());
    cells += double(s.mask.flags.size());
  }
  log_line("generate", {{"spectrograms", str(o.count)},
                        {"patches", str(patches.size())},
                        {"contamination", str(cells > 0 ? flagged / cells : 0.0)},
                        {"out", o.out}});

  lsm::RunManifest m;
  m.command = "generate";
  m.flags = {{"count", o.count},        {"size", o.size},     {"contamination", o.contamination},
             {"patch-size", o.patch},   {"source-offset", o.source_offset},
             {"seed", o.seed},          {"threads", o.threads}, {"out", o.out}};
  m.outputs.push_back(lsm::digest_file(o.out));
  m.save(manifest_path_for_file(o.out));
  return 0;
}

int run_train(const TrainOpts& o) {
  check_threads(o.threads);
  check_exposure(o.exposure);
  check_liquid_size(o.res.liquid_size);
  if (o.out.empty()) throw lsm::ConfigError("--out is required");
  if (!(o.res.input_sparsity >= 0 && o.res.input_sparsity <= 1))
    throw lsm::ConfigError("--input-sparsity must be in [0, 1]");
  const auto enc = encoding_of(o.encoding);
  const auto kind = lsm::parse_readout(o.readout);
  lsm::TrainConfig tc;
  tc.lr0 = o.lr;
  tc.epochs = o.epochs;
  tc.batch = o.batch;
  tc.val_fraction = o.val_fraction;
  tc.pos_weight = o.pos_weight;
  tc.seed = lsm::seed_hash(o.seed, 3);
  tc.validate();

  const auto data = lsm::load_dataset(o.data);
  if (data.empty()) throw lsm::ConfigError("training dataset is empty");
  const int channels = data.front().data.cols;
  lsm::Model model;
  model.reservoir =
      lsm::build_reservoir(o.res.liquid_size, channels, o.res.input_sparsity, lsm::seed_hash(o.seed, 1), o.res.options());
  model.encoding = enc;
  model.exposure = o.exposure;
  const auto res_hash = lsm::reservoir_hash(model.reservoir);
  log_line("reservoir", {{"n", str(model.reservoir.n)}, {"hash", lsm::hex64(res_hash)}});

  fs::create_directories(o.out);
  lsm::FitOptions fo;
  fo.threads = o.threads;
  fo.cache_liquid = true;
  if (!o.no_cache) fo.cache_dir = lsm::default_cache_dir();
  fo.checkpoint = fs::path(o.out) / "checkpoint.bin";
  fo.on_epoch = [](const lsm::EpochRecord& e) {
    log_line("epoch", {{"epoch", str(e.epoch)},
                       {"train_loss", str(e.train_loss)},
                       {"val_loss", str(e.val_loss)},
                       {"lr", str(e.lr)},
                       {"seconds", str(e.seconds)}});
  };
  auto head = lsm::make_head(kind, model.reservoir.n, lsm::seed_hash(o.seed, 2));
  auto result = lsm::fit(model.reservoir, std::move(head), data, enc, o.exposure, tc, fo);
  if (lsm::reservoir_hash(model.reservoir) != res_hash) throw lsm::NumericError("reservoir changed during training");
  model.head = std::move(result.head);
  fs::remove(*fo.checkpoint);

  const fs::path dir(o.out);
  lsm::save_model(model, dir);
  const bool timing = !o.no_timing;
  lsm::write_file_atomic(dir / "train_report.csv", result.report.to_csv(timing));
  lsm::write_file_atomic(dir / "train_report.json", result.report.to_json(timing).dump(2) + "\n");
  log_line("train", {{"epochs", str(o.epochs)},
                     {"initial_train_loss", str(result.report.initial_train_loss())},
                     {"final_train_loss", str(result.report.final_train_loss())},
                     {"head_checksum", lsm::hex64(result.report.head_checksum)},
                     {"out", o.out}});

  lsm::RunManifest m;
  m.command = "train";
  m.flags = {{"data", o.data},     {"encoding", o.encoding}, {"exposure", o.exposure},
             {"readout", o.readout}};
  o.res.to(m.flags);
  m.flags["epochs"] = o.epochs;
  m.flags["batch"] = o.batch;
  m.flags["lr"] = o.lr;
  m.flags["val-fraction"] = o.val_fraction;
  m.flags["pos-weight"] = o.pos_weight;
  m.flags["seed"] = o.seed;
  m.flags["threads"] = o.threads;
  m.flags["no-timing"] = o.no_timing;
  m.flags["no-cache"] = o.no_cache;
  m.flags["out"] = o.out;
  m.inputs.push_back(lsm::digest_file(o.data));
  for (const char* f : {"head.bin", "reservoir.bin", "model.json", "train_report.csv", "train_report.json"})
    m.outputs.push_back(lsm::digest_file(dir / f));
  m.save(dir / "manifest.json");
  return 0;
}

void write_curves(const std::string& prefix, const lsm::MetricAccumulator& acc) {
  const auto c = lsm::curves(acc.scores(), acc.truth());
  std::ostringstream roc, pr;
  roc.precision(17);
  pr.precision(17);
  roc << "threshold,fpr,tpr\n";
  pr << "threshold,recall,precision\n";
  for (const auto& p : c.roc) roc << p[0] << ',' << p[1] << ',' << p[2] << '\n';
  for (const auto& p : c.pr) pr << p[0] << ',' << p[1] << ',' << p[2] << '\n';
  lsm::write_file_atomic(prefix + "_roc.csv", roc.str());
  lsm::write_file_atomic(prefix + "_pr.csv", pr.str());
}

int run_eval(const EvalOpts& o) {
  check_threads(o.threads);
  if (o.out.empty()) throw lsm::ConfigError("--out is required");
  if (!(o.threshold > 0 && o.threshold < 1)) throw lsm::ConfigError("--threshold must be in (0, 1)");
  const auto model = lsm::load_model(o.model);
  const auto data = lsm::load_dataset(o.data);
  lsm::EvalOptions eo;
  eo.threads = o.threads;
  eo.threshold = o.threshold;
  eo.cache_dir = lsm::default_cache_dir();
  const auto ev = lsm::evaluate(model, data, eo);
  auto j = ev.result.to_json();
  lsm::write_file_atomic(o.out, j.dump(2) + "\n");
  if (!o.curves.empty()) write_curves(o.curves, ev.pooled);
  log_line("eval", {{"accuracy", str(ev.result.accuracy)},
                    {"f1", str(ev.result.f1)},
                    {"auroc", ev.result.auroc ? str(*ev.result.auroc) : "absent"},
                    {"auprc", ev.result.auprc ? str(*ev.result.auprc) : "absent"},
                    {"out", o.out}});

  lsm::RunManifest m;
  m.command = "eval";
  m.flags = {{"model", o.model}, {"data", o.data},       {"out", o.out},
             {"threshold", o.threshold}, {"curves", o.curves}, {"threads", o.threads}};
  for (const char* f : {"head.bin", "reservoir.bin", "model.json"}) m.inputs.push_back(lsm::digest_file(fs::path(o.model) / f));
  m.inputs.push_back(lsm::digest_file(o.data));
  m.outputs.push_back(lsm::digest_file(o.out));
  if (!o.curves.empty()) {
    m.outputs.push_back(lsm::digest_file(o.curves + "_roc.csv"));
    m.outputs.push_back(lsm::digest_file(o.curves + "_pr.csv"));
  }
  m.save(manifest_path_for_file(o.out));
  return 0;
}

int run_hpo(const HpoOpts& o) {
  check_threads(o.threads);
  if (o.study.empty()) throw lsm::ConfigError("--study is required");
  const auto data = lsm::load_dataset(o.data);
  lsm::HpoObjectiveOptions ho;
  ho.encoding = encoding_of(o.encoding);
  ho.readout = lsm::parse_readout(o.readout);
  ho.subset_fraction = o.subset;
  ho.subset_seed = o.seed;
  ho.train.epochs = o.epochs;
  ho.train.pos_weight = o.pos_weight;
  ho.train.validate();
  ho.reservoir.input_gain = o.input_gain;
  ho.reservoir.spectral_radius = o.spectral_radius;
  ho.threads = o.threads;
  ho.cache_dir = lsm::default_cache_dir();
  const auto objective = lsm::make_hpo_objective(data, ho);

  lsm::StudyOptions so;
  so.file = o.study;
  so.on_trial = [](const lsm::Trial& t) {
    log_line("trial", {{"trial", str(t.index)},
                       {"status", t.complete() ? "complete" : "failed"},
                       {"objective", t.objective ? str(*t.objective) : "none"},
                       {"input_sparsity", str(t.config.at("input_sparsity"))},
                       {"exposure", str(t.config.at("exposure"))},
                       {"liquid_size", str(t.config.at("liquid_size"))},
                       {"seconds", str(t.seconds)}});
  };
  const auto study = lsm::run_study(lsm::SearchSpace::liquid_menus(), o.budget, objective, o.seed, so);
  const fs::path report(o.study + ".report.json");
  lsm::write_file_atomic(report, lsm::study_report(study).dump(2) + "\n");
  const auto* best = study.best();
  log_line("hpo", {{"trials", str(study.trials.size())},
                   {"completed", str(study.completed())},
                   {"best", best ? str(*best->objective) : "none"},
                   {"study", o.study}});

  lsm::RunManifest m;
  m.command = "hpo";
  m.flags = {{"data", o.data},         {"encoding", o.encoding}, {"readout", o.readout},
             {"budget", o.budget},     {"epochs", o.epochs},     {"subset", o.subset},
             {"spectral-radius", o.spectral_radius}, {"pos-weight", o.pos_weight},
             {"seed", o.seed},         {"threads", o.threads},   {"study", o.study}};
  if (o.input_gain) m.flags["input-gain"] = *o.input_gain;
  m.inputs.push_back(lsm::digest_file(o.data));
  m.outputs.push_back(lsm::digest_file(report));
  m.save(manifest_path_for_file(o.study));
  return 0;
}

int run_render(const RenderOpts& o) {
  check_threads(o.threads);
  if (o.out.empty()) throw lsm::ConfigError("--out is required");
  if (!(o.threshold > 0 && o.threshold < 1)) throw lsm::ConfigError("--threshold must be in (0, 1)");
  const auto model = lsm::load_model(o.model);
  const auto all = lsm::load_dataset(o.data);
  std::vector<lsm::Patch> patches;
  for (const auto& p : all)
    if (p.origin.source_id == o.source) patches.push_back(p);
  if (patches.empty()) throw lsm::DataError("no patches with source id " + std::to_string(o.source));
  int rows = 0, cols = 0;
  for (const auto& p : patches) {
    rows = std::max(rows, p.origin.time_offset + p.size());
    cols = std::max(cols, p.origin.freq_offset + p.size());
  }
  lsm::EvalOptions eo;
  eo.threads = o.threads;
  eo.threshold = o.threshold;
  eo.cache_dir = lsm::default_cache_dir();
  const auto ev = lsm::evaluate(model, patches, eo);
  auto scored = patches;
  for (std::size_t i = 0; i < scored.size(); ++i)
    std::transform(ev.scores[i].data.begin(), ev.scores[i].data.end(), scored[i].data.data.begin(),
                   [](double s) { return float(s); });
  const auto [input, mask] = lsm::reassemble(patches, rows, cols);
  const auto score_grid = lsm::reassemble(scored, rows, cols).first;
  lsm::Grid<double> in(rows, cols), sc(rows, cols);
  for (std::size_t i = 0; i < in.size(); ++i) {
    in.data[i] = input.data[i];
    sc.data[i] = score_grid.data[i];
  }
  const auto img = lsm::render_figure(in, sc, mask, {o.threshold, o.scale});
  const std::string png = o.out + ".png", svg = o.out + ".svg";
  lsm::write_png(img, png);
  lsm::write_svg(img, svg);
  log_line("render", {{"source", str(o.source)}, {"width", str(img.width)}, {"height", str(img.height)}, {"out", png}});

  lsm::RunManifest m;
  m.command = "render";
  m.flags = {{"model", o.model}, {"data", o.data},   {"source", o.source}, {"threshold", o.threshold},
             {"scale", o.scale}, {"threads", o.threads}, {"out", o.out}};
  for (const char* f : {"head.bin", "reservoir.bin", "model.json"}) m.inputs.push_back(lsm::digest_file(fs::path(o.model) / f));
  m.inputs.push_back(lsm::digest_file(o.data));
  m.outputs.push_back(lsm::digest_file(png));
  m.outputs.push_back(lsm::digest_file(svg));
  m.save(manifest_path_for_file(o.out));
  return 0;
}

// --------------------------------------------------------------------------
// Parser

struct Parsed {
  std::string command;
  GenerateOpts gen;
  TrainOpts train;
  EvalOpts eval;
  HpoOpts hpo;
  RenderOpts render;
  std::string manifest;
};

void add_threads(CLI::App* app, int& threads) {
  app->add_option("--threads", threads, "Worker threads (1 keeps runs bit-reproducible)")->capture_default_str();
}

std::unique_ptr<CLI::App> make_app(Parsed& p) {
  auto app = std::make_unique<CLI::App>("Liquid state machine RFI detection", "lsm");
  app->require_subcommand(1);
  app->set_version_flag("--version", std::string(lsm::kToolVersion));
  const std::vector<std::string> encodings{"latency", "rate", "direct"};
  const std::vector<std::string> readouts{"linear", "relu", "transformer"};

  auto* gen = app->add_subcommand("generate", "Write a synthetic labelled patch dataset");
  gen->add_option("--count", p.gen.count, "Number of spectrograms")->capture_default_str();
  gen->add_option("--size", p.gen.size, "Spectrogram side length")->capture_default_str();
  gen->add_option("--contamination", p.gen.contamination, "Target RFI pixel fraction")->capture_default_str();
  gen->add_option("--patch-size", p.gen.patch, "Patch side length")->capture_default_str();
  gen->add_option("--source-offset", p.gen.source_offset, "First source id")->capture_default_str();
  gen->add_option("--seed", p.gen.seed, "Random seed")->capture_default_str();
  gen->add_option("--out", p.gen.out, "Output dataset file")->required();
  add_threads(gen, p.gen.threads);
  gen->callback([&] { p.command = "generate"; });

  auto* tr = app->add_subcommand("train", "Train a readout head on a frozen liquid");
  tr->add_option("--data", p.train.data, "Training dataset file")->required();
  tr->add_option("--encoding", p.train.encoding, "Spike encoding")->check(CLI::IsMember(encodings))->capture_default_str();
  tr->add_option("--exposure", p.train.exposure, "Steps per time column {1,2,4,8,16,32}")->capture_default_str();
  tr->add_option("--readout", p.train.readout, "Readout head")->check(CLI::IsMember(readouts))->capture_default_str();
  tr->add_option("--liquid-size", p.train.res.liquid_size, "Reservoir neurons {512,...,8192}")->capture_default_str();
  tr->add_option("--input-sparsity", p.train.res.input_sparsity, "Input connection probability")->capture_default_str();
  tr->add_option("--input-gain", p.train.res.input_gain, "Input weight scale (default 10/sqrt(sparsity*channels))");
  tr->add_option("--spectral-radius", p.train.res.spectral_radius, "Spectral radius of |w_rec|")->capture_default_str();
  tr->add_option("--noise-sigma", p.train.res.noise_sigma, "Membrane noise std-dev")->capture_default_str();
  tr->add_option("--epochs", p.train.epochs, "Training epochs")->capture_default_str();
  tr->add_option("--batch", p.train.batch, "Patches per gradient step")->capture_default_str();
  tr->add_option("--lr", p.train.lr, "Initial learning rate")->capture_default_str();
  tr->add_option("--val-fraction", p.train.val_fraction, "Validation share of the training patches")->capture_default_str();
  tr->add_option("--pos-weight", p.train.pos_weight, "BCE weight of RFI pixels")->capture_default_str();
  tr->add_option("--seed", p.train.seed, "Random seed")->capture_default_str();
  tr->add_flag("--no-timing", p.train.no_timing, "Write zero wall-clock seconds in reports");
  tr->add_flag("--no-cache", p.train.no_cache, "Do not use the on-disk liquid cache");
  tr->add_option("--out", p.train.out, "Output model directory")->required();
  add_threads(tr, p.train.threads);
  tr->callback([&] { p.command = "train"; });

  auto* ev = app->add_subcommand("eval", "Score a model on a dataset");
  ev->add_option("--model", p.eval.model, "Model directory")->required();
  ev->add_option("--data", p.eval.data, "Dataset file")->required();
  ev->add_option("--out", p.eval.out, "Report JSON path")->required();
  ev->add_option("--threshold", p.eval.threshold, "Flag threshold on scores")->capture_default_str();
  ev->add_option("--curves", p.eval.curves, "Write <prefix>_roc.csv and <prefix>_pr.csv");
  add_threads(ev, p.eval.threads);
  ev->callback([&] { p.command = "eval"; });

  auto* hp = app->add_subcommand("hpo", "Tree-structured Parzen search over sparsity, exposure and liquid size");
  hp->add_option("--data", p.hpo.data, "Training dataset file")->required();
  hp->add_option("--encoding", p.hpo.encoding, "Spike encoding")->check(CLI::IsMember(encodings))->capture_default_str();
  hp->add_option("--readout", p.hpo.readout, "Readout head")->check(CLI::IsMember(readouts))->capture_default_str();
  hp->add_option("--budget", p.hpo.budget, "Number of trials")->capture_default_str();
  hp->add_option("--epochs", p.hpo.epochs, "Epochs per trial")->capture_default_str();
  hp->add_option("--subset", p.hpo.subset, "Share of the training set used per trial")->capture_default_str();
  hp->add_option("--input-gain", p.hpo.input_gain, "Input weight scale (default 10/sqrt(sparsity*channels))");
  hp->add_option("--spectral-radius", p.hpo.spectral_radius, "Spectral radius of |w_rec|")->capture_default_str();
  hp->add_option("--pos-weight", p.hpo.pos_weight, "BCE weight of RFI pixels")->capture_default_str();
  hp->add_option("--seed", p.hpo.seed, "Random seed")->capture_default_str();
  hp->add_option("--study", p.hpo.study, "Study file (JSON lines); resumed if present")->required();
  add_threads(hp, p.hpo.threads);
  hp->callback([&] { p.command = "hpo"; });

  auto* rd = app->add_subcommand("render", "Draw input / prediction / ground truth panels");
  rd->add_option("--model", p.render.model, "Model directory")->required();
  rd->add_option("--data", p.render.data, "Dataset file")->required();
  rd->add_option("--source", p.render.source, "Source spectrogram id to draw")->capture_default_str();
  rd->add_option("--threshold", p.render.threshold, "Flag threshold on scores")->capture_default_str();
  rd->add_option("--scale", p.render.scale, "Pixels per cell")->capture_default_str();
  rd->add_option("--out", p.render.out, "Output prefix (.png and .svg)")->required();
  add_threads(rd, p.render.threads);
  rd->callback([&] { p.command = "render"; });

  auto* rp = app->add_subcommand("reproduce", "Re-run the command recorded in a manifest and compare outputs");
  rp->add_option("--manifest", p.manifest, "Manifest JSON path")->required();
  rp->callback([&] { p.command = "reproduce"; });
  return app;
}

int dispatch(const Parsed& p);

/// Command line recorded in a manifest.
std::vector<std::string> argv_from_manifest(const lsm::RunManifest& m) {
  std::vector<std::string> args{"lsm", m.command};
  for (const auto& [key, value] : m.flags.items()) {
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back("--" + key);
    } else if (value.is_string()) {
      if (value.get<std::string>().empty()) continue;
      args.push_back("--" + key);
      args.push_back(value.get<std::string>());
    } else {
      args.push_back("--" + key);
      args.push_back(value.dump());
    }
  }
  return args;
}

int parse_and_run(std::vector<std::string> args);

int run_reproduce(const std::string& manifest_path) {
  const auto m = lsm::RunManifest::load(manifest_path);
  if (m.command == "reproduce") throw lsm::ConfigError("a manifest cannot record a reproduce run");
  for (const auto& in : m.inputs) {
    const auto now = lsm::digest_file(in.path);
    if (now.fnv1a != in.fnv1a) throw lsm::DataError("input " + in.path + " changed since the recorded run");
  }
  if (m.flags.contains("threads") && m.flags["threads"].get<int>() != 1)
    log_line("warning", {{"message", "recorded run used several threads; outputs may differ"}});
  const int rc = parse_and_run(argv_from_manifest(m));
  if (rc != 0) return rc;
  int mismatched = 0;
  for (const auto& out : m.outputs) {
    const auto now = lsm::digest_file(out.path);
    const bool same = now.fnv1a == out.fnv1a;
    if (!same) ++mismatched;
    log_line("reproduce", {{"output", out.path}, {"recorded", out.fnv1a}, {"now", now.fnv1a}, {"match", same ? "true" : "false"}});
  }
  log_line("reproduce", {{"outputs", str(m.outputs.size())}, {"mismatched", str(mismatched)}});
  if (mismatched != 0) throw lsm::DataError(std::to_string(mismatched) + " output(s) differ from the manifest");
  return 0;
}

int dispatch(const Parsed& p) {
  if (p.command == "generate") return run_generate(p.gen);
  if (p.command == "train") return run_train(p.train);
  if (p.command == "eval") return run_eval(p.eval);
  if (p.command == "hpo") return run_hpo(p.hpo);
  if (p.command == "render") return run_render(p.render);
  if (p.command == "reproduce") return run_reproduce(p.manifest);
  throw lsm::ConfigError("no subcommand given");
}

int parse_and_run(std::vector<std::string> args) {
  Parsed p;
  auto app = make_app(p);
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);  // CLI11 wants reversed args without argv[0]
    app->parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app->exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app->exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app->exit(e);
  } catch (const CLI::ParseError& e) {
    app->exit(e);
    return 2;
  }
  return dispatch(p);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return parse_and_run(std::vector<std::string>(argv, argv + argc));
  } catch (const lsm::Error& e) {
    log_line("error", {{"code", str(e.exit_code())}, {"message", e.what()}});
    return e.exit_code();
  } catch (const std::exception& e) {
    log_line("error", {{"code", "1"}, {"message", e.what()}});
    return 1;
  }
}
