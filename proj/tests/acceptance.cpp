// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "lsm/lsm.hpp"

using namespace lsm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::ostringstream line;
  line.precision(4);
  line << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << " (" << secs << " s)";
  std::cout << line.str() << std::endl;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

int hardware_threads() { return int(std::max(1u, std::thread::hardware_concurrency())); }

fs::path work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "lsm-acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// Reservoir settings used wherever a working liquid is needed. The
// default gain / spectral radius drive the 512-neuron liquid into
// saturation on this data, so a weaker drive is used throughout.
ReservoirOptions working_liquid() {
  ReservoirOptions o;
  o.input_gain = 0.5;
  o.spectral_radius = 0.05;
  return o;
}

std::vector<Patch> synthetic(int n, int size, std::uint64_t seed, std::uint32_t first_source = 0) {
  SynthConfig sc;
  sc.n_spectrograms = n;
  sc.size = size;
  sc.seed = seed;
  return prepare_patches(generate_synthetic(sc, hardware_threads()), kDefaultPatchSize, first_source);
}

// ---------------------------------------------------------------------------
// 1. Neuron dynamics

Reservoir lone_neuron(double tau_syn, double tau_mem, double theta) {
  Reservoir r;
  r.n = 1;
  r.c_in = 1;
  r.w_in = {0.0f};
  r.w_rec = {0.0f};
  r.ei_sign = {1};
  r.params.tau_syn = {float(tau_syn)};
  r.params.tau_mem = {float(tau_mem)};
  r.params.bias = {0.0f};
  r.params.threshold = theta;
  r.refresh();
  return r;
}

Outcome neuron_dynamics() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> tau(0.001, 0.01);
  double worst = 0;
  const std::vector<float> zero{0.0f};
  for (int pair = 0; pair < 100; ++pair) {
    const double ts = tau(rng), tm = tau(rng);
    auto r = lone_neuron(ts, tm, 1e12);
    LiquidState st = LiquidState::zero(1);
    st.i_syn[0] = 0.8;
    auto v_only = lone_neuron(ts, tm, 1e12);
    LiquidState sv = LiquidState::zero(1);
    sv.v_mem[0] = 0.8;
    for (int t = 1; t <= 100; ++t) {
      step(r, st, std::span<const float>(zero));
      step(v_only, sv, std::span<const float>(zero));
      const double ei = 0.8 * std::exp(-t * 1e-3 / double(r.params.tau_syn[0]));
      const double ev = 0.8 * std::exp(-t * 1e-3 / double(r.params.tau_mem[0]));
      worst = std::max({worst, std::abs(st.i_syn[0] - ei) / ei, std::abs(sv.v_mem[0] - ev) / ev});
    }
  }
  // Reset by subtraction: post-spike potential is exactly pre-spike minus theta.
  int reset_errors = 0, spikes = 0;
  std::uniform_real_distribution<double> over(1.0, 6.0), theta(0.25, 3.0);
  for (int c = 0; c < 1000; ++c) {
    auto r = lone_neuron(0.005, 0.005, theta(rng));
    LiquidState st = LiquidState::zero(1);
    st.v_mem[0] = over(rng) * r.params.threshold / r.mem_decay[0];
    const double pre = st.v_mem[0] * r.mem_decay[0];
    const auto s = step(r, st, std::span<const float>(zero));
    spikes += s[0];
    if (!(pre >= r.params.threshold) || s[0] != 1 || st.v_mem[0] != pre - r.params.threshold) ++reset_errors;
  }
  // The worked example: v = 1.7 after integration, theta = 1 -> 0.7.
  auto r = lone_neuron(0.005, 0.01, 1.0);
  LiquidState st = LiquidState::zero(1);
  st.v_mem[0] = 1.7 / r.mem_decay[0];
  step(r, st, std::span<const float>(zero));
  const bool example = std::abs(st.v_mem[0] - 0.7) < 1e-12;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst <= 1e-9 && reset_errors == 0 && example && secs < 1.0,
          "max rel decay error " + fmt(worst) + " (<= 1e-9), reset errors " + std::to_string(reset_errors) + "/" +
              std::to_string(spikes) + ", 1.7 -> " + fmt(st.v_mem[0]) + ", runtime " + fmt(secs) + " s (< 1 s)"};
}

// ---------------------------------------------------------------------------
// 2. Encoders

Outcome encoders() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Patch p{Grid<float>(100, 100), Grid<std::uint8_t>(100, 100, 0), {}};  // 10^4 values
  for (auto& v : p.data.data) v = u(rng);
  int latency_bad = 0, rate_bad = 0, direct_bad = 0;
  for (int e : {2, 4, 8, 16, 32}) {
    const double tol = 1.0 / (2.0 * (e - 1));
    const auto back = decode_latency(encode_latency(p, e));
    for (std::size_t i = 0; i < p.data.size(); ++i)
      if (std::abs(back.data[i] - double(p.data.data[i])) > tol + 1e-12) ++latency_bad;
  }
  for (int e : kExposureMenu) {
    const auto rate = encode_rate(p, e);
    const auto direct = encode_direct(p, e);
    for (int t = 0; t < 100; ++t)
      for (int c = 0; c < 100; ++c) {
        int count = 0;
        for (int j = 0; j < e; ++j) {
          count += rate(t, j, c);
          if (direct(t, j, c) != p.data(t, c)) ++direct_bad;
        }
        if (count != int(std::lround(double(p.data(t, c)) * e))) ++rate_bad;
      }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {latency_bad == 0 && rate_bad == 0 && direct_bad == 0 && secs < 5.0,
          "latency round-trip violations " + std::to_string(latency_bad) + ", rate count mismatches " +
              std::to_string(rate_bad) + ", direct mismatches " + std::to_string(direct_bad) + " over 10^4 values; " +
              "runtime " + fmt(secs) + " s (< 5 s)"};
}

// ---------------------------------------------------------------------------
// 3. Gradients

double head_loss(const ReadoutHead& h, const SpikeRaster& raster, const Grid<std::uint8_t>& mask, ParamMap* g) {
  return patch_loss(h, raster, mask, 2, 1.0, g);
}

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  AttentionConfig attn;
  attn.d_model = 8;
  attn.d_ff = 16;
  std::map<std::string, double> worst;
  for (auto kind : {ReadoutKind::Linear, ReadoutKind::ReLU, ReadoutKind::Transformer}) {
    double& w = worst[std::string(to_string(kind))];
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(seed_hash(3, seed));
      auto h = make_head(kind, 16, seed, attn, 32);
      SpikeRaster raster(4, 16);
      for (int t = 0; t < 4; ++t)
        for (int i = 0; i < 16; ++i)
          if (rng() % 5 < 2) raster.set(t, i);
      Grid<std::uint8_t> mask(2, 32);
      for (auto& m : mask.data) m = rng() % 4 == 0;
      ParamMap grads;
      head_loss(h, raster, mask, &grads);
      const double eps = 1e-5;
      for (auto& [name, p] : h.params)
        for (Eigen::Index i = 0; i < p.size(); ++i) {
          const double keep = p.data()[i];
          p.data()[i] = keep + eps;
          const double up = head_loss(h, raster, mask, nullptr);
          p.data()[i] = keep - eps;
          const double down = head_loss(h, raster, mask, nullptr);
          p.data()[i] = keep;
          const double fd = (up - down) / (2 * eps), an = grads.at(name).data()[i];
          // Floor keeps near-zero entries from amplifying finite-difference noise.
          w = std::max(w, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
        }
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool ok = secs < 60.0;
  std::string detail;
  for (const auto& [k, v] : worst) {
    ok = ok && v < 1e-4;
    detail += k + " " + fmt(v) + ", ";
  }
  return {ok, "max rel error (< 1e-4) " + detail + "20 seeds each; runtime " + fmt(secs) + " s (< 60 s)"};
}

// ---------------------------------------------------------------------------
// 4. Metric oracles

Outcome metric_oracles() {
  std::mt19937_64 rng(4);
  int instances = 0, mismatches = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng() % 8;
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    const int levels = 1 + int(rng() % 5);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = double(rng() % std::uint64_t(levels)) / levels;
      y[i] = std::uint8_t(rng() % 2);
    }
    ++instances;
    // F1 at 0.5 by direct counting.
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      tp += s[i] > 0.5 && y[i];
      fp += s[i] > 0.5 && !y[i];
      fn += !(s[i] > 0.5) && y[i];
    }
    const double f1 = 2 * tp + fp + fn ? double(2 * tp) / double(2 * tp + fp + fn) : 0.0;
    if (confusion_at(s, y, 0.5).f1() != f1) ++mismatches;
    const auto pos = std::count(y.begin(), y.end(), 1);
    if (pos > 0 && pos < long(n)) {
      std::uint64_t twice = 0, pairs = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (y[i] && !y[j]) {
            ++pairs;
            twice += s[i] > s[j] ? 2 : s[i] == s[j] ? 1 : 0;
          }
      if (auroc(s, y) != double(twice) / double(2 * pairs)) ++mismatches;
    }
    if (pos > 0) {
      // Threshold sweep in exact rationals.
      std::vector<double> thr = s;
      std::sort(thr.begin(), thr.end(), std::greater<>());
      thr.erase(std::unique(thr.begin(), thr.end()), thr.end());
      long num = 0, den = 1, prev = 0;
      for (double t : thr) {
        long ctp = 0, cfp = 0;
        for (std::size_t i = 0; i < n; ++i)
          if (s[i] >= t) (y[i] ? ctp : cfp)++;
        const long tn = (ctp - prev) * ctp, td = long(pos) * (ctp + cfp);
        num = num * td + tn * den;
        den *= td;
        const long g = std::gcd(num, den);
        num /= g;
        den /= g;
        prev = ctp;
      }
      const double oracle = double(num) / double(den), got = auprc(s, y);
      // Equal up to the final rounding of the double sum.
      if (std::abs(oracle - got) > 4 * std::numeric_limits<double>::epsilon()) ++mismatches;
    }
  }
  std::uniform_real_distribution<double> u;
  std::vector<double> s(100000);
  std::vector<std::uint8_t> y(100000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = u(rng);
    y[i] = u(rng) < 0.03;
  }
  const double random_auc = auroc(s, y);
  return {mismatches == 0 && std::abs(random_auc - 0.5) <= 0.01,
          std::to_string(mismatches) + " mismatches over " + std::to_string(instances) +
              " instances (n <= 8, with ties); random-score AUROC on 10^5 pixels " + fmt(random_auc) +
              " (0.5 +- 0.01)"};
}

// ---------------------------------------------------------------------------
// 5. Desk-scale learning

struct DeskRun {
  std::string label;
  EvalResult result;
};

Outcome desk_scale() {
  const int threads = hardware_threads();
  const auto train = synthetic(20, 512, 42);
  const auto test = synthetic(10, 512, 43, 1000000);
  const auto cache = work_dir() / "liquid-cache";
  const auto reservoir = build_reservoir(512, 32, 0.1, 7, working_liquid());
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 3;
  cfg.pos_weight = 20.0;  // about the negative:positive ratio at 3 % contamination
  FitOptions fo;
  fo.threads = threads;
  fo.cache_dir = cache;
  EvalOptions eo;
  eo.threads = threads;
  eo.cache_dir = cache;

  auto run = [&](Encoding enc, ReadoutKind kind) {
    auto fit_result = fit(reservoir, make_head(kind, 512, 1), train, enc, 4, cfg, fo);
    Model m{reservoir, std::move(fit_result.head), enc, 4};
    const auto r = evaluate(m, test, eo).result;
    std::cout << "  " << to_string(enc) << "+" << to_string(kind) << ": accuracy " << fmt(r.accuracy) << " f1 "
              << fmt(r.f1) << " auroc " << fmt(r.auroc.value_or(-1)) << " auprc " << fmt(r.auprc.value_or(-1))
              << std::endl;
    return r;
  };
  const auto t0 = std::chrono::steady_clock::now();
  const auto direct = run(Encoding::Direct, ReadoutKind::Linear);
  const auto rate = run(Encoding::Rate, ReadoutKind::Linear);
  const auto latency = run(Encoding::Latency, ReadoutKind::Linear);
  const auto relu = run(Encoding::Direct, ReadoutKind::ReLU);
  const auto transformer = run(Encoding::Direct, ReadoutKind::Transformer);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;

  const bool a = direct.f1 >= 0.45 && direct.accuracy >= 0.95;
  // "Much greater" is read as a gap of at least 0.2 in F1.
  const bool b = direct.f1 >= rate.f1 && rate.f1 - latency.f1 >= 0.2 && latency.f1 < 0.2;
  const bool c = transformer.f1 >= relu.f1 - 0.02;
  return {a && b && c,
          std::string("(a) ") + (a ? "ok" : "no") + " direct+linear f1 " + fmt(direct.f1) + " (>= 0.45) accuracy " +
              fmt(direct.accuracy) + " (>= 0.95); (b) " + (b ? "ok" : "no") + " f1 direct " + fmt(direct.f1) +
              " >= rate " + fmt(rate.f1) + " >> latency " + fmt(latency.f1) + " (< 0.2); (c) " + (c ? "ok" : "no") +
              " transformer " + fmt(transformer.f1) + " >= relu " + fmt(relu.f1) + " - 0.02; " + fmt(minutes) +
              " min (target < 30)"};
}

// ---------------------------------------------------------------------------
// 6. Frozen liquid and determinism

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LSM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome frozen_and_deterministic() {
  const auto data = synthetic(2, 128, 6);
  const auto r = build_reservoir(512, 32, 0.1, 8, working_liquid());
  const auto before = serialize_reservoir(r);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 9;
  const auto res = fit(r, make_head(ReadoutKind::Transformer, 512, 10), data, Encoding::Rate, 2, cfg);
  const bool frozen = serialize_reservoir(r) == before;

  const auto dir = work_dir() / "determinism";
  fs::create_directories(dir);
  const auto ds = (dir / "train.lsmd").string();
  if (run_cli("generate --count 2 --size 128 --seed 11 --out " + ds) != 0) return {false, "generate failed"};
  const std::string flags = " --data " + ds +
                            " --encoding direct --exposure 2 --readout relu --liquid-size 512 --input-sparsity 0.1"
                            " --input-gain 0.5 --spectral-radius 0.05 --epochs 3 --seed 12 --threads 1 --no-timing";
  for (const char* out : {"run_a", "run_b"})
    if (run_cli("train" + flags + " --out " + (dir / out).string()) != 0) return {false, "train failed"};
  auto ma = RunManifest::load(dir / "run_a" / "manifest.json");
  auto mb = RunManifest::load(dir / "run_b" / "manifest.json");
  ma.flags.erase("out");
  mb.flags.erase("out");
  const bool same_manifest = ma.flags == mb.flags && ma.inputs == mb.inputs;
  int differing = 0;
  for (const char* f : {"head.bin", "reservoir.bin", "model.json", "train_report.csv", "train_report.json"})
    differing += read_file(dir / "run_a" / f) != read_file(dir / "run_b" / f);
  return {frozen && same_manifest && differing == 0 && res.report.epochs.size() == 4,
          std::string("reservoir hash ") + (frozen ? "unchanged" : "CHANGED") + " across fit; manifests " +
              (same_manifest ? "equal" : "differ") + "; " + std::to_string(differing) +
              " of 5 model/report files differ between two single-threaded runs"};
}

// ---------------------------------------------------------------------------
// 7. TPE sanity

Outcome tpe_sanity() {
  const auto t0 = std::chrono::steady_clock::now();
  const SearchSpace toy{{Dimension::continuous("x", 0.0, 1.0)}};
  auto f = [](const Config& c, std::uint64_t) { return -std::pow(c.at("x") - 0.3, 2); };
  TpeOptions random_only;
  random_only.n_startup = 1 << 30;
  int wins = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const double tpe = *run_study(toy, 25, f, 100 + s).best()->objective;
    const double rnd = *run_study(toy, 25, f, 100000 + s, {random_only, {}, {}}).best()->objective;
    wins += tpe > rnd;
  }
  // Menu membership on the real space with a non-trivial objective.
  const auto space = SearchSpace::liquid_menus();
  int outside = 0, sampled = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto study = run_study(space, 25, [](const Config& c, std::uint64_t) {
      return c.at("input_sparsity") * std::log2(c.at("exposure") + 1) / std::log2(c.at("liquid_size"));
    }, s);
    for (const auto& t : study.trials) {
      ++sampled;
      outside += !space.contains(t.config);
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {wins >= 60 && outside == 0 && secs < 30,
          "TPE best-of-25 beats random in " + std::to_string(wins) + "/100 paired studies (>= 60); " +
              std::to_string(outside) + "/" + std::to_string(sampled) + " configs outside the menus; runtime " +
              fmt(secs) + " s (< 30 s)"};
}

// ---------------------------------------------------------------------------
// 8. HPO pipeline smoke test

struct Interrupted : std::exception {
  const char* what() const noexcept override { return "simulated interrupt"; }
};

Outcome hpo_smoke() {
  // 32 patches; the 10 % subset keeps 4, so even 8192-neuron trials at
  // exposure 32 stay within seconds.
  const auto data = synthetic(2, 128, 13);
  HpoObjectiveOptions opt;
  opt.train.epochs = 2;
  opt.train.pos_weight = 20.0;
  opt.subset_fraction = 0.1;
  opt.subset_seed = 14;
  opt.reservoir = working_liquid();
  opt.threads = hardware_threads();
  const auto objective = make_hpo_objective(data, opt);
  const auto file = work_dir() / "study.jsonl";
  fs::remove(file);
  int calls = 0;
  auto counted = [&](const Config& c, std::uint64_t seed) {
    ++calls;
    return objective(c, seed);
  };

  StudyOptions first;
  first.file = file;
  first.on_trial = [](const Trial& t) {
    if (t.index == 3) throw Interrupted();
  };
  bool interrupted = false;
  try {
    run_study(SearchSpace::liquid_menus(), 8, counted, 15, first);
  } catch (const Interrupted&) {
    interrupted = true;
  }
  const auto persisted = parse_study(read_file(file));
  const int calls_before = calls;

  StudyOptions resume;
  resume.file = file;
  const auto study = run_study(SearchSpace::liquid_menus(), 8, counted, 15, resume);
  const int rerun = calls - calls_before;
  bool prefix_kept = persisted.size() == 4;
  for (std::size_t i = 0; prefix_kept && i < persisted.size(); ++i) prefix_kept = persisted[i] == study.trials[i];
  const auto on_disk = parse_study(read_file(file));
  const bool complete = study.trials.size() == 8 && on_disk.size() == 8 && study.completed() == 8;
  std::string best = study.best() ? fmt(*study.best()->objective) : "none";
  return {interrupted && prefix_kept && rerun == 4 && complete,
          std::string("interrupted after ") + std::to_string(persisted.size()) + " persisted trials; resume ran " +
              std::to_string(rerun) + " more (expected 4), first trials unchanged: " + (prefix_kept ? "yes" : "no") +
              "; " + std::to_string(study.completed()) + "/8 complete, best validation F1 " + best};
}

}  // namespace

int main() {
  std::cout << "acceptance: " << hardware_threads() << " worker thread(s)" << std::endl;
  criterion(1, "neuron dynamics exactness", neuron_dynamics);
  criterion(2, "encoder contracts", encoders);
  criterion(3, "gradient correctness", gradients);
  criterion(4, "metric oracle equivalence", metric_oracles);
  criterion(5, "desk-scale learning", desk_scale);
  criterion(6, "frozen liquid and determinism", frozen_and_deterministic);
  criterion(7, "TPE sanity", tpe_sanity);
  criterion(8, "HPO smoke test with resume", hpo_smoke);
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  fs::remove_all(work_dir());
  return failures == 0 ? 0 : 1;
}
