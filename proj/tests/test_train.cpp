#include <gtest/gtest.h>

#include <random>

#include "lsm/spectra.hpp"
#include "lsm/train.hpp"

using namespace lsm;

namespace {

ScoreMap scores_of(std::vector<double> v, int rows, int cols) {
  ScoreMap s(rows, cols);
  s.data = std::move(v);
  return s;
}

Grid<std::uint8_t> mask_of(std::vector<std::uint8_t> v, int rows, int cols) {
  Grid<std::uint8_t> m(rows, cols);
  m.data = std::move(v);
  return m;
}

std::vector<Patch> small_dataset(int n_spectrograms, int size, std::uint64_t seed) {
  SynthConfig sc;
  sc.n_spectrograms = n_spectrograms;
  sc.size = size;
  sc.seed = seed;
  return prepare_patches(generate_synthetic(sc));
}

ReservoirOptions working_liquid() {
  ReservoirOptions o;
  o.input_gain = 0.5;
  o.spectral_radius = 0.05;
  return o;
}

}  // namespace

TEST(Bce, HandExamples) {
  EXPECT_NEAR(loss_bce(scores_of({0.5, 0.5, 0.5}, 1, 3), mask_of({1, 0, 1}, 1, 3)), std::log(2.0), 1e-15);
  const double perfect = loss_bce(scores_of({1.0, 0.0}, 1, 2), mask_of({1, 0}, 1, 2));
  EXPECT_NEAR(perfect, -std::log(1.0 - 1e-7), 1e-15);
  EXPECT_LE(perfect, 1e-6);
  EXPECT_NEAR(loss_bce(scores_of({0.9, 0.2}, 1, 2), mask_of({1, 0}, 1, 2)), 0.16425, 1e-5);
  EXPECT_NEAR(loss_bce(scores_of({0.9, 0.2}, 1, 2), mask_of({1, 0}, 1, 2)), -(std::log(0.9) + std::log(0.8)) / 2,
              1e-15);
}

TEST(Bce, PositiveWeightScalesPositiveTerms) {
  const auto s = scores_of({0.3, 0.4}, 1, 2);
  const auto m = mask_of({1, 0}, 1, 2);
  EXPECT_NEAR(loss_bce(s, m, 4.0), -(4.0 * std::log(0.3) + std::log(0.6)) / 2, 1e-15);
}

TEST(Bce, ShapeMismatchIsDataError) {
  EXPECT_THROW(loss_bce(scores_of({0.5, 0.5}, 1, 2), mask_of({1, 0}, 2, 1)), DataError);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParamMap p{{"w", Mat::Constant(2, 2, 1.5)}};
  AdamState st;
  adam_step(p, {{"w", Mat::Zero(2, 2)}}, st, 0.1);
  EXPECT_EQ(p.at("w"), Mat::Constant(2, 2, 1.5));
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepIsLrTimesSign) {
  ParamMap p{{"w", Mat::Zero(1, 3)}};
  Mat g(1, 3);
  g << 2.0, -0.5, 30.0;
  AdamState st;
  adam_step(p, {{"w", g}}, st, 1e-3);
  // m_hat = g, v_hat = g^2, so the update is -lr * g / (|g| + eps).
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(p.at("w")(0, j), -1e-3 * g(0, j) / (std::abs(g(0, j)) + 1e-8), 1e-15);
}

TEST(Adam, ConstantGradientDescendsMonotonically) {
  ParamMap p{{"x", Mat::Constant(1, 1, 0.0)}};
  AdamState st;
  double prev = 0.0;
  for (int i = 0; i < 1000; ++i) {
    adam_step(p, {{"x", Mat::Constant(1, 1, 0.7)}}, st, 1e-3);
    ASSERT_LT(p.at("x")(0, 0), prev);
    prev = p.at("x")(0, 0);
  }
}

TEST(Adam, UnknownParameterAndNonFinite) {
  ParamMap p{{"x", Mat::Zero(1, 1)}};
  AdamState st;
  EXPECT_THROW(adam_step(p, {{"y", Mat::Zero(1, 1)}}, st, 1e-3), ConfigError);
  EXPECT_THROW(adam_step(p, {{"x", Mat::Constant(1, 1, std::nan(""))}}, st, 1e-3), NumericError);
}

TEST(Plateau, ConstantLossesHalveAfterPatience) {
  PlateauScheduler s(1e-4, 0.5, 10);
  for (int i = 1; i <= 10; ++i) EXPECT_EQ(s.step(1.0), 1e-4) << i;
  EXPECT_EQ(s.step(1.0), 5e-5);  // 11th identical loss
  for (int i = 0; i < 9; ++i) s.step(1.0);
  EXPECT_EQ(s.step(1.0), 2.5e-5);  // second cycle
}

TEST(Plateau, DecreasingLossesKeepRate) {
  PlateauScheduler s(1e-4, 0.5, 10);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(s.step(1.0 / (i + 1)), 1e-4);
}

TEST(Plateau, MatchesReferenceAutomatonOnRandomTraces) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (int trace = 0; trace < 200; ++trace) {
    const int patience = 1 + int(rng() % 5);
    PlateauScheduler s(1.0, 0.5, patience, 1e-4);
    double best = std::numeric_limits<double>::infinity(), lr = 1.0;
    int bad = 0;
    for (int i = 0; i < 60; ++i) {
      // Repeat values often so the relative threshold matters.
      const double loss = std::isfinite(best) && rng() % 3 == 0 ? best * (1 - 5e-5) : u(rng);
      if (!std::isfinite(best) || loss < best - 1e-4 * best) {
        best = loss;
        bad = 0;
      } else if (++bad == patience) {
        lr /= 2;
        bad = 0;
      }
      ASSERT_EQ(s.step(loss), lr);
    }
  }
}

TEST(Plateau, NonFiniteLoss) {
  PlateauScheduler s(1e-4, 0.5, 10);
  EXPECT_THROW(s.step(std::nan("")), NumericError);
}

TEST(Config, Validation) {
  TrainConfig c;
  c.lr0 = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.plateau_factor = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.pos_weight = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Split, DeterministicAndDisjoint) {
  auto [a, b] = split_indices(50, 0.1, 7);
  auto [c, d] = split_indices(50, 0.1, 7);
  EXPECT_EQ(a, c);
  EXPECT_EQ(b, d);
  EXPECT_EQ(b.size(), 5u);
  std::vector<std::size_t> all = a;
  all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(all[i], i);
}

class FitTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { data_ = new std::vector<Patch>(small_dataset(1, 128, 5)); }
  static void TearDownTestSuite() { delete data_; }
  static std::vector<Patch>* data_;
};
std::vector<Patch>* FitTest::data_ = nullptr;

TEST_F(FitTest, ZeroEpochsReturnsHeadUnchanged) {
  const auto r = build_reservoir(32, 32, 0.2, 1, working_liquid());
  const auto head = make_head(ReadoutKind::Linear, 32, 2);
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto res = fit(r, head, *data_, Encoding::Direct, 2, cfg);
  EXPECT_EQ(head_checksum(res.head), head_checksum(head));
  ASSERT_EQ(res.report.epochs.size(), 1u);
  EXPECT_EQ(res.report.epochs[0].epoch, 0);
}

TEST_F(FitTest, ReservoirUntouchedAndRunsDeterministic) {
  const auto r = build_reservoir(32, 32, 0.2, 1, working_liquid());
  const auto before = serialize_reservoir(r);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 4;
  cfg.lr0 = 1e-3;
  cfg.seed = 11;
  const auto a = fit(r, make_head(ReadoutKind::Linear, 32, 2), *data_, Encoding::Rate, 2, cfg);
  const auto b = fit(r, make_head(ReadoutKind::Linear, 32, 2), *data_, Encoding::Rate, 2, cfg);
  EXPECT_EQ(serialize_reservoir(r), before);
  EXPECT_TRUE(a.report.same_trajectory(b.report));
  EXPECT_EQ(a.report.to_csv(false), b.report.to_csv(false));
  EXPECT_EQ(serialize_head(a.head), serialize_head(b.head));
  EXPECT_NE(head_checksum(a.head), head_checksum(make_head(ReadoutKind::Linear, 32, 2)));
  for (std::size_t i = 1; i < a.report.epochs.size(); ++i)
    EXPECT_LE(a.report.epochs[i].lr, a.report.epochs[i - 1].lr);
}

TEST_F(FitTest, LiquidCachingPreservesSemantics) {
  const auto r = build_reservoir(24, 32, 0.3, 3, working_liquid());
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 8;
  FitOptions cached, uncached;
  uncached.cache_liquid = false;
  const auto dir = std::filesystem::temp_directory_path() / "lsm-test-train-cache";
  std::filesystem::remove_all(dir);
  FitOptions on_disk;
  on_disk.cache_dir = dir;
  const auto a = fit(r, make_head(ReadoutKind::ReLU, 24, 4), *data_, Encoding::Direct, 2, cfg, cached);
  const auto b = fit(r, make_head(ReadoutKind::ReLU, 24, 4), *data_, Encoding::Direct, 2, cfg, uncached);
  const auto c = fit(r, make_head(ReadoutKind::ReLU, 24, 4), *data_, Encoding::Direct, 2, cfg, on_disk);
  const auto d = fit(r, make_head(ReadoutKind::ReLU, 24, 4), *data_, Encoding::Direct, 2, cfg, on_disk);
  EXPECT_TRUE(a.report.same_trajectory(b.report));
  EXPECT_TRUE(a.report.same_trajectory(c.report));
  EXPECT_TRUE(a.report.same_trajectory(d.report));
  std::filesystem::remove_all(dir);
}

TEST_F(FitTest, ReportsAndCheckpoint) {
  const auto r = build_reservoir(16, 32, 0.3, 3, working_liquid());
  TrainConfig cfg;
  cfg.epochs = 2;
  FitOptions opt;
  opt.checkpoint = std::filesystem::temp_directory_path() / "lsm-test-checkpoint.bin";
  std::vector<int> seen;
  opt.on_epoch = [&](const EpochRecord& e) { seen.push_back(e.epoch); };
  const auto res = fit(r, make_head(ReadoutKind::Linear, 16, 4), *data_, Encoding::Direct, 1, cfg, opt);
  EXPECT_EQ(seen, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(serialize_head(load_head(*opt.checkpoint)), serialize_head(res.head));
  std::filesystem::remove(*opt.checkpoint);
  const auto csv = res.report.to_csv(false);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,val_loss,lr,seconds");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  const auto j = res.report.to_json(false);
  EXPECT_EQ(j["epochs"], 2);
  EXPECT_EQ(j["seconds"], 0.0);
}

TEST_F(FitTest, InvalidInputs) {
  const auto r = build_reservoir(16, 32, 0.3, 3);
  TrainConfig cfg;
  EXPECT_THROW(fit(r, make_head(ReadoutKind::Linear, 16, 4), std::span<const Patch>(), Encoding::Direct, 1, cfg),
               ConfigError);
  EXPECT_THROW(fit(r, make_head(ReadoutKind::Linear, 17, 4), *data_, Encoding::Direct, 1, cfg), ConfigError);
}

TEST(PatchLoss, ShapeChecks) {
  const auto head = make_head(ReadoutKind::Linear, 8, 1);
  SpikeRaster raster(6, 8);
  Grid<std::uint8_t> mask(3, 32, 0);
  EXPECT_NO_THROW(patch_loss(head, raster, mask, 2, 1.0));
  EXPECT_THROW(patch_loss(head, raster, mask, 3, 1.0), DataError);
}

TEST(LinearHead, SeparableToyRasterIsLearnedWithin200Steps) {
  // Channel c is RFI exactly when neuron c fires: separable by one weight per channel.
  std::mt19937_64 rng(9);
  std::vector<SpikeRaster> rasters;
  std::vector<Grid<std::uint8_t>> masks;
  for (int p = 0; p < 8; ++p) {
    SpikeRaster r(4, 32);
    Grid<std::uint8_t> m(4, 32, 0);
    for (int t = 0; t < 4; ++t)
      for (int c = 0; c < 32; ++c)
        if (rng() % 4 == 0) {
          r.set(t, c);
          m(t, c) = 1;
        }
    rasters.push_back(r);
    masks.push_back(m);
  }
  auto head = make_head(ReadoutKind::Linear, 32, 10);
  AdamState st;
  int errors = -1;
  for (int step = 0; step < 200 && errors != 0; ++step) {
    ParamMap total;
    for (std::size_t p = 0; p < rasters.size(); ++p) {
      ParamMap g;
      patch_loss(head, rasters[p], masks[p], 1, 1.0, &g);
      for (auto& [k, v] : g) total[k] = total.count(k) ? Mat(total[k] + v) : v;
    }
    adam_step(head.params, total, st, 0.05);
    errors = 0;
    for (std::size_t p = 0; p < rasters.size(); ++p) {
      const Mat logits = head_logits(head, rasters[p]);
      for (int t = 0; t < 4; ++t)
        for (int c = 0; c < 32; ++c) errors += (logits(t, c) > 0) != (masks[p](t, c) != 0);
    }
  }
  EXPECT_EQ(errors, 0);
}

TEST(DeskScale, TwentyEpochsCutTrainLossByThirtyPercent) {
  const auto data = small_dataset(20, 512, 42);
  const auto r = build_reservoir(512, 32, 0.1, 7, working_liquid());
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.seed = 3;
  const auto res = fit(r, make_head(ReadoutKind::Linear, 512, 1), data, Encoding::Direct, 1, cfg);
  EXPECT_LE(res.report.final_train_loss(), 0.7 * res.report.initial_train_loss())
      << res.report.initial_train_loss() << " -> " << res.report.final_train_loss();
}
