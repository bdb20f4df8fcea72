#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "ganimorph/trainer.hpp"
#include "small_config.hpp"
#include "test_util.hpp"

using namespace ganimorph;
using namespace ganimorph::train;
namespace fs = std::filesystem;

namespace {

struct TrainerTest : ::testing::Test {
  static void SetUpTestSuite() {
    configure_determinism();
    root() = testing_util::scratch_dir("trainer");
    dataset() = testing_util::toy_dataset(root(), 24, 3, 32);
  }
  static fs::path& root() {
    static fs::path p;
    return p;
  }
  static fs::path& dataset() {
    static fs::path p;
    return p;
  }
  static ExperimentConfig config() { return testing_util::small_config(dataset()); }
};

std::vector<torch::Tensor> snapshot(torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
  return out;
}

bool same(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!torch::equal(a[i], b[i])) return false;
  return true;
}

StepBatches random_batches(int size, std::uint64_t seed) {
  torch::manual_seed(seed);
  auto r = [size] { return torch::rand({2, 3, size, size}) * 2 - 1; };
  return {r(), r(), r(), r()};
}

std::vector<std::string> dir_files(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST(LearningRate, PiecewiseLinearWithExactEndpoints) {
  ExperimentConfig cfg;
  EXPECT_EQ(learning_rate_at(cfg, 1), 2e-4);
  EXPECT_EQ(learning_rate_at(cfg, 150000), 2e-4);
  EXPECT_DOUBLE_EQ(learning_rate_at(cfg, 225000), 1e-4);
  EXPECT_EQ(learning_rate_at(cfg, 300000), 0.0);
  EXPECT_EQ(learning_rate_at(cfg, 400000), 0.0);
  EXPECT_LT(learning_rate_at(cfg, 150001), 2e-4);
}

TEST_F(TrainerTest, ZeroLearningRateLeavesParametersUnchanged) {
  auto cfg = config();
  cfg.optimizer.lr = 0.0;
  auto b = ModelBundle::create(cfg);
  const auto g = snapshot(*b.g), f = snapshot(*b.f), dx = snapshot(*b.dx), dy = snapshot(*b.dy);
  const auto rec = train_step(b, random_batches(32, 1), cfg);
  EXPECT_EQ(rec.lr, 0.0);
  EXPECT_TRUE(same(g, snapshot(*b.g)));
  EXPECT_TRUE(same(f, snapshot(*b.f)));
  EXPECT_TRUE(same(dx, snapshot(*b.dx)));
  EXPECT_TRUE(same(dy, snapshot(*b.dy)));
  EXPECT_EQ(b.iteration, 1);
}

TEST_F(TrainerTest, DiscriminatorCadenceEveryOtherStep) {
  auto cfg = config();
  cfg.discriminator_every = 2;
  auto b = ModelBundle::create(cfg);
  for (int step = 1; step <= 4; ++step) {
    const auto d_before = snapshot(*b.dx), g_before = snapshot(*b.g);
    const auto rec = train_step(b, random_batches(32, step), cfg);
    EXPECT_FALSE(same(g_before, snapshot(*b.g))) << step;
    EXPECT_EQ(same(d_before, snapshot(*b.dx)), step % 2 == 1) << step;
    EXPECT_EQ(rec.d_loss.has_value(), step % 2 == 0);
  }
}

TEST_F(TrainerTest, UpdatesDoNotCrossContaminate) {
  // The discriminator phase must not move G or F: with and without it the
  // generators end up identical.
  auto cfg = config();
  auto with_d = ModelBundle::create(cfg);
  auto without_d = ModelBundle::create(cfg);
  auto cfg_skip = cfg;
  cfg_skip.discriminator_every = 2;
  const auto batch = random_batches(32, 9);
  train_step(with_d, batch, cfg);
  const auto d_before = snapshot(*without_d.dy);
  train_step(without_d, batch, cfg_skip);
  EXPECT_TRUE(same(snapshot(*with_d.g), snapshot(*without_d.g)));
  EXPECT_TRUE(same(snapshot(*with_d.f), snapshot(*without_d.f)));
  // The generator phase leaves the discriminators alone.
  EXPECT_TRUE(same(d_before, snapshot(*without_d.dy)));
  for (const auto& p : without_d.dy->parameters()) EXPECT_FALSE(p.grad().defined() && p.grad().abs().sum().item<double>() > 0);
}

TEST_F(TrainerTest, NonFiniteLossAbortsWithIteration) {
  auto cfg = config();
  auto b = ModelBundle::create(cfg);
  auto batch = random_batches(32, 2);
  batch.x_gen[0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
  const auto sln_before = b.sln;
  try {
    train_step(b, batch, cfg);
    FAIL() << "expected a numeric error";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 1"), std::string::npos) << e.what();
  }
  EXPECT_EQ(b.sln, sln_before);
  EXPECT_EQ(b.iteration, 0);
}

TEST_F(TrainerTest, CheckpointSaveLoadSaveIsByteIdentical) {
  auto cfg = config();
  auto b = ModelBundle::create(cfg);
  train_step(b, random_batches(32, 3), cfg);
  train_step(b, random_batches(32, 4), cfg);
  const auto dir = root() / "ckpt_roundtrip";
  save_checkpoint(b, dir / "a");
  auto loaded = load_checkpoint(dir / "a", cfg);
  save_checkpoint(loaded, dir / "b");
  ASSERT_EQ(dir_files(dir / "a"), dir_files(dir / "b"));
  for (const auto& f : dir_files(dir / "a"))
    EXPECT_TRUE(testing_util::read_bytes(dir / "a" / f) == testing_util::read_bytes(dir / "b" / f)) << f;
  EXPECT_EQ(loaded.iteration, 2);
  EXPECT_EQ(loaded.sln, b.sln);
  EXPECT_TRUE(same(snapshot(*loaded.dy), snapshot(*b.dy)));

  // Restored optimizer state continues identically.
  const auto batch = random_batches(32, 5);
  const auto r1 = train_step(b, batch, cfg);
  const auto r2 = train_step(loaded, batch, cfg);
  EXPECT_TRUE(r1.same_values(r2));
  EXPECT_TRUE(same(snapshot(*loaded.g), snapshot(*b.g)));
}

TEST_F(TrainerTest, CheckpointSpecMismatchIsRejected) {
  auto cfg = config();
  auto b = ModelBundle::create(cfg);
  save_checkpoint(b, root() / "ckpt_mismatch");
  auto other = cfg;
  other.generator.base_filters = 6;
  EXPECT_THROW(load_checkpoint(root() / "ckpt_mismatch", other), ConfigError);
  other = cfg;
  other.discriminator.variant = nets::DiscriminatorVariant::patch;
  EXPECT_THROW(load_checkpoint(root() / "ckpt_mismatch", other), ConfigError);
  EXPECT_THROW(load_checkpoint(root() / "nowhere", cfg), IoError);
}

TEST_F(TrainerTest, ZeroIterationsWritesInitialCheckpointOnly) {
  auto cfg = config();
  cfg.iterations = 0;
  const auto run = root() / "run_zero";
  train::train(cfg, run);
  EXPECT_EQ(dir_files(run / "checkpoints"), std::vector<std::string>{"iter_0"});
  EXPECT_TRUE(read_metrics(run / "metrics.log").empty());
  EXPECT_TRUE(fs::exists(run / "config.snapshot"));
  EXPECT_EQ(parse_config_text(testing_util::read_bytes(run / "config.snapshot")), cfg);
}

TEST_F(TrainerTest, RunLayoutAndLogs) {
  auto cfg = config();
  cfg.eval_every = 10;
  const auto run = root() / "run_layout";
  train::train(cfg, run);
  EXPECT_EQ(dir_files(run / "checkpoints"), (std::vector<std::string>{"iter_0", "iter_10", "iter_20"}));
  EXPECT_EQ(dir_files(run / "samples"), (std::vector<std::string>{"iter_10.png", "iter_20.png"}));
  const auto grid = read_image(run / "samples" / "iter_10.png");
  EXPECT_EQ(grid.width, 2 * 32);
  EXPECT_EQ(grid.height, 6 * 32);
  const auto metrics = read_metrics(run / "metrics.log");
  ASSERT_EQ(metrics.size(), 20u);
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    EXPECT_EQ(metrics[i].iteration, static_cast<std::int64_t>(i + 1));
    EXPECT_TRUE(metrics[i].d_loss.has_value());
    EXPECT_EQ(metrics[i].cycle.has_value(), (i + 1) % 10 == 0);
    EXPECT_EQ(metrics[i].lr, 2e-4);
  }
  EXPECT_GT(metrics[0].objective.gan_effective, metrics[0].objective.gan_raw);
  EXPECT_EQ(metrics[1].objective.gan_effective, metrics[1].objective.gan_raw);
}

TEST_F(TrainerTest, IdenticalSeedsGiveIdenticalMetricStreams) {
  auto cfg = config();
  cfg.iterations = 100;
  cfg.checkpoint_every = 1000;
  cfg.sample_every = 0;
  train::train(cfg, root() / "det_a");
  train::train(cfg, root() / "det_b");
  const auto a = read_metrics(root() / "det_a" / "metrics.log");
  const auto b = read_metrics(root() / "det_b" / "metrics.log");
  ASSERT_EQ(a.size(), 100u);
  ASSERT_EQ(b.size(), 100u);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_TRUE(a[i].same_values(b[i])) << "iteration " << i + 1;
  auto other = cfg;
  other.seed = 2;
  other.iterations = 3;
  train::train(other, root() / "det_c");
  EXPECT_FALSE(read_metrics(root() / "det_c" / "metrics.log")[0].same_values(a[0]));
}

TEST_F(TrainerTest, ResumedRunMatchesUninterruptedRun) {
  auto cfg = config();
  cfg.iterations = 30;
  train::train(cfg, root() / "full");
  auto first = cfg;
  first.iterations = 15;  // ends off the checkpoint grid with a final iter_15
  train::train(first, root() / "resumed");
  train::train(cfg, root() / "resumed");
  const auto a = read_metrics(root() / "full" / "metrics.log");
  const auto b = read_metrics(root() / "resumed" / "metrics.log");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_TRUE(a[i].same_values(b[i])) << "iteration " << i + 1;
}

TEST_F(TrainerTest, StopFlagCheckpointsAndReturns) {
  auto cfg = config();
  std::atomic<bool> stop{true};
  TrainOptions opts;
  opts.stop = &stop;
  train::train(cfg, root() / "stopped", opts);
  EXPECT_EQ(dir_files(root() / "stopped" / "checkpoints"), std::vector<std::string>{"iter_0"});
}

TEST_F(TrainerTest, TranslateIsDeterministicAndOrderPreserving) {
  auto cfg = config();
  auto b = ModelBundle::create(cfg);
  save_checkpoint(b, root() / "ckpt_translate");
  const auto xs = data::load_image_folder(dataset() / "x");
  std::vector<RgbImage> images;
  for (std::size_t i = 0; i < 5; ++i) images.push_back(xs.image(i));
  const auto out1 = translate(root() / "ckpt_translate", images, eval::Direction::x_to_y);
  const auto out2 = translate(root() / "ckpt_translate", images, eval::Direction::x_to_y);
  ASSERT_EQ(out1.size(), 5u);
  EXPECT_EQ(out1, out2);
  std::vector<RgbImage> one{images[3]};
  EXPECT_EQ(translate(root() / "ckpt_translate", one, eval::Direction::x_to_y)[0], out1[3]);
  EXPECT_NE(translate(root() / "ckpt_translate", one, eval::Direction::y_to_x)[0], out1[3]);
}

TEST_F(TrainerTest, SmokeTrainingReducesCyclicLoss) {
  // Toy 64x64, 200 updates, three seeds.
  const auto data64 = testing_util::toy_dataset(root(), 64, 4, 64);
  double first = 0, last = 0;
  std::vector<torch::Tensor> probe;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto cfg = testing_util::small_config(data64, 64);
    cfg.generator.base_filters = 8;
    cfg.discriminator.base_filters = 8;
    cfg.batch_size = 4;
    cfg.iterations = 200;
    cfg.checkpoint_every = 200;
    cfg.sample_every = 0;
    cfg.seed = seed;
    const auto run = root() / ("smoke_" + std::to_string(seed));
    train::train(cfg, run);
    const auto m = read_metrics(run / "metrics.log");
    ASSERT_EQ(m.size(), 200u);
    first += m.front().objective.cyc_raw / 3;
    last += m.back().objective.cyc_raw / 3;

    if (seed == 1) {
      // Trained round trips reconstruct better than the initial weights.
      const auto xs = data::load_image_folder(data64 / "x");
      for (std::size_t i = 0; i < 8; ++i) probe.push_back(xs.tensor(i));
      auto trained = load_generators(run / "checkpoints" / "iter_200");
      auto initial = load_generators(run / "checkpoints" / "iter_0");
      auto score = [&](GeneratorPair& p) {
        eval::Translator g = [&](const torch::Tensor& x) { return p.g->forward(x); };
        eval::Translator f = [&](const torch::Tensor& x) { return p.f->forward(x); };
        return eval::cycle_metrics(g, f, probe, probe, cfg.ms_ssim_options()).ms_ssim_x;
      };
      EXPECT_GT(score(trained), score(initial));
    }
  }
  EXPECT_LT(last, first);
}
