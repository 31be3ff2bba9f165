#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "rispa/engines.hpp"
#include "rispa/evalkit.hpp"

using namespace rispa;
using nn::Mlp;

namespace {

Matrix random_matrix(Index rows, Index cols, Rng& rng, double scale) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * (2.0 * uniform01(rng) - 1.0);
  return m;
}

// Max-norm relative error of the analytic IDE parameter gradient through the
// tandem against central differences, on a 3-4-4-2 IDE and a 4-5-2 FSE.
double tandem_gradient_error(std::uint64_t seed, double tau) {
  Rng rng(seed);
  Mlp ide = nn::init_mlp({3, 4, 4, 2}, rng());
  for (auto& l : ide.layers) {
    l.weight *= 60.0;  // spread raw outputs over many degrees
    l.bias = random_matrix(l.bias.size(), 1, rng, 90.0).col(0);
  }
  Mlp fse = nn::init_mlp({4, 5, 2}, rng());
  const Matrix targets = random_matrix(2, 3, rng, 0.3).array() + 0.3;
  const Matrix inputs = random_matrix(3, 3, rng, 0.3).array() + 0.3;
  QuantizerConfig q;
  q.temperature_degrees = tau;

  nn::ForwardCache cache;
  const Matrix out = nn::forward(ide, inputs, &cache);
  const auto bl = tandem_loss(out, targets, fse, q);
  const auto g = nn::backward(ide, cache, bl.grad);
  auto loss = [&](const Mlp& m) { return tandem_loss(nn::forward(m, inputs), targets, fse, q).loss; };

  const double h = 1e-6;
  double worst = 0.0, scale = 0.0;
  for (std::size_t k = 0; k < ide.layers.size(); ++k) {
    for (auto which : {0, 1}) {
      double* p = which ? ide.layers[k].bias.data() : ide.layers[k].weight.data();
      const double* gp = which ? g.layers[k].bias.data() : g.layers[k].weight.data();
      const Index n = which ? ide.layers[k].bias.size() : ide.layers[k].weight.size();
      for (Index i = 0; i < n; ++i) {
        const double keep = p[i];
        p[i] = keep + h;
        const double up = loss(ide);
        p[i] = keep - h;
        const double dn = loss(ide);
        p[i] = keep;
        worst = std::max(worst, std::abs(gp[i] - (up - dn) / (2 * h)));
        scale = std::max(scale, std::abs(gp[i]));
      }
    }
  }
  return worst / scale;
}

}  // namespace

TEST(Encode, Examples) {
  const auto zero = encode_phases(std::vector<double>(20, 0.0));
  ASSERT_EQ(zero.size(), 40u);
  for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(zero[i], i % 2 == 0 ? 1.0 : 0.0);
  std::vector<double> a(20, 0.0);
  a[0] = 90.0;
  const auto e = encode_phases(a);
  EXPECT_NEAR(e[0], 0.0, 1e-15);
  EXPECT_NEAR(e[1], 1.0, 1e-15);
  const auto d = encode_phases(std::vector<double>{225.0});
  EXPECT_NEAR(d[0], -0.70711, 1e-5);
  EXPECT_NEAR(d[1], -0.70711, 1e-5);
}

TEST(Tandem, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    EXPECT_LT(tandem_gradient_error(seed, 10.0), 1e-4) << "seed " << seed;
    EXPECT_LT(tandem_gradient_error(seed, 3.0), 1e-4) << "seed " << seed;
  }
}

TEST(Tandem, LossShapeChecks) {
  const Mlp fse = nn::init_mlp({4, 5, 2}, 1);
  EXPECT_THROW(tandem_loss(Matrix::Zero(3, 2), Matrix::Zero(2, 2), fse, {}), InvalidArgument);
  EXPECT_THROW(tandem_loss(Matrix::Zero(2, 2), Matrix::Zero(3, 2), fse, {}), InvalidArgument);
}

class SmallPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cfg = new PipelineConfig;
    cfg->profile_count = 300;
    cfg->target_count = 400;
    cfg->fse_epochs = 40;
    cfg->ide_epochs = 20;
    cfg->batch_size = 64;
    scene = new Scene(default_scene());
    result = new PipelineResult(run_pipeline(*scene, *cfg, 5));
  }
  static void TearDownTestSuite() {
    delete result;
    delete scene;
    delete cfg;
  }
  static PipelineConfig* cfg;
  static Scene* scene;
  static PipelineResult* result;
};

PipelineConfig* SmallPipeline::cfg = nullptr;
Scene* SmallPipeline::scene = nullptr;
PipelineResult* SmallPipeline::result = nullptr;

TEST_F(SmallPipeline, ModelShapes) {
  EXPECT_EQ(result->fse.model.mlp.dims, (std::vector<int>{40, 100, 100, 3}));
  EXPECT_EQ(result->ide.model.mlp.dims, (std::vector<int>{3, 50, 50, 20}));
  EXPECT_EQ(result->fse.report.train_loss.size(), 40u);
  EXPECT_EQ(result->ide.report.val_loss.size(), 20u);
  EXPECT_EQ(result->fse.model.i_max, result->dataset.i_max);
  EXPECT_EQ(result->eval.rows.size(), split_sizes(400, kTargetSplit)[2]);
}

TEST_F(SmallPipeline, FseFrozenDuringTandemTraining) {
  const auto before = mlp_digest(result->fse.model.mlp);
  const FseModel copy = result->fse.model;
  const auto ide = run_train_ide(result->fse.model, result->target_split, *cfg, 8);
  EXPECT_EQ(mlp_digest(result->fse.model.mlp), before);
  EXPECT_EQ(result->fse.model.mlp, copy.mlp);
  EXPECT_EQ(ide.model.fse_digest, before);
}

TEST_F(SmallPipeline, PredictAndInferAreDeterministic) {
  const auto& fse = result->fse.model;
  const auto& ide = result->ide.model;
  const auto p = random_profile(20, 1);
  EXPECT_EQ(fse_predict(fse, p), fse_predict(fse, p));
  EXPECT_THROW(fse_predict(fse, random_profile(19, 1)), InvalidArgument);
  const std::vector<double> t{0.1, 0.2, 0.3};
  EXPECT_EQ(infer_design(ide, t), infer_design(ide, t));
  EXPECT_EQ(infer_design(ide, t).size(), 20u);
}

TEST_F(SmallPipeline, InferWarnsOutOfRangeAndRejectsNan) {
  const auto& ide = result->ide.model;
  std::vector<std::string> warnings;
  const WarningSink sink = [&](const std::string& m) { warnings.push_back(m); };
  infer_design(ide, std::vector<double>{0.1, 0.2, 0.3}, sink);
  EXPECT_TRUE(warnings.empty());
  const auto p = infer_design(ide, std::vector<double>{0.1, 0.9, 0.3}, sink);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_EQ(p.size(), 20u);
  EXPECT_THROW(infer_design(ide, std::vector<double>{0.1, std::nan(""), 0.3}, sink), InvalidArgument);
  EXPECT_THROW(infer_design(ide, std::vector<double>{0.1, 0.2}, sink), InvalidArgument);
}

TEST_F(SmallPipeline, ClosedLoopUsesTrainingScale) {
  const auto& r = *result;
  Scene quiet = *scene;
  quiet.noise_sigma = 0.0;
  const auto res = closed_loop_eval(r.ide.model, r.fse.model, quiet, r.target_split.test.targets);
  for (const auto& row : res.rows) {
    EXPECT_EQ(row.predicted, fse_predict(r.fse.model, row.profile));
    EXPECT_EQ(row.measured, simulate(quiet, row.profile, r.fse.model.i_max));
  }
  EXPECT_THROW(closed_loop_eval(r.ide.model, r.fse.model, quiet, {}), InvalidArgument);
  const auto threaded = closed_loop_eval(r.ide.model, r.fse.model, *scene, r.target_split.test.targets, {4, 3});
  const auto single = closed_loop_eval(r.ide.model, r.fse.model, *scene, r.target_split.test.targets, {1, 3});
  EXPECT_EQ(threaded.measured_mse, single.measured_mse);
  for (double v : single.measured_mse) EXPECT_GE(v, 0.0);
}

TEST_F(SmallPipeline, ModelFilesRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto fp = (dir / "rispa_test_fse.json").string(), ip = (dir / "rispa_test_ide.json").string();
  save_fse(result->fse.model, fp);
  save_ide(result->ide.model, ip);
  const auto f = load_fse(fp);
  const auto i = load_ide(ip);
  EXPECT_EQ(f.mlp, result->fse.model.mlp);
  EXPECT_EQ(f.i_max, result->fse.model.i_max);
  EXPECT_EQ(f.scene_digest, result->fse.model.scene_digest);
  EXPECT_EQ(i.mlp, result->ide.model.mlp);
  EXPECT_EQ(i.fse_digest, result->ide.model.fse_digest);
  EXPECT_EQ(i.quantizer.temperature_degrees, result->ide.model.quantizer.temperature_degrees);
  EXPECT_THROW(fse_from_json(ide_to_json(i)), Error);
  std::filesystem::remove(fp);
  std::filesystem::remove(ip);
}

TEST(FseTraining, OverfitsTwentyRecords) {
  const auto data = collect(default_scene(), 40, 3);
  std::vector<std::size_t> first(20);
  std::iota(first.begin(), first.end(), 0);
  // Validation on the training records so the kept snapshot is the best fit.
  const Split<ScatterDataset> s{subset(data, first), subset(data, first), subset(data, {20, 21, 22})};
  FseOptions opt;
  opt.epochs = 1500;
  opt.batch_size = 20;
  opt.learning_rate = 2e-3;
  const auto fit = train_fse(s, opt);
  const Matrix x = profiles_matrix(s.train), y = normalized_matrix(s.train);
  EXPECT_LT(nn::evaluate(fit.report.parameters, {&x, nn::regression_objective(y)}), 1e-4);
}
