#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "fl/model.hpp"

using namespace fl;
using namespace fl::model;
using fl::datagen::Qualifier;

namespace {

SeedKey key_of(std::uint64_t s) { return seed_from_u64(s); }

ModelParams toy_model(std::uint32_t input_dim, std::uint32_t hidden,
                      std::uint32_t tasks, std::uint32_t cat_tasks,
                      Nonlinearity nl, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.input_dim = input_dim;
  cfg.hidden = {hidden};
  cfg.n_private_tasks = tasks;
  cfg.n_catalogue_tasks = cat_tasks;
  cfg.nonlinearity = nl;
  return ModelParams::init(cfg, key_of(seed), key_of(seed + 1));
}

ModelParams deep_toy_model(std::vector<std::uint32_t> hidden, std::uint32_t tasks,
                           Nonlinearity nl, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.input_dim = 6;
  cfg.hidden = std::move(hidden);
  cfg.n_private_tasks = tasks;
  cfg.nonlinearity = nl;
  return ModelParams::init(cfg, key_of(seed), key_of(seed + 1));
}

SparseMatrixCsr random_sparse_rows(std::size_t rows, std::size_t dim,
                                   std::size_t per_row, SeededStream& s) {
  std::vector<std::tuple<std::uint64_t, std::uint64_t, double>> triplets;
  for (std::size_t r = 0; r < rows; ++r) {
    std::set<std::uint64_t> cols;
    while (cols.size() < per_row) cols.insert(s.next_below(dim));
    for (const auto c : cols) triplets.emplace_back(r, c, 1.0);
  }
  return SparseMatrixCsr::from_triplets(rows, dim, std::move(triplets));
}

double loss_of(const ModelParams& p, const Batch& batch) {
  return loss(forward(p, batch.X), batch).total;
}

// Pointers to every parameter, in the same order the analytic gradient
// concatenates them: trunk layers (w then b), head, catalogue head.
std::vector<double*> parameter_refs(ModelParams& p) {
  std::vector<double*> refs;
  for (auto& layer : p.trunk) {
    for (auto& w : layer.w) refs.push_back(&w);
    for (auto& b : layer.b) refs.push_back(&b);
  }
  for (auto& w : p.head.w) refs.push_back(&w);
  for (auto& b : p.head.b) refs.push_back(&b);
  if (p.catalogue_head) {
    for (auto& w : p.catalogue_head->w) refs.push_back(&w);
    for (auto& b : p.catalogue_head->b) refs.push_back(&b);
  }
  return refs;
}

void check_against_finite_differences(const ModelParams& params, const Batch& batch,
                                      double tol = 1e-5) {
  const auto fwd = forward(params, batch.X);
  const auto grad = backward(params, batch, fwd);
  std::vector<double> analytic = grad.trunk_grad;
  analytic.insert(analytic.end(), grad.head_grad.begin(), grad.head_grad.end());
  analytic.insert(analytic.end(), grad.catalogue_grad.begin(),
                  grad.catalogue_grad.end());

  ModelParams probe = params;
  const auto refs = parameter_refs(probe);
  ASSERT_EQ(refs.size(), analytic.size());
  ASSERT_LE(refs.size(), 120u);
  const double eps = 1e-4;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const double orig = *refs[i];
    *refs[i] = orig + eps;
    const double lp = loss_of(probe, batch);
    *refs[i] = orig - eps;
    const double lm = loss_of(probe, batch);
    *refs[i] = orig;
    const double numeric = (lp - lm) / (2.0 * eps);
    const double denom = std::max({1.0, std::fabs(numeric), std::fabs(analytic[i])});
    EXPECT_LT(std::fabs(numeric - analytic[i]) / denom, tol)
        << "param " << i << " analytic " << analytic[i] << " numeric " << numeric;
  }
}

}  // namespace

TEST(Forward, ZeroWeightsGiveZeroOutputs) {
  for (const auto nl : {Nonlinearity::RELU, Nonlinearity::TANH}) {
    auto params = toy_model(4, 3, 2, 0, nl, 1);
    for (auto& layer : params.trunk) {
      std::fill(layer.w.begin(), layer.w.end(), 0.0);
      std::fill(layer.b.begin(), layer.b.end(), 0.0);
    }
    std::fill(params.head.w.begin(), params.head.w.end(), 0.0);
    std::fill(params.head.b.begin(), params.head.b.end(), 0.0);
    const auto X = SparseMatrixCsr::from_triplets(2, 4, {{0, 1, 1.0}, {1, 3, 1.0}});
    const auto fwd = forward(params, X);
    for (const double v : fwd.y_head) EXPECT_DOUBLE_EQ(v, 0.0);
  }
}

TEST(Forward, MatchesHandComputedExample) {
  // One hidden layer, relu: h = relu(x W0 + b0), y = h Wh + bh.
  ModelParams p;
  p.nonlinearity = Nonlinearity::RELU;
  p.trunk.push_back(DenseLayer{2, 2, {0.5, -0.25, 1.0, 2.0}, {0.1, -0.2}});
  p.head = DenseLayer{2, 1, {2.0, 3.0}, {0.25}};
  const auto X = SparseMatrixCsr::from_triplets(1, 2, {{0, 0, 1.0}});
  const auto fwd = forward(p, X);
  // x=(1,0): preact = (0.6, -0.45) -> h = (0.6, 0) -> y = 1.2 + 0.25.
  ASSERT_EQ(fwd.y_head.size(), 1u);
  EXPECT_NEAR(fwd.y_head[0], 1.45, 1e-12);
}

TEST(Forward, BatchEqualsRowStackedSingles) {
  const auto params = toy_model(10, 5, 3, 0, Nonlinearity::TANH, 2);
  SeededStream s(key_of(3), 0);
  const auto X = random_sparse_rows(4, 10, 3, s);
  const auto batch_fwd = forward(params, X);
  for (std::uint32_t r = 0; r < 4; ++r) {
    const std::uint32_t row[] = {r};
    const auto single = forward(params, X.slice_rows(row));
    for (std::size_t t = 0; t < 3; ++t)
      EXPECT_DOUBLE_EQ(single.y_head[t], batch_fwd.y_head[r * 3 + t]);
  }
}

TEST(Forward, DimensionMismatchRejected) {
  const auto params = toy_model(10, 5, 3, 0, Nonlinearity::RELU, 2);
  const auto X = SparseMatrixCsr::from_triplets(1, 7, {{0, 0, 1.0}});
  EXPECT_THROW(forward(params, X), DimensionError);
}

TEST(Loss, PerfectRegressionGivesZero) {
  Forward fwd;
  fwd.batch_rows = 1;
  fwd.y_head = {2.5};
  Batch batch;
  batch.reg.push_back({0, 0, 2.5, Qualifier::EQ, 1.0});
  EXPECT_DOUBLE_EQ(loss(fwd, batch).total, 0.0);
}

TEST(Loss, CensoredTermsFollowTheBound) {
  Batch batch;
  batch.reg.push_back({0, 0, 2.0, Qualifier::LT, 1.0});
  Forward ok;
  ok.batch_rows = 1;
  ok.y_head = {1.5};
  EXPECT_DOUBLE_EQ(loss(ok, batch).total, 0.0);
  Forward bad;
  bad.batch_rows = 1;
  bad.y_head = {2.5};
  EXPECT_DOUBLE_EQ(loss(bad, batch).total, 0.25);

  Batch gt;
  gt.reg.push_back({0, 0, 2.0, Qualifier::GT, 1.0});
  Forward above;
  above.batch_rows = 1;
  above.y_head = {2.5};
  EXPECT_DOUBLE_EQ(loss(above, gt).total, 0.0);
  Forward below;
  below.batch_rows = 1;
  below.y_head = {1.0};
  EXPECT_DOUBLE_EQ(loss(below, gt).total, 1.0);
}

TEST(Loss, HybridSumsSplitAcrossKinds) {
  // With per-entry normalization, the hybrid loss times its entry count
  // equals the sum of the per-kind losses times their entry counts.
  Forward fwd;
  fwd.batch_rows = 2;
  fwd.y_head = {0.3, -1.2, 0.8, 2.0};
  Batch hyb;
  hyb.cls.push_back({0, 0, false, 1.0, 1.0});
  hyb.cls.push_back({1, 1, false, -1.0, 1.0});
  hyb.reg.push_back({0, 1, 0.5, Qualifier::EQ, 1.0});
  Batch cls_only;
  cls_only.cls = hyb.cls;
  Batch reg_only;
  reg_only.reg = hyb.reg;
  const double lhs = loss(fwd, hyb).total * 3.0;
  const double rhs = loss(fwd, cls_only).total * 2.0 + loss(fwd, reg_only).total * 1.0;
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Backward, MatchesFiniteDifferencesClassification) {
  for (const auto nl : {Nonlinearity::RELU, Nonlinearity::TANH}) {
    const auto params = toy_model(6, 4, 2, 0, nl, 10);
    SeededStream s(key_of(11), 0);
    Batch batch;
    batch.X = random_sparse_rows(3, 6, 2, s);
    batch.cls.push_back({0, 0, false, 1.0, 1.0});
    batch.cls.push_back({0, 1, false, -1.0, 0.5});
    batch.cls.push_back({1, 0, false, -1.0, 1.0});
    batch.cls.push_back({2, 1, false, 1.0, 2.0});
    check_against_finite_differences(params, batch);
  }
}

TEST(Backward, MatchesFiniteDifferencesCensoredRegression) {
  for (const auto nl : {Nonlinearity::RELU, Nonlinearity::TANH}) {
    const auto params = toy_model(6, 4, 2, 0, nl, 12);
    SeededStream s(key_of(13), 0);
    Batch batch;
    batch.X = random_sparse_rows(3, 6, 2, s);
    batch.reg.push_back({0, 0, 0.1, Qualifier::EQ, 1.0});
    // Bounds picked so both active and inactive censored branches appear.
    batch.reg.push_back({1, 0, -5.0, Qualifier::LT, 1.0});  // active: pred > bound
    batch.reg.push_back({1, 1, 5.0, Qualifier::LT, 1.0});   // inactive
    batch.reg.push_back({2, 0, 5.0, Qualifier::GT, 2.0});   // active: pred < bound
    batch.reg.push_back({2, 1, -5.0, Qualifier::GT, 1.0});  // inactive
    check_against_finite_differences(params, batch);
  }
}

TEST(Backward, MatchesFiniteDifferencesHybridWithCatalogue) {
  for (const auto nl : {Nonlinearity::RELU, Nonlinearity::TANH}) {
    const auto params = toy_model(6, 4, 2, 1, nl, 14);
    SeededStream s(key_of(15), 0);
    Batch batch;
    batch.X = random_sparse_rows(3, 6, 2, s);
    batch.cls.push_back({0, 0, false, 1.0, 1.0});
    batch.cls.push_back({1, 0, true, -1.0, 1.0});  // catalogue entry
    batch.reg.push_back({2, 1, 0.3, Qualifier::EQ, 1.0});
    batch.reg.push_back({0, 1, -5.0, Qualifier::LT, 0.5});
    check_against_finite_differences(params, batch);
  }
}

TEST(Backward, MatchesFiniteDifferencesWithTwoTrunkLayers) {
  // Exercises backpropagation through inner trunk layers, not only the
  // sparse input layer.
  for (const auto nl : {Nonlinearity::RELU, Nonlinearity::TANH}) {
    const auto params = deep_toy_model({4, 3}, 2, nl, 60);
    SeededStream s(key_of(61), 0);
    Batch batch;
    batch.X = random_sparse_rows(3, 6, 2, s);
    batch.cls.push_back({0, 0, false, 1.0, 1.0});
    batch.cls.push_back({1, 1, false, -1.0, 1.0});
    batch.reg.push_back({2, 0, 0.25, Qualifier::EQ, 1.0});
    check_against_finite_differences(params, batch);
  }
}

TEST(Backward, FeatureRowsAbsentFromBatchHaveZeroGradient) {
  const auto params = toy_model(20, 4, 2, 0, Nonlinearity::RELU, 16);
  Batch batch;
  batch.X = SparseMatrixCsr::from_triplets(2, 20, {{0, 3, 1.0}, {1, 7, 1.0}});
  batch.cls.push_back({0, 0, false, 1.0, 1.0});
  batch.cls.push_back({1, 1, false, -1.0, 1.0});
  const auto fwd = forward(params, batch.X);
  const auto grad = backward(params, batch, fwd);
  const std::size_t out_dim = params.trunk[0].out_dim;
  for (std::size_t f = 0; f < 20; ++f) {
    const bool active = f == 3 || f == 7;
    double norm = 0.0;
    for (std::size_t o = 0; o < out_dim; ++o)
      norm += std::fabs(grad.trunk_grad[f * out_dim + o]);
    if (active)
      EXPECT_GT(norm, 0.0) << "feature " << f;
    else
      EXPECT_DOUBLE_EQ(norm, 0.0) << "feature " << f;
  }
}

TEST(Backward, NoCatalogueEntriesMeansZeroCatalogueGradient) {
  const auto params = toy_model(6, 4, 2, 2, Nonlinearity::RELU, 17);
  SeededStream s(key_of(18), 0);
  Batch batch;
  batch.X = random_sparse_rows(2, 6, 2, s);
  batch.cls.push_back({0, 0, false, 1.0, 1.0});
  const auto grad = backward(params, batch, forward(params, batch.X));
  for (const double g : grad.catalogue_grad) EXPECT_DOUBLE_EQ(g, 0.0);
}

TEST(Backward, CountsReportBatchShape) {
  const auto params = toy_model(6, 4, 2, 0, Nonlinearity::RELU, 19);
  SeededStream s(key_of(20), 0);
  Batch batch;
  batch.X = random_sparse_rows(3, 6, 2, s);
  batch.cls.push_back({0, 0, false, 1.0, 1.0});
  batch.reg.push_back({1, 1, 0.5, Qualifier::EQ, 1.0});
  const auto grad = backward(params, batch, forward(params, batch.X));
  EXPECT_EQ(grad.n_samples, 3u);
  EXPECT_EQ(grad.nnz, 2u);
  EXPECT_EQ(grad.x_nnz, 6u);
}

TEST(ApplyUpdate, ZeroDeltaLeavesParamsUnchanged) {
  const auto params = toy_model(6, 4, 2, 0, Nonlinearity::RELU, 21);
  const std::vector<double> zero_trunk(params.trunk_param_count(), 0.0);
  const std::vector<double> zero_head(params.head.param_count(), 0.0);
  const auto next = params.stepped(zero_trunk, zero_head, 0.5);
  EXPECT_EQ(next.flatten_trunk(), params.flatten_trunk());
  EXPECT_EQ(next.head.w, params.head.w);
}

TEST(ApplyUpdate, SameDeltaKeepsTrunksIdentical) {
  const auto a = toy_model(6, 4, 2, 0, Nonlinearity::RELU, 22);
  auto b = a;
  // Different heads, same trunk: still identical trunks after the step.
  std::fill(b.head.w.begin(), b.head.w.end(), 0.77);
  std::vector<double> delta(a.trunk_param_count());
  SeededStream s(key_of(23), 0);
  for (auto& d : delta) d = s.next_gaussian();
  const auto a2 = a.stepped(delta, {}, 0.1);
  const auto b2 = b.stepped(delta, {}, 0.1);
  EXPECT_EQ(a2.flatten_trunk(), b2.flatten_trunk());
}

TEST(ApplyUpdate, SingleSgdStepDescendsOnConvexToy) {
  const auto params = toy_model(4, 3, 1, 0, Nonlinearity::TANH, 24);
  SeededStream s(key_of(25), 0);
  Batch batch;
  batch.X = random_sparse_rows(6, 4, 2, s);
  for (std::uint32_t r = 0; r < 6; ++r)
    batch.reg.push_back({r, 0, 1.0, Qualifier::EQ, 1.0});
  const double before = loss_of(params, batch);
  const auto grad = backward(params, batch, forward(params, batch.X));
  const auto next = params.stepped(grad.trunk_grad, grad.head_grad, 0.05);
  EXPECT_LT(loss_of(next, batch), before);
}

TEST(ApplyUpdate, ShapeMismatchRejected) {
  const auto params = toy_model(6, 4, 2, 0, Nonlinearity::RELU, 26);
  const std::vector<double> wrong(3, 0.0);
  EXPECT_THROW(params.stepped(wrong, {}, 0.1), DimensionError);
  EXPECT_THROW(params.stepped({}, wrong, 0.1), DimensionError);
}

TEST(Checkpoint, TrunkAndHeadRoundTripThroughSeparateFiles) {
  const auto params = toy_model(6, 4, 2, 1, Nonlinearity::TANH, 27);
  const auto dir = std::filesystem::temp_directory_path();
  const auto trunk_file = dir / "fl_test_trunk.mdym";
  const auto head_file = dir / "fl_test_head.mdym";
  save_trunk(trunk_file, params);
  save_head(head_file, params);
  auto loaded = load_trunk(trunk_file);
  load_head_into(head_file, loaded);
  EXPECT_EQ(loaded.flatten_trunk(), params.flatten_trunk());
  EXPECT_EQ(loaded.head.w, params.head.w);
  ASSERT_TRUE(loaded.catalogue_head.has_value());
  EXPECT_EQ(loaded.catalogue_head->w, params.catalogue_head->w);
  EXPECT_EQ(loaded.nonlinearity, params.nonlinearity);
  // A head file is not a trunk file.
  EXPECT_THROW(load_trunk(head_file), IoError);
  std::filesystem::remove(trunk_file);
  std::filesystem::remove(head_file);
}
