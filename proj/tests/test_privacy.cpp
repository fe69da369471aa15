#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <tuple>

#include "fl/datagen.hpp"
#include "fl/privacy.hpp"

using namespace fl;
using namespace fl::privacy;

namespace {

model::ModelParams snapshot_model(std::uint32_t dim, std::uint32_t hidden,
                                  std::uint32_t tasks, std::uint64_t seed) {
  model::ModelConfig cfg;
  cfg.input_dim = dim;
  cfg.hidden = {hidden};
  cfg.n_private_tasks = tasks;
  return model::ModelParams::init(cfg, seed_from_u64(seed), seed_from_u64(seed + 1));
}

model::Batch batch_of(std::span<const std::uint64_t> ids,
                      std::span<const std::uint32_t> tasks,
                      std::span<const double> labels, std::uint32_t dim,
                      std::uint32_t n_active) {
  model::Batch batch;
  std::vector<std::tuple<std::uint64_t, std::uint64_t, double>> triplets;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (const auto bit : datagen::featurize(ids[i], dim, n_active))
      triplets.emplace_back(i, bit, 1.0);
    batch.cls.push_back({static_cast<std::uint32_t>(i), tasks[i], false, labels[i], 1.0});
  }
  batch.X = SparseMatrixCsr::from_triplets(ids.size(), dim, std::move(triplets));
  return batch;
}

}  // namespace

TEST(MiaScore, BatchOfOneScoresExactlyOne) {
  const std::uint32_t dim = 128, n_active = 8;
  const auto snapshot = snapshot_model(dim, 8, 3, 50);
  const std::uint64_t ids[] = {42};
  const std::uint32_t tasks[] = {1};
  const double labels[] = {1.0};
  const auto probe = batch_of(ids, tasks, labels, dim, n_active);
  const auto grad =
      model::backward(snapshot, probe, model::forward(snapshot, probe.X));
  EXPECT_NEAR(mia_score(grad.trunk_grad, snapshot, probe), 1.0, 1e-12);
}

TEST(MiaScore, DisjointFeatureSupportHasZeroFirstLayerOverlap) {
  const std::uint32_t dim = 4096, n_active = 8;
  const auto snapshot = snapshot_model(dim, 8, 3, 51);
  const std::uint64_t batch_ids[] = {1, 2, 3};
  const std::uint32_t batch_tasks[] = {0, 1, 2};
  const double batch_labels[] = {1.0, -1.0, 1.0};
  const auto batch = batch_of(batch_ids, batch_tasks, batch_labels, dim, n_active);
  const auto observed =
      model::backward(snapshot, batch, model::forward(snapshot, batch.X));

  // Find a probe whose fingerprint shares no feature with the batch.
  std::set<std::uint64_t> used;
  for (std::size_t r = 0; r < batch.X.n_rows(); ++r)
    for (const auto c : batch.X.row_cols(r)) used.insert(c);
  std::uint64_t probe_id = 100;
  for (;; ++probe_id) {
    bool disjoint = true;
    for (const auto bit : datagen::featurize(probe_id, dim, n_active))
      if (used.count(bit)) disjoint = false;
    if (disjoint) break;
  }
  const std::uint64_t pid[] = {probe_id};
  const std::uint32_t ptask[] = {0};
  const double plabel[] = {1.0};
  const auto probe = batch_of(pid, ptask, plabel, dim, n_active);
  const auto probe_grad =
      model::backward(snapshot, probe, model::forward(snapshot, probe.X));

  // Restricted to the first trunk layer's weight rows, the dot product
  // vanishes: the batch gradient is zero on the probe's feature rows.
  const std::size_t out_dim = snapshot.trunk[0].out_dim;
  double dot = 0.0;
  for (const auto bit : datagen::featurize(probe_id, dim, n_active))
    for (std::size_t o = 0; o < out_dim; ++o)
      dot += observed.trunk_grad[bit * out_dim + o] *
             probe_grad.trunk_grad[bit * out_dim + o];
  EXPECT_DOUBLE_EQ(dot, 0.0);
}

TEST(MiaScore, DimensionMismatchRejected) {
  const auto snapshot = snapshot_model(64, 8, 2, 52);
  const std::uint64_t ids[] = {1};
  const std::uint32_t tasks[] = {0};
  const double labels[] = {1.0};
  const auto probe = batch_of(ids, tasks, labels, 64, 8);
  const std::vector<double> wrong(17, 0.0);
  EXPECT_THROW(mia_score(wrong, snapshot, probe), DimensionError);
}

TEST(Mia, SingleUpdateLeaksMoreThanAggregates) {
  MiaConfig single;
  single.n_trials = 200;
  MiaConfig agg8 = single;
  agg8.n_partners = 8;
  const auto r1 = run_mia(single);
  const auto r8 = run_mia(agg8);
  EXPECT_EQ(r1.kind, AttackKind::MIA_SINGLE);
  EXPECT_EQ(r8.kind, AttackKind::MIA_AGGREGATE);
  EXPECT_GE(r1.accuracy - r8.accuracy, 0.10)
      << "single " << r1.accuracy << " vs agg-8 " << r8.accuracy;
}

TEST(Mia, AdvantageIsMonotoneNonIncreasingInAggregationWidth) {
  double prev = 1.0;
  for (const std::uint32_t p : {1u, 2u, 4u, 8u}) {
    MiaConfig cfg;
    cfg.n_trials = 200;
    cfg.n_partners = p;
    const auto r = run_mia(cfg);
    EXPECT_LE(r.advantage, prev + 0.03) << "P=" << p;
    prev = r.advantage;
  }
}

TEST(Mia, MaskedServerViewIsUseless) {
  MiaConfig cfg;
  cfg.n_trials = 200;
  cfg.masked_view = true;
  const auto r = run_mia(cfg);
  EXPECT_EQ(r.kind, AttackKind::MIA_MASKED);
  EXPECT_NEAR(r.accuracy, 0.5, 0.05);
}

TEST(Differentiation, UngroupedLeaverIsAttributed) {
  DiffConfig cfg;
  cfg.n_trials = 100;
  cfg.group_size = 1;
  const auto r = run_differentiation(cfg);
  EXPECT_GT(r.accuracy, 0.7) << "ungrouped attribution rate " << r.accuracy;
}

TEST(Differentiation, GroupedChurnCapsAttribution) {
  DiffConfig cfg;
  cfg.n_trials = 100;
  cfg.group_size = 4;
  const auto r = run_differentiation(cfg);
  EXPECT_LE(r.accuracy, 0.25 + 0.1) << "grouped attribution rate " << r.accuracy;
}

TEST(Differentiation, NoChurnDegeneratesToChance) {
  DiffConfig cfg;
  cfg.n_trials = 100;
  cfg.churn = false;
  const auto r = run_differentiation(cfg);
  EXPECT_NEAR(r.accuracy, 0.5, 0.1);
}

TEST(Results, SerializeToCsvAndJson) {
  std::vector<AttackResult> results = {
      {AttackKind::MIA_SINGLE, 0.9, 0.4, 200, "aggregate-of-1"}};
  const auto csv = results_to_csv(results);
  EXPECT_NE(csv.find("MIA_SINGLE,0.9,0.4,200,aggregate-of-1"), std::string::npos);
  const auto json = results_to_json(results);
  EXPECT_NE(json.find("\"accuracy\": 0.9"), std::string::npos);
}
