#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fl/bus.hpp"
#include "fl/datagen.hpp"
#include "fl/fixed_point.hpp"
#include "fl/model.hpp"
#include "fl/plan.hpp"
#include "fl/rng.hpp"
#include "fl/secagg.hpp"

namespace fl::fed {

// Membership changes are legal only in groups of at least
// min_group_size, and only at phase boundaries.
struct ChurnPolicy {
  std::uint32_t min_group_size = 1;
};

struct ChurnEvent {
  bool join = false;  // false = leave
  std::vector<std::uint32_t> orgs;
  bool at_phase_boundary = true;
};

bool enforce_churn(const ChurnPolicy& policy, const ChurnEvent& event);

// Hooks for deliberately breaking a run; this is how the dropout-abort
// and permission guarantees are exercised end to end.
struct FaultPlan {
  std::optional<std::pair<std::uint32_t, std::uint32_t>> drop_partner;  // (round, org)
  std::optional<std::uint32_t> send_full_model_round;
  std::optional<std::uint32_t> send_raw_rows_round;
  std::optional<std::uint32_t> attributed_score_round;
};

struct FederationConfig {
  secagg::WeightScheme weighting = secagg::WeightScheme::DATA_PROPORTIONAL;
  double subset_fraction = 1.0;  // k = max(1, round(fraction * trunk_dim))
  std::uint32_t epochs = 1;
  std::uint32_t batches_per_epoch = 10;
  double lr = 0.1;
  std::vector<std::uint32_t> hidden = {64};
  model::Nonlinearity nonlinearity = model::Nonlinearity::RELU;
  std::uint32_t phase = 1;
  ChurnPolicy churn;
  std::uint64_t master_seed = 1;
  FixedPointCodec codec{};
  std::uint32_t test_every_epochs = 1;
  FaultPlan faults;
};

struct MetricRow {
  std::uint64_t round = 0;
  std::uint32_t partner_anon_id = 0;
  std::int64_t task_idx = -1;  // -1 for whole-model rows (val_loss)
  std::string metric_name;
  double value = 0.0;
};

std::string metrics_to_csv(std::span<const MetricRow> rows);

struct PhaseFolds {
  std::vector<std::uint8_t> train;
  std::optional<std::uint8_t> eval;
};

// Phase 1: train 60% (folds 0-2), evaluate fold 3, hold out fold 4.
// Phase 2: train 80% (folds 0-3), evaluate fold 4.
// Phase 3: train everything, no evaluation possible.
PhaseFolds phase_folds(std::uint32_t phase);

// Simulated multi-organization federation: one state block per partner
// org, one aggregator org, and a permissioned bus carrying serialized
// messages. All execution follows the compute plan's topological order.
class Federation {
 public:
  Federation(FederationConfig cfg,
             std::vector<std::pair<std::uint32_t, datagen::DatasetBundle>> bundles);
  ~Federation();
  Federation(const Federation&) = delete;
  Federation& operator=(const Federation&) = delete;

  // Executes the configured phase's full compute plan.
  void run();

  // Group join/leave between phases. Returns false when the policy
  // rejects the event; the coalition is unchanged in that case.
  bool apply_churn(const ChurnEvent& event,
                   std::vector<std::pair<std::uint32_t, datagen::DatasetBundle>>
                       joining_bundles = {});

  const model::ModelParams& partner_params(std::uint32_t org) const;
  const datagen::DatasetBundle& partner_bundle(std::uint32_t org) const;
  std::vector<std::uint32_t> partner_ids() const;
  std::uint32_t anon_id(std::uint32_t org) const;
  std::uint8_t key_epoch() const { return key_epoch_; }

  const std::vector<MetricRow>& metrics() const { return metrics_; }
  const std::vector<std::uint8_t>& transcript() const;

  bool trunks_identical() const;
  // Mini-batch membership is a pure function of (partner seed, round).
  std::vector<std::uint32_t> batch_rows(std::uint32_t org, std::uint32_t round) const;
  // Task-weighted mean per-entry loss of a partner's model on one fold.
  double evaluate_loss(std::uint32_t org, std::uint8_t fold) const;
  // Per-task scores of a partner's model on one fold (AUROC / RMSE).
  std::vector<MetricRow> evaluate_tasks(std::uint32_t org, std::uint8_t fold) const;

  // Switch phase / schedule between run() calls (training state carries
  // over; the next run() builds a fresh plan).
  void set_phase(std::uint32_t phase);
  void set_schedule(std::uint32_t epochs, std::uint32_t batches_per_epoch);

  // Invoked after every successfully applied round (global round index,
  // the same counter batch_rows and the mask labels use).
  std::function<void(std::uint32_t round)> after_round;

 private:
  struct PartnerState;
  struct AggregatorState;

  void execute_train(const PlanNode& node);
  void execute_aggregate(const PlanNode& node);
  void execute_test(const PlanNode& node);
  void on_round_totals(PartnerState& ps, std::uint64_t round,
                       const secagg::RoundTotals& totals);
  void on_aggregate_result(PartnerState& ps, std::uint64_t round, bool catalogue,
                           std::span<const std::uint64_t> coords,
                           std::span<const std::uint64_t> values);
  void provision_keys();
  PartnerState& partner(std::uint32_t org);
  const PartnerState& partner(std::uint32_t org) const;

  FederationConfig cfg_;
  SeedKey master_key_;
  SeedKey trunk_key_;
  SeedKey setup_key_;
  std::uint8_t key_epoch_ = 0;
  std::uint32_t round_base_ = 0;
  std::uint32_t aggregator_org_ = 0;
  std::vector<std::unique_ptr<PartnerState>> partners_;
  std::unique_ptr<AggregatorState> aggregator_;
  std::unique_ptr<Bus> bus_;
  std::vector<MetricRow> metrics_;
  std::map<std::uint32_t, std::uint32_t> anon_ids_;
  std::uint32_t next_anon_ = 0;
  bool phase_in_progress_ = false;
};

}  // namespace fl::fed
