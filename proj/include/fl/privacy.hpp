#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fl/model.hpp"
#include "fl/rng.hpp"

namespace fl::privacy {

enum class AttackKind : std::uint8_t {
  MIA_SINGLE = 0,
  MIA_AGGREGATE = 1,
  MIA_MASKED = 2,
  DIFFERENTIATION = 3,
};

const char* to_string(AttackKind k);

struct AttackResult {
  AttackKind kind = AttackKind::MIA_SINGLE;
  double accuracy = 0.0;
  double advantage = 0.0;  // accuracy - 0.5
  std::uint32_t n_trials = 0;
  std::string target;
};

// Cosine similarity between an observed trunk update and the probe's own
// trunk gradient on the snapshot the update was computed from.
double mia_score(std::span<const double> observed_trunk_update,
                 const model::ModelParams& snapshot, const model::Batch& probe);

// Overfit-friendly toy world: tiny model, tiny batches, one label per
// compound. Sized so that leakage is measurable at desk scale.
struct MiaConfig {
  std::uint64_t seed = 7;
  std::uint32_t n_trials = 200;       // balanced member / non-member
  std::uint32_t n_calibration = 100;  // threshold calibration trials
  std::uint32_t n_partners = 1;       // width of the observed aggregate
  std::uint32_t batch_size = 8;
  std::uint32_t feature_dim = 256;
  std::uint32_t n_active_bits = 12;
  std::uint32_t hidden = 16;
  std::uint32_t n_tasks = 4;
  bool masked_view = false;  // attacker only sees the masked submission
};

AttackResult run_mia(const MiaConfig& cfg);

struct DiffConfig {
  std::uint64_t seed = 11;
  std::uint32_t n_trials = 100;
  std::uint32_t coalition_size = 8;  // partners before the leave event
  std::uint32_t group_size = 1;      // how many leave together
  std::uint32_t rounds_per_segment = 4;
  std::uint32_t batch_size = 8;
  std::uint32_t feature_dim = 256;
  std::uint32_t n_active_bits = 12;
  std::uint32_t hidden = 16;
  std::uint32_t n_tasks = 4;
  bool churn = true;  // false models the no-churn null experiment
};

AttackResult run_differentiation(const DiffConfig& cfg);

std::string results_to_csv(std::span<const AttackResult> results);
std::string results_to_json(std::span<const AttackResult> results);

}  // namespace fl::privacy
