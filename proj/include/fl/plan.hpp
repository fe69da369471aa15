#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fl/common.hpp"

namespace fl::fed {

enum class TaskType : std::uint8_t { TRAIN = 0, AGGREGATE = 1, TEST = 2 };

struct PlanNode {
  std::uint32_t id = 0;
  TaskType kind = TaskType::TRAIN;
  std::uint32_t org = 0;
  std::uint32_t round = 0;  // epoch * batches_per_epoch + batch
  std::uint32_t epoch = 0;
  std::uint32_t batch = 0;
  std::vector<std::uint32_t> parents;
};

// Directed acyclic graph of train / aggregate / test tasks, each pinned
// to an organization. Training data never moves: TRAIN and TEST execute
// on the org that owns the referenced mini-batch.
struct ComputePlan {
  std::vector<PlanNode> nodes;
  std::uint32_t n_partners = 0;
  std::uint32_t aggregator_org = 0;
  std::uint32_t n_rounds = 0;
  std::uint32_t batches_per_epoch = 0;
  std::uint32_t phase = 1;

  // Throws on cycles or assignment violations.
  void validate() const;
  // Deterministic topological order (Kahn, lowest node id first).
  std::vector<std::uint32_t> topological_order() const;
};

// One round = P TRAIN nodes feeding one AGGREGATE node; each next-round
// TRAIN depends on the previous AGGREGATE. At every round listed in
// test_rounds each partner gets a TEST node (phase 3 schedules none).
ComputePlan build_plan(std::uint32_t n_partners, std::uint32_t epochs,
                       std::uint32_t batches_per_epoch, std::uint32_t phase,
                       std::span<const std::uint32_t> test_rounds);

}  // namespace fl::fed
