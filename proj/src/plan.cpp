#include "fl/plan.hpp"

#include <algorithm>
#include <queue>

namespace fl::fed {

void ComputePlan::validate() const {
  for (const auto& node : nodes) {
    if (node.kind == TaskType::AGGREGATE) {
      if (node.org != aggregator_org)
        throw ConfigError("plan: AGGREGATE node assigned to a partner org");
    } else {
      if (node.org == aggregator_org)
        throw ConfigError("plan: TRAIN/TEST node assigned to the aggregator");
      if (node.org >= n_partners)
        throw ConfigError("plan: node assigned to unknown org");
    }
    for (const auto p : node.parents)
      if (p >= nodes.size()) throw ConfigError("plan: dangling parent edge");
  }
  // A topological order exists iff the edge relation is acyclic.
  topological_order();
}

std::vector<std::uint32_t> ComputePlan::topological_order() const {
  std::vector<std::uint32_t> indegree(nodes.size(), 0);
  std::vector<std::vector<std::uint32_t>> children(nodes.size());
  for (const auto& node : nodes) {
    for (const auto p : node.parents) {
      children[p].push_back(node.id);
      indegree[node.id]++;
    }
  }
  std::priority_queue<std::uint32_t, std::vector<std::uint32_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (indegree[i] == 0) ready.push(static_cast<std::uint32_t>(i));
  std::vector<std::uint32_t> order;
  order.reserve(nodes.size());
  while (!ready.empty()) {
    const auto id = ready.top();
    ready.pop();
    order.push_back(id);
    for (const auto c : children[id])
      if (--indegree[c] == 0) ready.push(c);
  }
  if (order.size() != nodes.size())
    throw ConfigError("plan: cycle detected");
  return order;
}

ComputePlan build_plan(std::uint32_t n_partners, std::uint32_t epochs,
                       std::uint32_t batches_per_epoch, std::uint32_t phase,
                       std::span<const std::uint32_t> test_rounds) {
  if (n_partners == 0) throw ConfigError("plan: need at least one partner");
  if (epochs == 0 || batches_per_epoch == 0)
    throw ConfigError("plan: zero rounds");
  if (phase < 1 || phase > 3) throw ConfigError("plan: phase must be 1, 2 or 3");

  ComputePlan plan;
  plan.n_partners = n_partners;
  plan.aggregator_org = n_partners;  // orgs 0..P-1 are partners
  plan.n_rounds = epochs * batches_per_epoch;
  plan.batches_per_epoch = batches_per_epoch;
  plan.phase = phase;

  std::uint32_t next_id = 0;
  std::uint32_t prev_agg = 0;
  bool have_prev = false;
  for (std::uint32_t r = 0; r < plan.n_rounds; ++r) {
    std::vector<std::uint32_t> train_ids;
    for (std::uint32_t p = 0; p < n_partners; ++p) {
      PlanNode node;
      node.id = next_id++;
      node.kind = TaskType::TRAIN;
      node.org = p;
      node.round = r;
      node.epoch = r / batches_per_epoch;
      node.batch = r % batches_per_epoch;
      if (have_prev) node.parents.push_back(prev_agg);
      train_ids.push_back(node.id);
      plan.nodes.push_back(std::move(node));
    }
    PlanNode agg;
    agg.id = next_id++;
    agg.kind = TaskType::AGGREGATE;
    agg.org = plan.aggregator_org;
    agg.round = r;
    agg.epoch = r / batches_per_epoch;
    agg.batch = r % batches_per_epoch;
    agg.parents = train_ids;
    prev_agg = agg.id;
    have_prev = true;
    plan.nodes.push_back(std::move(agg));

    if (phase != 3 &&
        std::find(test_rounds.begin(), test_rounds.end(), r) != test_rounds.end()) {
      for (std::uint32_t p = 0; p < n_partners; ++p) {
        PlanNode node;
        node.id = next_id++;
        node.kind = TaskType::TEST;
        node.org = p;
        node.round = r;
        node.epoch = r / batches_per_epoch;
        node.batch = r % batches_per_epoch;
        node.parents.push_back(prev_agg);
        plan.nodes.push_back(std::move(node));
      }
    }
  }
  plan.validate();
  return plan;
}

}  // namespace fl::fed
