#pragma once

// Small synthetic worlds shared by the federation, privacy and
// acceptance suites: dense enough that every task clears the quorum,
// small enough that a federated round takes milliseconds.

#include <cstdint>
#include <vector>

#include "fl/datagen.hpp"

namespace fl::testworld {

struct WorldSpec {
  std::uint64_t world_seed = 77;
  std::uint32_t n_partners = 3;
  std::uint64_t n_compounds = 600;
  std::uint32_t n_cls_tasks = 6;
  std::uint32_t n_reg_tasks = 2;
  std::uint32_t n_aux_tasks = 0;
  std::uint32_t n_catalogue_tasks = 0;
  std::vector<std::uint32_t> catalogue_partners;
  double overlap = 0.3;
  double mean_measurements = 6.0;
  std::uint32_t feature_dim = 256;
  std::uint32_t n_active_bits = 12;
  std::uint32_t quorum = 3;
  datagen::Variant variant = datagen::Variant::HYB;
};

inline datagen::GenConfig gen_config(const WorldSpec& spec, std::uint32_t partner) {
  datagen::GenConfig gc;
  gc.world_seed = spec.world_seed;
  gc.partner_index = partner;
  gc.n_partners = spec.n_partners;
  gc.n_compounds = spec.n_compounds;
  gc.n_cls_tasks = spec.n_cls_tasks;
  gc.n_reg_tasks = spec.n_reg_tasks;
  gc.n_aux_tasks = spec.n_aux_tasks;
  gc.n_catalogue_tasks = spec.n_catalogue_tasks;
  gc.catalogue_partners = spec.catalogue_partners;
  gc.overlap_fraction = spec.overlap;
  gc.mean_measurements_per_compound = spec.mean_measurements;
  gc.feature_dim = spec.feature_dim;
  gc.n_active_bits = spec.n_active_bits;
  return gc;
}

inline datagen::DatasetBundle make_bundle(const WorldSpec& spec, std::uint32_t partner) {
  const auto gc = gen_config(spec, partner);
  datagen::PrepConfig pc;
  pc.variant = spec.variant;
  pc.quorum = spec.quorum;
  pc.n_folds = 5;
  pc.fold_seed = spec.world_seed;
  pc.feature_dim = spec.feature_dim;
  pc.n_active_bits = spec.n_active_bits;
  pc.task_catalog = datagen::world_task_catalog(gc);
  return datagen::prepare(datagen::generate_raw(gc), pc);
}

inline std::vector<std::pair<std::uint32_t, datagen::DatasetBundle>> make_bundles(
    const WorldSpec& spec) {
  std::vector<std::pair<std::uint32_t, datagen::DatasetBundle>> bundles;
  for (std::uint32_t p = 0; p < spec.n_partners; ++p)
    bundles.emplace_back(p, make_bundle(spec, p));
  return bundles;
}

}  // namespace fl::testworld
