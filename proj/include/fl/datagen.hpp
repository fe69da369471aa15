#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fl/csr.hpp"
#include "fl/rng.hpp"

namespace fl::datagen {

enum class Qualifier : std::uint8_t { EQ = 0, LT = 1, GT = 2 };

enum class TaskKind : std::uint8_t { CLS = 0, REG = 1, AUX = 2, CATALOGUE = 3 };

enum class Variant : std::uint8_t { CLS = 0, CLSAUX = 1, REG = 2, HYB = 3 };

const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);

// One raw activity measurement as it would leave a partner's warehouse.
struct ActivityRecord {
  std::uint64_t compound_id = 0;
  std::uint32_t task_id = 0;
  double value = 0.0;
  Qualifier qualifier = Qualifier::EQ;
  bool is_auxiliary = false;
};

struct TaskMeta {
  std::uint32_t task_id = 0;
  TaskKind kind = TaskKind::CLS;
  double threshold = 0.0;  // classification cut; unused for REG
  double train_weight = 1.0;
  bool eval_included = true;
  std::vector<std::uint32_t> catalogue_partners;  // owners; empty unless CATALOGUE
};

// The minimal per-partner training set: features, labels, folds, task
// weights. Column order: classification-kind tasks (CLS, AUX, then
// CATALOGUE) map to Y_cls columns in task-list order; REG tasks map to
// Y_reg columns in task-list order.
struct DatasetBundle {
  SparseMatrixCsr X;
  SparseMatrixCsr Y_cls;                 // entries in {-1, +1}
  SparseMatrixCsr Y_reg;                 // measurement values
  std::vector<Qualifier> Y_reg_qual;     // parallel to Y_reg values
  std::vector<std::uint8_t> folds;       // fold id per row, 0..F-1
  std::vector<TaskMeta> tasks;

  std::size_t n_cls_columns() const;
  std::size_t n_reg_columns() const;
  std::size_t n_catalogue_columns() const;
  // Index into `tasks` for classification column c / regression column c.
  std::size_t cls_task_index(std::size_t col) const;
  std::size_t reg_task_index(std::size_t col) const;

  void validate() const;
};

// Knobs of the synthetic data generator. World-scoped values (task
// parameters, shared pool, thresholds) derive from world_seed and are the
// same at every partner; record draws derive from the partner's own seed.
struct GenConfig {
  std::uint64_t world_seed = 1;
  std::uint32_t partner_index = 0;
  std::uint32_t n_partners = 1;

  std::uint64_t n_compounds = 26000;
  std::uint32_t n_cls_tasks = 160;
  std::uint32_t n_reg_tasks = 56;
  std::uint32_t n_aux_tasks = 56;
  std::uint32_t n_catalogue_tasks = 0;
  std::vector<std::uint32_t> catalogue_partners;  // owners of the catalogue

  double overlap_fraction = 0.2;  // fraction of compounds drawn from the shared pool
  double mean_measurements_per_compound = 1.0;

  std::uint32_t feature_dim = 2048;
  std::uint32_t n_active_bits = 24;
  std::uint32_t latent_dim = 8;

  double reg_noise = 0.25;
  double censor_fraction = 0.10;       // REG records reported as bounds
  double replicate_fraction = 0.02;    // records measured more than once
  double implausible_fraction = 0.002; // corrupted values, dropped by prepare
};

struct PrepConfig {
  Variant variant = Variant::HYB;
  std::uint32_t quorum = 5;
  std::uint8_t n_folds = 5;
  std::uint64_t fold_seed = 1;
  double plausible_min = -50.0;
  double plausible_max = 50.0;
  std::uint32_t feature_dim = 2048;
  std::uint32_t n_active_bits = 24;
  std::vector<TaskMeta> task_catalog;  // world task table incl. thresholds
};

// Task table shared by all partners of one world, including planted
// classification thresholds.
std::vector<TaskMeta> world_task_catalog(const GenConfig& cfg);

// The compound library a partner draws measurements from. The first
// floor(overlap * n) ids come from the shared pool and are identical at
// every partner; the rest are partner-private.
std::vector<std::uint64_t> compound_universe(const GenConfig& cfg);

std::vector<ActivityRecord> generate_raw(const GenConfig& cfg);

// Deterministic synthetic fingerprint: exactly n_active bits set,
// derived from the compound id alone, identical at every partner.
std::vector<std::uint64_t> featurize(std::uint64_t compound_id, std::uint32_t dim,
                                     std::uint32_t n_active);

std::uint8_t assign_fold(std::uint64_t compound_id, std::uint8_t n_folds,
                         std::uint64_t fold_seed);

DatasetBundle prepare(std::span<const ActivityRecord> records, const PrepConfig& cfg);

// Indices into bundle.tasks of tasks that would no longer meet the
// per-fold quorum; empty for any bundle fresh out of prepare().
std::vector<std::size_t> failing_tasks(const DatasetBundle& bundle, std::uint32_t quorum,
                                       std::uint8_t n_folds);

// Bundle directory layout: X.mdys, Y_cls.mdys, Y_reg.mdys (+ the
// qualifier pattern Y_reg_qual.mdys), folds.bin, tasks.json.
void write_bundle(const std::filesystem::path& dir, const DatasetBundle& bundle);
DatasetBundle read_bundle(const std::filesystem::path& dir);

}  // namespace fl::datagen
