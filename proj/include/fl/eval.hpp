#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fl/model.hpp"

namespace fl::eval {

// Rank-based AUROC with ties counted half. Labels are {-1, +1}; throws
// on single-class input.
double auroc(std::span<const double> scores, std::span<const double> labels);

double rmse(std::span<const double> predictions, std::span<const double> targets);

struct TaskScore {
  std::uint32_t task_idx = 0;
  std::string metric;  // "auroc" or "rmse"
  double value = 0.0;
  std::uint8_t fold = 0;
  std::string model_id;
};

// task_idx -> winning model_id.
using FusionMap = std::map<std::uint32_t, std::string>;

// Per-task argmax (AUROC) / argmin (RMSE) over validation scores; ties go
// to the lexicographically lowest model_id. Every task must be scored by
// every candidate.
FusionMap fuse(std::span<const TaskScore> validation_scores);

std::string fusion_to_json(const FusionMap& map);
FusionMap fusion_from_json(const std::string& text);

TaskScore task_score_from_csv_row(const std::string& line);
std::string task_scores_to_csv(std::span<const TaskScore> scores);
std::vector<TaskScore> task_scores_from_csv(const std::string& text);

// A trunk+head stack loaded from checkpoint files.
struct LoadedModel {
  std::string model_id;
  model::ModelParams params;

  static LoadedModel load(const std::string& model_id,
                          const std::filesystem::path& trunk_file,
                          const std::filesystem::path& head_file);
};

struct Prediction {
  std::uint64_t compound_id = 0;
  std::uint32_t task_idx = 0;
  std::string model_id;
  double score = 0.0;
};

// Featurizes new compound ids, runs the forward pass, and routes each
// task to its fused model when a fusion map is given. task_filter (when
// non-empty) restricts the output columns.
std::vector<Prediction> predict(std::span<const LoadedModel> models,
                                std::span<const std::uint64_t> compound_ids,
                                std::uint32_t n_active_bits,
                                const std::optional<FusionMap>& fusion,
                                std::span<const std::uint32_t> task_filter);

// Same pipeline over pre-featurized rows (a bundle's X matrix); the
// compound_id of each prediction is the row index.
std::vector<Prediction> predict_rows(std::span<const LoadedModel> models,
                                     const SparseMatrixCsr& X,
                                     const std::optional<FusionMap>& fusion,
                                     std::span<const std::uint32_t> task_filter);

std::string predictions_to_csv(std::span<const Prediction> preds);

}  // namespace fl::eval
