#include "fl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fl/datagen.hpp"

namespace fl::eval {

double auroc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size())
    throw DimensionError("auroc: scores and labels length mismatch");
  std::size_t n_pos = 0, n_neg = 0;
  for (const double l : labels) (l > 0 ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw ConfigError("auroc: needs at least one positive and one negative");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Midranks over tied groups.
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] > 0) pos_rank_sum += midrank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double rmse(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size())
    throw DimensionError("rmse: length mismatch");
  if (predictions.empty()) throw ConfigError("rmse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double d = predictions[i] - targets[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(predictions.size()));
}

FusionMap fuse(std::span<const TaskScore> validation_scores) {
  struct Candidate {
    std::string model_id;
    std::string metric;
    double value;
  };
  std::map<std::uint32_t, std::vector<Candidate>> by_task;
  std::set<std::string> model_ids;
  for (const auto& s : validation_scores) {
    by_task[s.task_idx].push_back({s.model_id, s.metric, s.value});
    model_ids.insert(s.model_id);
  }
  FusionMap map;
  for (auto& [task, candidates] : by_task) {
    if (candidates.size() != model_ids.size())
      throw ConfigError("fuse: task " + std::to_string(task) +
                        " is missing a candidate score");
    std::sort(candidates.begin(), candidates.end(),
              [](const Candidate& a, const Candidate& b) {
                return a.model_id < b.model_id;
              });
    const bool minimize = candidates.front().metric == "rmse";
    const Candidate* best = &candidates.front();
    for (const auto& c : candidates) {
      if (c.metric != best->metric)
        throw ConfigError("fuse: mixed metrics for task " + std::to_string(task));
      const bool better = minimize ? c.value < best->value : c.value > best->value;
      if (better) best = &c;  // ties keep the lowest model_id
    }
    map[task] = best->model_id;
  }
  return map;
}

std::string fusion_to_json(const FusionMap& map) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [task, model] : map) j[std::to_string(task)] = model;
  return j.dump(2) + "\n";
}

FusionMap fusion_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  FusionMap map;
  for (const auto& [key, value] : j.items())
    map[static_cast<std::uint32_t>(std::stoul(key))] = value.get<std::string>();
  return map;
}

std::string task_scores_to_csv(std::span<const TaskScore> scores) {
  std::string out = "model_id,task_idx,metric,value,fold\n";
  for (const auto& s : scores) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", s.value);
    out += s.model_id + "," + std::to_string(s.task_idx) + "," + s.metric + "," +
           buf + "," + std::to_string(s.fold) + "\n";
  }
  return out;
}

TaskScore task_score_from_csv_row(const std::string& line) {
  std::stringstream ss(line);
  std::string field;
  TaskScore s;
  if (!std::getline(ss, s.model_id, ',')) throw IoError("bad score row: " + line);
  if (!std::getline(ss, field, ',')) throw IoError("bad score row: " + line);
  s.task_idx = static_cast<std::uint32_t>(std::stoul(field));
  if (!std::getline(ss, s.metric, ',')) throw IoError("bad score row: " + line);
  if (!std::getline(ss, field, ',')) throw IoError("bad score row: " + line);
  s.value = std::stod(field);
  if (!std::getline(ss, field, ',')) throw IoError("bad score row: " + line);
  s.fold = static_cast<std::uint8_t>(std::stoul(field));
  return s;
}

std::vector<TaskScore> task_scores_from_csv(const std::string& text) {
  std::vector<TaskScore> scores;
  std::stringstream ss(text);
  std::string line;
  bool first = true;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("model_id", 0) == 0) continue;
    }
    scores.push_back(task_score_from_csv_row(line));
  }
  return scores;
}

LoadedModel LoadedModel::load(const std::string& model_id,
                              const std::filesystem::path& trunk_file,
                              const std::filesystem::path& head_file) {
  LoadedModel m;
  m.model_id = model_id;
  m.params = model::load_trunk(trunk_file);
  model::load_head_into(head_file, m.params);
  return m;
}

namespace {

std::vector<Prediction> predict_impl(std::span<const LoadedModel> models,
                                     const SparseMatrixCsr& X,
                                     std::span<const std::uint64_t> row_ids,
                                     const std::optional<FusionMap>& fusion,
                                     std::span<const std::uint32_t> task_filter) {
  const auto n_tasks = models.front().params.head.out_dim;
  if (fusion) {
    for (const auto& [task, model_id] : *fusion) {
      if (task >= n_tasks) throw ConfigError("predict: fusion map task out of range");
      const bool known = std::any_of(models.begin(), models.end(),
                                     [&](const LoadedModel& m) {
                                       return m.model_id == model_id;
                                     });
      if (!known)
        throw ConfigError("predict: fusion map references unknown model '" +
                          model_id + "'");
    }
  }
  std::vector<std::uint32_t> tasks;
  if (task_filter.empty()) {
    for (std::uint32_t t = 0; t < n_tasks; ++t) tasks.push_back(t);
  } else {
    for (const auto t : task_filter) {
      if (t >= n_tasks) throw ConfigError("predict: task filter out of range");
      tasks.push_back(t);
    }
  }

  std::map<std::string, model::Forward> outputs;
  for (const auto& m : models) outputs[m.model_id] = model::forward(m.params, X);

  std::vector<Prediction> preds;
  preds.reserve(row_ids.size() * tasks.size());
  for (std::size_t i = 0; i < row_ids.size(); ++i) {
    for (const auto t : tasks) {
      if (fusion && !fusion->count(t))
        throw ConfigError("predict: task " + std::to_string(t) +
                          " absent from the fusion map");
      const std::string& model_id =
          fusion ? fusion->at(t) : models.front().model_id;
      const auto& fwd = outputs.at(model_id);
      Prediction p;
      p.compound_id = row_ids[i];
      p.task_idx = t;
      p.model_id = model_id;
      p.score = fwd.y_head[i * n_tasks + t];
      preds.push_back(std::move(p));
    }
  }
  return preds;
}

void check_model_shapes(std::span<const LoadedModel> models) {
  if (models.empty()) throw ConfigError("predict: no models loaded");
  const auto input_dim = models.front().params.trunk.front().in_dim;
  const auto n_tasks = models.front().params.head.out_dim;
  for (const auto& m : models) {
    if (m.params.trunk.front().in_dim != input_dim)
      throw DimensionError("predict: models disagree on the feature dimension");
    if (m.params.head.out_dim != n_tasks)
      throw DimensionError("predict: models disagree on the task count");
  }
}

}  // namespace

std::vector<Prediction> predict(std::span<const LoadedModel> models,
                                std::span<const std::uint64_t> compound_ids,
                                std::uint32_t n_active_bits,
                                const std::optional<FusionMap>& fusion,
                                std::span<const std::uint32_t> task_filter) {
  check_model_shapes(models);
  const auto input_dim = models.front().params.trunk.front().in_dim;
  std::vector<std::tuple<std::uint64_t, std::uint64_t, double>> triplets;
  for (std::size_t i = 0; i < compound_ids.size(); ++i) {
    for (const auto bit :
         datagen::featurize(compound_ids[i], static_cast<std::uint32_t>(input_dim),
                            n_active_bits))
      triplets.emplace_back(i, bit, 1.0);
  }
  const auto X = SparseMatrixCsr::from_triplets(compound_ids.size(), input_dim,
                                                std::move(triplets));
  return predict_impl(models, X, compound_ids, fusion, task_filter);
}

std::vector<Prediction> predict_rows(std::span<const LoadedModel> models,
                                     const SparseMatrixCsr& X,
                                     const std::optional<FusionMap>& fusion,
                                     std::span<const std::uint32_t> task_filter) {
  check_model_shapes(models);
  if (X.n_cols() != models.front().params.trunk.front().in_dim)
    throw DimensionError("predict: matrix feature dim does not match the trunk");
  std::vector<std::uint64_t> row_ids(X.n_rows());
  for (std::size_t i = 0; i < row_ids.size(); ++i) row_ids[i] = i;
  return predict_impl(models, X, row_ids, fusion, task_filter);
}

std::string predictions_to_csv(std::span<const Prediction> preds) {
  std::string out = "compound_id,task_idx,model_id,score\n";
  for (const auto& p : preds) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", p.score);
    out += std::to_string(p.compound_id) + "," + std::to_string(p.task_idx) + "," +
           p.model_id + "," + buf + "\n";
  }
  return out;
}

}  // namespace fl::eval
