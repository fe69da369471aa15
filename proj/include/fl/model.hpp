#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "fl/csr.hpp"
#include "fl/datagen.hpp"
#include "fl/rng.hpp"

namespace fl::model {

enum class Nonlinearity : std::uint8_t { RELU = 0, TANH = 1 };

// Row-major dense layer, w[in_dim][out_dim]: row f of the first trunk
// layer is the weight block of input feature f, so gradients of features
// absent from a batch are whole zero rows.
struct DenseLayer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<double> w;
  std::vector<double> b;

  double& at(std::size_t i, std::size_t o) { return w[i * out_dim + o]; }
  double at(std::size_t i, std::size_t o) const { return w[i * out_dim + o]; }
  std::size_t param_count() const { return w.size() + b.size(); }
};

struct ModelConfig {
  std::uint32_t input_dim = 0;
  std::vector<std::uint32_t> hidden = {64};
  std::uint32_t n_private_tasks = 0;
  std::uint32_t n_catalogue_tasks = 0;
  Nonlinearity nonlinearity = Nonlinearity::RELU;
};

struct ModelParams {
  std::vector<DenseLayer> trunk;  // input -> hidden ... -> last hidden
  DenseLayer head;                // last hidden -> private tasks
  std::optional<DenseLayer> catalogue_head;
  Nonlinearity nonlinearity = Nonlinearity::RELU;

  // Trunk from the shared seed (identical across partners), head(s) from
  // the partner's own seed.
  static ModelParams init(const ModelConfig& cfg, const SeedKey& trunk_seed,
                          const SeedKey& head_seed);

  std::size_t trunk_param_count() const;
  std::size_t catalogue_param_count() const;
  std::vector<double> flatten_trunk() const;
  // params - lr * delta on the trunk (and optionally catalogue head);
  // head_grad applies to the private head. Returns the updated copy.
  ModelParams stepped(std::span<const double> trunk_delta,
                      std::span<const double> head_grad, double lr,
                      std::span<const double> catalogue_delta = {}) const;
};

// How bundle task columns map onto model outputs. Private tasks (CLS,
// AUX, REG) go to the head in task-list order; CATALOGUE tasks go to the
// catalogue head.
struct TaskRouting {
  struct Slot {
    std::uint32_t out_col = 0;  // column in head/catalogue output
    bool catalogue = false;
    datagen::TaskKind kind = datagen::TaskKind::CLS;
    double train_weight = 1.0;
    bool eval_included = true;
  };
  std::vector<Slot> by_task;          // aligned with bundle.tasks
  std::vector<std::uint32_t> cls_col_task;  // Y_cls column -> task index
  std::vector<std::uint32_t> reg_col_task;  // Y_reg column -> task index
  std::uint32_t n_private = 0;
  std::uint32_t n_catalogue = 0;

  static TaskRouting build(const datagen::DatasetBundle& bundle);
};

// One training batch: feature rows plus the observed label entries.
struct Batch {
  SparseMatrixCsr X;
  struct ClsEntry {
    std::uint32_t row;
    std::uint32_t out_col;
    bool catalogue;
    double label;  // -1 or +1
    double weight;
  };
  struct RegEntry {
    std::uint32_t row;
    std::uint32_t out_col;
    double value;
    datagen::Qualifier qual;
    double weight;
  };
  std::vector<ClsEntry> cls;
  std::vector<RegEntry> reg;

  std::size_t n_entries() const { return cls.size() + reg.size(); }
};

Batch make_batch(const datagen::DatasetBundle& bundle, const TaskRouting& routing,
                 std::span<const std::uint32_t> rows);

struct Forward {
  // hidden[l] holds the activations of trunk layer l, batch-major.
  std::vector<std::vector<double>> hidden;
  std::vector<double> y_head;       // batch x n_private
  std::vector<double> y_catalogue;  // batch x n_catalogue
  std::size_t batch_rows = 0;
};

Forward forward(const ModelParams& params, const SparseMatrixCsr& X_batch);

struct LossResult {
  double total = 0.0;       // task-weighted mean over observed entries
  double cls_sum = 0.0;     // unnormalized per-kind sums
  double reg_sum = 0.0;
  std::size_t n_entries = 0;
};

LossResult loss(const Forward& fwd, const Batch& batch);

// Gradient of the per-entry-mean loss, partitioned by destination. The
// head gradient never leaves the partner.
struct GradientUpdate {
  std::vector<double> trunk_grad;
  std::vector<double> head_grad;
  std::vector<double> catalogue_grad;  // empty when the model has no catalogue head
  std::uint64_t n_samples = 0;  // batch rows
  std::uint64_t nnz = 0;        // observed label entries in the batch
  std::uint64_t x_nnz = 0;      // feature non-zeros in the batch
};

GradientUpdate backward(const ModelParams& params, const Batch& batch,
                        const Forward& fwd);

// Checkpoint container "MDYM". Trunk and head live in separate files so
// the trunk can be shared while heads stay local.
void save_trunk(const std::filesystem::path& path, const ModelParams& params);
void save_head(const std::filesystem::path& path, const ModelParams& params);
// Loads trunk layers + nonlinearity into a params shell without a head.
ModelParams load_trunk(const std::filesystem::path& path);
// Adds the head (and optional catalogue head) from a head file.
void load_head_into(const std::filesystem::path& path, ModelParams& params);

}  // namespace fl::model
