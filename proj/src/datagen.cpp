#include "fl/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <tuple>

#include <nlohmann/json.hpp>

namespace fl::datagen {

namespace {

using ordered_json = nlohmann::ordered_json;

// Featurization and the planted latent structure are keyed by fixed
// constants: the same compound id maps to the same fingerprint and the
// same latent position at every partner and in every run.
const SeedKey& featurize_key() {
  static const SeedKey k = derive_key(SeedKey{}, stream_label(StreamPurpose::FEATURIZE));
  return k;
}

const SeedKey& latent_projection_key() {
  static const SeedKey k =
      derive_key(SeedKey{}, stream_label(StreamPurpose::LATENT_PROJECTION));
  return k;
}

SeedKey world_key(std::uint64_t world_seed) {
  return derive_key(seed_from_u64(world_seed), stream_label(StreamPurpose::WORLD_KEY));
}

SeedKey partner_key(std::uint64_t world_seed, std::uint32_t partner_index) {
  return derive_key(seed_from_u64(world_seed),
                    stream_label(StreamPurpose::PARTNER_KEY,
                                 static_cast<std::uint8_t>(partner_index)));
}

struct TaskParams {
  std::vector<double> latent;  // one weight per latent dimension
  double bias = 0.0;
};

TaskParams planted_task_params(const SeedKey& world, std::uint32_t task_id,
                               std::uint32_t latent_dim) {
  SeededStream s(derive_key(world, stream_label(StreamPurpose::TASK_PARAMS)), task_id);
  TaskParams p;
  p.latent.resize(latent_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(latent_dim));
  for (auto& w : p.latent) w = s.next_gaussian() * scale;
  p.bias = 0.3 * s.next_gaussian();
  return p;
}

// Latent position of a compound: random projection of its fingerprint.
std::vector<double> compound_latent(std::uint64_t compound_id, std::uint32_t feature_dim,
                                    std::uint32_t n_active, std::uint32_t latent_dim) {
  const auto bits = featurize(compound_id, feature_dim, n_active);
  std::vector<double> z(latent_dim, 0.0);
  for (const auto j : bits) {
    SeededStream col(latent_projection_key(), j);
    for (std::uint32_t d = 0; d < latent_dim; ++d) z[d] += col.next_gaussian();
  }
  const double norm = 1.0 / std::sqrt(static_cast<double>(n_active));
  for (auto& v : z) v *= norm;
  return z;
}

std::uint32_t poisson_draw(SeededStream& s, double lambda) {
  const double limit = std::exp(-lambda);
  std::uint32_t k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= s.next_unit();
  } while (p > limit);
  return k - 1;
}

// Private task ids embed the partner index; catalogue ids live in their
// own range shared by all owners.
constexpr std::uint32_t kPartnerTaskStride = 100000;
constexpr std::uint32_t kCatalogueTaskBase = 900000000;

bool kind_in_variant(TaskKind kind, Variant variant) {
  switch (variant) {
    case Variant::CLS:
      return kind == TaskKind::CLS || kind == TaskKind::CATALOGUE;
    case Variant::CLSAUX:
      return kind == TaskKind::CLS || kind == TaskKind::AUX || kind == TaskKind::CATALOGUE;
    case Variant::REG:
      return kind == TaskKind::REG;
    case Variant::HYB:
      return kind == TaskKind::CLS || kind == TaskKind::REG || kind == TaskKind::CATALOGUE;
  }
  throw ConfigError("unknown variant");
}

int cls_kind_rank(TaskKind kind) {
  switch (kind) {
    case TaskKind::CLS: return 0;
    case TaskKind::AUX: return 1;
    case TaskKind::CATALOGUE: return 2;
    default: return 3;
  }
}

const char* kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::CLS: return "CLS";
    case TaskKind::REG: return "REG";
    case TaskKind::AUX: return "AUX";
    case TaskKind::CATALOGUE: return "CATALOGUE";
  }
  return "?";
}

TaskKind kind_from_name(const std::string& s) {
  if (s == "CLS") return TaskKind::CLS;
  if (s == "REG") return TaskKind::REG;
  if (s == "AUX") return TaskKind::AUX;
  if (s == "CATALOGUE") return TaskKind::CATALOGUE;
  throw ConfigError("unknown task kind: " + s);
}

}  // namespace

const char* to_string(Variant v) {
  switch (v) {
    case Variant::CLS: return "CLS";
    case Variant::CLSAUX: return "CLSAUX";
    case Variant::REG: return "REG";
    case Variant::HYB: return "HYB";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "CLS") return Variant::CLS;
  if (s == "CLSAUX") return Variant::CLSAUX;
  if (s == "REG") return Variant::REG;
  if (s == "HYB") return Variant::HYB;
  throw ConfigError("variant: expected CLS, CLSAUX, REG or HYB, got '" + s + "'");
}

std::size_t DatasetBundle::n_cls_columns() const { return Y_cls.n_cols(); }
std::size_t DatasetBundle::n_reg_columns() const { return Y_reg.n_cols(); }

std::size_t DatasetBundle::n_catalogue_columns() const {
  std::size_t n = 0;
  for (const auto& t : tasks)
    if (t.kind == TaskKind::CATALOGUE) ++n;
  return n;
}

std::size_t DatasetBundle::cls_task_index(std::size_t col) const {
  std::size_t c = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].kind == TaskKind::REG) continue;
    if (c == col) return i;
    ++c;
  }
  throw DimensionError("cls column out of range");
}

std::size_t DatasetBundle::reg_task_index(std::size_t col) const {
  std::size_t c = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].kind != TaskKind::REG) continue;
    if (c == col) return i;
    ++c;
  }
  throw DimensionError("reg column out of range");
}

void DatasetBundle::validate() const {
  X.validate();
  Y_cls.validate();
  Y_reg.validate();
  if (Y_cls.n_rows() != X.n_rows() || Y_reg.n_rows() != X.n_rows())
    throw DimensionError("bundle: label rows != feature rows");
  if (folds.size() != X.n_rows())
    throw DimensionError("bundle: folds length != n_rows");
  if (Y_reg_qual.size() != Y_reg.nnz())
    throw DimensionError("bundle: qualifier count != Y_reg nnz");
  std::size_t n_cls_like = 0, n_reg = 0;
  for (const auto& t : tasks) {
    if (t.kind == TaskKind::REG) {
      ++n_reg;
    } else {
      ++n_cls_like;
    }
    if (t.kind == TaskKind::AUX && t.eval_included)
      throw ConfigError("bundle: AUX task marked eval_included");
    if (t.kind == TaskKind::CATALOGUE && t.catalogue_partners.empty())
      throw ConfigError("bundle: CATALOGUE task without owning partners");
  }
  if (n_cls_like != Y_cls.n_cols())
    throw DimensionError("bundle: classification task count != Y_cls columns");
  if (n_reg != Y_reg.n_cols())
    throw DimensionError("bundle: regression task count != Y_reg columns");
  for (const double v : Y_cls.values())
    if (v != 1.0 && v != -1.0)
      throw ConfigError("bundle: Y_cls entry not in {-1, +1}");
}

std::vector<TaskMeta> world_task_catalog(const GenConfig& cfg) {
  const SeedKey world = world_key(cfg.world_seed);
  std::vector<TaskMeta> catalog;
  const std::uint32_t base = cfg.partner_index * kPartnerTaskStride;
  auto add_task = [&](std::uint32_t task_id, TaskKind kind) {
    const auto params = planted_task_params(world, task_id, cfg.latent_dim);
    TaskMeta meta;
    meta.task_id = task_id;
    meta.kind = kind;
    meta.threshold = (kind == TaskKind::REG) ? 0.0 : params.bias;
    meta.train_weight = 1.0;
    meta.eval_included = kind != TaskKind::AUX;
    if (kind == TaskKind::CATALOGUE) meta.catalogue_partners = cfg.catalogue_partners;
    catalog.push_back(std::move(meta));
  };
  std::uint32_t next = base;
  for (std::uint32_t t = 0; t < cfg.n_cls_tasks; ++t) add_task(next++, TaskKind::CLS);
  for (std::uint32_t t = 0; t < cfg.n_reg_tasks; ++t) add_task(next++, TaskKind::REG);
  for (std::uint32_t t = 0; t < cfg.n_aux_tasks; ++t) add_task(next++, TaskKind::AUX);
  const bool in_catalogue =
      std::find(cfg.catalogue_partners.begin(), cfg.catalogue_partners.end(),
                cfg.partner_index) != cfg.catalogue_partners.end();
  if (in_catalogue) {
    for (std::uint32_t t = 0; t < cfg.n_catalogue_tasks; ++t)
      add_task(kCatalogueTaskBase + t, TaskKind::CATALOGUE);
  }
  return catalog;
}

std::vector<std::uint64_t> compound_universe(const GenConfig& cfg) {
  if (cfg.n_compounds == 0) throw ConfigError("generate_raw: zero compounds");
  if (cfg.overlap_fraction < 0.0 || cfg.overlap_fraction > 1.0)
    throw ConfigError("overlap_fraction must be in [0, 1]");
  if (cfg.partner_index >= 254) throw ConfigError("partner_index too large");

  const SeedKey world = world_key(cfg.world_seed);
  const SeedKey pkey = partner_key(cfg.world_seed, cfg.partner_index);

  // The top byte tags the origin so the two ranges never collide.
  const auto n_shared = static_cast<std::uint64_t>(
      std::floor(cfg.overlap_fraction * static_cast<double>(cfg.n_compounds)));
  std::vector<std::uint64_t> compounds;
  compounds.reserve(cfg.n_compounds);
  {
    SeededStream pool(world, stream_label(StreamPurpose::POOL_IDS));
    std::set<std::uint64_t> seen;
    while (compounds.size() < n_shared) {
      const std::uint64_t id =
          (pool.next_u64() & 0x00FFFFFFFFFFFFFFull) | (0xFEull << 56);
      if (seen.insert(id).second) compounds.push_back(id);
    }
  }
  {
    SeededStream priv(pkey, stream_label(StreamPurpose::PARTNER_IDS));
    std::set<std::uint64_t> seen;
    while (compounds.size() < cfg.n_compounds) {
      const std::uint64_t id = (priv.next_u64() & 0x00FFFFFFFFFFFFFFull) |
                               (static_cast<std::uint64_t>(cfg.partner_index) << 56);
      if (seen.insert(id).second) compounds.push_back(id);
    }
  }
  return compounds;
}

std::vector<ActivityRecord> generate_raw(const GenConfig& cfg) {
  const auto catalog = world_task_catalog(cfg);
  if (catalog.empty()) throw ConfigError("generate_raw: zero tasks");
  const auto compounds = compound_universe(cfg);
  const SeedKey world = world_key(cfg.world_seed);
  const SeedKey pkey = partner_key(cfg.world_seed, cfg.partner_index);

  SeededStream draw(pkey, stream_label(StreamPurpose::RECORD_DRAW));
  std::vector<ActivityRecord> records;
  records.reserve(static_cast<std::size_t>(
      static_cast<double>(cfg.n_compounds) * cfg.mean_measurements_per_compound * 1.2));

  std::map<std::uint32_t, TaskParams> params;
  for (const auto& t : catalog)
    params.emplace(t.task_id, planted_task_params(world, t.task_id, cfg.latent_dim));

  std::uint32_t implausible_cycle = 0;
  for (const std::uint64_t cid : compounds) {
    const std::uint32_t k = poisson_draw(draw, cfg.mean_measurements_per_compound);
    if (k == 0) continue;
    const auto z = compound_latent(cid, cfg.feature_dim, cfg.n_active_bits, cfg.latent_dim);
    for (std::uint32_t m = 0; m < k; ++m) {
      const auto& meta = catalog[draw.next_below(catalog.size())];
      const auto& tp = params.at(meta.task_id);
      const std::uint32_t n_copies =
          draw.next_unit() < cfg.replicate_fraction ? 1 + static_cast<std::uint32_t>(draw.next_below(2)) : 1;
      for (std::uint32_t copy = 0; copy < n_copies; ++copy) {
        double value = tp.bias;
        for (std::size_t d = 0; d < z.size(); ++d) value += z[d] * tp.latent[d];
        value += cfg.reg_noise * draw.next_gaussian();
        ActivityRecord rec;
        rec.compound_id = cid;
        rec.task_id = meta.task_id;
        rec.is_auxiliary = meta.kind == TaskKind::AUX;
        rec.qualifier = Qualifier::EQ;
        if (meta.kind == TaskKind::REG && draw.next_unit() < cfg.censor_fraction) {
          const double slack = 0.5 * std::fabs(draw.next_gaussian());
          if (draw.next_below(2) == 0) {
            rec.qualifier = Qualifier::LT;  // true activity below the reported bound
            value += slack;
          } else {
            rec.qualifier = Qualifier::GT;
            value -= slack;
          }
        }
        if (draw.next_unit() < cfg.implausible_fraction) {
          value = (implausible_cycle++ % 2 == 0)
                      ? std::numeric_limits<double>::quiet_NaN()
                      : 1e9;
        }
        rec.value = value;
        records.push_back(rec);
      }
    }
  }
  return records;
}

std::vector<std::uint64_t> featurize(std::uint64_t compound_id, std::uint32_t dim,
                                     std::uint32_t n_active) {
  if (n_active >= dim) throw ConfigError("featurize: n_active must be < dim");
  SeededStream s(featurize_key(), compound_id);
  std::set<std::uint64_t> bits;
  while (bits.size() < n_active) bits.insert(s.next_below(dim));
  return std::vector<std::uint64_t>(bits.begin(), bits.end());
}

std::uint8_t assign_fold(std::uint64_t compound_id, std::uint8_t n_folds,
                         std::uint64_t fold_seed) {
  if (n_folds < 2) throw ConfigError("assign_fold: need at least 2 folds");
  SeededStream s(derive_key(seed_from_u64(fold_seed), stream_label(StreamPurpose::FOLD)),
                 compound_id);
  return static_cast<std::uint8_t>(s.next_below(n_folds));
}

namespace {

struct AggregatedEntry {
  std::uint64_t compound_id;
  std::uint32_t task_id;
  double value;
  Qualifier qualifier;
};

double median(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

DatasetBundle prepare(std::span<const ActivityRecord> records, const PrepConfig& cfg) {
  std::map<std::uint32_t, const TaskMeta*> catalog;
  for (const auto& t : cfg.task_catalog) catalog.emplace(t.task_id, &t);

  // Plausibility filter + variant selection, then replicate aggregation.
  std::map<std::pair<std::uint64_t, std::uint32_t>,
           std::pair<std::vector<double>, std::vector<Qualifier>>>
      groups;
  for (const auto& rec : records) {
    const auto it = catalog.find(rec.task_id);
    if (it == catalog.end())
      throw ConfigError("prepare: record references unknown task " +
                        std::to_string(rec.task_id));
    const TaskMeta& meta = *it->second;
    if (rec.is_auxiliary != (meta.kind == TaskKind::AUX))
      throw ConfigError("prepare: record auxiliary flag inconsistent with catalog");
    if (!kind_in_variant(meta.kind, cfg.variant)) continue;
    if (!std::isfinite(rec.value) || rec.value < cfg.plausible_min ||
        rec.value > cfg.plausible_max)
      continue;
    auto& g = groups[{rec.compound_id, rec.task_id}];
    g.first.push_back(rec.value);
    g.second.push_back(rec.qualifier);
  }

  std::vector<AggregatedEntry> entries;
  entries.reserve(groups.size());
  for (auto& [key, g] : groups) {
    AggregatedEntry e;
    e.compound_id = key.first;
    e.task_id = key.second;
    e.value = median(g.first);
    // Replicates agree on the censoring direction or the aggregate is
    // treated as an exact measurement.
    e.qualifier = g.second.front();
    for (const auto q : g.second)
      if (q != e.qualifier) {
        e.qualifier = Qualifier::EQ;
        break;
      }
    entries.push_back(e);
  }

  // Classification thresholds and fold assignment.
  for (auto& e : entries) {
    const TaskMeta& meta = *catalog.at(e.task_id);
    if (meta.kind != TaskKind::REG) {
      e.value = e.value > meta.threshold ? 1.0 : -1.0;
      e.qualifier = Qualifier::EQ;
    }
  }
  std::map<std::uint64_t, std::uint8_t> fold_of;
  for (const auto& e : entries)
    if (!fold_of.count(e.compound_id))
      fold_of[e.compound_id] = assign_fold(e.compound_id, cfg.n_folds, cfg.fold_seed);

  // Per-fold data volume quorum.
  struct Counts {
    std::vector<std::uint32_t> pos, neg, any;
  };
  std::map<std::uint32_t, Counts> per_task;
  for (const auto& e : entries) {
    auto& c = per_task[e.task_id];
    if (c.any.empty()) {
      c.pos.assign(cfg.n_folds, 0);
      c.neg.assign(cfg.n_folds, 0);
      c.any.assign(cfg.n_folds, 0);
    }
    const auto f = fold_of.at(e.compound_id);
    c.any[f]++;
    if (e.value > 0) c.pos[f]++; else c.neg[f]++;
  }
  std::set<std::uint32_t> retained;
  for (const auto& [task_id, c] : per_task) {
    const TaskMeta& meta = *catalog.at(task_id);
    bool ok = true;
    for (std::uint8_t f = 0; f < cfg.n_folds; ++f) {
      if (meta.kind == TaskKind::REG) {
        ok = ok && c.any[f] >= cfg.quorum;
      } else {
        ok = ok && c.pos[f] >= cfg.quorum && c.neg[f] >= cfg.quorum;
      }
    }
    if (ok) retained.insert(task_id);
  }
  if (retained.empty()) throw ConfigError("prepare: all tasks filtered out by quorum");

  std::erase_if(entries, [&](const AggregatedEntry& e) { return !retained.count(e.task_id); });

  // Row index: compounds with at least one surviving label, id order.
  std::set<std::uint64_t> row_ids;
  for (const auto& e : entries) row_ids.insert(e.compound_id);
  std::vector<std::uint64_t> rows(row_ids.begin(), row_ids.end());
  std::map<std::uint64_t, std::uint32_t> row_of;
  for (std::size_t i = 0; i < rows.size(); ++i) row_of[rows[i]] = static_cast<std::uint32_t>(i);

  // Column order: classification-kind tasks by (kind rank, id), then REG.
  std::vector<TaskMeta> tasks;
  for (const std::uint32_t id : retained) tasks.push_back(*catalog.at(id));
  std::sort(tasks.begin(), tasks.end(), [](const TaskMeta& a, const TaskMeta& b) {
    const bool ra = a.kind == TaskKind::REG, rb = b.kind == TaskKind::REG;
    if (ra != rb) return !ra;
    if (!ra) {
      const int ka = cls_kind_rank(a.kind), kb = cls_kind_rank(b.kind);
      if (ka != kb) return ka < kb;
    }
    return a.task_id < b.task_id;
  });
  std::map<std::uint32_t, std::uint32_t> cls_col, reg_col;
  for (const auto& t : tasks) {
    if (t.kind == TaskKind::REG) {
      const auto c = static_cast<std::uint32_t>(reg_col.size());
      reg_col[t.task_id] = c;
    } else {
      const auto c = static_cast<std::uint32_t>(cls_col.size());
      cls_col[t.task_id] = c;
    }
  }

  std::vector<std::tuple<std::uint64_t, std::uint64_t, double>> cls_triplets;
  struct RegCell {
    std::uint64_t row, col;
    double value;
    Qualifier qual;
  };
  std::vector<RegCell> reg_cells;
  for (const auto& e : entries) {
    const TaskMeta& meta = *catalog.at(e.task_id);
    const std::uint32_t r = row_of.at(e.compound_id);
    if (meta.kind == TaskKind::REG) {
      reg_cells.push_back({r, reg_col.at(e.task_id), e.value, e.qualifier});
    } else {
      cls_triplets.emplace_back(r, cls_col.at(e.task_id), e.value);
    }
  }
  std::sort(reg_cells.begin(), reg_cells.end(), [](const RegCell& a, const RegCell& b) {
    return std::tie(a.row, a.col) < std::tie(b.row, b.col);
  });

  DatasetBundle bundle;
  bundle.tasks = std::move(tasks);
  bundle.Y_cls = SparseMatrixCsr::from_triplets(rows.size(), cls_col.size(),
                                                std::move(cls_triplets));
  {
    std::vector<std::uint64_t> row_ptr(rows.size() + 1, 0);
    std::vector<std::uint64_t> col_idx;
    std::vector<double> values;
    for (const auto& c : reg_cells) {
      row_ptr[c.row + 1]++;
      col_idx.push_back(c.col);
      values.push_back(c.value);
      bundle.Y_reg_qual.push_back(c.qual);
    }
    for (std::size_t r = 0; r < rows.size(); ++r) row_ptr[r + 1] += row_ptr[r];
    bundle.Y_reg = SparseMatrixCsr(rows.size(), reg_col.size(), std::move(row_ptr),
                                   std::move(col_idx), std::move(values));
  }
  {
    std::vector<std::tuple<std::uint64_t, std::uint64_t, double>> x_triplets;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (const auto bit : featurize(rows[i], cfg.feature_dim, cfg.n_active_bits))
        x_triplets.emplace_back(i, bit, 1.0);
    }
    bundle.X = SparseMatrixCsr::from_triplets(rows.size(), cfg.feature_dim,
                                              std::move(x_triplets));
  }
  bundle.folds.reserve(rows.size());
  for (const auto id : rows) bundle.folds.push_back(fold_of.at(id));

  bundle.validate();
  return bundle;
}

std::vector<std::size_t> failing_tasks(const DatasetBundle& bundle, std::uint32_t quorum,
                                       std::uint8_t n_folds) {
  std::vector<std::size_t> failing;
  for (std::size_t i = 0; i < bundle.tasks.size(); ++i) {
    const auto& meta = bundle.tasks[i];
    std::vector<std::uint32_t> pos(n_folds, 0), neg(n_folds, 0), any(n_folds, 0);
    if (meta.kind == TaskKind::REG) {
      std::uint32_t col = 0;
      for (std::size_t j = 0; j < i; ++j)
        if (bundle.tasks[j].kind == TaskKind::REG) ++col;
      for (std::size_t r = 0; r < bundle.Y_reg.n_rows(); ++r) {
        const auto cols = bundle.Y_reg.row_cols(r);
        for (std::size_t k = 0; k < cols.size(); ++k)
          if (cols[k] == col) any[bundle.folds[r]]++;
      }
      for (std::uint8_t f = 0; f < n_folds; ++f)
        if (any[f] < quorum) {
          failing.push_back(i);
          break;
        }
    } else {
      std::uint32_t col = 0;
      for (std::size_t j = 0; j < i; ++j)
        if (bundle.tasks[j].kind != TaskKind::REG) ++col;
      for (std::size_t r = 0; r < bundle.Y_cls.n_rows(); ++r) {
        const auto cols = bundle.Y_cls.row_cols(r);
        const auto vals = bundle.Y_cls.row_vals(r);
        for (std::size_t k = 0; k < cols.size(); ++k) {
          if (cols[k] != col) continue;
          if (vals[k] > 0) pos[bundle.folds[r]]++; else neg[bundle.folds[r]]++;
        }
      }
      for (std::uint8_t f = 0; f < n_folds; ++f)
        if (pos[f] < quorum || neg[f] < quorum) {
          failing.push_back(i);
          break;
        }
    }
  }
  return failing;
}

void write_bundle(const std::filesystem::path& dir, const DatasetBundle& bundle) {
  std::filesystem::create_directories(dir);
  bundle.X.save_mdys(dir / "X.mdys");
  bundle.Y_cls.save_mdys(dir / "Y_cls.mdys");
  bundle.Y_reg.save_mdys(dir / "Y_reg.mdys");
  {
    // Qualifiers ride in a second matrix with the same sparsity pattern.
    std::vector<double> qvals(bundle.Y_reg_qual.size());
    for (std::size_t i = 0; i < qvals.size(); ++i)
      qvals[i] = static_cast<double>(static_cast<std::uint8_t>(bundle.Y_reg_qual[i]));
    SparseMatrixCsr qual(bundle.Y_reg.n_rows(), bundle.Y_reg.n_cols(),
                         std::vector<std::uint64_t>(bundle.Y_reg.row_ptr().begin(),
                                                    bundle.Y_reg.row_ptr().end()),
                         std::vector<std::uint64_t>(bundle.Y_reg.col_idx().begin(),
                                                    bundle.Y_reg.col_idx().end()),
                         std::move(qvals));
    qual.save_mdys(dir / "Y_reg_qual.mdys");
  }
  write_file(dir / "folds.bin", bundle.folds);

  ordered_json tasks = ordered_json::array();
  for (const auto& t : bundle.tasks) {
    ordered_json j;
    j["task_id"] = t.task_id;
    j["kind"] = kind_name(t.kind);
    j["threshold"] = t.threshold;
    j["train_weight"] = t.train_weight;
    j["eval_included"] = t.eval_included;
    j["catalogue_partners"] = t.catalogue_partners;
    tasks.push_back(std::move(j));
  }
  const std::string text = tasks.dump(2) + "\n";
  write_file(dir / "tasks.json",
             std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

DatasetBundle read_bundle(const std::filesystem::path& dir) {
  DatasetBundle bundle;
  bundle.X = SparseMatrixCsr::load_mdys(dir / "X.mdys");
  bundle.Y_cls = SparseMatrixCsr::load_mdys(dir / "Y_cls.mdys");
  bundle.Y_reg = SparseMatrixCsr::load_mdys(dir / "Y_reg.mdys");
  const auto qual = SparseMatrixCsr::load_mdys(dir / "Y_reg_qual.mdys");
  if (qual.nnz() != bundle.Y_reg.nnz())
    throw IoError("Y_reg_qual pattern does not match Y_reg");
  bundle.Y_reg_qual.reserve(qual.nnz());
  for (const double v : qual.values())
    bundle.Y_reg_qual.push_back(static_cast<Qualifier>(static_cast<std::uint8_t>(v)));
  bundle.folds = read_file(dir / "folds.bin");

  const auto raw = read_file(dir / "tasks.json");
  const auto parsed = nlohmann::json::parse(raw.begin(), raw.end());
  for (const auto& j : parsed) {
    TaskMeta t;
    t.task_id = j.at("task_id").get<std::uint32_t>();
    t.kind = kind_from_name(j.at("kind").get<std::string>());
    t.threshold = j.at("threshold").get<double>();
    t.train_weight = j.at("train_weight").get<double>();
    t.eval_included = j.at("eval_included").get<bool>();
    t.catalogue_partners = j.at("catalogue_partners").get<std::vector<std::uint32_t>>();
    bundle.tasks.push_back(std::move(t));
  }
  bundle.validate();
  return bundle;
}

}  // namespace fl::datagen
