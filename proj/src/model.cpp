#include "fl/model.hpp"

#include <algorithm>
#include <cmath>

namespace fl::model {

namespace {

double activate(double x, Nonlinearity nl) {
  return nl == Nonlinearity::RELU ? (x > 0.0 ? x : 0.0) : std::tanh(x);
}

// Derivative expressed through the activation value itself.
double activate_prime_from_act(double a, Nonlinearity nl) {
  return nl == Nonlinearity::RELU ? (a > 0.0 ? 1.0 : 0.0) : 1.0 - a * a;
}

DenseLayer glorot_layer(std::size_t in_dim, std::size_t out_dim, SeededStream& s) {
  DenseLayer layer;
  layer.in_dim = in_dim;
  layer.out_dim = out_dim;
  layer.w.resize(in_dim * out_dim);
  layer.b.assign(out_dim, 0.0);
  const double bound = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  for (auto& w : layer.w) w = (2.0 * s.next_unit() - 1.0) * bound;
  return layer;
}

// Logistic loss on {-1,+1} labels, numerically stable in both tails.
double logistic_loss(double z, double y) {
  const double m = y * z;
  if (m > 30.0) return std::exp(-m);
  return std::log1p(std::exp(-m));
}

double logistic_loss_grad(double z, double y) {
  const double m = y * z;
  // -y * sigmoid(-m)
  if (m > 0) {
    const double e = std::exp(-m);
    return -y * e / (1.0 + e);
  }
  return -y / (1.0 + std::exp(m));
}

double censored_sq_loss(double z, double bound, datagen::Qualifier q) {
  switch (q) {
    case datagen::Qualifier::EQ:
      return (z - bound) * (z - bound);
    case datagen::Qualifier::LT:  // prediction should stay at or below the bound
      return z > bound ? (z - bound) * (z - bound) : 0.0;
    case datagen::Qualifier::GT:
      return z < bound ? (z - bound) * (z - bound) : 0.0;
  }
  return 0.0;
}

double censored_sq_grad(double z, double bound, datagen::Qualifier q) {
  switch (q) {
    case datagen::Qualifier::EQ:
      return 2.0 * (z - bound);
    case datagen::Qualifier::LT:
      return z > bound ? 2.0 * (z - bound) : 0.0;
    case datagen::Qualifier::GT:
      return z < bound ? 2.0 * (z - bound) : 0.0;
  }
  return 0.0;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, const SeedKey& trunk_seed,
                              const SeedKey& head_seed) {
  if (cfg.input_dim == 0 || cfg.hidden.empty())
    throw ConfigError("model: input_dim and at least one hidden layer required");
  ModelParams p;
  p.nonlinearity = cfg.nonlinearity;
  std::size_t in_dim = cfg.input_dim;
  for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
    SeededStream s(trunk_seed, stream_label(StreamPurpose::TRUNK_INIT,
                                            static_cast<std::uint8_t>(l)));
    p.trunk.push_back(glorot_layer(in_dim, cfg.hidden[l], s));
    in_dim = cfg.hidden[l];
  }
  {
    SeededStream s(head_seed, stream_label(StreamPurpose::HEAD_INIT));
    p.head = glorot_layer(in_dim, cfg.n_private_tasks, s);
  }
  if (cfg.n_catalogue_tasks > 0) {
    // The shared catalogue head must start identical at all owners.
    SeededStream s(trunk_seed, stream_label(StreamPurpose::CATALOGUE_INIT));
    p.catalogue_head = glorot_layer(in_dim, cfg.n_catalogue_tasks, s);
  }
  return p;
}

std::size_t ModelParams::trunk_param_count() const {
  std::size_t n = 0;
  for (const auto& layer : trunk) n += layer.param_count();
  return n;
}

std::size_t ModelParams::catalogue_param_count() const {
  return catalogue_head ? catalogue_head->param_count() : 0;
}

std::vector<double> ModelParams::flatten_trunk() const {
  std::vector<double> flat;
  flat.reserve(trunk_param_count());
  for (const auto& layer : trunk) {
    flat.insert(flat.end(), layer.w.begin(), layer.w.end());
    flat.insert(flat.end(), layer.b.begin(), layer.b.end());
  }
  return flat;
}

ModelParams ModelParams::stepped(std::span<const double> trunk_delta,
                                 std::span<const double> head_grad, double lr,
                                 std::span<const double> catalogue_delta) const {
  if (!trunk_delta.empty() && trunk_delta.size() != trunk_param_count())
    throw DimensionError("stepped: trunk delta length mismatch");
  if (!head_grad.empty() && head_grad.size() != head.param_count())
    throw DimensionError("stepped: head gradient length mismatch");
  if (!catalogue_delta.empty() &&
      catalogue_delta.size() != catalogue_param_count())
    throw DimensionError("stepped: catalogue delta length mismatch");
  ModelParams out = *this;
  if (!trunk_delta.empty()) {
    std::size_t pos = 0;
    for (auto& layer : out.trunk) {
      for (auto& w : layer.w) w -= lr * trunk_delta[pos++];
      for (auto& b : layer.b) b -= lr * trunk_delta[pos++];
    }
  }
  if (!head_grad.empty()) {
    std::size_t pos = 0;
    for (auto& w : out.head.w) w -= lr * head_grad[pos++];
    for (auto& b : out.head.b) b -= lr * head_grad[pos++];
  }
  if (!catalogue_delta.empty() && out.catalogue_head) {
    std::size_t pos = 0;
    for (auto& w : out.catalogue_head->w) w -= lr * catalogue_delta[pos++];
    for (auto& b : out.catalogue_head->b) b -= lr * catalogue_delta[pos++];
  }
  return out;
}

TaskRouting TaskRouting::build(const datagen::DatasetBundle& bundle) {
  TaskRouting r;
  r.by_task.resize(bundle.tasks.size());
  for (std::size_t i = 0; i < bundle.tasks.size(); ++i) {
    const auto& t = bundle.tasks[i];
    Slot slot;
    slot.kind = t.kind;
    slot.train_weight = t.train_weight;
    slot.eval_included = t.eval_included;
    if (t.kind == datagen::TaskKind::CATALOGUE) {
      slot.catalogue = true;
      slot.out_col = r.n_catalogue++;
    } else {
      slot.out_col = r.n_private++;
    }
    r.by_task[i] = slot;
  }
  for (std::size_t i = 0; i < bundle.tasks.size(); ++i) {
    if (bundle.tasks[i].kind == datagen::TaskKind::REG)
      r.reg_col_task.push_back(static_cast<std::uint32_t>(i));
    else
      r.cls_col_task.push_back(static_cast<std::uint32_t>(i));
  }
  return r;
}

Batch make_batch(const datagen::DatasetBundle& bundle, const TaskRouting& routing,
                 std::span<const std::uint32_t> rows) {
  Batch batch;
  batch.X = bundle.X.slice_rows(rows);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    {
      const auto cols = bundle.Y_cls.row_cols(r);
      const auto vals = bundle.Y_cls.row_vals(r);
      for (std::size_t k = 0; k < cols.size(); ++k) {
        const auto task = routing.cls_col_task[cols[k]];
        const auto& slot = routing.by_task[task];
        batch.cls.push_back({static_cast<std::uint32_t>(i), slot.out_col,
                             slot.catalogue, vals[k], slot.train_weight});
      }
    }
    {
      const auto begin = bundle.Y_reg.row_ptr()[r];
      const auto cols = bundle.Y_reg.row_cols(r);
      const auto vals = bundle.Y_reg.row_vals(r);
      for (std::size_t k = 0; k < cols.size(); ++k) {
        const auto task = routing.reg_col_task[cols[k]];
        const auto& slot = routing.by_task[task];
        batch.reg.push_back({static_cast<std::uint32_t>(i), slot.out_col, vals[k],
                             bundle.Y_reg_qual[begin + k], slot.train_weight});
      }
    }
  }
  return batch;
}

Forward forward(const ModelParams& params, const SparseMatrixCsr& X_batch) {
  if (params.trunk.empty()) throw ConfigError("forward: empty trunk");
  if (X_batch.n_cols() != params.trunk.front().in_dim)
    throw DimensionError("forward: batch feature dim != trunk input dim");
  const std::size_t n = X_batch.n_rows();
  const Nonlinearity nl = params.nonlinearity;

  Forward fwd;
  fwd.batch_rows = n;
  fwd.hidden.reserve(params.trunk.size());

  // First trunk layer: gather weight rows of the active features.
  {
    const auto& layer = params.trunk.front();
    std::vector<double> h(n * layer.out_dim);
    for (std::size_t s = 0; s < n; ++s) {
      double* out = h.data() + s * layer.out_dim;
      for (std::size_t o = 0; o < layer.out_dim; ++o) out[o] = layer.b[o];
      const auto cols = X_batch.row_cols(s);
      const auto vals = X_batch.row_vals(s);
      for (std::size_t k = 0; k < cols.size(); ++k) {
        const double* wrow = layer.w.data() + cols[k] * layer.out_dim;
        const double v = vals[k];
        for (std::size_t o = 0; o < layer.out_dim; ++o) out[o] += v * wrow[o];
      }
      for (std::size_t o = 0; o < layer.out_dim; ++o) {
        out[o] = activate(out[o], nl);
        if (!std::isfinite(out[o]))
          throw OverflowError("forward: non-finite activation");
      }
    }
    fwd.hidden.push_back(std::move(h));
  }
  for (std::size_t l = 1; l < params.trunk.size(); ++l) {
    const auto& layer = params.trunk[l];
    const auto& prev = fwd.hidden.back();
    std::vector<double> h(n * layer.out_dim);
    for (std::size_t s = 0; s < n; ++s) {
      double* out = h.data() + s * layer.out_dim;
      const double* in = prev.data() + s * layer.in_dim;
      for (std::size_t o = 0; o < layer.out_dim; ++o) out[o] = layer.b[o];
      for (std::size_t i = 0; i < layer.in_dim; ++i) {
        const double v = in[i];
        if (v == 0.0) continue;
        const double* wrow = layer.w.data() + i * layer.out_dim;
        for (std::size_t o = 0; o < layer.out_dim; ++o) out[o] += v * wrow[o];
      }
      for (std::size_t o = 0; o < layer.out_dim; ++o) {
        out[o] = activate(out[o], nl);
        if (!std::isfinite(out[o]))
          throw OverflowError("forward: non-finite activation");
      }
    }
    fwd.hidden.push_back(std::move(h));
  }

  // Heads are linear.
  auto apply_head = [&](const DenseLayer& head, std::vector<double>& out_mat) {
    const auto& last = fwd.hidden.back();
    out_mat.resize(n * head.out_dim);
    for (std::size_t s = 0; s < n; ++s) {
      double* out = out_mat.data() + s * head.out_dim;
      const double* in = last.data() + s * head.in_dim;
      for (std::size_t o = 0; o < head.out_dim; ++o) out[o] = head.b[o];
      for (std::size_t i = 0; i < head.in_dim; ++i) {
        const double v = in[i];
        if (v == 0.0) continue;
        const double* wrow = head.w.data() + i * head.out_dim;
        for (std::size_t o = 0; o < head.out_dim; ++o) out[o] += v * wrow[o];
      }
    }
  };
  apply_head(params.head, fwd.y_head);
  if (params.catalogue_head) apply_head(*params.catalogue_head, fwd.y_catalogue);
  return fwd;
}

LossResult loss(const Forward& fwd, const Batch& batch) {
  LossResult result;
  result.n_entries = batch.n_entries();
  const std::size_t n_head = fwd.batch_rows == 0 ? 0 : fwd.y_head.size() / fwd.batch_rows;
  const std::size_t n_cat =
      fwd.batch_rows == 0 ? 0 : fwd.y_catalogue.size() / fwd.batch_rows;
  double weighted = 0.0;
  for (const auto& e : batch.cls) {
    const double z = e.catalogue ? fwd.y_catalogue[e.row * n_cat + e.out_col]
                                 : fwd.y_head[e.row * n_head + e.out_col];
    const double l = logistic_loss(z, e.label);
    result.cls_sum += l;
    weighted += e.weight * l;
  }
  for (const auto& e : batch.reg) {
    const double z = fwd.y_head[e.row * n_head + e.out_col];
    const double l = censored_sq_loss(z, e.value, e.qual);
    result.reg_sum += l;
    weighted += e.weight * l;
  }
  result.total = result.n_entries == 0
                     ? 0.0
                     : weighted / static_cast<double>(result.n_entries);
  return result;
}

GradientUpdate backward(const ModelParams& params, const Batch& batch,
                        const Forward& fwd) {
  const std::size_t n = fwd.batch_rows;
  const Nonlinearity nl = params.nonlinearity;
  const std::size_t n_head = params.head.out_dim;
  const std::size_t n_cat = params.catalogue_head ? params.catalogue_head->out_dim : 0;
  const std::size_t n_entries = batch.n_entries();
  const double inv_entries =
      n_entries == 0 ? 0.0 : 1.0 / static_cast<double>(n_entries);

  // Loss derivative at the outputs; only observed entries are non-zero.
  std::vector<double> d_head(n * n_head, 0.0);
  std::vector<double> d_cat(n * n_cat, 0.0);
  for (const auto& e : batch.cls) {
    const double z = e.catalogue ? fwd.y_catalogue[e.row * n_cat + e.out_col]
                                 : fwd.y_head[e.row * n_head + e.out_col];
    const double g = e.weight * logistic_loss_grad(z, e.label) * inv_entries;
    if (e.catalogue)
      d_cat[e.row * n_cat + e.out_col] += g;
    else
      d_head[e.row * n_head + e.out_col] += g;
  }
  for (const auto& e : batch.reg) {
    const double z = fwd.y_head[e.row * n_head + e.out_col];
    d_head[e.row * n_head + e.out_col] +=
        e.weight * censored_sq_grad(z, e.value, e.qual) * inv_entries;
  }

  GradientUpdate update;
  update.n_samples = n;
  update.nnz = n_entries;
  update.x_nnz = batch.X.nnz();

  const auto& last_hidden = fwd.hidden.back();
  const std::size_t last_dim = params.trunk.back().out_dim;

  // Head gradients and the backpropagated signal into the last hidden layer.
  std::vector<double> d_hidden(n * last_dim, 0.0);
  auto head_backward = [&](const DenseLayer& head, const std::vector<double>& delta,
                           std::vector<double>& grad_out) {
    grad_out.assign(head.param_count(), 0.0);
    double* gw = grad_out.data();
    double* gb = grad_out.data() + head.w.size();
    for (std::size_t s = 0; s < n; ++s) {
      const double* d = delta.data() + s * head.out_dim;
      const double* h = last_hidden.data() + s * head.in_dim;
      for (std::size_t o = 0; o < head.out_dim; ++o) {
        const double g = d[o];
        if (g == 0.0) continue;
        gb[o] += g;
        for (std::size_t i = 0; i < head.in_dim; ++i) gw[i * head.out_dim + o] += g * h[i];
        const double* wcol = head.w.data() + o;
        double* dh = d_hidden.data() + s * head.in_dim;
        for (std::size_t i = 0; i < head.in_dim; ++i)
          dh[i] += g * wcol[i * head.out_dim];
      }
    }
  };
  head_backward(params.head, d_head, update.head_grad);
  if (params.catalogue_head)
    head_backward(*params.catalogue_head, d_cat, update.catalogue_grad);

  // Walk the trunk backwards, filling the flattened gradient in layer order.
  update.trunk_grad.assign(params.trunk_param_count(), 0.0);
  std::vector<std::size_t> offsets(params.trunk.size());
  {
    std::size_t pos = 0;
    for (std::size_t l = 0; l < params.trunk.size(); ++l) {
      offsets[l] = pos;
      pos += params.trunk[l].param_count();
    }
  }
  std::vector<double> delta = std::move(d_hidden);
  for (std::size_t li = params.trunk.size(); li-- > 0;) {
    const auto& layer = params.trunk[li];
    const auto& act = fwd.hidden[li];
    // Through the nonlinearity.
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t o = 0; o < layer.out_dim; ++o)
        delta[s * layer.out_dim + o] *=
            activate_prime_from_act(act[s * layer.out_dim + o], nl);

    double* gw = update.trunk_grad.data() + offsets[li];
    double* gb = gw + layer.w.size();
    if (li == 0) {
      for (std::size_t s = 0; s < n; ++s) {
        const double* d = delta.data() + s * layer.out_dim;
        const auto cols = batch.X.row_cols(s);
        const auto vals = batch.X.row_vals(s);
        for (std::size_t k = 0; k < cols.size(); ++k) {
          double* grow = gw + cols[k] * layer.out_dim;
          const double v = vals[k];
          for (std::size_t o = 0; o < layer.out_dim; ++o) grow[o] += v * d[o];
        }
        for (std::size_t o = 0; o < layer.out_dim; ++o) gb[o] += d[o];
      }
    } else {
      const auto& prev = fwd.hidden[li - 1];
      std::vector<double> d_prev(n * layer.in_dim, 0.0);
      for (std::size_t s = 0; s < n; ++s) {
        const double* d = delta.data() + s * layer.out_dim;
        const double* h = prev.data() + s * layer.in_dim;
        double* dp = d_prev.data() + s * layer.in_dim;
        for (std::size_t o = 0; o < layer.out_dim; ++o) {
          const double g = d[o];
          if (g == 0.0) continue;
          gb[o] += g;
          for (std::size_t i = 0; i < layer.in_dim; ++i) {
            gw[i * layer.out_dim + o] += g * h[i];
            dp[i] += g * layer.w[i * layer.out_dim + o];
          }
        }
      }
      delta = std::move(d_prev);
    }
  }

  for (const double g : update.trunk_grad)
    if (!std::isfinite(g)) throw OverflowError("backward: non-finite trunk gradient");
  for (const double g : update.head_grad)
    if (!std::isfinite(g)) throw OverflowError("backward: non-finite head gradient");
  return update;
}

namespace {

constexpr std::uint16_t kMdymVersion = 1;

void put_layer(ByteWriter& w, const DenseLayer& layer) {
  w.put_u64(layer.in_dim);
  w.put_u64(layer.out_dim);
  for (const double v : layer.w) w.put_f64(v);
  for (const double v : layer.b) w.put_f64(v);
}

DenseLayer get_layer(ByteReader& r) {
  DenseLayer layer;
  layer.in_dim = r.get_u64();
  layer.out_dim = r.get_u64();
  layer.w.resize(layer.in_dim * layer.out_dim);
  for (auto& v : layer.w) v = r.get_f64();
  layer.b.resize(layer.out_dim);
  for (auto& v : layer.b) v = r.get_f64();
  return layer;
}

enum class Section : std::uint8_t { TRUNK = 0, HEAD = 1 };

}  // namespace

void save_trunk(const std::filesystem::path& path, const ModelParams& params) {
  ByteWriter w;
  w.put_magic("MDYM");
  w.put_u16(kMdymVersion);
  w.put_u8(static_cast<std::uint8_t>(Section::TRUNK));
  w.put_u8(static_cast<std::uint8_t>(params.nonlinearity));
  w.put_u32(static_cast<std::uint32_t>(params.trunk.size()));
  for (const auto& layer : params.trunk) put_layer(w, layer);
  write_file(path, w.bytes());
}

void save_head(const std::filesystem::path& path, const ModelParams& params) {
  ByteWriter w;
  w.put_magic("MDYM");
  w.put_u16(kMdymVersion);
  w.put_u8(static_cast<std::uint8_t>(Section::HEAD));
  w.put_u8(static_cast<std::uint8_t>(params.nonlinearity));
  w.put_u32(params.catalogue_head ? 2 : 1);
  put_layer(w, params.head);
  if (params.catalogue_head) put_layer(w, *params.catalogue_head);
  write_file(path, w.bytes());
}

ModelParams load_trunk(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  r.expect_magic("MDYM");
  if (r.get_u16() != kMdymVersion) throw IoError("unsupported MDYM version");
  if (r.get_u8() != static_cast<std::uint8_t>(Section::TRUNK))
    throw IoError("not a trunk checkpoint");
  ModelParams params;
  params.nonlinearity = static_cast<Nonlinearity>(r.get_u8());
  const auto n_layers = r.get_u32();
  for (std::uint32_t l = 0; l < n_layers; ++l) params.trunk.push_back(get_layer(r));
  if (!r.done()) throw IoError("trailing bytes in trunk checkpoint");
  return params;
}

void load_head_into(const std::filesystem::path& path, ModelParams& params) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  r.expect_magic("MDYM");
  if (r.get_u16() != kMdymVersion) throw IoError("unsupported MDYM version");
  if (r.get_u8() != static_cast<std::uint8_t>(Section::HEAD))
    throw IoError("not a head checkpoint");
  const auto nl = static_cast<Nonlinearity>(r.get_u8());
  if (!params.trunk.empty() && nl != params.nonlinearity)
    throw IoError("head nonlinearity does not match trunk");
  const auto n = r.get_u32();
  params.head = get_layer(r);
  if (n > 1) params.catalogue_head = get_layer(r);
  if (!r.done()) throw IoError("trailing bytes in head checkpoint");
  if (!params.trunk.empty() && params.head.in_dim != params.trunk.back().out_dim)
    throw DimensionError("head input dim does not match trunk output");
}

}  // namespace fl::model
