#include "fl/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "fl/eval.hpp"

namespace fl::fed {

namespace {

constexpr std::uint32_t kAggregatorOrg = 1000000;

enum class Channel : std::uint8_t { TRUNK = 0, CATALOGUE = 1 };

enum class MetricCode : std::uint8_t { AUROC = 0, RMSE = 1, VAL_LOSS = 2 };

const char* metric_name(MetricCode code) {
  switch (code) {
    case MetricCode::AUROC: return "auroc";
    case MetricCode::RMSE: return "rmse";
    case MetricCode::VAL_LOSS: return "val_loss";
  }
  return "?";
}

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

bool enforce_churn(const ChurnPolicy& policy, const ChurnEvent& event) {
  if (event.orgs.empty()) return false;
  if (!event.at_phase_boundary) return false;
  return event.orgs.size() >= policy.min_group_size;
}

std::string metrics_to_csv(std::span<const MetricRow> rows) {
  std::string out = "round,partner_anon_id,task_idx,metric_name,value\n";
  for (const auto& r : rows) {
    out += std::to_string(r.round);
    out += ',';
    out += std::to_string(r.partner_anon_id);
    out += ',';
    out += std::to_string(r.task_idx);
    out += ',';
    out += r.metric_name;
    out += ',';
    out += format_value(r.value);
    out += '\n';
  }
  return out;
}

PhaseFolds phase_folds(std::uint32_t phase) {
  switch (phase) {
    case 1: return {{0, 1, 2}, 3};
    case 2: return {{0, 1, 2, 3}, 4};
    case 3: return {{0, 1, 2, 3, 4}, std::nullopt};
  }
  throw ConfigError("phase must be 1, 2 or 3");
}

struct Federation::PartnerState {
  std::uint32_t org_id = 0;
  SeedKey partner_key;
  datagen::DatasetBundle bundle;
  model::TaskRouting routing;
  model::ModelParams params;
  secagg::PartnerKeyView keys;
  std::optional<secagg::PartnerKeyView> cat_keys;
  std::vector<std::uint32_t> train_rows;

  // Round-scoped scratch; discarded when a round aborts.
  std::optional<model::GradientUpdate> pending;
  std::vector<double> pending_head_delta;
  std::vector<std::uint64_t> pending_coords;
};

struct Federation::AggregatorState {
  struct Counts {
    std::uint64_t rows = 0, entries = 0, x_nnz = 0;
  };
  std::map<std::uint32_t, Counts> counts;
  std::vector<secagg::MaskedVector> trunk_subs;
  std::vector<secagg::MaskedVector> cat_subs;

  void clear_round() {
    counts.clear();
    trunk_subs.clear();
    cat_subs.clear();
  }
};

Federation::Federation(
    FederationConfig cfg,
    std::vector<std::pair<std::uint32_t, datagen::DatasetBundle>> bundles)
    : cfg_(std::move(cfg)) {
  if (bundles.empty()) throw ConfigError("federation: no partner bundles");
  master_key_ = seed_from_u64(cfg_.master_seed);
  trunk_key_ = derive_key(master_key_, stream_label(StreamPurpose::TRUNK_INIT));
  setup_key_ = derive_key(master_key_, stream_label(StreamPurpose::SETUP_KEY, 1));
  aggregator_org_ = kAggregatorOrg;
  bus_ = std::make_unique<Bus>(aggregator_org_);
  aggregator_ = std::make_unique<AggregatorState>();

  const auto folds = phase_folds(cfg_.phase);
  const std::size_t input_dim = bundles.front().second.X.n_cols();
  for (auto& [org, bundle] : bundles) {
    if (bundle.X.n_cols() != input_dim)
      throw ConfigError("federation: partners disagree on the feature dimension");
    for (const auto f : bundle.folds)
      if (f > 4) throw ConfigError("federation: phases require the 5-fold split");
    auto ps = std::make_unique<PartnerState>();
    ps->org_id = org;
    ps->partner_key = derive_key(
        master_key_,
        stream_label(StreamPurpose::PARTNER_KEY, static_cast<std::uint8_t>(org)));
    ps->bundle = std::move(bundle);
    ps->routing = model::TaskRouting::build(ps->bundle);
    model::ModelConfig mc;
    mc.input_dim = static_cast<std::uint32_t>(input_dim);
    mc.hidden = cfg_.hidden;
    mc.n_private_tasks = ps->routing.n_private;
    mc.n_catalogue_tasks = ps->routing.n_catalogue;
    mc.nonlinearity = cfg_.nonlinearity;
    ps->params = model::ModelParams::init(
        mc, trunk_key_,
        derive_key(ps->partner_key, stream_label(StreamPurpose::HEAD_INIT)));
    for (std::size_t r = 0; r < ps->bundle.folds.size(); ++r)
      if (std::find(folds.train.begin(), folds.train.end(), ps->bundle.folds[r]) !=
          folds.train.end())
        ps->train_rows.push_back(static_cast<std::uint32_t>(r));
    partners_.push_back(std::move(ps));
  }
  std::sort(partners_.begin(), partners_.end(),
            [](const auto& a, const auto& b) { return a->org_id < b->org_id; });

  // Catalogue owners must agree on the shared task list.
  std::vector<std::uint32_t> cat_tasks_ref;
  for (const auto& ps : partners_) {
    if (ps->routing.n_catalogue == 0) continue;
    std::vector<std::uint32_t> ids;
    for (const auto& t : ps->bundle.tasks)
      if (t.kind == datagen::TaskKind::CATALOGUE) ids.push_back(t.task_id);
    if (cat_tasks_ref.empty())
      cat_tasks_ref = ids;
    else if (cat_tasks_ref != ids)
      throw ConfigError("federation: catalogue owners disagree on catalogue tasks");
  }

  // Anonymous score ids: seeded permutation, extended on joins.
  {
    SeededStream s(master_key_, stream_label(StreamPurpose::ANON_IDS));
    std::vector<std::uint32_t> ids(partners_.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::uint32_t>(i);
    for (std::size_t i = ids.size(); i > 1; --i)
      std::swap(ids[i - 1], ids[s.next_below(i)]);
    for (std::size_t i = 0; i < partners_.size(); ++i)
      anon_ids_[partners_[i]->org_id] = ids[i];
    next_anon_ = static_cast<std::uint32_t>(partners_.size());
  }

  provision_keys();

  bus_->register_org(aggregator_org_, [this](const Message& msg) {
    switch (msg.kind) {
      case MessageKind::BATCH_COUNTS: {
        ByteReader r(msg.payload);
        AggregatorState::Counts c;
        c.rows = r.get_u64();
        c.entries = r.get_u64();
        c.x_nnz = r.get_u64();
        aggregator_->counts[msg.from_org] = c;
        break;
      }
      case MessageKind::MASKED_UPDATE: {
        ByteReader r(msg.payload);
        const auto channel = static_cast<Channel>(r.get_u8());
        const std::size_t header = 1;
        auto vec = secagg::MaskedVector::from_wire(
            std::span(msg.payload).subspan(header));
        if (channel == Channel::TRUNK)
          aggregator_->trunk_subs.push_back(std::move(vec));
        else
          aggregator_->cat_subs.push_back(std::move(vec));
        break;
      }
      case MessageKind::TEST_SCORE: {
        ByteReader r(msg.payload);
        MetricRow row;
        row.partner_anon_id = r.get_u32();
        row.task_idx = static_cast<std::int64_t>(r.get_u64());
        row.metric_name = metric_name(static_cast<MetricCode>(r.get_u8()));
        row.value = r.get_f64();
        row.round = msg.round;
        metrics_.push_back(std::move(row));
        break;
      }
      default:
        throw ProtocolError("aggregator received unexpected message kind");
    }
  });
}

Federation::~Federation() = default;

void Federation::provision_keys() {
  std::vector<std::uint32_t> ids = partner_ids();
  const auto keys = secagg::RoundKeys::provision(setup_key_, ids, key_epoch_);
  for (auto& ps : partners_) ps->keys = keys.view_for(ps->org_id);

  std::vector<std::uint32_t> owners;
  for (const auto& ps : partners_)
    if (ps->routing.n_catalogue > 0) owners.push_back(ps->org_id);
  if (!owners.empty()) {
    const auto cat_keys = secagg::RoundKeys::provision(
        derive_key(setup_key_, stream_label(StreamPurpose::CATALOGUE_INIT)), owners,
        key_epoch_);
    for (auto& ps : partners_)
      if (ps->routing.n_catalogue > 0) ps->cat_keys = cat_keys.view_for(ps->org_id);
  }

  // (Re-)register partner handlers; membership may have changed.
  for (auto& ps : partners_) {
    PartnerState* state = ps.get();
    bus_->register_org(state->org_id, [this, state](const Message& msg) {
      switch (msg.kind) {
        case MessageKind::ROUND_TOTALS: {
          ByteReader r(msg.payload);
          secagg::RoundTotals totals;
          totals.sum_rows = r.get_u64();
          totals.sum_entries = r.get_u64();
          totals.sum_x_nnz = r.get_u64();
          totals.n_partners = r.get_u32();
          on_round_totals(*state, msg.round, totals);
          break;
        }
        case MessageKind::AGGREGATE_RESULT: {
          ByteReader r(msg.payload);
          const auto channel = static_cast<Channel>(r.get_u8());
          const auto k = r.get_u64();
          std::vector<std::uint64_t> coords(k), values(k);
          for (auto& c : coords) c = r.get_u64();
          for (auto& v : values) v = r.get_u64();
          on_aggregate_result(*state, msg.round, channel == Channel::CATALOGUE,
                              coords, values);
          break;
        }
        default:
          throw ProtocolError("partner received unexpected message kind");
      }
    });
  }
}

Federation::PartnerState& Federation::partner(std::uint32_t org) {
  for (auto& ps : partners_)
    if (ps->org_id == org) return *ps;
  throw ConfigError("unknown partner org " + std::to_string(org));
}

const Federation::PartnerState& Federation::partner(std::uint32_t org) const {
  for (const auto& ps : partners_)
    if (ps->org_id == org) return *ps;
  throw ConfigError("unknown partner org " + std::to_string(org));
}

std::vector<std::uint32_t> Federation::partner_ids() const {
  std::vector<std::uint32_t> ids;
  ids.reserve(partners_.size());
  for (const auto& ps : partners_) ids.push_back(ps->org_id);
  return ids;
}

std::uint32_t Federation::anon_id(std::uint32_t org) const {
  const auto it = anon_ids_.find(org);
  if (it == anon_ids_.end()) throw ConfigError("unknown org for anon id");
  return it->second;
}

const model::ModelParams& Federation::partner_params(std::uint32_t org) const {
  return partner(org).params;
}

const datagen::DatasetBundle& Federation::partner_bundle(std::uint32_t org) const {
  return partner(org).bundle;
}

const std::vector<std::uint8_t>& Federation::transcript() const {
  return bus_->transcript();
}

bool Federation::trunks_identical() const {
  if (partners_.empty()) return true;
  const auto ref = partners_.front()->params.flatten_trunk();
  for (std::size_t i = 1; i < partners_.size(); ++i)
    if (partners_[i]->params.flatten_trunk() != ref) return false;
  return true;
}

std::vector<std::uint32_t> Federation::batch_rows(std::uint32_t org,
                                                  std::uint32_t round) const {
  const auto& ps = partner(org);
  const std::uint32_t epoch = round / cfg_.batches_per_epoch;
  const std::uint32_t batch = round % cfg_.batches_per_epoch;
  std::vector<std::uint32_t> rows = ps.train_rows;
  SeededStream s(ps.partner_key,
                 stream_label(StreamPurpose::BATCH_SHUFFLE, 0, 0, 0, epoch));
  for (std::size_t i = rows.size(); i > 1; --i)
    std::swap(rows[i - 1], rows[s.next_below(i)]);
  const std::size_t n = rows.size();
  const std::size_t begin = batch * n / cfg_.batches_per_epoch;
  const std::size_t end = (batch + 1) * n / cfg_.batches_per_epoch;
  return std::vector<std::uint32_t>(rows.begin() + begin, rows.begin() + end);
}

void Federation::run() {
  std::vector<std::uint32_t> test_rounds;
  if (cfg_.phase != 3) {
    for (std::uint32_t e = 0; e < cfg_.epochs; ++e) {
      if ((e + 1) % cfg_.test_every_epochs == 0 || e + 1 == cfg_.epochs)
        test_rounds.push_back((e + 1) * cfg_.batches_per_epoch - 1);
    }
  }
  const auto plan =
      build_plan(static_cast<std::uint32_t>(partners_.size()), cfg_.epochs,
                 cfg_.batches_per_epoch, cfg_.phase, test_rounds);
  phase_in_progress_ = true;
  for (const auto id : plan.topological_order()) {
    const auto& node = plan.nodes[id];
    switch (node.kind) {
      case TaskType::TRAIN: execute_train(node); break;
      case TaskType::AGGREGATE: execute_aggregate(node); break;
      case TaskType::TEST: execute_test(node); break;
    }
  }
  phase_in_progress_ = false;
  round_base_ += plan.n_rounds;
}

void Federation::execute_train(const PlanNode& node) {
  auto& ps = *partners_[node.org];
  const std::uint32_t round = round_base_ + node.round;

  if (cfg_.faults.send_full_model_round &&
      *cfg_.faults.send_full_model_round == round && node.org == 0) {
    Message msg;
    msg.kind = MessageKind::FULL_MODEL;
    msg.from_org = ps.org_id;
    msg.to_org = aggregator_org_;
    msg.round = round;
    msg.payload = {0};
    bus_->post(msg);  // denied
  }
  if (cfg_.faults.send_raw_rows_round && *cfg_.faults.send_raw_rows_round == round &&
      node.org == 0) {
    Message msg;
    msg.kind = MessageKind::RAW_DATA_ROWS;
    msg.from_org = ps.org_id;
    msg.to_org = aggregator_org_;
    msg.round = round;
    msg.payload = {0};
    bus_->post(msg);  // denied
  }

  const auto rows = batch_rows(ps.org_id, round);
  const auto batch = model::make_batch(ps.bundle, ps.routing, rows);
  const auto fwd = model::forward(ps.params, batch.X);
  ps.pending = model::backward(ps.params, batch, fwd);

  Message msg;
  msg.kind = MessageKind::BATCH_COUNTS;
  msg.from_org = ps.org_id;
  msg.to_org = aggregator_org_;
  msg.round = round;
  ByteWriter w;
  w.put_u64(ps.pending->n_samples);
  w.put_u64(ps.pending->nnz);
  w.put_u64(ps.pending->x_nnz);
  msg.payload = w.take();
  bus_->post(msg);
}

void Federation::on_round_totals(PartnerState& ps, std::uint64_t round,
                                 const secagg::RoundTotals& totals) {
  if (!ps.pending) throw ProtocolError("totals received without a pending gradient");
  const bool dropped = cfg_.faults.drop_partner &&
                       cfg_.faults.drop_partner->first == round &&
                       cfg_.faults.drop_partner->second == ps.org_id;

  const double weight = secagg::partner_weight(*ps.pending, cfg_.weighting, totals);
  ps.pending_head_delta.assign(ps.pending->head_grad.size(), 0.0);
  for (std::size_t i = 0; i < ps.pending_head_delta.size(); ++i)
    ps.pending_head_delta[i] = weight * ps.pending->head_grad[i];

  const std::size_t trunk_dim = ps.pending->trunk_grad.size();
  auto k = static_cast<std::uint64_t>(
      std::llround(cfg_.subset_fraction * static_cast<double>(trunk_dim)));
  k = std::max<std::uint64_t>(1, std::min<std::uint64_t>(k, trunk_dim));
  ps.pending_coords = secagg::select_subset(ps.keys.subset_seed, round, trunk_dim, k);

  if (dropped) return;  // withhold the submission; the round must abort

  std::vector<double> weighted(trunk_dim);
  for (std::size_t i = 0; i < trunk_dim; ++i)
    weighted[i] = weight * ps.pending->trunk_grad[i];
  const auto ids = partner_ids();
  const auto masked =
      secagg::mask(weighted, ps.keys, ids, round, ps.pending_coords, cfg_.codec,
                   static_cast<std::uint8_t>(cfg_.weighting));
  Message msg;
  msg.kind = MessageKind::MASKED_UPDATE;
  msg.from_org = ps.org_id;
  msg.to_org = aggregator_org_;
  msg.round = round;
  ByteWriter w;
  w.put_u8(static_cast<std::uint8_t>(Channel::TRUNK));
  w.put_bytes(masked.wire());
  msg.payload = w.take();
  bus_->post(msg);

  if (ps.cat_keys && !ps.pending->catalogue_grad.empty()) {
    std::vector<double> cat_weighted(ps.pending->catalogue_grad.size());
    for (std::size_t i = 0; i < cat_weighted.size(); ++i)
      cat_weighted[i] = weight * ps.pending->catalogue_grad[i];
    std::vector<std::uint64_t> cat_coords(cat_weighted.size());
    for (std::size_t i = 0; i < cat_coords.size(); ++i) cat_coords[i] = i;
    std::vector<std::uint32_t> owners;
    for (const auto& other : partners_)
      if (other->routing.n_catalogue > 0) owners.push_back(other->org_id);
    const auto cat_masked =
        secagg::mask(cat_weighted, *ps.cat_keys, owners, round, cat_coords,
                     cfg_.codec, static_cast<std::uint8_t>(cfg_.weighting));
    Message cmsg;
    cmsg.kind = MessageKind::MASKED_UPDATE;
    cmsg.from_org = ps.org_id;
    cmsg.to_org = aggregator_org_;
    cmsg.round = round;
    ByteWriter cw;
    cw.put_u8(static_cast<std::uint8_t>(Channel::CATALOGUE));
    cw.put_bytes(cat_masked.wire());
    cmsg.payload = cw.take();
    bus_->post(cmsg);
  }
}

void Federation::on_aggregate_result(PartnerState& ps, std::uint64_t round,
                                     bool catalogue,
                                     std::span<const std::uint64_t> coords,
                                     std::span<const std::uint64_t> values) {
  if (!ps.pending) throw ProtocolError("aggregate result without a pending gradient");
  if (!catalogue) {
    if (ps.pending_coords.size() != coords.size() ||
        !std::equal(coords.begin(), coords.end(), ps.pending_coords.begin()))
      throw ProtocolError("aggregate result disagrees with the local subset");
    const auto ids = partner_ids();
    const auto agg_values =
        secagg::unmask(values, ps.keys.common_seed, ids, round, coords, cfg_.codec);
    const auto delta = secagg::scatter_update(ps.pending->trunk_grad.size(), coords,
                                              agg_values);
    ps.params = ps.params.stepped(delta, ps.pending_head_delta, cfg_.lr);
  } else {
    std::vector<std::uint32_t> owners;
    for (const auto& other : partners_)
      if (other->routing.n_catalogue > 0) owners.push_back(other->org_id);
    const auto agg_values = secagg::unmask(values, ps.cat_keys->common_seed, owners,
                                           round, coords, cfg_.codec);
    ps.params = ps.params.stepped({}, {}, cfg_.lr, agg_values);
  }
}

void Federation::execute_aggregate(const PlanNode& node) {
  const std::uint32_t round = round_base_ + node.round;
  const std::size_t P = partners_.size();
  if (aggregator_->counts.size() != P)
    throw ProtocolError("aggregate: missing batch counts");

  secagg::RoundTotals totals;
  totals.n_partners = static_cast<std::uint32_t>(P);
  for (const auto& [org, c] : aggregator_->counts) {
    totals.sum_rows += c.rows;
    totals.sum_entries += c.entries;
    totals.sum_x_nnz += c.x_nnz;
  }

  // Broadcasting the public totals makes every partner mask and submit.
  for (const auto& ps : partners_) {
    Message msg;
    msg.kind = MessageKind::ROUND_TOTALS;
    msg.from_org = aggregator_org_;
    msg.to_org = ps->org_id;
    msg.round = round;
    ByteWriter w;
    w.put_u64(totals.sum_rows);
    w.put_u64(totals.sum_entries);
    w.put_u64(totals.sum_x_nnz);
    w.put_u32(totals.n_partners);
    msg.payload = w.take();
    bus_->post(msg);
  }

  std::size_t n_owners = 0;
  for (const auto& ps : partners_)
    if (ps->routing.n_catalogue > 0) ++n_owners;

  if (aggregator_->trunk_subs.size() < P ||
      (n_owners > 0 && aggregator_->cat_subs.size() < n_owners)) {
    // Abort with no state change: all submissions and pending gradients
    // for this round are discarded.
    const auto received = aggregator_->trunk_subs.size();
    aggregator_->clear_round();
    for (auto& ps : partners_) {
      ps->pending.reset();
      ps->pending_head_delta.clear();
      ps->pending_coords.clear();
    }
    throw MissingPartnerError("round " + std::to_string(round) + ": " +
                              std::to_string(received) + " of " + std::to_string(P) +
                              " submissions received");
  }

  const auto ring_sum = secagg::aggregate(aggregator_->trunk_subs, P);
  const auto& coords = aggregator_->trunk_subs.front().coords;
  for (const auto& ps : partners_) {
    Message msg;
    msg.kind = MessageKind::AGGREGATE_RESULT;
    msg.from_org = aggregator_org_;
    msg.to_org = ps->org_id;
    msg.round = round;
    ByteWriter w;
    w.put_u8(static_cast<std::uint8_t>(Channel::TRUNK));
    w.put_u64(coords.size());
    for (const auto c : coords) w.put_u64(c);
    for (const auto v : ring_sum) w.put_u64(v);
    msg.payload = w.take();
    bus_->post(msg);
  }

  if (n_owners > 0) {
    // The catalogue aggregate is delivered to contributing partners only.
    const auto cat_sum = secagg::aggregate(aggregator_->cat_subs, n_owners);
    const auto& cat_coords = aggregator_->cat_subs.front().coords;
    for (const auto& ps : partners_) {
      if (ps->routing.n_catalogue == 0) continue;
      Message msg;
      msg.kind = MessageKind::AGGREGATE_RESULT;
      msg.from_org = aggregator_org_;
      msg.to_org = ps->org_id;
      msg.round = round;
      ByteWriter w;
      w.put_u8(static_cast<std::uint8_t>(Channel::CATALOGUE));
      w.put_u64(cat_coords.size());
      for (const auto c : cat_coords) w.put_u64(c);
      for (const auto v : cat_sum) w.put_u64(v);
      msg.payload = w.take();
      bus_->post(msg);
    }
  }

  aggregator_->clear_round();
  for (auto& ps : partners_) {
    ps->pending.reset();
    ps->pending_head_delta.clear();
    ps->pending_coords.clear();
  }
  if (after_round) after_round(round);
}

void Federation::execute_test(const PlanNode& node) {
  const auto& ps = *partners_[node.org];
  const std::uint32_t round = round_base_ + node.round;
  const auto folds = phase_folds(cfg_.phase);
  if (!folds.eval) return;

  const bool attributed = cfg_.faults.attributed_score_round &&
                          *cfg_.faults.attributed_score_round == round &&
                          node.org == 0;

  auto rows = evaluate_tasks(ps.org_id, *folds.eval);
  MetricRow loss_row;
  loss_row.task_idx = -1;
  loss_row.metric_name = "val_loss";
  loss_row.value = evaluate_loss(ps.org_id, *folds.eval);
  rows.push_back(std::move(loss_row));

  for (const auto& row : rows) {
    Message msg;
    msg.kind = MessageKind::TEST_SCORE;
    msg.from_org = ps.org_id;
    msg.to_org = aggregator_org_;
    msg.round = round;
    if (attributed) msg.attributed_org = ps.org_id;
    ByteWriter w;
    w.put_u32(anon_id(ps.org_id));
    w.put_u64(static_cast<std::uint64_t>(row.task_idx));
    MetricCode code = MetricCode::VAL_LOSS;
    if (row.metric_name == "auroc") code = MetricCode::AUROC;
    if (row.metric_name == "rmse") code = MetricCode::RMSE;
    w.put_u8(static_cast<std::uint8_t>(code));
    w.put_f64(row.value);
    msg.payload = w.take();
    bus_->post(msg);
  }
}

double Federation::evaluate_loss(std::uint32_t org, std::uint8_t fold) const {
  const auto& ps = partner(org);
  std::vector<std::uint32_t> rows;
  for (std::size_t r = 0; r < ps.bundle.folds.size(); ++r)
    if (ps.bundle.folds[r] == fold) rows.push_back(static_cast<std::uint32_t>(r));
  const auto batch = model::make_batch(ps.bundle, ps.routing, rows);
  const auto fwd = model::forward(ps.params, batch.X);
  return model::loss(fwd, batch).total;
}

std::vector<MetricRow> Federation::evaluate_tasks(std::uint32_t org,
                                                  std::uint8_t fold) const {
  const auto& ps = partner(org);
  std::vector<std::uint32_t> rows;
  for (std::size_t r = 0; r < ps.bundle.folds.size(); ++r)
    if (ps.bundle.folds[r] == fold) rows.push_back(static_cast<std::uint32_t>(r));
  const auto batch = model::make_batch(ps.bundle, ps.routing, rows);
  const auto fwd = model::forward(ps.params, batch.X);
  const std::size_t n_head = ps.params.head.out_dim;
  const std::size_t n_cat =
      ps.params.catalogue_head ? ps.params.catalogue_head->out_dim : 0;

  std::vector<MetricRow> out;
  for (std::size_t t = 0; t < ps.bundle.tasks.size(); ++t) {
    const auto& slot = ps.routing.by_task[t];
    if (!slot.eval_included) continue;  // auxiliary tasks are never scored
    if (slot.kind == datagen::TaskKind::REG) {
      std::vector<double> preds, labels;
      for (const auto& e : batch.reg) {
        if (e.out_col != slot.out_col || e.qual != datagen::Qualifier::EQ) continue;
        preds.push_back(fwd.y_head[e.row * n_head + e.out_col]);
        labels.push_back(e.value);
      }
      if (preds.empty()) continue;
      MetricRow row;
      row.task_idx = static_cast<std::int64_t>(t);
      row.metric_name = "rmse";
      row.value = eval::rmse(preds, labels);
      out.push_back(std::move(row));
    } else {
      std::vector<double> scores, labels;
      for (const auto& e : batch.cls) {
        if (e.catalogue != slot.catalogue || e.out_col != slot.out_col) continue;
        scores.push_back(e.catalogue ? fwd.y_catalogue[e.row * n_cat + e.out_col]
                                     : fwd.y_head[e.row * n_head + e.out_col]);
        labels.push_back(e.label);
      }
      bool has_pos = false, has_neg = false;
      for (const double l : labels) (l > 0 ? has_pos : has_neg) = true;
      if (!has_pos || !has_neg) continue;
      MetricRow row;
      row.task_idx = static_cast<std::int64_t>(t);
      row.metric_name = "auroc";
      row.value = eval::auroc(scores, labels);
      out.push_back(std::move(row));
    }
  }
  return out;
}

bool Federation::apply_churn(
    const ChurnEvent& event,
    std::vector<std::pair<std::uint32_t, datagen::DatasetBundle>> joining_bundles) {
  ChurnEvent checked = event;
  checked.at_phase_boundary = !phase_in_progress_ && event.at_phase_boundary;
  if (!enforce_churn(cfg_.churn, checked)) return false;

  if (event.join) {
    if (joining_bundles.size() != event.orgs.size())
      throw ConfigError("churn: joining orgs and bundles disagree");
    const auto folds = phase_folds(cfg_.phase);
    const std::size_t input_dim = partners_.empty()
                                      ? joining_bundles.front().second.X.n_cols()
                                      : partners_.front()->bundle.X.n_cols();
    for (auto& [org, bundle] : joining_bundles) {
      if (bundle.X.n_cols() != input_dim)
        throw ConfigError("churn: joining partner feature dimension mismatch");
      auto ps = std::make_unique<PartnerState>();
      ps->org_id = org;
      ps->partner_key = derive_key(
          master_key_,
          stream_label(StreamPurpose::PARTNER_KEY, static_cast<std::uint8_t>(org)));
      ps->bundle = std::move(bundle);
      ps->routing = model::TaskRouting::build(ps->bundle);
      model::ModelConfig mc;
      mc.input_dim = static_cast<std::uint32_t>(input_dim);
      mc.hidden = cfg_.hidden;
      mc.n_private_tasks = ps->routing.n_private;
      mc.n_catalogue_tasks = ps->routing.n_catalogue;
      mc.nonlinearity = cfg_.nonlinearity;
      ps->params = model::ModelParams::init(
          mc, trunk_key_,
          derive_key(ps->partner_key, stream_label(StreamPurpose::HEAD_INIT)));
      // A joiner receives the coalition's current trunk, and the current
      // catalogue head when it owns catalogue tasks.
      if (!partners_.empty()) {
        ps->params.trunk = partners_.front()->params.trunk;
        if (ps->params.catalogue_head) {
          for (const auto& other : partners_) {
            if (other->params.catalogue_head &&
                other->params.catalogue_head->w.size() ==
                    ps->params.catalogue_head->w.size()) {
              ps->params.catalogue_head = other->params.catalogue_head;
              break;
            }
          }
        }
      }
      for (std::size_t r = 0; r < ps->bundle.folds.size(); ++r)
        if (std::find(folds.train.begin(), folds.train.end(), ps->bundle.folds[r]) !=
            folds.train.end())
          ps->train_rows.push_back(static_cast<std::uint32_t>(r));
      if (!anon_ids_.count(org)) anon_ids_[org] = next_anon_++;
      partners_.push_back(std::move(ps));
    }
    std::sort(partners_.begin(), partners_.end(),
              [](const auto& a, const auto& b) { return a->org_id < b->org_id; });
  } else {
    for (const auto org : event.orgs) {
      const auto it = std::find_if(partners_.begin(), partners_.end(),
                                   [org](const auto& p) { return p->org_id == org; });
      if (it == partners_.end())
        throw ConfigError("churn: leaving org " + std::to_string(org) +
                          " is not a member");
      bus_->unregister_org(org);
      partners_.erase(it);
    }
    if (partners_.empty()) throw ConfigError("churn: coalition would be empty");
  }

  ++key_epoch_;
  provision_keys();
  return true;
}

void Federation::set_phase(std::uint32_t phase) {
  if (phase_in_progress_) throw ConfigError("cannot change phase mid-run");
  cfg_.phase = phase;
  const auto folds = phase_folds(phase);
  for (auto& ps : partners_) {
    ps->train_rows.clear();
    for (std::size_t r = 0; r < ps->bundle.folds.size(); ++r)
      if (std::find(folds.train.begin(), folds.train.end(), ps->bundle.folds[r]) !=
          folds.train.end())
        ps->train_rows.push_back(static_cast<std::uint32_t>(r));
  }
}

void Federation::set_schedule(std::uint32_t epochs, std::uint32_t batches_per_epoch) {
  if (phase_in_progress_) throw ConfigError("cannot change schedule mid-run");
  cfg_.epochs = epochs;
  cfg_.batches_per_epoch = batches_per_epoch;
}

}  // namespace fl::fed
