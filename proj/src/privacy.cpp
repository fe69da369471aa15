#include "fl/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "fl/datagen.hpp"
#include "fl/secagg.hpp"

namespace fl::privacy {

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct ToyWorld {
  model::ModelParams snapshot;
  std::uint32_t feature_dim;
  std::uint32_t n_active;
  std::uint32_t n_tasks;
};

ToyWorld make_world(const SeedKey& key, std::uint32_t feature_dim,
                    std::uint32_t n_active, std::uint32_t hidden,
                    std::uint32_t n_tasks) {
  model::ModelConfig mc;
  mc.input_dim = feature_dim;
  mc.hidden = {hidden};
  mc.n_private_tasks = n_tasks;
  mc.nonlinearity = model::Nonlinearity::RELU;
  ToyWorld world;
  world.snapshot = model::ModelParams::init(
      mc, derive_key(key, stream_label(StreamPurpose::TRUNK_INIT)),
      derive_key(key, stream_label(StreamPurpose::HEAD_INIT)));
  world.feature_dim = feature_dim;
  world.n_active = n_active;
  world.n_tasks = n_tasks;
  return world;
}

struct Sample {
  std::uint64_t compound_id;
  std::uint32_t task;
  double label;
};

Sample draw_sample(SeededStream& s, std::uint32_t n_tasks) {
  Sample sample;
  sample.compound_id = s.next_u64();
  sample.task = static_cast<std::uint32_t>(s.next_below(n_tasks));
  sample.label = s.next_below(2) == 0 ? -1.0 : 1.0;
  return sample;
}

model::Batch samples_to_batch(const ToyWorld& world, std::span<const Sample> samples) {
  model::Batch batch;
  std::vector<std::tuple<std::uint64_t, std::uint64_t, double>> triplets;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (const auto bit :
         datagen::featurize(samples[i].compound_id, world.feature_dim, world.n_active))
      triplets.emplace_back(i, bit, 1.0);
    batch.cls.push_back({static_cast<std::uint32_t>(i), samples[i].task, false,
                         samples[i].label, 1.0});
  }
  batch.X = SparseMatrixCsr::from_triplets(samples.size(), world.feature_dim,
                                           std::move(triplets));
  return batch;
}

std::vector<double> batch_trunk_gradient(const ToyWorld& world,
                                         std::span<const Sample> samples) {
  const auto batch = samples_to_batch(world, samples);
  const auto fwd = model::forward(world.snapshot, batch.X);
  return model::backward(world.snapshot, batch, fwd).trunk_grad;
}

// Observed update for one trial: a single partner's batch gradient, the
// mean over n_partners batch gradients, or the masked bytes of the
// single-partner submission.
std::vector<double> observed_update(const ToyWorld& world, SeededStream& s,
                                    std::uint32_t n_partners, std::uint32_t batch_size,
                                    bool masked_view, const Sample& member,
                                    std::uint64_t trial_counter) {
  std::vector<double> agg;
  for (std::uint32_t p = 0; p < n_partners; ++p) {
    std::vector<Sample> batch;
    for (std::uint32_t i = 0; i < batch_size; ++i)
      batch.push_back(draw_sample(s, world.n_tasks));
    if (p == 0) batch[0] = member;  // the target sits in partner 0's batch
    const auto grad = batch_trunk_gradient(world, batch);
    if (agg.empty()) agg.assign(grad.size(), 0.0);
    for (std::size_t i = 0; i < grad.size(); ++i)
      agg[i] += grad[i] / static_cast<double>(n_partners);
  }
  if (!masked_view) return agg;

  // Server view of the partner-0 submission under secure aggregation.
  const std::vector<std::uint32_t> partners = {0, 1};
  const auto keys = secagg::RoundKeys::provision(
      derive_key(SeedKey{}, stream_label(StreamPurpose::SETUP_KEY)), partners, 0);
  std::vector<std::uint64_t> coords(agg.size());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  const FixedPointCodec codec;
  const auto masked = secagg::mask(agg, keys.view_for(0), partners, trial_counter,
                                   coords, codec, 0);
  std::vector<double> view(masked.masked_values.size());
  for (std::size_t i = 0; i < view.size(); ++i)
    view[i] = codec.decode(masked.masked_values[i]);
  return view;
}

struct Trial {
  double score;
  bool member;
};

double best_threshold(std::vector<Trial>& trials) {
  std::sort(trials.begin(), trials.end(),
            [](const Trial& a, const Trial& b) { return a.score < b.score; });
  // Scan all cut positions; predict member above the cut.
  std::size_t members_total = 0;
  for (const auto& t : trials) members_total += t.member;
  std::size_t best_correct = 0;
  double best_cut = trials.empty() ? 0.0 : trials.front().score - 1.0;
  std::size_t members_below = 0;
  for (std::size_t cut = 0; cut <= trials.size(); ++cut) {
    const std::size_t non_members_below = cut - members_below;
    const std::size_t correct =
        non_members_below + (members_total - members_below);
    if (correct > best_correct) {
      best_correct = correct;
      if (cut == 0)
        best_cut = trials.front().score - 1.0;
      else if (cut == trials.size())
        best_cut = trials.back().score + 1.0;
      else
        best_cut = 0.5 * (trials[cut - 1].score + trials[cut].score);
    }
    if (cut < trials.size() && trials[cut].member) ++members_below;
  }
  return best_cut;
}

}  // namespace

const char* to_string(AttackKind k) {
  switch (k) {
    case AttackKind::MIA_SINGLE: return "MIA_SINGLE";
    case AttackKind::MIA_AGGREGATE: return "MIA_AGGREGATE";
    case AttackKind::MIA_MASKED: return "MIA_MASKED";
    case AttackKind::DIFFERENTIATION: return "DIFFERENTIATION";
  }
  return "?";
}

double mia_score(std::span<const double> observed_trunk_update,
                 const model::ModelParams& snapshot, const model::Batch& probe) {
  if (observed_trunk_update.size() != snapshot.trunk_param_count())
    throw DimensionError("mia_score: update length != trunk parameter count");
  const auto fwd = model::forward(snapshot, probe.X);
  const auto grad = model::backward(snapshot, probe, fwd);
  return cosine(observed_trunk_update, grad.trunk_grad);
}

AttackResult run_mia(const MiaConfig& cfg) {
  const SeedKey key = derive_key(seed_from_u64(cfg.seed),
                                 stream_label(StreamPurpose::ATTACK_TRIAL));
  const ToyWorld world =
      make_world(key, cfg.feature_dim, cfg.n_active_bits, cfg.hidden, cfg.n_tasks);

  std::uint64_t trial_counter = 0;
  auto run_trials = [&](SeededStream& s, std::uint32_t n, std::vector<Trial>& out) {
    for (std::uint32_t i = 0; i < n; ++i) {
      const bool member_trial = i % 2 == 0;
      const Sample member = draw_sample(s, world.n_tasks);
      const auto update =
          observed_update(world, s, cfg.n_partners, cfg.batch_size, cfg.masked_view,
                          member, trial_counter++);
      const Sample target = member_trial ? member : draw_sample(s, world.n_tasks);
      const auto probe = samples_to_batch(world, std::span(&target, 1));
      out.push_back({mia_score(update, world.snapshot, probe), member_trial});
    }
  };

  std::vector<Trial> calibration;
  {
    SeededStream s(key, stream_label(StreamPurpose::ATTACK_TRIAL, 1));
    run_trials(s, cfg.n_calibration, calibration);
  }
  const double threshold = best_threshold(calibration);

  std::vector<Trial> trials;
  {
    SeededStream s(key, stream_label(StreamPurpose::ATTACK_TRIAL, 2));
    run_trials(s, cfg.n_trials, trials);
  }
  std::size_t correct = 0;
  for (const auto& t : trials)
    if ((t.score > threshold) == t.member) ++correct;

  AttackResult result;
  result.kind = cfg.masked_view
                    ? AttackKind::MIA_MASKED
                    : (cfg.n_partners == 1 ? AttackKind::MIA_SINGLE
                                           : AttackKind::MIA_AGGREGATE);
  result.n_trials = cfg.n_trials;
  result.accuracy = static_cast<double>(correct) / static_cast<double>(trials.size());
  result.advantage = result.accuracy - 0.5;
  result.target = "aggregate-of-" + std::to_string(cfg.n_partners);
  return result;
}

AttackResult run_differentiation(const DiffConfig& cfg) {
  if (cfg.group_size == 0 || cfg.group_size >= cfg.coalition_size)
    throw ConfigError("differentiation: group size must be in [1, coalition)");
  const SeedKey key = derive_key(seed_from_u64(cfg.seed),
                                 stream_label(StreamPurpose::ATTACK_TRIAL, 3));
  const ToyWorld world =
      make_world(key, cfg.feature_dim, cfg.n_active_bits, cfg.hidden, cfg.n_tasks);

  // Mean attack statistic over one segment: cosine of the probe gradient
  // against the coalition's aggregate update, averaged over rounds.
  auto segment_score = [&](SeededStream& s, std::uint32_t n_partners,
                           const Sample* planted, std::span<const double> probe_grad) {
    double acc = 0.0;
    for (std::uint32_t r = 0; r < cfg.rounds_per_segment; ++r) {
      std::vector<double> agg;
      for (std::uint32_t p = 0; p < n_partners; ++p) {
        std::vector<Sample> batch;
        for (std::uint32_t i = 0; i < cfg.batch_size; ++i)
          batch.push_back(draw_sample(s, world.n_tasks));
        // The probe owner re-uses its sample every round (it sits in the
        // owner's training set).
        if (planted && p == 0) batch[0] = *planted;
        const auto grad = batch_trunk_gradient(world, batch);
        if (agg.empty()) agg.assign(grad.size(), 0.0);
        for (std::size_t i = 0; i < grad.size(); ++i)
          agg[i] += grad[i] / static_cast<double>(n_partners);
      }
      acc += cosine(agg, probe_grad);
    }
    return acc / static_cast<double>(cfg.rounds_per_segment);
  };

  auto trial_statistic = [&](SeededStream& s, bool probe_is_members) {
    const Sample probe_sample = draw_sample(s, world.n_tasks);
    const auto probe = samples_to_batch(world, std::span(&probe_sample, 1));
    const auto fwd = model::forward(world.snapshot, probe.X);
    const auto probe_grad = model::backward(world.snapshot, probe, fwd).trunk_grad;
    const Sample* planted = probe_is_members ? &probe_sample : nullptr;
    // Segment A: full coalition (owner = partner 0, inside the leaving
    // group). Segment B: after the group left (owner gone when churn on).
    const double before =
        segment_score(s, cfg.coalition_size, planted, probe_grad);
    const std::uint32_t after_partners =
        cfg.churn ? cfg.coalition_size - cfg.group_size : cfg.coalition_size;
    const double after = segment_score(
        s, after_partners, cfg.churn ? nullptr : planted, probe_grad);
    return before - after;
  };

  // Null calibration: non-member probes through the same pipeline.
  std::vector<double> null_stats;
  {
    SeededStream s(key, stream_label(StreamPurpose::ATTACK_TRIAL, 4));
    for (std::uint32_t i = 0; i < cfg.n_trials; ++i)
      null_stats.push_back(trial_statistic(s, false));
  }
  std::sort(null_stats.begin(), null_stats.end());
  const double threshold = null_stats[static_cast<std::size_t>(
      0.95 * static_cast<double>(null_stats.size() - 1))];

  SeededStream s(key, stream_label(StreamPurpose::ATTACK_TRIAL, 5));
  SeededStream guess(key, stream_label(StreamPurpose::ATTACK_TRIAL, 6));
  std::size_t correct = 0;
  if (cfg.churn) {
    // All trials: the probe belongs to the first member of the leaving
    // group. On detection the attacker can only name one group member
    // uniformly; attribution is correct when the true owner is named.
    for (std::uint32_t i = 0; i < cfg.n_trials; ++i) {
      const double d = trial_statistic(s, true);
      if (d > threshold && guess.next_below(cfg.group_size) == 0) ++correct;
    }
  } else {
    // Null experiment: balanced membership, decision by the same test.
    for (std::uint32_t i = 0; i < cfg.n_trials; ++i) {
      const bool member = i % 2 == 0;
      const double d = trial_statistic(s, member);
      if ((d > threshold) == member) ++correct;
    }
  }

  AttackResult result;
  result.kind = AttackKind::DIFFERENTIATION;
  result.n_trials = cfg.n_trials;
  result.accuracy = static_cast<double>(correct) / static_cast<double>(cfg.n_trials);
  result.advantage = result.accuracy - 0.5;
  result.target = cfg.churn ? ("group-of-" + std::to_string(cfg.group_size))
                            : "no-churn";
  return result;
}

std::string results_to_csv(std::span<const AttackResult> results) {
  std::string out = "attack,accuracy,advantage,n_trials,target\n";
  for (const auto& r : results) {
    char buf[80];
    std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%u,%s\n", to_string(r.kind),
                  r.accuracy, r.advantage, r.n_trials, r.target.c_str());
    out += buf;
  }
  return out;
}

std::string results_to_json(std::span<const AttackResult> results) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : results) {
    nlohmann::ordered_json j;
    j["attack"] = to_string(r.kind);
    j["accuracy"] = r.accuracy;
    j["advantage"] = r.advantage;
    j["n_trials"] = r.n_trials;
    j["target"] = r.target;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

}  // namespace fl::privacy
