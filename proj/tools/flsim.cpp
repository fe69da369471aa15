#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fl/config.hpp"
#include "fl/csr.hpp"
#include "fl/datagen.hpp"
#include "fl/eval.hpp"
#include "fl/federation.hpp"
#include "fl/privacy.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct GenerateArgs {
  std::uint32_t partners = 4;
  std::uint64_t seed = 1;
  std::string variant = "HYB";
  std::string out;
  bool json = false;
  std::uint64_t compounds = 26000;
  std::uint32_t cls_tasks = 160;
  std::uint32_t reg_tasks = 56;
  std::uint32_t aux_tasks = 56;
  std::uint32_t catalogue_tasks = 0;
  std::string catalogue_owners;
  double overlap = 0.2;
  double mean_measurements = 1.0;
  std::uint32_t feature_dim = 2048;
  std::uint32_t active_bits = 24;
  std::uint32_t quorum = 5;
};

std::vector<std::uint32_t> parse_u32_list(const std::string& text) {
  std::vector<std::uint32_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(static_cast<std::uint32_t>(std::stoul(item)));
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  fl::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                 text.size()));
}

int cmd_generate(const GenerateArgs& args) {
  if (args.out.empty()) throw fl::ConfigError("out: output directory required");
  const auto variant = fl::datagen::variant_from_string(args.variant);
  const auto owners = parse_u32_list(args.catalogue_owners);

  fl::cli::GenerateManifest manifest;
  manifest.partners = args.partners;
  manifest.seed = args.seed;
  manifest.variant = variant;
  manifest.feature_dim = args.feature_dim;
  manifest.n_active_bits = args.active_bits;
  manifest.quorum = args.quorum;

  fs::create_directories(args.out);
  for (std::uint32_t p = 0; p < args.partners; ++p) {
    fl::datagen::GenConfig gc;
    gc.world_seed = args.seed;
    gc.partner_index = p;
    gc.n_partners = args.partners;
    gc.n_compounds = args.compounds;
    gc.n_cls_tasks = args.cls_tasks;
    gc.n_reg_tasks = args.reg_tasks;
    gc.n_aux_tasks = args.aux_tasks;
    gc.n_catalogue_tasks = args.catalogue_tasks;
    gc.catalogue_partners = owners;
    gc.overlap_fraction = args.overlap;
    gc.mean_measurements_per_compound = args.mean_measurements;
    gc.feature_dim = args.feature_dim;
    gc.n_active_bits = args.active_bits;

    const auto records = fl::datagen::generate_raw(gc);
    fl::datagen::PrepConfig pc;
    pc.variant = variant;
    pc.quorum = args.quorum;
    pc.n_folds = 5;
    pc.fold_seed = args.seed;
    pc.feature_dim = args.feature_dim;
    pc.n_active_bits = args.active_bits;
    pc.task_catalog = fl::datagen::world_task_catalog(gc);
    const auto bundle = fl::datagen::prepare(records, pc);

    const std::string dir_name = "partner_" + std::to_string(p);
    fl::datagen::write_bundle(fs::path(args.out) / dir_name, bundle);
    manifest.bundle_dirs.push_back(dir_name);
    if (!args.json)
      std::cout << dir_name << ": " << bundle.X.n_rows() << " compounds, "
                << bundle.tasks.size() << " tasks\n";
  }
  write_text(fs::path(args.out) / "manifest.json", manifest.to_json());
  if (args.json) {
    ordered_json j;
    j["out"] = args.out;
    j["partners"] = args.partners;
    j["variant"] = args.variant;
    j["bundle_dirs"] = manifest.bundle_dirs;
    std::cout << j.dump(2) << "\n";
  }
  return 0;
}

struct RunArgs {
  std::string config;
  std::string bundles;
  std::string out;
  std::string mode = "local";
  std::string fault;
  std::string partner_subset;
  std::string model_id = "run";
  bool json = false;
  // flag overrides; only applied when the user passed them
  std::optional<std::uint64_t> seed;
  std::optional<std::uint32_t> epochs;
  std::optional<std::uint32_t> batches;
  std::optional<double> lr;
  std::optional<double> k_fraction;
  std::optional<std::string> weighting;
  std::optional<std::uint32_t> phase;
};

fl::fed::FaultPlan parse_fault(const std::string& text) {
  fl::fed::FaultPlan plan;
  if (text.empty()) return plan;
  const auto at = text.find('@');
  if (at == std::string::npos)
    throw fl::ConfigError("fault: expected KIND@ROUND, got '" + text + "'");
  const std::string kind = text.substr(0, at);
  const auto round = static_cast<std::uint32_t>(std::stoul(text.substr(at + 1)));
  if (kind.rfind("drop:", 0) == 0) {
    const auto org = static_cast<std::uint32_t>(std::stoul(kind.substr(5)));
    plan.drop_partner = {round, org};
  } else if (kind == "send-model") {
    plan.send_full_model_round = round;
  } else if (kind == "send-raw") {
    plan.send_raw_rows_round = round;
  } else if (kind == "attributed-score") {
    plan.attributed_score_round = round;
  } else {
    throw fl::ConfigError("fault: unknown kind '" + kind + "'");
  }
  return plan;
}

int cmd_run(const RunArgs& args) {
  if (args.bundles.empty()) throw fl::ConfigError("bundles: directory required");
  if (args.out.empty()) throw fl::ConfigError("out: output directory required");
  if (args.mode != "local")
    throw fl::ConfigError("mode: only 'local' simulation is supported");

  fl::cli::RunConfig cfg;
  if (!args.config.empty()) cfg = fl::cli::RunConfig::from_json_file(args.config);
  if (args.seed) cfg.master_seed = *args.seed;
  if (args.epochs) cfg.epochs = *args.epochs;
  if (args.batches) cfg.batches = *args.batches;
  if (args.lr) cfg.lr = *args.lr;
  if (args.k_fraction) cfg.k_fraction = *args.k_fraction;
  if (args.weighting)
    cfg.weighting = fl::secagg::weight_scheme_from_string(*args.weighting);
  if (args.phase) cfg.phase = *args.phase;

  const fs::path bundles_root(args.bundles);
  std::vector<std::string> dirs;
  if (fs::exists(bundles_root / "manifest.json")) {
    const auto manifest =
        fl::cli::GenerateManifest::from_json_file(bundles_root / "manifest.json");
    dirs = manifest.bundle_dirs;
    cfg.variant = manifest.variant;
  } else {
    for (std::uint32_t p = 0;; ++p) {
      const auto dir = bundles_root / ("partner_" + std::to_string(p));
      if (!fs::exists(dir)) break;
      dirs.push_back("partner_" + std::to_string(p));
    }
  }
  if (dirs.empty())
    throw fl::ConfigError("bundles: no partner bundles found under " + args.bundles);

  std::vector<std::uint32_t> selected;
  if (args.partner_subset.empty()) {
    for (std::uint32_t i = 0; i < dirs.size(); ++i) selected.push_back(i);
  } else {
    selected = parse_u32_list(args.partner_subset);
  }
  cfg.partners = static_cast<std::uint32_t>(selected.size());
  cfg.validate();

  std::vector<std::pair<std::uint32_t, fl::datagen::DatasetBundle>> bundles;
  for (const auto idx : selected) {
    if (idx >= dirs.size())
      throw fl::ConfigError("partner_subset: index " + std::to_string(idx) +
                            " out of range");
    bundles.emplace_back(idx, fl::datagen::read_bundle(bundles_root / dirs[idx]));
  }

  auto fc = cfg.federation_config();
  fc.faults = parse_fault(args.fault);
  fl::fed::Federation fed(fc, std::move(bundles));
  fed.run();

  fs::create_directories(args.out);
  write_text(fs::path(args.out) / "metrics.csv",
             fl::fed::metrics_to_csv(fed.metrics()));
  fl::write_file(fs::path(args.out) / "transcript.bin", fed.transcript());
  if (!fed.trunks_identical())
    throw fl::ProtocolError("trunks diverged across partners");

  const auto ids = fed.partner_ids();
  fl::model::save_trunk(fs::path(args.out) / "trunk.mdym",
                        fed.partner_params(ids.front()));
  const auto folds = fl::fed::phase_folds(cfg.phase);
  for (const auto org : ids) {
    const auto dir = fs::path(args.out) / ("partner_" + std::to_string(org));
    fs::create_directories(dir);
    fl::model::save_head(dir / "head.mdym", fed.partner_params(org));
    if (folds.eval) {
      std::vector<fl::eval::TaskScore> scores;
      for (const auto& row : fed.evaluate_tasks(org, *folds.eval)) {
        fl::eval::TaskScore s;
        s.task_idx = static_cast<std::uint32_t>(row.task_idx);
        s.metric = row.metric_name;
        s.value = row.value;
        s.fold = *folds.eval;
        s.model_id = args.model_id;
        scores.push_back(std::move(s));
      }
      write_text(dir / "val_scores.csv", fl::eval::task_scores_to_csv(scores));
    }
  }

  ordered_json meta;
  meta["config"] = nlohmann::json::parse(cfg.to_json());
  meta["variant"] = fl::datagen::to_string(cfg.variant);
  meta["phase"] = cfg.phase;
  meta["partners"] = cfg.partners;
  meta["rounds"] = cfg.epochs * cfg.batches;
  meta["model_id"] = args.model_id;
  write_text(fs::path(args.out) / "run_meta.json", meta.dump(2) + "\n");
  if (args.json) {
    ordered_json j;
    j["out"] = args.out;
    j["rounds"] = cfg.epochs * cfg.batches;
    j["partners"] = cfg.partners;
    j["metric_rows"] = fed.metrics().size();
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "run complete: " << fed.metrics().size() << " metric rows, "
              << cfg.epochs * cfg.batches << " rounds\n";
  }
  return 0;
}

struct AttackArgs {
  std::string kind = "all";
  std::uint64_t seed = 7;
  std::uint32_t trials = 200;
  std::string out;
  bool json = false;
};

int cmd_attack(const AttackArgs& args) {
  std::vector<fl::privacy::AttackResult> results;
  const bool mia = args.kind == "all" || args.kind == "mia";
  const bool diff = args.kind == "all" || args.kind == "differentiation";
  if (!mia && !diff)
    throw fl::ConfigError("kind: expected mia, differentiation or all");

  if (mia) {
    for (const std::uint32_t p : {1u, 2u, 4u, 8u}) {
      fl::privacy::MiaConfig cfg;
      cfg.seed = args.seed;
      cfg.n_trials = args.trials;
      cfg.n_partners = p;
      results.push_back(fl::privacy::run_mia(cfg));
    }
    fl::privacy::MiaConfig masked;
    masked.seed = args.seed;
    masked.n_trials = args.trials;
    masked.masked_view = true;
    results.push_back(fl::privacy::run_mia(masked));
  }
  if (diff) {
    fl::privacy::DiffConfig ungrouped;
    ungrouped.seed = args.seed;
    ungrouped.n_trials = std::min<std::uint32_t>(args.trials, 100);
    results.push_back(fl::privacy::run_differentiation(ungrouped));
    fl::privacy::DiffConfig grouped = ungrouped;
    grouped.group_size = 4;
    results.push_back(fl::privacy::run_differentiation(grouped));
    fl::privacy::DiffConfig null_case = ungrouped;
    null_case.churn = false;
    results.push_back(fl::privacy::run_differentiation(null_case));
  }

  const std::string text = args.json ? fl::privacy::results_to_json(results)
                                     : fl::privacy::results_to_csv(results);
  if (args.out.empty())
    std::cout << text;
  else
    write_text(args.out, text);
  return 0;
}

struct FuseArgs {
  std::vector<std::string> scores;
  std::string out;
  bool json = false;
};

int cmd_fuse(const FuseArgs& args) {
  if (args.scores.empty()) throw fl::ConfigError("scores: at least one file required");
  std::vector<fl::eval::TaskScore> all;
  for (const auto& file : args.scores) {
    const auto bytes = fl::read_file(file);
    const auto scores =
        fl::eval::task_scores_from_csv(std::string(bytes.begin(), bytes.end()));
    all.insert(all.end(), scores.begin(), scores.end());
  }
  const auto map = fl::eval::fuse(all);
  const auto text = fl::eval::fusion_to_json(map);
  if (args.out.empty())
    std::cout << text;
  else
    write_text(args.out, text);
  if (args.json && !args.out.empty()) std::cout << text;
  return 0;
}

struct PredictArgs {
  std::string trunk;
  std::string head;
  std::vector<std::string> models;  // NAME=TRUNK,HEAD
  std::string fusion;
  std::string input;
  std::string tasks;
  std::uint32_t active_bits = 24;
  std::string out;
  bool json = false;
};

int cmd_predict(const PredictArgs& args) {
  std::vector<fl::eval::LoadedModel> models;
  if (!args.trunk.empty() || !args.head.empty()) {
    if (args.trunk.empty() || args.head.empty())
      throw fl::ConfigError("trunk/head: both files are required");
    models.push_back(fl::eval::LoadedModel::load("m0", args.trunk, args.head));
  }
  for (const auto& spec : args.models) {
    const auto eq = spec.find('=');
    const auto comma = spec.find(',', eq == std::string::npos ? 0 : eq);
    if (eq == std::string::npos || comma == std::string::npos)
      throw fl::ConfigError("model: expected NAME=TRUNK,HEAD, got '" + spec + "'");
    models.push_back(fl::eval::LoadedModel::load(
        spec.substr(0, eq), spec.substr(eq + 1, comma - eq - 1),
        spec.substr(comma + 1)));
  }
  if (models.empty()) throw fl::ConfigError("model: no models given");
  if (args.input.empty()) throw fl::ConfigError("input: compound id file required");

  std::optional<fl::eval::FusionMap> fusion;
  if (!args.fusion.empty()) {
    const auto bytes = fl::read_file(args.fusion);
    fusion = fl::eval::fusion_from_json(std::string(bytes.begin(), bytes.end()));
  }

  const auto filter = parse_u32_list(args.tasks);
  std::vector<fl::eval::Prediction> preds;
  if (fs::is_directory(args.input)) {
    // A bundle directory: predict on its feature matrix row by row.
    const auto X = fl::SparseMatrixCsr::load_mdys(fs::path(args.input) / "X.mdys");
    preds = fl::eval::predict_rows(models, X, fusion, filter);
  } else {
    std::vector<std::uint64_t> ids;
    const auto bytes = fl::read_file(args.input);
    std::stringstream ss(std::string(bytes.begin(), bytes.end()));
    std::string line;
    while (std::getline(ss, line)) {
      if (line.empty()) continue;
      ids.push_back(std::stoull(line));
    }
    if (ids.empty()) throw fl::ConfigError("input: no compound ids found");
    preds = fl::eval::predict(models, ids, args.active_bits, fusion, filter);
  }

  if (args.json && args.out.empty()) {
    ordered_json arr = ordered_json::array();
    for (const auto& p : preds) {
      ordered_json j;
      j["compound_id"] = p.compound_id;
      j["task_idx"] = p.task_idx;
      j["model_id"] = p.model_id;
      j["score"] = p.score;
      arr.push_back(std::move(j));
    }
    std::cout << arr.dump(2) << "\n";
    return 0;
  }
  const auto text = fl::eval::predictions_to_csv(preds);
  if (args.out.empty()) {
    std::cout << text;
  } else {
    write_text(args.out, text);
    if (args.json) {
      ordered_json j;
      j["out"] = args.out;
      j["predictions"] = preds.size();
      std::cout << j.dump(2) << "\n";
    }
  }
  return 0;
}

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out;
  bool json = false;
};

int cmd_report(const ReportArgs& args) {
  if (args.runs.empty()) throw fl::ConfigError("runs: at least one run directory");
  struct RunSummary {
    std::string dir, variant;
    std::uint32_t phase = 0, partners = 0, rounds = 0;
    double mean_final_auroc = 0.0;
    bool has_auroc = false;
  };
  std::vector<RunSummary> rows;
  for (const auto& dir : args.runs) {
    RunSummary s;
    s.dir = dir;
    const auto meta_bytes = fl::read_file(fs::path(dir) / "run_meta.json");
    const auto meta = nlohmann::json::parse(meta_bytes.begin(), meta_bytes.end());
    s.variant = meta.at("variant").get<std::string>();
    s.phase = meta.at("phase").get<std::uint32_t>();
    s.partners = meta.at("partners").get<std::uint32_t>();
    s.rounds = meta.at("rounds").get<std::uint32_t>();

    const auto metric_bytes = fl::read_file(fs::path(dir) / "metrics.csv");
    std::stringstream ss(std::string(metric_bytes.begin(), metric_bytes.end()));
    std::string line;
    std::getline(ss, line);  // header
    std::uint64_t max_round = 0;
    std::vector<std::pair<std::uint64_t, double>> aurocs;
    while (std::getline(ss, line)) {
      if (line.empty()) continue;
      std::stringstream ls(line);
      std::string round_s, anon_s, task_s, metric_s, value_s;
      std::getline(ls, round_s, ',');
      std::getline(ls, anon_s, ',');
      std::getline(ls, task_s, ',');
      std::getline(ls, metric_s, ',');
      std::getline(ls, value_s, ',');
      const auto round = static_cast<std::uint64_t>(std::stoull(round_s));
      max_round = std::max(max_round, round);
      if (metric_s == "auroc") aurocs.emplace_back(round, std::stod(value_s));
    }
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& [round, v] : aurocs)
      if (round == max_round) {
        acc += v;
        ++n;
      }
    if (n > 0) {
      s.mean_final_auroc = acc / static_cast<double>(n);
      s.has_auroc = true;
    }
    rows.push_back(std::move(s));
  }

  std::string csv = "run,variant,phase,partners,rounds,mean_final_auroc\n";
  std::string table = "run                              variant  phase  partners  rounds  final_auroc\n";
  std::map<std::string, std::uint32_t> by_variant;
  std::map<std::uint32_t, std::uint32_t> by_phase;
  for (const auto& s : rows) {
    char value[32];
    if (s.has_auroc)
      std::snprintf(value, sizeof(value), "%.4f", s.mean_final_auroc);
    else
      std::snprintf(value, sizeof(value), "n/a");
    csv += s.dir + "," + s.variant + "," + std::to_string(s.phase) + "," +
           std::to_string(s.partners) + "," + std::to_string(s.rounds) + "," + value +
           "\n";
    char line[256];
    std::snprintf(line, sizeof(line), "%-32s %-8s %-6u %-9u %-7u %s\n", s.dir.c_str(),
                  s.variant.c_str(), s.phase, s.partners, s.rounds, value);
    table += line;
    by_variant[s.variant]++;
    by_phase[s.phase]++;
  }
  table += "\nruns per variant:\n";
  for (const auto& [v, n] : by_variant)
    table += "  " + v + ": " + std::to_string(n) + "\n";
  table += "runs per phase:\n";
  for (const auto& [p, n] : by_phase)
    table += "  phase " + std::to_string(p) + ": " + std::to_string(n) + "\n";
  table += "total runs: " + std::to_string(rows.size()) + "\n";

  if (args.json) {
    ordered_json arr = ordered_json::array();
    for (const auto& s : rows) {
      ordered_json j;
      j["run"] = s.dir;
      j["variant"] = s.variant;
      j["phase"] = s.phase;
      j["partners"] = s.partners;
      j["rounds"] = s.rounds;
      if (s.has_auroc) j["mean_final_auroc"] = s.mean_final_auroc;
      arr.push_back(std::move(j));
    }
    std::cout << arr.dump(2) << "\n";
  }
  if (args.out.empty()) {
    if (!args.json) std::cout << table;
  } else {
    fs::create_directories(args.out);
    write_text(fs::path(args.out) / "report.csv", csv);
    write_text(fs::path(args.out) / "report.txt", table);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-silo federated learning simulator with masked secure aggregation"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "generate synthetic partner bundles");
  generate->add_option("--partners", gen.partners, "number of partners");
  generate->add_option("--seed", gen.seed, "world seed");
  generate->add_option("--variant", gen.variant, "CLS | CLSAUX | REG | HYB");
  generate->add_option("--out", gen.out, "output directory")->required();
  generate->add_option("--compounds", gen.compounds, "compounds per partner");
  generate->add_option("--cls-tasks", gen.cls_tasks, "classification tasks per partner");
  generate->add_option("--reg-tasks", gen.reg_tasks, "regression tasks per partner");
  generate->add_option("--aux-tasks", gen.aux_tasks, "auxiliary tasks per partner");
  generate->add_option("--catalogue-tasks", gen.catalogue_tasks,
                       "shared catalogue tasks");
  generate->add_option("--catalogue-owners", gen.catalogue_owners,
                       "comma-separated partner indices owning the catalogue");
  generate->add_option("--overlap", gen.overlap, "shared compound fraction");
  generate->add_option("--mean-measurements", gen.mean_measurements,
                       "mean measurements per compound");
  generate->add_option("--feature-dim", gen.feature_dim, "fingerprint dimension");
  generate->add_option("--active-bits", gen.active_bits, "set bits per fingerprint");
  generate->add_option("--quorum", gen.quorum, "per-fold label quorum");
  generate->add_flag("--json", gen.json, "print a JSON summary");

  RunArgs run;
  auto* runc = app.add_subcommand("run", "execute a federated training phase");
  runc->add_option("--config", run.config, "JSON run config");
  runc->add_option("--bundles", run.bundles, "bundle directory from generate")
      ->required();
  runc->add_option("--out", run.out, "output directory")->required();
  runc->add_option("--mode", run.mode, "local (in-process simulation)");
  runc->add_option("--fault", run.fault,
                   "inject a fault: drop:ORG@ROUND | send-model@ROUND | "
                   "send-raw@ROUND | attributed-score@ROUND");
  runc->add_option("--partner-subset", run.partner_subset,
                   "comma-separated bundle indices to include");
  runc->add_option("--model-id", run.model_id, "model id used in score files");
  runc->add_flag("--json", run.json, "print a JSON summary");
  std::uint64_t seed_flag = 0;
  std::uint32_t epochs_flag = 0, batches_flag = 0, phase_flag = 0;
  double lr_flag = 0, k_flag = 0;
  std::string weighting_flag;
  runc->add_option("--seed", seed_flag, "master seed (overrides config)");
  runc->add_option("--epochs", epochs_flag, "epochs (overrides config)");
  runc->add_option("--batches", batches_flag, "batches per epoch (overrides config)");
  runc->add_option("--lr", lr_flag, "learning rate (overrides config)");
  runc->add_option("--k-fraction", k_flag, "subset fraction (overrides config)");
  runc->add_option("--weighting", weighting_flag, "weighting scheme (overrides config)");
  runc->add_option("--phase", phase_flag, "phase 1|2|3 (overrides config)");

  AttackArgs attack;
  auto* attackc = app.add_subcommand("attack", "run the privacy attack harness");
  attackc->add_option("--kind", attack.kind, "mia | differentiation | all");
  attackc->add_option("--seed", attack.seed, "attack seed");
  attackc->add_option("--trials", attack.trials, "trials per attack");
  attackc->add_option("--out", attack.out, "output file (stdout when omitted)");
  attackc->add_flag("--json", attack.json, "emit JSON instead of CSV");

  FuseArgs fuse;
  auto* fusec = app.add_subcommand("fuse", "per-task model selection from scores");
  fusec->add_option("--scores", fuse.scores, "validation score CSV files")
      ->required()
      ->expected(-1);
  fusec->add_option("--out", fuse.out, "fusion map output (stdout when omitted)");
  fusec->add_flag("--json", fuse.json, "also print the map to stdout");

  PredictArgs predict;
  auto* predictc = app.add_subcommand("predict", "apply trunk+head stacks to new ids");
  predictc->add_option("--trunk", predict.trunk, "trunk checkpoint");
  predictc->add_option("--head", predict.head, "head checkpoint");
  predictc->add_option("--model", predict.models,
                       "NAME=TRUNK,HEAD (repeatable, for fusion)");
  predictc->add_option("--fusion", predict.fusion, "fusion map JSON");
  predictc
      ->add_option("--input", predict.input,
                   "id list file (one per line) or a bundle directory")
      ->required();
  predictc->add_option("--tasks", predict.tasks, "comma-separated task filter");
  predictc->add_option("--active-bits", predict.active_bits,
                       "fingerprint bits (must match generation)");
  predictc->add_option("--out", predict.out, "prediction CSV (stdout when omitted)");
  predictc->add_flag("--json", predict.json, "emit predictions or a summary as JSON");

  ReportArgs report;
  auto* reportc = app.add_subcommand("report", "summarize run directories");
  reportc->add_option("--runs", report.runs, "run output directories")
      ->required()
      ->expected(-1);
  reportc->add_option("--out", report.out, "report directory (stdout when omitted)");
  reportc->add_flag("--json", report.json, "print per-run rows as JSON");

  try {
    app.parse(argc, argv);
    if (*generate) return cmd_generate(gen);
    if (*runc) {
      if (runc->count("--seed")) run.seed = seed_flag;
      if (runc->count("--epochs")) run.epochs = epochs_flag;
      if (runc->count("--batches")) run.batches = batches_flag;
      if (runc->count("--lr")) run.lr = lr_flag;
      if (runc->count("--k-fraction")) run.k_fraction = k_flag;
      if (runc->count("--weighting")) run.weighting = weighting_flag;
      if (runc->count("--phase")) run.phase = phase_flag;
      return cmd_run(run);
    }
    if (*attackc) return cmd_attack(attack);
    if (*fusec) return cmd_fuse(fuse);
    if (*predictc) return cmd_predict(predict);
    if (*reportc) return cmd_report(report);
    return 2;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fl::MissingPartnerError& e) {
    std::cerr << "round aborted: " << e.what() << "\n";
    return 3;
  } catch (const fl::PermissionViolationError& e) {
    std::cerr << "permission violation: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
