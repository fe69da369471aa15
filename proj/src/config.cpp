#include "fl/config.hpp"

#include <nlohmann/json.hpp>

namespace fl::cli {

namespace {

using ordered_json = nlohmann::ordered_json;

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(key) + ": invalid value");
  }
}

}  // namespace

void RunConfig::validate() const {
  if (partners < 1) throw ConfigError("partners: must be at least 1");
  if (partners > 16) throw ConfigError("partners: at most 16 supported");
  if (k_fraction <= 0.0 || k_fraction > 1.0)
    throw ConfigError("k_fraction: must be in (0, 1]");
  if (epochs < 1) throw ConfigError("epochs: must be at least 1");
  if (batches < 1) throw ConfigError("batches: must be at least 1");
  if (lr <= 0.0) throw ConfigError("lr: must be positive");
  if (hidden.empty()) throw ConfigError("hidden: needs at least one layer width");
  for (const auto h : hidden)
    if (h == 0) throw ConfigError("hidden: layer width cannot be 0");
  if (phase < 1 || phase > 3) throw ConfigError("phase: must be 1, 2 or 3");
  if (churn_min_group_size < 1)
    throw ConfigError("churn.min_group_size: must be at least 1");
}

fed::FederationConfig RunConfig::federation_config() const {
  validate();
  fed::FederationConfig cfg;
  cfg.weighting = weighting;
  cfg.subset_fraction = k_fraction;
  cfg.epochs = epochs;
  cfg.batches_per_epoch = batches;
  cfg.lr = lr;
  cfg.hidden = hidden;
  cfg.phase = phase;
  cfg.churn.min_group_size = churn_min_group_size;
  cfg.master_seed = master_seed;
  return cfg;
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  read_field(j, "partners", cfg.partners);
  if (j.contains("variant"))
    cfg.variant = datagen::variant_from_string(j.at("variant").get<std::string>());
  if (j.contains("weighting"))
    cfg.weighting =
        secagg::weight_scheme_from_string(j.at("weighting").get<std::string>());
  read_field(j, "k_fraction", cfg.k_fraction);
  read_field(j, "epochs", cfg.epochs);
  read_field(j, "batches", cfg.batches);
  read_field(j, "lr", cfg.lr);
  read_field(j, "hidden", cfg.hidden);
  read_field(j, "phase", cfg.phase);
  if (j.contains("churn")) {
    const auto& c = j.at("churn");
    if (c.contains("min_group_size"))
      cfg.churn_min_group_size = c.at("min_group_size").get<std::uint32_t>();
  }
  read_field(j, "master_seed", cfg.master_seed);
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::from_json_file(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return from_json_text(std::string(bytes.begin(), bytes.end()));
}

std::string RunConfig::to_json() const {
  ordered_json j;
  j["partners"] = partners;
  j["variant"] = datagen::to_string(variant);
  j["weighting"] = secagg::to_string(weighting);
  j["k_fraction"] = k_fraction;
  j["epochs"] = epochs;
  j["batches"] = batches;
  j["lr"] = lr;
  j["hidden"] = hidden;
  j["phase"] = phase;
  j["churn"] = ordered_json{{"min_group_size", churn_min_group_size}};
  j["master_seed"] = master_seed;
  return j.dump(2) + "\n";
}

std::string GenerateManifest::to_json() const {
  ordered_json j;
  j["partners"] = partners;
  j["seed"] = seed;
  j["variant"] = datagen::to_string(variant);
  j["feature_dim"] = feature_dim;
  j["n_active_bits"] = n_active_bits;
  j["quorum"] = quorum;
  j["bundle_dirs"] = bundle_dirs;
  return j.dump(2) + "\n";
}

GenerateManifest GenerateManifest::from_json_file(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: not valid JSON: ") + e.what());
  }
  GenerateManifest m;
  read_field(j, "partners", m.partners);
  read_field(j, "seed", m.seed);
  if (j.contains("variant"))
    m.variant = datagen::variant_from_string(j.at("variant").get<std::string>());
  read_field(j, "feature_dim", m.feature_dim);
  read_field(j, "n_active_bits", m.n_active_bits);
  read_field(j, "quorum", m.quorum);
  read_field(j, "bundle_dirs", m.bundle_dirs);
  return m;
}

}  // namespace fl::cli
