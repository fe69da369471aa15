#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fl/datagen.hpp"
#include "fl/federation.hpp"
#include "fl/secagg.hpp"

namespace fl::cli {

// Everything a federated run needs, JSON-compatible. Flags override file
// values; validation reports the offending field by name.
struct RunConfig {
  std::uint32_t partners = 4;
  datagen::Variant variant = datagen::Variant::HYB;
  secagg::WeightScheme weighting = secagg::WeightScheme::DATA_PROPORTIONAL;
  double k_fraction = 1.0;
  std::uint32_t epochs = 2;
  std::uint32_t batches = 10;
  double lr = 0.1;
  std::vector<std::uint32_t> hidden = {64};
  std::uint32_t phase = 1;
  std::uint32_t churn_min_group_size = 1;
  std::uint64_t master_seed = 1;

  void validate() const;  // throws ConfigError naming the field
  fed::FederationConfig federation_config() const;

  static RunConfig from_json_file(const std::filesystem::path& path);
  static RunConfig from_json_text(const std::string& text);
  std::string to_json() const;
};

// Knobs of `generate`, persisted next to the bundles so downstream
// commands can pick up the featurization parameters.
struct GenerateManifest {
  std::uint32_t partners = 4;
  std::uint64_t seed = 1;
  datagen::Variant variant = datagen::Variant::HYB;
  std::uint32_t feature_dim = 2048;
  std::uint32_t n_active_bits = 24;
  std::uint32_t quorum = 5;
  std::vector<std::string> bundle_dirs;

  std::string to_json() const;
  static GenerateManifest from_json_file(const std::filesystem::path& path);
};

}  // namespace fl::cli
