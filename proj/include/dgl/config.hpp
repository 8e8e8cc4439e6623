#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "dgl/discriminator.hpp"
#include "dgl/objectives.hpp"
#include "dgl/sde.hpp"
#include "dgl/trainer.hpp"
#include "json.hpp"

namespace dgl {

/// Typed view of a run config:
///   {distributions: {P, P_hat}, schedule, discriminator, loss, train, sweep}.
/// Missing blocks take the built-in defaults (the canonical 2D pair).
struct RunConfig {
  nlohmann::json raw;
  GaussianMixture p;
  GaussianMixture p_hat;
  SdeSchedule schedule;
  std::size_t sampler_steps = 500;
  MlpArchitecture arch;
  TrainConfig train;
  nlohmann::json sweep = nlohmann::json::object();
};

// Built-in config document (canonical 2D pair and repo defaults).
nlohmann::json default_config();

// Reads and parses a JSON file; ConfigError names the path on any failure.
nlohmann::json load_config_file(const std::filesystem::path& path);

// Deep-merges `overlay` into `base` (objects merge, everything else replaces).
void merge_config(nlohmann::json& base, const nlohmann::json& overlay);

// Sets the leaf at a dotted path; the value is parsed as JSON when possible and
// kept as a string otherwise. Intermediate objects are created.
void apply_override(nlohmann::json& config, const std::string& dotted_path, const std::string& value);

// Validates and converts; throws ConfigError with the offending block named.
RunConfig parse_run_config(const nlohmann::json& config);

}  // namespace dgl
