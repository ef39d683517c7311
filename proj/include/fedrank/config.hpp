#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedrank/corpus.hpp"
#include "fedrank/model.hpp"

namespace fedrank {

struct TrainingConfig {
  double base_lr = 2e-3;
  std::size_t batch_size = 8;
  std::map<int, std::size_t> batch_size_by_participant;  // overrides per client id
  std::size_t negatives_per_question = 3;
  double train_ratio = 1.0;  // fraction of train questions each client keeps
};

struct FederationConfig {
  std::size_t rounds = 15;
  std::size_t aggregation_every_k_epochs = 1;  // local epochs between aggregations
  std::size_t sample_size = 0;                 // clients per round; 0 = everyone
  bool isolated = false;  // clients never exchange anything (individual reference)
};

struct RunConfig {
  std::string corpus_dir;
  std::string out_dir;
  std::uint64_t seed = 1;
  ModelConfig model;
  FederationConfig federation;
  TrainingConfig training;

  // Throws ConfigError with the offending field's path.
  void validate() const;
};

nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

struct GenerateConfig {
  std::string out_dir;
  std::uint64_t seed = 1;
  double scale = 0.45;  // multiplies the built-in profile question counts
  GeneratorOptions options;
  std::vector<ParticipantProfile> profiles;  // empty = default_profiles(scale)

  void validate() const;
};

GenerateConfig generate_config_from_json(const nlohmann::json& j);
GenerateConfig load_generate_config(const std::string& path);

struct GridRow {
  std::string name;
  RunConfig config;
};

// The standard ablation axes, one row per setting, each differing from `base`
// in exactly one axis: insertion x patch structure (8), the no-patch
// federated-averaging and isolated references, shared-layer depth, patch
// size, aggregation frequency, client sampling, and train ratio. Row output
// directories are <base.out_dir>/<row name>.
std::vector<GridRow> standard_grid(const RunConfig& base);

// Grid file: {"base": <run config>, "standard": bool, "rows": [{"name": ...,
// "overrides": <merge patch>}]}. Rows apply their overrides on top of the
// base config; names must be unique and every row must validate.
std::vector<GridRow> grid_from_json(const nlohmann::json& j);
std::vector<GridRow> load_grid(const std::string& path);

}  // namespace fedrank
