#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "stratmed/data.hpp"
#include "stratmed/model.hpp"
#include "stratmed/stratify.hpp"

namespace stratmed {

// Invalid configuration; the CLI maps these to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BootstrapConfig {
  std::size_t rounds = 10;
  double fraction = 0.8;
};

struct RunConfig {
  std::filesystem::path dataset_path;  // empty when running on synthetic data
  std::filesystem::path ddi_path;
  bool has_file_source = false;
  bool has_synth_source = false;

  SyntheticConfig synth;
  StratParams strat;
  Hyperparams hyper;
  BootstrapConfig bootstrap;
  AblationFlags ablation;

  // Listed in the source material's configuration but absent from the model;
  // parsed and recorded, never read.
  double kp = 0.05;

  std::uint64_t seed = 1;
  std::size_t study_seeds = 3;  // seeds per study cell

  // Deterministic key=value rendering used for cache hashing.
  std::string canonical_string() const;

  void apply_seed(std::uint64_t s);
  void validate_source() const;  // exactly one of file/synthetic
};

// Flat key=value file; '#' starts a comment, unknown keys are an error
// naming the key. Keys are namespaced: data.*, synth.*, strat.*, train.*,
// boot.*, study.*, plus bare "seed".
RunConfig parse_config_file(const std::filesystem::path& path);
RunConfig parse_config_text(const std::string& text);

}  // namespace stratmed
