#pragma once

// Experiment configuration: an INI-style file of `key = value` lines grouped
// in [sections], layered over a named preset.

#include "flowcorr/correction.hpp"
#include "flowcorr/dynsys.hpp"
#include "flowcorr/fml.hpp"
#include "flowcorr/nnet.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace flowcorr {

struct SystemChoice {
  std::string name;
  std::map<std::string, double> params;

  [[nodiscard]] SystemSpec build() const { return make_system(name, params); }
};

struct DataConfig {
  Domain domain;
  double fine_step = 0.1;
  std::size_t lf_count = 0;
  std::size_t hf_count = 0;
  LagDistribution hf_lags;  // fine steps between the two states of an HF pair
  int substeps = 10;
  SamplingMode lf_sampling = SamplingMode::Pairs;
  SamplingMode hf_sampling = SamplingMode::Pairs;
  double trajectory_time = 0.0;  // window length for trajectory sampling
  InitialDraw initial_draw = InitialDraw::Box;
};

struct CorrectionConfig {
  CorrectionMethod method = CorrectionMethod::TlAdam;
  int split_index = 0;
  double ridge = 0.0;
  bool cold_start = false;
  TrainConfig train;
};

struct EvaluationConfig {
  std::size_t trajectories = 100;
  double horizon = 100.0;
};

struct ExperimentConfig {
  std::string experiment;
  std::string preset;  // empty when built from scratch
  std::uint64_t seed = 0;
  double scale = 1.0;
  SystemChoice true_system;
  SystemChoice prior_system;
  DataConfig data;
  Architecture network;
  TrainConfig prior_training;
  CorrectionConfig correction;
  EvaluationConfig evaluation;

  /// Checks every cross-field constraint; throws ValidationError naming the field.
  void validate() const;

  /// Copy with J_LF, J_HF and epochs shrunk by `scale` (floors: J_HF >= 20,
  /// epochs >= 200, never above the unscaled value) and scale reset to 1.
  [[nodiscard]] ExperimentConfig effective() const;

  /// Per-stage seeds derived from the master seed.
  [[nodiscard]] std::uint64_t lf_seed() const;
  [[nodiscard]] std::uint64_t hf_seed() const;
  [[nodiscard]] std::uint64_t prior_seed() const;
  [[nodiscard]] std::uint64_t correction_seed() const;
  [[nodiscard]] std::uint64_t evaluation_seed() const;
};

std::vector<std::string> preset_names();

/// Fully populated preset; throws ValidationError for unknown names.
ExperimentConfig make_preset(std::string_view name);

/// Parses `key = value` text. A top-level `preset = <name>` (if present)
/// seeds every field; other keys override. Unknown keys, malformed values and
/// constraint violations raise ValidationError with the line number.
ExperimentConfig parse_config_text(std::string_view text, const std::string& origin = "<config>");
ExperimentConfig parse_config(const std::filesystem::path& path);

/// Every field, including derived seeds and effective (scaled) sizes.
nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// INI text that parses back to an equal configuration.
std::string config_to_text(const ExperimentConfig& cfg);

/// sha256 of the canonical JSON echo.
std::string config_hash(const ExperimentConfig& cfg);

/// "a:h:b" (inclusive arithmetic range), "a,b,c" or a single value, in time
/// units, converted to fine-step counts; each must be an integer multiple of
/// fine_step (relative tolerance 1e-9).
LagDistribution parse_lag_times(std::string_view spec, double fine_step);
/// Same grammar, values already in fine steps.
LagDistribution parse_lag_steps(std::string_view spec);

}  // namespace flowcorr
