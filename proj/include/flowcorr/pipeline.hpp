#pragma once

// Four-stage experiment pipeline (generate, train-prior, correct, evaluate)
// over an output directory, with a manifest of hashes that lets completed
// stages be skipped on rerun.

#include "flowcorr/config.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace flowcorr {

enum class Stage { Generate, TrainPrior, Correct, Evaluate };

std::string to_string(Stage s);
Stage parse_stage(std::string_view s);
std::vector<Stage> all_stages();

struct ArtifactPaths {
  std::filesystem::path lf_data;
  std::filesystem::path hf_data;
  std::filesystem::path prior;
  std::filesystem::path posterior;
  std::filesystem::path prior_error;
  std::filesystem::path posterior_error;
  std::filesystem::path prior_trajectory;
  std::filesystem::path posterior_trajectory;
  std::filesystem::path truth_trajectory;
  std::filesystem::path summary;
  std::filesystem::path manifest;
  std::filesystem::path lock;
};

ArtifactPaths artifact_paths(const std::string& experiment, const std::filesystem::path& out_dir);

/// Exclusive ownership of an output directory for the lifetime of the
/// object. Throws Error if another run holds it.
class DirectoryLock {
 public:
  explicit DirectoryLock(std::filesystem::path lock_file);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct StageReport {
  Stage stage = Stage::Generate;
  bool skipped = false;
  double wall_seconds = 0.0;
};

struct PipelineResult {
  std::vector<StageReport> stages;
  ArtifactPaths paths;
};

/// Runs the selected stage, or every stage in order. A stage whose key
/// (configuration slice + input hashes) and output hashes match the manifest
/// is skipped. Throws DependencyError naming a missing input artifact.
PipelineResult run_pipeline(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                            std::optional<Stage> only = std::nullopt);

/// Recomputes every artifact hash recorded in the manifest; returns the
/// artifacts that are missing or differ (empty when the manifest verifies).
std::vector<std::string> verify_manifest(const std::filesystem::path& out_dir);

}  // namespace flowcorr
