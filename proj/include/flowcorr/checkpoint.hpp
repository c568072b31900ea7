#pragma once

// Versioned JSON checkpoints for networks. Doubles are written by the JSON
// library's shortest round-trip formatter, so save/load is bit-exact.

#include "flowcorr/nnet.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace flowcorr {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  NetParams params;
  nlohmann::json provenance = nlohmann::json::object();
};

nlohmann::json layer_to_json(const Eigen::MatrixXd& layer);
Eigen::MatrixXd layer_from_json(const nlohmann::json& j);

/// Canonical text of one layer; two layers are identical iff these match.
std::string serialize_layer(const Eigen::MatrixXd& layer);

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// SHA-256 over the architecture and layers only (provenance excluded).
std::string params_hash(const NetParams& params);

}  // namespace flowcorr
