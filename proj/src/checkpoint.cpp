#include "flowcorr/checkpoint.hpp"

#include "flowcorr/csv.hpp"
#include "flowcorr/errors.hpp"
#include "flowcorr/hash.hpp"

namespace flowcorr {

namespace {

nlohmann::json arch_to_json(const Architecture& a) {
  return {{"n", a.input_dim},
          {"M", a.hidden_layers},
          {"d", a.hidden_width},
          {"activation", to_string(a.activation)},
          {"residual", a.residual}};
}

Architecture arch_from_json(const nlohmann::json& j) {
  Architecture a;
  a.input_dim = j.at("n").get<int>();
  a.hidden_layers = j.at("M").get<int>();
  a.hidden_width = j.at("d").get<int>();
  a.activation = parse_activation(j.at("activation").get<std::string>());
  a.residual = j.at("residual").get<bool>();
  a.validate();
  return a;
}

nlohmann::json params_json(const NetParams& p) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& w : p.layers) layers.push_back(layer_to_json(w));
  return {{"arch", arch_to_json(p.arch)}, {"layers", std::move(layers)}};
}

}  // namespace

nlohmann::json layer_to_json(const Eigen::MatrixXd& layer) {
  const Eigen::Index fan_in = layer.rows() - 1;
  const Eigen::Index fan_out = layer.cols();
  std::vector<double> weights;
  weights.reserve(static_cast<std::size_t>(fan_in * fan_out));
  for (Eigen::Index r = 1; r <= fan_in; ++r) {
    for (Eigen::Index c = 0; c < fan_out; ++c) weights.push_back(layer(r, c));
  }
  std::vector<double> bias(static_cast<std::size_t>(fan_out));
  for (Eigen::Index c = 0; c < fan_out; ++c) bias[static_cast<std::size_t>(c)] = layer(0, c);
  return {{"fan_in", fan_in}, {"fan_out", fan_out}, {"weights", weights}, {"bias", bias}};
}

Eigen::MatrixXd layer_from_json(const nlohmann::json& j) {
  const auto fan_in = j.at("fan_in").get<Eigen::Index>();
  const auto fan_out = j.at("fan_out").get<Eigen::Index>();
  const auto weights = j.at("weights").get<std::vector<double>>();
  const auto bias = j.at("bias").get<std::vector<double>>();
  if (fan_in < 1 || fan_out < 1 || static_cast<Eigen::Index>(weights.size()) != fan_in * fan_out ||
      static_cast<Eigen::Index>(bias.size()) != fan_out) {
    throw ValidationError("checkpoint layer has inconsistent sizes");
  }
  Eigen::MatrixXd w(fan_in + 1, fan_out);
  for (Eigen::Index c = 0; c < fan_out; ++c) w(0, c) = bias[static_cast<std::size_t>(c)];
  std::size_t at = 0;
  for (Eigen::Index r = 1; r <= fan_in; ++r) {
    for (Eigen::Index c = 0; c < fan_out; ++c) w(r, c) = weights[at++];
  }
  return w;
}

std::string serialize_layer(const Eigen::MatrixXd& layer) { return layer_to_json(layer).dump(); }

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
  ckpt.params.validate();
  nlohmann::json j = params_json(ckpt.params);
  j["format_version"] = kCheckpointFormatVersion;
  j["seed"] = ckpt.params.seed;
  j["provenance"] = ckpt.provenance;
  return j;
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw ValidationError("unsupported checkpoint format_version " + std::to_string(version));
    }
    Checkpoint c;
    c.params.arch = arch_from_json(j.at("arch"));
    for (const auto& l : j.at("layers")) c.params.layers.push_back(layer_from_json(l));
    c.params.seed = j.at("seed").get<std::uint64_t>();
    c.params.validate();
    if (j.contains("provenance")) c.provenance = j.at("provenance");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_text_file(path, checkpoint_to_json(ckpt).dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(j);
}

std::string params_hash(const NetParams& params) { return sha256_hex(params_json(params).dump()); }

}  // namespace flowcorr
