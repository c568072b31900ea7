#include "flowcorr/csv.hpp"
#include "flowcorr/errors.hpp"
#include "flowcorr/fml.hpp"

#include <json.hpp>

#include <cmath>

namespace flowcorr {

std::filesystem::path dataset_meta_path(const std::filesystem::path& csv_path) {
  auto meta = csv_path;
  meta.replace_extension(".meta.json");
  return meta;
}

void write_dataset(const std::filesystem::path& csv_path, const Dataset& data) {
  const int n = data.dim() > 0 ? data.dim() : 0;
  CsvTable table;
  table.header = {"j", "k"};
  for (int i = 0; i < n; ++i) table.header.push_back("x1_" + std::to_string(i));
  for (int i = 0; i < n; ++i) table.header.push_back("x2_" + std::to_string(i));
  table.rows.reserve(data.size());
  for (std::size_t j = 0; j < data.size(); ++j) {
    const auto& p = data.pairs[j];
    std::vector<double> row{static_cast<double>(j), static_cast<double>(p.k)};
    for (int i = 0; i < n; ++i) row.push_back(p.x1[i]);
    for (int i = 0; i < n; ++i) row.push_back(p.x2[i]);
    table.rows.push_back(std::move(row));
  }
  write_csv(csv_path, table);

  nlohmann::json meta = {
      {"system", data.source_system},
      {"fidelity", to_string(data.fidelity)},
      {"fine_step", data.fine_step},
      {"domain",
       {{"lower", std::vector<double>(data.domain.lower.data(), data.domain.lower.data() + data.domain.lower.size())},
        {"upper", std::vector<double>(data.domain.upper.data(), data.domain.upper.data() + data.domain.upper.size())}}},
      {"seed", data.seed},
      {"J", data.size()},
      {"state_dim", n},
  };
  write_text_file(dataset_meta_path(csv_path), meta.dump(1) + "\n");
}

Dataset read_dataset(const std::filesystem::path& csv_path) {
  const auto meta_path = dataset_meta_path(csv_path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text_file(meta_path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("'" + meta_path.string() + "' is not valid JSON: " + e.what());
  }
  Dataset data;
  try {
    data.source_system = meta.at("system").get<std::string>();
    data.fidelity = parse_fidelity(meta.at("fidelity").get<std::string>());
    data.fine_step = meta.at("fine_step").get<double>();
    data.domain = make_domain(meta.at("domain").at("lower").get<std::vector<double>>(),
                              meta.at("domain").at("upper").get<std::vector<double>>());
    data.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("'" + meta_path.string() + "': " + e.what());
  }
  const auto declared = meta.at("J").get<std::size_t>();
  const int n = meta.at("state_dim").get<int>();

  const CsvTable table = read_csv(csv_path);
  if (table.header.size() != static_cast<std::size_t>(2 + 2 * n)) {
    throw IoError("'" + csv_path.string() + "': header does not match state_dim " + std::to_string(n));
  }
  if (table.rows.size() != declared) {
    throw IoError("'" + csv_path.string() + "': " + std::to_string(table.rows.size()) +
                  " pairs, metadata declares " + std::to_string(declared));
  }
  data.pairs.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    ObservationPair p;
    p.k = static_cast<int>(std::lround(row[1]));
    p.x1 = Eigen::Map<const Eigen::VectorXd>(row.data() + 2, n);
    p.x2 = Eigen::Map<const Eigen::VectorXd>(row.data() + 2 + n, n);
    if (p.k < 1 || !p.x1.allFinite() || !p.x2.allFinite()) {
      throw IoError("'" + csv_path.string() + "': invalid pair at j=" + format_double(row[0]));
    }
    data.pairs.push_back(std::move(p));
  }
  return data;
}

}  // namespace flowcorr
