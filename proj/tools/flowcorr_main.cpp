// flowcorr: run model-correction experiments from a config file or preset.

#include "flowcorr/config.hpp"
#include "flowcorr/csv.hpp"
#include "flowcorr/errors.hpp"
#include "flowcorr/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct Options {
  std::string config;
  std::string preset;
  std::optional<double> scale;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string stage;
};

flowcorr::ExperimentConfig load(const Options& o) {
  flowcorr::ExperimentConfig cfg;
  if (!o.preset.empty()) {
    if (o.config.empty()) {
      cfg = flowcorr::make_preset(o.preset);
    } else {
      // The file overrides the preset's fields.
      const std::string text = "preset = " + o.preset + "\n" + flowcorr::read_text_file(o.config);
      cfg = flowcorr::parse_config_text(text, o.config);
    }
  } else {
    cfg = flowcorr::parse_config(o.config);
  }
  if (o.scale) cfg.scale = *o.scale;
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  return cfg;
}

void print_summary(const std::filesystem::path& summary) {
  if (!std::filesystem::exists(summary)) return;
  const auto j = nlohmann::json::parse(flowcorr::read_text_file(summary));
  std::cout << "time-averaged l2 error: prior " << j["prior"]["time_average_l2"].get<double>() << ", posterior "
            << j["posterior"]["time_average_l2"].get<double>() << "\n"
            << "posterior below prior at " << 100.0 * j["posterior_below_prior_fraction"].get<double>()
            << "% of time indices\n";
}

int run(const Options& o, std::optional<flowcorr::Stage> stage) {
  const flowcorr::ExperimentConfig cfg = load(o);
  const std::filesystem::path out = o.out.empty() ? std::filesystem::path("runs") / cfg.experiment : std::filesystem::path(o.out);
  const auto result = flowcorr::run_pipeline(cfg, out, stage);
  std::cout << "outputs in " << out.string() << "\n";
  if (!stage || *stage == flowcorr::Stage::Evaluate) print_summary(result.paths.summary);
  return 0;
}

void add_common(CLI::App* cmd, Options& o, bool config_required) {
  auto* c = cmd->add_option("--config", o.config, "experiment config file")->check(CLI::ExistingFile);
  if (config_required) c->required();
  cmd->add_option("--scale", o.scale, "shrink data counts and epochs by this factor, in (0, 1]");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--out", o.out, "output directory (default runs/<experiment>)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Correct low-fidelity flow-map networks with scarce high-fidelity data"};
  app.require_subcommand(1);
  Options o;

  struct StageCommand {
    const char* name;
    const char* help;
    flowcorr::Stage stage;
  };
  const StageCommand stages[] = {
      {"generate", "sample low- and high-fidelity data pairs", flowcorr::Stage::Generate},
      {"train-prior", "train the prior network on low-fidelity pairs", flowcorr::Stage::TrainPrior},
      {"correct", "correct the prior with high-fidelity pairs", flowcorr::Stage::Correct},
      {"evaluate", "roll out prior and posterior and write error curves", flowcorr::Stage::Evaluate},
  };
  std::vector<std::pair<CLI::App*, flowcorr::Stage>> stage_cmds;
  for (const auto& s : stages) {
    auto* cmd = app.add_subcommand(s.name, s.help);
    add_common(cmd, o, true);
    stage_cmds.emplace_back(cmd, s.stage);
  }

  auto* run_cmd = app.add_subcommand("run", "run every stage of a config file");
  add_common(run_cmd, o, true);
  run_cmd->add_option("--stage", o.stage, "run only this stage");

  auto* reproduce = app.add_subcommand("reproduce", "run a named experiment preset");
  std::string known;
  for (const auto& n : flowcorr::preset_names()) known += (known.empty() ? "" : ", ") + n;
  reproduce->add_option("preset", o.preset, "one of: " + known)->required();
  add_common(reproduce, o, false);
  reproduce->add_option("--stage", o.stage, "run only this stage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    for (const auto& [cmd, stage] : stage_cmds) {
      if (cmd->parsed()) return run(o, stage);
    }
    std::optional<flowcorr::Stage> stage;
    if (!o.stage.empty()) stage = flowcorr::parse_stage(o.stage);
    return run(o, stage);
  } catch (const flowcorr::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
