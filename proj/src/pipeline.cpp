#include "flowcorr/pipeline.hpp"

#include "flowcorr/checkpoint.hpp"
#include "flowcorr/csv.hpp"
#include "flowcorr/errors.hpp"
#include "flowcorr/eval.hpp"
#include "flowcorr/hash.hpp"
#include "flowcorr/rng.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <iostream>

namespace flowcorr {

namespace fs = std::filesystem;

namespace {

constexpr int kManifestVersion = 1;

struct StagePlan {
  Stage stage;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  nlohmann::json config_slice;
};

nlohmann::json pick(const nlohmann::json& j, std::initializer_list<const char*> pointers) {
  nlohmann::json out = nlohmann::json::object();
  for (const char* p : pointers) out[p] = j.at(nlohmann::json::json_pointer(p));
  return out;
}

std::vector<StagePlan> plan(const ExperimentConfig& cfg, const ArtifactPaths& a) {
  const nlohmann::json j = config_to_json(cfg);
  return {
      {Stage::Generate,
       {},
       {a.lf_data, dataset_meta_path(a.lf_data), a.hf_data, dataset_meta_path(a.hf_data)},
       pick(j, {"/true_system", "/prior_system", "/data", "/effective/lf_count", "/effective/hf_count",
                "/seeds/lf_data", "/seeds/hf_data"})},
      {Stage::TrainPrior,
       {a.lf_data, dataset_meta_path(a.lf_data)},
       {a.prior},
       pick(j, {"/network", "/prior_training", "/effective/prior_epochs", "/seeds/prior_training"})},
      {Stage::Correct,
       {a.prior, a.hf_data, dataset_meta_path(a.hf_data)},
       {a.posterior},
       pick(j, {"/correction", "/network", "/prior_system", "/data/fine_step", "/data/substeps",
                "/effective/correction_epochs", "/seeds/correction"})},
      {Stage::Evaluate,
       {a.prior, a.posterior},
       {a.prior_error, a.posterior_error, a.prior_trajectory, a.posterior_trajectory, a.truth_trajectory, a.summary},
       pick(j, {"/experiment", "/evaluation", "/true_system", "/data/domain_lower", "/data/domain_upper",
                "/data/fine_step", "/data/substeps", "/data/initial_draw", "/seeds/evaluation"})},
  };
}

nlohmann::json hash_files(const std::vector<fs::path>& files) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& f : files) out[f.filename().string()] = sha256_file(f);
  return out;
}

nlohmann::json load_manifest(const fs::path& path) {
  if (!fs::exists(path)) return nlohmann::json::object();
  try {
    auto j = nlohmann::json::parse(read_text_file(path));
    if (j.is_object() && j.value("format_version", 0) == kManifestVersion) return j;
  } catch (const std::exception& e) {
    std::clog << "warning: ignoring unreadable manifest " << path << ": " << e.what() << "\n";
  }
  return nlohmann::json::object();
}

bool up_to_date(const nlohmann::json& entry, const std::string& key, const std::vector<fs::path>& outputs) {
  if (!entry.is_object() || entry.value("key", "") != key) return false;
  const auto& recorded = entry.at("outputs");
  for (const auto& f : outputs) {
    const auto name = f.filename().string();
    if (!fs::exists(f) || !recorded.contains(name) || recorded.at(name).get<std::string>() != sha256_file(f)) {
      return false;
    }
  }
  return true;
}

nlohmann::json history_json(const LossHistory& h) {
  return {{"epochs_run", h.epochs_run},
          {"best_epoch", h.best_epoch},
          {"stopped_early", h.stopped_early},
          {"final_train_loss", h.train.empty() ? nlohmann::json(nullptr) : nlohmann::json(h.train.back())},
          {"final_holdout_loss", h.holdout.empty() ? nlohmann::json(nullptr) : nlohmann::json(h.holdout.back())}};
}

void run_generate(const ExperimentConfig& cfg, const ArtifactPaths& a) {
  GenerateOptions lf;
  lf.domain = cfg.data.domain;
  lf.count = cfg.data.lf_count;
  lf.fine_step = cfg.data.fine_step;
  lf.lags = LagDistribution::constant(1);
  lf.substeps = cfg.data.substeps;
  lf.mode = cfg.data.lf_sampling;
  lf.trajectory_time = cfg.data.trajectory_time;
  lf.draw = cfg.data.initial_draw;
  lf.fidelity = Fidelity::Low;
  lf.seed = cfg.lf_seed();

  GenerateOptions hf = lf;
  hf.count = cfg.data.hf_count;
  hf.lags = cfg.data.hf_lags;
  hf.mode = cfg.data.hf_sampling;
  hf.fidelity = Fidelity::High;
  hf.seed = cfg.hf_seed();

  write_dataset(a.lf_data, generate_dataset(cfg.prior_system.build(), lf));
  write_dataset(a.hf_data, generate_dataset(cfg.true_system.build(), hf));
}

void run_train_prior(const ExperimentConfig& cfg, const ArtifactPaths& a) {
  const Dataset lf = read_dataset(a.lf_data);
  TrainedNet net = train_prior(lf, cfg.network, cfg.prior_training);
  Checkpoint ckpt{net.params,
                  {{"stage", "train-prior"},
                   {"lf_data_hash", sha256_file(a.lf_data)},
                   {"lf_count", lf.size()},
                   {"training", history_json(net.history)}}};
  save_checkpoint(a.prior, ckpt);
}

void run_correct(const ExperimentConfig& cfg, const ArtifactPaths& a) {
  const NetParams prior = load_checkpoint(a.prior).params;
  const Dataset hf = read_dataset(a.hf_data);
  const FreezeSpec freeze{cfg.correction.split_index};
  const TrainConfig& train = cfg.correction.train;
  const std::string hf_hash = sha256_file(a.hf_data);

  switch (cfg.correction.method) {
    case CorrectionMethod::TlAdam:
    case CorrectionMethod::TlRecurrent: {
      PosteriorModel post = cfg.correction.method == CorrectionMethod::TlAdam
                                ? transfer_learn(prior, hf, freeze, train, cfg.correction.cold_start)
                                : transfer_learn_recurrent(prior, hf, freeze, train, cfg.correction.cold_start);
      Checkpoint ckpt = posterior_checkpoint(post);
      ckpt.provenance["hf_data_hash"] = hf_hash;
      ckpt.provenance["cold_start"] = cfg.correction.cold_start;
      save_checkpoint(a.posterior, ckpt);
      return;
    }
    case CorrectionMethod::TlLsq: {
      LsqCorrection lsq = last_layer_lsq(prior, hf, cfg.correction.ridge);
      if (lsq.report.rank_deficient) std::clog << "warning: " << lsq.report.warning << "\n";
      Checkpoint ckpt = posterior_checkpoint(lsq.model);
      ckpt.provenance["hf_data_hash"] = hf_hash;
      ckpt.provenance["ridge"] = cfg.correction.ridge;
      ckpt.provenance["feature_rank"] = lsq.report.rank;
      ckpt.provenance["feature_columns"] = lsq.report.cols;
      ckpt.provenance["rank_deficient"] = lsq.report.rank_deficient;
      save_checkpoint(a.posterior, ckpt);
      return;
    }
    case CorrectionMethod::GResNet: {
      LossHistory history;
      const GResNetModel model = gresnet_correct(cfg.prior_system.build(), cfg.data.fine_step, cfg.data.substeps, hf,
                                                 cfg.network, train, &history);
      const nlohmann::json prov = {{"method", "gresnet"},
                                   {"hf_count", hf.size()},
                                   {"hf_data_hash", hf_hash},
                                   {"training", history_json(history)}};
      write_text_file(a.posterior, gresnet_to_json(model, prov).dump(1) + "\n");
      return;
    }
  }
}

Predictor load_posterior(const fs::path& path, double delta) {
  const auto j = nlohmann::json::parse(read_text_file(path));
  if (j.contains("kind") && j.at("kind") == "gresnet") return Predictor::gresnet(gresnet_from_json(j));
  return Predictor::net(checkpoint_from_json(j).params, delta);
}

nlohmann::json curve_summary(const ErrorCurve& c) {
  return {{"time_average_l2", time_average(c)},
          {"final_l2", c.mean_l2.empty() ? 0.0 : c.mean_l2.back()},
          {"truncated_trajectories", c.truncated}};
}

void run_evaluate(const ExperimentConfig& cfg, const ArtifactPaths& a) {
  const double delta = cfg.data.fine_step;
  const Predictor prior = Predictor::net(load_checkpoint(a.prior).params, delta);
  const Predictor posterior = load_posterior(a.posterior, delta);
  const SystemSpec truth = cfg.true_system.build();
  const auto& ev = cfg.evaluation;
  const int substeps = cfg.data.substeps;
  const std::uint64_t seed = cfg.evaluation_seed();

  const ErrorCurve prior_curve = error_curve(prior, truth, cfg.data.domain, ev.trajectories, ev.horizon, delta, seed,
                                             substeps, cfg.data.initial_draw);
  const ErrorCurve post_curve = error_curve(posterior, truth, cfg.data.domain, ev.trajectories, ev.horizon, delta,
                                            seed, substeps, cfg.data.initial_draw);
  write_error_csv(a.prior_error, prior_curve);
  write_error_csv(a.posterior_error, post_curve);

  // Example trajectories from the ensemble's first initial state.
  Rng rng(seed, 0);
  const State x0 = draw_initial_state(truth, cfg.data.domain, cfg.data.initial_draw, rng);
  const int n = steps_for_horizon(ev.horizon, delta);
  const GuardBox guard = default_guard(cfg.data.domain);
  write_trajectory_csv(a.truth_trajectory, rollout(Predictor::reference(truth, delta, substeps), x0, n), delta);
  write_trajectory_csv(a.prior_trajectory, rollout(prior, x0, n, &guard), delta);
  write_trajectory_csv(a.posterior_trajectory, rollout(posterior, x0, n, &guard), delta);

  const nlohmann::json summary = {{"experiment", cfg.experiment},
                                  {"trajectories", ev.trajectories},
                                  {"horizon", ev.horizon},
                                  {"step", delta},
                                  {"prior", curve_summary(prior_curve)},
                                  {"posterior", curve_summary(post_curve)},
                                  {"posterior_below_prior_fraction", fraction_below(post_curve, prior_curve)}};
  write_text_file(a.summary, summary.dump(1) + "\n");
}

void run_stage(Stage s, const ExperimentConfig& cfg, const ArtifactPaths& a) {
  switch (s) {
    case Stage::Generate:
      return run_generate(cfg, a);
    case Stage::TrainPrior:
      return run_train_prior(cfg, a);
    case Stage::Correct:
      return run_correct(cfg, a);
    case Stage::Evaluate:
      return run_evaluate(cfg, a);
  }
}

}  // namespace

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Generate:
      return "generate";
    case Stage::TrainPrior:
      return "train-prior";
    case Stage::Correct:
      return "correct";
    case Stage::Evaluate:
      return "evaluate";
  }
  return "?";
}

Stage parse_stage(std::string_view s) {
  for (Stage st : all_stages()) {
    if (s == to_string(st)) return st;
  }
  throw ValidationError("unknown stage '" + std::string(s) + "' (expected generate|train-prior|correct|evaluate)");
}

std::vector<Stage> all_stages() { return {Stage::Generate, Stage::TrainPrior, Stage::Correct, Stage::Evaluate}; }

ArtifactPaths artifact_paths(const std::string& experiment, const fs::path& out_dir) {
  ArtifactPaths a;
  a.lf_data = out_dir / "lf_data.csv";
  a.hf_data = out_dir / "hf_data.csv";
  a.prior = out_dir / "prior.ckpt.json";
  a.posterior = out_dir / "posterior.ckpt.json";
  a.prior_error = out_dir / (experiment + "_prior_error.csv");
  a.posterior_error = out_dir / (experiment + "_posterior_error.csv");
  a.prior_trajectory = out_dir / (experiment + "_prior_trajectory.csv");
  a.posterior_trajectory = out_dir / (experiment + "_posterior_trajectory.csv");
  a.truth_trajectory = out_dir / (experiment + "_truth_trajectory.csv");
  a.summary = out_dir / "evaluation.json";
  a.manifest = out_dir / "manifest.json";
  a.lock = out_dir / ".flowcorr.lock";
  return a;
}

DirectoryLock::DirectoryLock(fs::path lock_file) : path_(std::move(lock_file)) {
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw Error("output directory is in use by another run (lock file " + path_.string() +
                  "); remove it if no run is active");
    }
    throw IoError("cannot create lock file " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

PipelineResult run_pipeline(const ExperimentConfig& cfg, const fs::path& out_dir, std::optional<Stage> only) {
  cfg.validate();
  const ExperimentConfig eff = cfg.effective();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  PipelineResult result;
  result.paths = artifact_paths(cfg.experiment, out_dir);
  const ArtifactPaths& a = result.paths;
  DirectoryLock lock(a.lock);

  nlohmann::json manifest = load_manifest(a.manifest);
  const std::string chash = config_hash(cfg);
  manifest["format_version"] = kManifestVersion;
  manifest["experiment"] = cfg.experiment;
  manifest["config"] = config_to_json(cfg);
  manifest["config_hash"] = chash;
  manifest["seeds"] = manifest["config"]["seeds"];
  if (!manifest.contains("stages") || !manifest["stages"].is_object()) manifest["stages"] = nlohmann::json::object();

  for (const StagePlan& p : plan(cfg, a)) {
    if (only && *only != p.stage) continue;
    const std::string name = to_string(p.stage);
    for (const auto& in : p.inputs) {
      if (!fs::exists(in)) {
        throw DependencyError("stage '" + name + "' needs " + in.string() + ", which does not exist");
      }
    }
    const nlohmann::json inputs = hash_files(p.inputs);
    const std::string key =
        sha256_hex(nlohmann::json{{"stage", name}, {"config", p.config_slice}, {"inputs", inputs}}.dump());

    StageReport report{p.stage, false, 0.0};
    if (up_to_date(manifest["stages"][name], key, p.outputs)) {
      report.skipped = true;
      std::clog << "[" << name << "] up to date, skipped\n";
    } else {
      std::clog << "[" << name << "] running\n";
      const auto t0 = std::chrono::steady_clock::now();
      run_stage(p.stage, eff, a);
      report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      manifest["stages"][name] = {{"key", key},
                                  {"inputs", inputs},
                                  {"outputs", hash_files(p.outputs)},
                                  {"wall_seconds", report.wall_seconds}};
      std::clog << "[" << name << "] done in " << report.wall_seconds << " s\n";
    }
    write_text_file(a.manifest, manifest.dump(1) + "\n");
    result.stages.push_back(report);
  }
  return result;
}

std::vector<std::string> verify_manifest(const fs::path& out_dir) {
  const fs::path path = out_dir / "manifest.json";
  if (!fs::exists(path)) throw DependencyError("no manifest at " + path.string());
  const auto manifest = nlohmann::json::parse(read_text_file(path));
  std::vector<std::string> bad;
  for (const auto& [stage, entry] : manifest.at("stages").items()) {
    for (const char* group : {"inputs", "outputs"}) {
      for (const auto& [file, hash] : entry.at(group).items()) {
        const fs::path f = out_dir / file;
        if (!fs::exists(f) || sha256_file(f) != hash.get<std::string>()) bad.push_back(stage + ":" + file);
      }
    }
  }
  return bad;
}

}  // namespace flowcorr
