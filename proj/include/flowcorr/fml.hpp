#pragma once

// Flow-map learning: paired-state datasets sampled from a system, and the
// mini-batch Adam trainer shared by prior construction and correction.

#include "flowcorr/dynsys.hpp"
#include "flowcorr/nnet.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace flowcorr {

/// Two states separated by k fine steps.
struct ObservationPair {
  State x1;
  State x2;
  int k = 1;
};

enum class Fidelity { Low, High };
std::string to_string(Fidelity f);
Fidelity parse_fidelity(std::string_view s);

/// How initial states are drawn.
enum class SamplingMode {
  Pairs,             // x1 uniform in the domain, x2 = k fine steps later
  TrajectoryWindow,  // x0 uniform in the domain, pair = random window of a trajectory of fixed length
};
std::string to_string(SamplingMode m);
SamplingMode parse_sampling_mode(std::string_view s);

enum class InitialDraw {
  Box,      // uniform in the domain box
  Simplex,  // uniform on the probability simplex (populations summing to one)
};
std::string to_string(InitialDraw d);
InitialDraw parse_initial_draw(std::string_view s);

/// Uniform distribution over a finite set of fine-step counts.
struct LagDistribution {
  std::vector<int> support{1};

  static LagDistribution constant(int k) { return LagDistribution{{k}}; }
  void validate() const;
  [[nodiscard]] int max() const;
  [[nodiscard]] bool is_constant() const { return support.size() == 1; }
};

struct Dataset {
  std::vector<ObservationPair> pairs;
  double fine_step = 0.0;
  Domain domain;
  Fidelity fidelity = Fidelity::Low;
  std::string source_system;
  std::uint64_t seed = 0;

  [[nodiscard]] std::size_t size() const { return pairs.size(); }
  [[nodiscard]] int dim() const { return pairs.empty() ? 0 : static_cast<int>(pairs.front().x1.size()); }
  [[nodiscard]] bool all_unit_lag() const;
  /// x1 of every pair as rows.
  [[nodiscard]] Eigen::MatrixXd inputs() const;
  /// x2 of every pair as rows.
  [[nodiscard]] Eigen::MatrixXd outputs() const;
  [[nodiscard]] std::vector<int> lags() const;
};

struct GenerateOptions {
  Domain domain;
  std::size_t count = 0;
  double fine_step = 0.1;
  LagDistribution lags;
  int substeps = 10;
  SamplingMode mode = SamplingMode::Pairs;
  double trajectory_time = 0.0;  // TrajectoryWindow only
  InitialDraw draw = InitialDraw::Box;
  Fidelity fidelity = Fidelity::Low;
  std::uint64_t seed = 0;
};

class Rng;

/// One initial state over the domain's (differential) components, with any
/// algebraic components reconstructed.
State draw_initial_state(const SystemSpec& system, const Domain& domain, InitialDraw draw, Rng& rng);

/// Draws `count` pairs. Sample j uses its own generator derived from
/// (seed, j), so the result is independent of worker count.
Dataset generate_dataset(const SystemSpec& system, const GenerateOptions& opts);

/// Seed-deterministic disjoint partition; holdout gets round(fraction * J)
/// pairs. Both parts keep the original relative order.
std::pair<Dataset, Dataset> split_holdout(const Dataset& data, double fraction, std::uint64_t seed);

/// CSV `j,k,x1_0..,x2_0..` plus a `<stem>.meta.json` sidecar.
void write_dataset(const std::filesystem::path& csv_path, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& csv_path);
std::filesystem::path dataset_meta_path(const std::filesystem::path& csv_path);

struct TrainConfig {
  int epochs = 10000;
  int batch_size = 100;
  double lr = 1e-3;
  std::optional<int> patience;  // early stopping on a held-out split
  std::uint64_t seed = 0;
  bool shuffle = true;
  double holdout_fraction = 0.1;

  void validate() const;
};

struct LossHistory {
  std::vector<double> train;    // per-epoch mean of the mini-batch losses
  std::vector<double> holdout;  // per-epoch held-out loss (early stopping only)
  int epochs_run = 0;
  int best_epoch = -1;          // epoch whose parameters were restored
  bool stopped_early = false;
};

/// Mean over samples of the squared l2 misfit; the quantity every trainer
/// minimizes.
class Objective {
 public:
  virtual ~Objective() = default;
  [[nodiscard]] virtual std::size_t size() const = 0;
  /// Loss over the rows `idx`; fills grads for layers >= first_layer.
  virtual double loss_and_grad(const NetParams& params, std::span<const std::size_t> idx, int first_layer,
                               Gradients& grads) const = 0;
  [[nodiscard]] virtual double loss(const NetParams& params, std::span<const std::size_t> idx) const = 0;
  [[nodiscard]] double full_loss(const NetParams& params) const;
};

/// Loss (1/B) sum_j ||t_j - net(x_j)||^2 over one network application.
class OneStepObjective final : public Objective {
 public:
  OneStepObjective(Eigen::MatrixXd inputs, Eigen::MatrixXd targets);
  [[nodiscard]] std::size_t size() const override { return static_cast<std::size_t>(inputs_.rows()); }
  double loss_and_grad(const NetParams& params, std::span<const std::size_t> idx, int first_layer,
                       Gradients& grads) const override;
  [[nodiscard]] double loss(const NetParams& params, std::span<const std::size_t> idx) const override;

 private:
  Eigen::MatrixXd inputs_;
  Eigen::MatrixXd targets_;
};

/// Rows `idx` of m, in order.
Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, std::span<const std::size_t> idx);

/// Sum of squared row norms of (targets - outputs), accumulated row by row in
/// order. Shared by every objective so equal inputs give equal bits.
double sum_squared_misfit(const Eigen::MatrixXd& targets, const Eigen::MatrixXd& outputs);

/// d loss / d outputs for loss = (1/batch) sum ||t - y||^2.
Eigen::MatrixXd misfit_gradient(const Eigen::MatrixXd& targets, const Eigen::MatrixXd& outputs,
                                std::size_t batch);

/// Mini-batch Adam over layers [freeze.split_index, M]. With a holdout
/// objective and cfg.patience set, stops after `patience` epochs without a
/// held-out improvement and restores the best parameters. Throws
/// TrainingError when the loss becomes non-finite.
LossHistory fit(NetParams& params, const Objective& train, const Objective* holdout, const FreezeSpec& freeze,
                const TrainConfig& cfg);

struct TrainedNet {
  NetParams params;
  LossHistory history;
};

/// Trains every layer of a freshly initialized network on low-fidelity
/// pairs (x1 -> x2).
TrainedNet train_prior(const Dataset& lf_data, const Architecture& arch, const TrainConfig& cfg);

/// One-step mean squared error of a network over a dataset.
double dataset_mse(const NetParams& params, const Dataset& data);

}  // namespace flowcorr
