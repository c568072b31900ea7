#pragma once

// Posterior construction from scarce high-fidelity pairs: re-training the
// trailing layers of a prior network (Adam, exact last-layer least squares,
// or through k-fold composition for coarse lags), plus the additive
// flow-map-plus-network baseline.

#include "flowcorr/checkpoint.hpp"
#include "flowcorr/dynsys.hpp"
#include "flowcorr/fml.hpp"
#include "flowcorr/nnet.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <string>
#include <vector>

namespace flowcorr {

enum class CorrectionMethod { TlAdam, TlLsq, TlRecurrent, GResNet };

std::string to_string(CorrectionMethod m);
CorrectionMethod parse_correction_method(std::string_view s);

struct CorrectionProvenance {
  CorrectionMethod method = CorrectionMethod::TlAdam;
  int split_index = 0;
  std::size_t hf_count = 0;
  std::string prior_hash;  // params_hash() of the prior network
};

/// Prior layers [0, freeze) kept verbatim, layers [freeze, M] re-trained.
struct PosteriorModel {
  NetParams params;
  FreezeSpec freeze;
  CorrectionProvenance provenance;
  LossHistory history;
};

Checkpoint posterior_checkpoint(const PosteriorModel& model);

/// Re-trains layers [freeze.split_index, M] on one-step HF pairs, starting
/// from the prior's values (or from a fresh draw when cold_start). Uses a
/// held-out split when cfg.patience is set. Rejects pairs with k > 1.
PosteriorModel transfer_learn(const NetParams& prior, const Dataset& hf, const FreezeSpec& freeze,
                              const TrainConfig& cfg, bool cold_start = false);

/// Rows [1, a(x_j)] where a is the output of the last hidden layer.
Eigen::MatrixXd build_feature_matrix(const NetParams& prior, const Eigen::MatrixXd& inputs);

/// Rows x2_j, or x2_j - x1_j when the network carries the identity skip.
Eigen::MatrixXd build_target_matrix(const NetParams& prior, const Dataset& hf);

struct LsqReport {
  Eigen::Index rank = 0;
  Eigen::Index cols = 0;
  bool rank_deficient = false;
  std::string warning;
};

/// argmin_W ||A W - B||_F^2 + ridge ||W||_F^2. With ridge == 0 the solve is a
/// complete orthogonal decomposition, which returns the minimum-norm solution
/// when A is rank deficient (reported through `report`).
Eigen::MatrixXd solve_least_squares(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double ridge,
                                    LsqReport* report = nullptr);

struct LsqCorrection {
  PosteriorModel model;
  LsqReport report;
};

/// Closed-form output-layer correction (freeze split at M).
LsqCorrection last_layer_lsq(const NetParams& prior, const Dataset& hf, double ridge);

/// k-fold composition of the network.
State compose(const NetParams& params, const State& x, int k);

/// Loss (1/B) sum_j ||x2_j - net^[k_j](x1_j)||^2 with gradients propagated
/// through every application. Samples are advanced in lock-step, ordered by
/// decreasing k (stable), so with all k == 1 the arithmetic is exactly that of
/// OneStepObjective.
class RecurrentObjective final : public Objective {
 public:
  RecurrentObjective(Eigen::MatrixXd inputs, Eigen::MatrixXd targets, std::vector<int> lags);
  [[nodiscard]] std::size_t size() const override { return lags_.size(); }
  double loss_and_grad(const NetParams& params, std::span<const std::size_t> idx, int first_layer,
                       Gradients& grads) const override;
  [[nodiscard]] double loss(const NetParams& params, std::span<const std::size_t> idx) const override;

 private:
  struct Unrolled;
  Unrolled unroll(const NetParams& params, std::span<const std::size_t> idx, bool keep_caches) const;

  Eigen::MatrixXd inputs_;
  Eigen::MatrixXd targets_;
  std::vector<int> lags_;
};

/// Transfer learning through k-fold composition for pairs separated by k
/// fine steps. Full-batch Adam.
PosteriorModel transfer_learn_recurrent(const NetParams& prior, const Dataset& hf, const FreezeSpec& freeze,
                                        const TrainConfig& cfg, bool cold_start = false);

/// x -> prior flow map over `lag` + corrector(x).
struct GResNetModel {
  SystemSpec prior_system;
  double lag = 0.0;
  int substeps = 10;
  NetParams corrector;

  [[nodiscard]] State predict(const State& x) const;
};

/// Trains a fresh non-residual network on x2 - prior_flow(x1).
GResNetModel gresnet_correct(const SystemSpec& prior_system, double lag, int substeps, const Dataset& hf,
                             Architecture arch, const TrainConfig& cfg, LossHistory* history = nullptr);

nlohmann::json gresnet_to_json(const GResNetModel& model, const nlohmann::json& provenance = nlohmann::json::object());
GResNetModel gresnet_from_json(const nlohmann::json& j);

}  // namespace flowcorr
