#include "flowcorr/correction.hpp"

#include "flowcorr/errors.hpp"
#include "flowcorr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace flowcorr {

namespace {

constexpr std::uint64_t kColdStartStream = 0x636f6c64ULL;

void check_hf_shape(const NetParams& prior, const Dataset& hf) {
  prior.validate();
  if (hf.size() == 0) throw ValidationError("correction needs at least one high-fidelity pair");
  if (hf.dim() != prior.arch.input_dim) {
    std::ostringstream os;
    os << "high-fidelity data has dimension " << hf.dim() << ", prior network expects " << prior.arch.input_dim;
    throw ValidationError(os.str());
  }
}

nlohmann::json history_tail(const LossHistory& h, std::size_t count = 10) {
  const auto& src = h.holdout.empty() ? h.train : h.holdout;
  const std::size_t from = src.size() > count ? src.size() - count : 0;
  return std::vector<double>(src.begin() + static_cast<std::ptrdiff_t>(from), src.end());
}

template <class MakeObjective>
PosteriorModel retrain(const NetParams& prior, const Dataset& hf, const FreezeSpec& freeze, const TrainConfig& cfg,
                       bool cold_start, CorrectionMethod method, MakeObjective make_objective) {
  freeze.validate(prior.arch);
  PosteriorModel post;
  post.params = prior;
  post.freeze = freeze;
  post.provenance = {method, freeze.split_index, hf.size(), params_hash(prior)};
  if (cold_start) reinit_layers(post.params, freeze.split_index, derive_seed(cfg.seed, kColdStartStream));

  if (cfg.patience) {
    auto [train, held] = split_holdout(hf, cfg.holdout_fraction, cfg.seed);
    const auto train_obj = make_objective(train);
    const auto held_obj = make_objective(held);
    post.history = fit(post.params, train_obj, &held_obj, freeze, cfg);
  } else {
    const auto train_obj = make_objective(hf);
    post.history = fit(post.params, train_obj, nullptr, freeze, cfg);
  }
  return post;
}

}  // namespace

std::string to_string(CorrectionMethod m) {
  switch (m) {
    case CorrectionMethod::TlAdam:
      return "tl-adam";
    case CorrectionMethod::TlLsq:
      return "tl-lsq";
    case CorrectionMethod::TlRecurrent:
      return "tl-recurrent";
    case CorrectionMethod::GResNet:
      return "gresnet";
  }
  return "?";
}

CorrectionMethod parse_correction_method(std::string_view s) {
  if (s == "tl-adam") return CorrectionMethod::TlAdam;
  if (s == "tl-lsq") return CorrectionMethod::TlLsq;
  if (s == "tl-recurrent") return CorrectionMethod::TlRecurrent;
  if (s == "gresnet") return CorrectionMethod::GResNet;
  throw ValidationError("unknown correction method '" + std::string(s) +
                        "' (expected tl-adam|tl-lsq|tl-recurrent|gresnet)");
}

Checkpoint posterior_checkpoint(const PosteriorModel& model) {
  Checkpoint c;
  c.params = model.params;
  c.provenance = {
      {"method", to_string(model.provenance.method)},
      {"split_index", model.provenance.split_index},
      {"hf_count", model.provenance.hf_count},
      {"prior_checkpoint_hash", model.provenance.prior_hash},
      {"epochs_run", model.history.epochs_run},
      {"loss_history_tail", history_tail(model.history)},
  };
  return c;
}

PosteriorModel transfer_learn(const NetParams& prior, const Dataset& hf, const FreezeSpec& freeze,
                              const TrainConfig& cfg, bool cold_start) {
  check_hf_shape(prior, hf);
  if (!hf.all_unit_lag()) {
    throw ValidationError("high-fidelity pairs with k > 1 present; use transfer_learn_recurrent (tl-recurrent)");
  }
  return retrain(prior, hf, freeze, cfg, cold_start, CorrectionMethod::TlAdam,
                 [](const Dataset& d) { return OneStepObjective(d.inputs(), d.outputs()); });
}

Eigen::MatrixXd build_feature_matrix(const NetParams& prior, const Eigen::MatrixXd& inputs) {
  prior.validate();
  ForwardCache cache;
  forward_batch(prior, inputs, &cache);
  const Eigen::MatrixXd& hidden = cache.activations.back();
  Eigen::MatrixXd A(hidden.rows(), hidden.cols() + 1);
  A.col(0).setOnes();
  A.rightCols(hidden.cols()) = hidden;
  return A;
}

Eigen::MatrixXd build_target_matrix(const NetParams& prior, const Dataset& hf) {
  Eigen::MatrixXd B = hf.outputs();
  if (prior.arch.residual) B -= hf.inputs();
  return B;
}

Eigen::MatrixXd solve_least_squares(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double ridge,
                                    LsqReport* report) {
  if (A.rows() != B.rows()) throw ValidationError("least squares: A and B row counts differ");
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw ValidationError("ridge must be a finite nonnegative number");
  LsqReport local;
  local.cols = A.cols();
  Eigen::MatrixXd W;
  if (ridge > 0.0) {
    Eigen::MatrixXd aug(A.rows() + A.cols(), A.cols());
    aug.topRows(A.rows()) = A;
    aug.bottomRows(A.cols()) = std::sqrt(ridge) * Eigen::MatrixXd::Identity(A.cols(), A.cols());
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(A.rows() + A.cols(), B.cols());
    rhs.topRows(A.rows()) = B;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(aug);
    W = qr.solve(rhs);
    local.rank = qr.rank();
  } else {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
    W = cod.solve(B);
    local.rank = cod.rank();
    if (local.rank < A.cols()) {
      local.rank_deficient = true;
      std::ostringstream os;
      os << "feature matrix is rank deficient (numerical rank " << local.rank << " of " << A.cols()
         << " columns); returning the minimum-norm solution";
      local.warning = os.str();
    }
  }
  if (report) *report = local;
  return W;
}

LsqCorrection last_layer_lsq(const NetParams& prior, const Dataset& hf, double ridge) {
  check_hf_shape(prior, hf);
  if (!hf.all_unit_lag()) throw ValidationError("least-squares correction requires pairs with k == 1");
  const Eigen::MatrixXd A = build_feature_matrix(prior, hf.inputs());
  const Eigen::MatrixXd B = build_target_matrix(prior, hf);
  LsqCorrection out;
  const int M = prior.arch.hidden_layers;
  out.model.params = prior;
  out.model.params.layers[static_cast<std::size_t>(M)] = solve_least_squares(A, B, ridge, &out.report);
  out.model.freeze = FreezeSpec{M};
  out.model.provenance = {CorrectionMethod::TlLsq, M, hf.size(), params_hash(prior)};
  return out;
}

State compose(const NetParams& params, const State& x, int k) {
  if (k < 0) throw ValidationError("composition count must be >= 0");
  State y = x;
  for (int i = 0; i < k; ++i) y = predict(params, y);
  return y;
}

struct RecurrentObjective::Unrolled {
  std::vector<std::size_t> selection;  // dataset rows, sorted by decreasing k
  std::vector<Eigen::Index> active;    // active[t] = rows still composing at depth t (1-based)
  std::vector<ForwardCache> caches;    // caches[t-1] for depth t
  Eigen::MatrixXd targets;
  Eigen::MatrixXd outputs;             // net^[k_j](x1_j), rows in selection order
};

RecurrentObjective::RecurrentObjective(Eigen::MatrixXd inputs, Eigen::MatrixXd targets, std::vector<int> lags)
    : inputs_(std::move(inputs)), targets_(std::move(targets)), lags_(std::move(lags)) {
  if (inputs_.rows() != targets_.rows() || inputs_.cols() != targets_.cols() ||
      static_cast<std::size_t>(inputs_.rows()) != lags_.size()) {
    throw ValidationError("recurrent objective: inputs, targets and lags disagree in size");
  }
  for (int k : lags_) {
    if (k < 1) throw ValidationError("recurrent objective: lag steps must be >= 1");
  }
}

RecurrentObjective::Unrolled RecurrentObjective::unroll(const NetParams& params, std::span<const std::size_t> idx,
                                                        bool keep_caches) const {
  Unrolled u;
  u.selection.assign(idx.begin(), idx.end());
  std::stable_sort(u.selection.begin(), u.selection.end(),
                   [&](std::size_t a, std::size_t b) { return lags_[a] > lags_[b]; });
  const auto B = static_cast<Eigen::Index>(u.selection.size());
  const int depth = B ? lags_[u.selection.front()] : 0;
  u.active.assign(static_cast<std::size_t>(depth + 2), 0);
  for (std::size_t s : u.selection) {
    for (int t = 1; t <= lags_[s]; ++t) ++u.active[static_cast<std::size_t>(t)];
  }
  u.targets = gather_rows(targets_, u.selection);
  u.outputs.resize(B, inputs_.cols());
  if (keep_caches) u.caches.resize(static_cast<std::size_t>(depth));

  Eigen::MatrixXd state = gather_rows(inputs_, u.selection);
  ForwardCache scratch;
  for (int t = 1; t <= depth; ++t) {
    const Eigen::Index rows = u.active[static_cast<std::size_t>(t)];
    const Eigen::Index still = u.active[static_cast<std::size_t>(t + 1)];
    ForwardCache& cache = keep_caches ? u.caches[static_cast<std::size_t>(t - 1)] : scratch;
    Eigen::MatrixXd next = forward_batch(params, state.topRows(rows), keep_caches ? &cache : nullptr);
    if (!next.allFinite()) {
      for (Eigen::Index r = 0; r < rows; ++r) {
        if (!next.row(r).allFinite()) {
          std::ostringstream os;
          os << "non-finite state while unrolling sample " << u.selection[static_cast<std::size_t>(r)]
             << " at composition depth " << t;
          throw TrainingError(os.str());
        }
      }
    }
    u.outputs.middleRows(still, rows - still) = next.middleRows(still, rows - still);
    state = std::move(next);
  }
  return u;
}

double RecurrentObjective::loss_and_grad(const NetParams& params, std::span<const std::size_t> idx,
                                         int first_layer, Gradients& grads) const {
  Unrolled u = unroll(params, idx, true);
  const std::size_t B = idx.size();
  const Eigen::MatrixXd final_grad = misfit_gradient(u.targets, u.outputs, B);
  const int depth = static_cast<int>(u.caches.size());

  grads.layers.assign(params.layers.size(), Eigen::MatrixXd());
  grads.input.resize(0, 0);
  Eigen::MatrixXd carried;
  bool first = true;
  for (int t = depth; t >= 1; --t) {
    const Eigen::Index rows = u.active[static_cast<std::size_t>(t)];
    const Eigen::Index still = u.active[static_cast<std::size_t>(t + 1)];
    Eigen::MatrixXd d(rows, final_grad.cols());
    if (still > 0) d.topRows(still) = carried;
    d.middleRows(still, rows - still) = final_grad.middleRows(still, rows - still);
    Gradients g = backward(params, u.caches[static_cast<std::size_t>(t - 1)], d, first_layer, t > 1);
    for (std::size_t i = static_cast<std::size_t>(first_layer); i < params.layers.size(); ++i) {
      if (first) {
        grads.layers[i] = std::move(g.layers[i]);
      } else {
        grads.layers[i] += g.layers[i];
      }
    }
    first = false;
    carried = std::move(g.input);
  }
  return sum_squared_misfit(u.targets, u.outputs) / static_cast<double>(B);
}

double RecurrentObjective::loss(const NetParams& params, std::span<const std::size_t> idx) const {
  Unrolled u = unroll(params, idx, false);
  return sum_squared_misfit(u.targets, u.outputs) / static_cast<double>(idx.size());
}

PosteriorModel transfer_learn_recurrent(const NetParams& prior, const Dataset& hf, const FreezeSpec& freeze,
                                        const TrainConfig& cfg, bool cold_start) {
  check_hf_shape(prior, hf);
  TrainConfig full_batch = cfg;
  full_batch.batch_size = std::max<int>(cfg.batch_size, static_cast<int>(hf.size()));
  return retrain(prior, hf, freeze, full_batch, cold_start, CorrectionMethod::TlRecurrent,
                 [](const Dataset& d) { return RecurrentObjective(d.inputs(), d.outputs(), d.lags()); });
}

State GResNetModel::predict(const State& x) const {
  return flow_map(prior_system, x, lag, substeps) + flowcorr::predict(corrector, x);
}

GResNetModel gresnet_correct(const SystemSpec& prior_system, double lag, int substeps, const Dataset& hf,
                             Architecture arch, const TrainConfig& cfg, LossHistory* history) {
  if (hf.size() == 0) throw ValidationError("gResNet correction needs at least one high-fidelity pair");
  if (!hf.all_unit_lag()) throw ValidationError("gResNet correction requires pairs with k == 1");
  if (hf.dim() != prior_system.dim()) throw ValidationError("high-fidelity data dimension does not match the prior system");
  arch.residual = false;
  arch.input_dim = hf.dim();

  auto residual_targets = [&](const Dataset& d) {
    Eigen::MatrixXd t = d.outputs();
    for (std::size_t j = 0; j < d.size(); ++j) {
      t.row(static_cast<Eigen::Index>(j)) -= flow_map(prior_system, d.pairs[j].x1, lag, substeps).transpose();
    }
    return t;
  };

  // Zero output layer: training starts from the uncorrected prior flow map.
  GResNetModel model{prior_system, lag, substeps, init_params(arch, cfg.seed)};
  model.corrector.layers.back().setZero();
  LossHistory h;
  if (cfg.patience) {
    auto [train, held] = split_holdout(hf, cfg.holdout_fraction, cfg.seed);
    const OneStepObjective train_obj(train.inputs(), residual_targets(train));
    const OneStepObjective held_obj(held.inputs(), residual_targets(held));
    h = fit(model.corrector, train_obj, &held_obj, FreezeSpec{0}, cfg);
  } else {
    const OneStepObjective train_obj(hf.inputs(), residual_targets(hf));
    h = fit(model.corrector, train_obj, nullptr, FreezeSpec{0}, cfg);
  }
  if (history) *history = std::move(h);
  return model;
}

nlohmann::json gresnet_to_json(const GResNetModel& model, const nlohmann::json& provenance) {
  return {{"format_version", kCheckpointFormatVersion},
          {"kind", "gresnet"},
          {"prior_system", {{"name", model.prior_system.name()}, {"params", model.prior_system.params()}}},
          {"lag", model.lag},
          {"substeps", model.substeps},
          {"corrector", checkpoint_to_json(Checkpoint{model.corrector, provenance})}};
}

GResNetModel gresnet_from_json(const nlohmann::json& j) {
  try {
    if (j.at("kind").get<std::string>() != "gresnet") throw ValidationError("not a gResNet model");
    const auto& sys = j.at("prior_system");
    GResNetModel m{make_system(sys.at("name").get<std::string>(), sys.at("params").get<std::map<std::string, double>>()),
                   j.at("lag").get<double>(), j.at("substeps").get<int>(),
                   checkpoint_from_json(j.at("corrector")).params};
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed gResNet model: ") + e.what());
  }
}

}  // namespace flowcorr
