#include "flowcorr/fml.hpp"

#include "flowcorr/errors.hpp"
#include "flowcorr/parallel.hpp"
#include "flowcorr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace flowcorr {

std::string to_string(Fidelity f) { return f == Fidelity::Low ? "low" : "high"; }

Fidelity parse_fidelity(std::string_view s) {
  if (s == "low") return Fidelity::Low;
  if (s == "high") return Fidelity::High;
  throw ValidationError("unknown fidelity '" + std::string(s) + "'");
}

std::string to_string(SamplingMode m) { return m == SamplingMode::Pairs ? "pairs" : "trajectory"; }

SamplingMode parse_sampling_mode(std::string_view s) {
  if (s == "pairs") return SamplingMode::Pairs;
  if (s == "trajectory") return SamplingMode::TrajectoryWindow;
  throw ValidationError("unknown sampling mode '" + std::string(s) + "' (expected pairs|trajectory)");
}

std::string to_string(InitialDraw d) { return d == InitialDraw::Box ? "box" : "simplex"; }

InitialDraw parse_initial_draw(std::string_view s) {
  if (s == "box") return InitialDraw::Box;
  if (s == "simplex") return InitialDraw::Simplex;
  throw ValidationError("unknown initial draw '" + std::string(s) + "' (expected box|simplex)");
}

void LagDistribution::validate() const {
  if (support.empty()) throw ValidationError("lag distribution has an empty support");
  for (int k : support) {
    if (k < 1) throw ValidationError("lag steps must be positive integers, got " + std::to_string(k));
  }
}

int LagDistribution::max() const { return *std::max_element(support.begin(), support.end()); }

bool Dataset::all_unit_lag() const {
  return std::all_of(pairs.begin(), pairs.end(), [](const ObservationPair& p) { return p.k == 1; });
}

Eigen::MatrixXd Dataset::inputs() const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(pairs.size()), dim());
  for (std::size_t j = 0; j < pairs.size(); ++j) m.row(static_cast<Eigen::Index>(j)) = pairs[j].x1.transpose();
  return m;
}

Eigen::MatrixXd Dataset::outputs() const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(pairs.size()), dim());
  for (std::size_t j = 0; j < pairs.size(); ++j) m.row(static_cast<Eigen::Index>(j)) = pairs[j].x2.transpose();
  return m;
}

std::vector<int> Dataset::lags() const {
  std::vector<int> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.k);
  return out;
}

State draw_initial_state(const SystemSpec& system, const Domain& domain, InitialDraw draw, Rng& rng) {
  State x = State::Zero(system.dim());
  const int m = domain.dim();
  if (draw == InitialDraw::Box) {
    for (int i = 0; i < m; ++i) x[i] = rng.uniform(domain.lower[i], domain.upper[i]);
  } else {
    // Normalized exponentials are uniform on the simplex.
    double total = 0.0;
    for (int i = 0; i < m; ++i) {
      x[i] = -std::log1p(-rng.uniform());
      total += x[i];
    }
    x.head(m) /= total;
  }
  reconstruct_algebraic(system, x);
  return x;
}

namespace {

State advance(const SystemSpec& system, State x, int steps, double fine_step, int substeps) {
  for (int s = 0; s < steps; ++s) x = flow_map(system, x, fine_step, substeps);
  return x;
}

}  // namespace

Dataset generate_dataset(const SystemSpec& system, const GenerateOptions& opts) {
  opts.domain.validate();
  opts.lags.validate();
  if (opts.domain.dim() != system.differential_dim()) {
    std::ostringstream os;
    os << "domain has " << opts.domain.dim() << " components, system '" << system.name() << "' has "
       << system.differential_dim() << " differential components";
    throw ValidationError(os.str());
  }
  if (!(opts.fine_step > 0.0)) throw ValidationError("fine step must be positive");
  if (opts.substeps < 1) throw ValidationError("substeps must be >= 1");
  if (opts.draw == InitialDraw::Simplex) {
    if ((opts.domain.lower.array() > 0.0).any() || (opts.domain.upper.array() < 1.0).any()) {
      throw ValidationError("simplex sampling needs a domain containing [0,1]^n");
    }
  }
  long window_steps = 0;
  if (opts.mode == SamplingMode::TrajectoryWindow) {
    window_steps = static_cast<long>(std::floor(opts.trajectory_time / opts.fine_step + 1e-9));
    if (window_steps < opts.lags.max()) {
      throw ValidationError("trajectory time is shorter than the largest lag");
    }
  }

  Dataset out;
  out.fine_step = opts.fine_step;
  out.domain = opts.domain;
  out.fidelity = opts.fidelity;
  out.source_system = system.name();
  out.seed = opts.seed;
  out.pairs.resize(opts.count);

  parallel_for(opts.count, [&](std::size_t j) {
    Rng rng(opts.seed, j);
    State x1 = draw_initial_state(system, opts.domain, opts.draw, rng);
    const int k = opts.lags.support[rng.index(opts.lags.support.size())];
    try {
      if (opts.mode == SamplingMode::TrajectoryWindow) {
        const auto start = static_cast<int>(rng.index(static_cast<std::size_t>(window_steps - k + 1)));
        x1 = advance(system, x1, start, opts.fine_step, opts.substeps);
      }
      State x2 = advance(system, x1, k, opts.fine_step, opts.substeps);
      out.pairs[j] = ObservationPair{std::move(x1), std::move(x2), k};
    } catch (const IntegrationError& e) {
      throw IntegrationError("sample " + std::to_string(j) + ": " + e.what());
    }
  });
  return out;
}

std::pair<Dataset, Dataset> split_holdout(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("holdout fraction must lie in (0, 1)");
  const std::size_t n = data.size();
  const auto held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (held == 0 || held >= n) {
    std::ostringstream os;
    os << "holdout fraction " << fraction << " leaves an empty side for " << n << " pairs";
    throw ValidationError(os.str());
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed, 0x686f6c646f7574ULL);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
  std::vector<bool> in_holdout(n, false);
  for (std::size_t i = 0; i < held; ++i) in_holdout[perm[i]] = true;

  Dataset train = data;
  Dataset holdout = data;
  train.pairs.clear();
  holdout.pairs.clear();
  for (std::size_t j = 0; j < n; ++j) (in_holdout[j] ? holdout : train).pairs.push_back(data.pairs[j]);
  return {std::move(train), std::move(holdout)};
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ValidationError("epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
  if (patience && *patience < 1) throw ValidationError("patience must be >= 1 when set");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw ValidationError("holdout fraction must lie in (0, 1)");
  }
}

double Objective::full_loss(const NetParams& params) const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), 0);
  return loss(params, idx);
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, std::span<const std::size_t> idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

double sum_squared_misfit(const Eigen::MatrixXd& targets, const Eigen::MatrixXd& outputs) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < targets.rows(); ++r) {
    double row = 0.0;
    for (Eigen::Index c = 0; c < targets.cols(); ++c) {
      const double e = targets(r, c) - outputs(r, c);
      row += e * e;
    }
    total += row;
  }
  return total;
}

Eigen::MatrixXd misfit_gradient(const Eigen::MatrixXd& targets, const Eigen::MatrixXd& outputs,
                                std::size_t batch) {
  const double scale = -2.0 / static_cast<double>(batch);
  return scale * (targets - outputs);
}

OneStepObjective::OneStepObjective(Eigen::MatrixXd inputs, Eigen::MatrixXd targets)
    : inputs_(std::move(inputs)), targets_(std::move(targets)) {
  if (inputs_.rows() != targets_.rows() || inputs_.cols() != targets_.cols()) {
    throw ValidationError("objective inputs and targets differ in shape");
  }
}

double OneStepObjective::loss_and_grad(const NetParams& params, std::span<const std::size_t> idx,
                                       int first_layer, Gradients& grads) const {
  const Eigen::MatrixXd x = gather_rows(inputs_, idx);
  const Eigen::MatrixXd t = gather_rows(targets_, idx);
  ForwardCache cache;
  const Eigen::MatrixXd y = forward_batch(params, x, &cache);
  grads = backward(params, cache, misfit_gradient(t, y, idx.size()), first_layer, false);
  return sum_squared_misfit(t, y) / static_cast<double>(idx.size());
}

double OneStepObjective::loss(const NetParams& params, std::span<const std::size_t> idx) const {
  const Eigen::MatrixXd x = gather_rows(inputs_, idx);
  const Eigen::MatrixXd t = gather_rows(targets_, idx);
  return sum_squared_misfit(t, forward_batch(params, x)) / static_cast<double>(idx.size());
}

LossHistory fit(NetParams& params, const Objective& train, const Objective* holdout, const FreezeSpec& freeze,
                const TrainConfig& cfg) {
  cfg.validate();
  params.validate();
  freeze.validate(params.arch);
  if (cfg.patience && !holdout) throw ValidationError("early stopping requires a holdout objective");
  const std::size_t n = train.size();
  if (n == 0) throw ValidationError("cannot train on an empty dataset");
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);

  LossHistory history;
  AdamState adam = AdamState::for_params(params, cfg.lr);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  const bool early_stopping = cfg.patience.has_value();
  std::vector<Eigen::MatrixXd> best_layers;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;

  Gradients grads;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle && batch < n) {
      std::iota(order.begin(), order.end(), 0);
      Rng rng(cfg.seed, static_cast<std::uint64_t>(epoch));
      for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
    }
    double weighted = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t len = std::min(batch, n - start);
      const std::span<const std::size_t> idx(order.data() + start, len);
      const double loss = train.loss_and_grad(params, idx, freeze.split_index, grads);
      if (!std::isfinite(loss)) {
        throw TrainingError("divergent loss (non-finite) at epoch " + std::to_string(epoch));
      }
      adam_step(adam, params, grads, freeze);
      weighted += loss * static_cast<double>(len);
    }
    history.train.push_back(weighted / static_cast<double>(n));
    history.epochs_run = epoch + 1;

    if (early_stopping) {
      const double h = holdout->full_loss(params);
      if (!std::isfinite(h)) {
        throw TrainingError("divergent held-out loss (non-finite) at epoch " + std::to_string(epoch));
      }
      history.holdout.push_back(h);
      if (h < best_loss) {
        best_loss = h;
        best_layers = params.layers;
        history.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= *cfg.patience) {
        history.stopped_early = true;
        break;
      }
    }
  }
  if (early_stopping && !best_layers.empty()) {
    params.layers = std::move(best_layers);
  } else {
    history.best_epoch = history.epochs_run - 1;
  }
  return history;
}

TrainedNet train_prior(const Dataset& lf_data, const Architecture& arch, const TrainConfig& cfg) {
  if (lf_data.fidelity != Fidelity::Low) throw ValidationError("prior training expects a low-fidelity dataset");
  if (lf_data.size() == 0) throw ValidationError("prior training needs at least one pair");
  if (arch.input_dim != lf_data.dim()) {
    std::ostringstream os;
    os << "architecture input_dim " << arch.input_dim << " does not match data dimension " << lf_data.dim();
    throw ValidationError(os.str());
  }
  TrainedNet out{init_params(arch, cfg.seed), {}};
  const FreezeSpec all_trainable{0};
  if (cfg.patience) {
    auto [train, held] = split_holdout(lf_data, cfg.holdout_fraction, cfg.seed);
    const OneStepObjective train_obj(train.inputs(), train.outputs());
    const OneStepObjective held_obj(held.inputs(), held.outputs());
    out.history = fit(out.params, train_obj, &held_obj, all_trainable, cfg);
  } else {
    const OneStepObjective train_obj(lf_data.inputs(), lf_data.outputs());
    out.history = fit(out.params, train_obj, nullptr, all_trainable, cfg);
  }
  return out;
}

double dataset_mse(const NetParams& params, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  const OneStepObjective obj(data.inputs(), data.outputs());
  return obj.full_loss(params);
}

}  // namespace flowcorr
