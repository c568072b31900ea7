#include "flowcorr/eval.hpp"

#include "flowcorr/csv.hpp"
#include "flowcorr/errors.hpp"
#include "flowcorr/parallel.hpp"
#include "flowcorr/rng.hpp"

#include <cmath>
#include <sstream>

namespace flowcorr {

namespace {

std::string format_state(const State& x) {
  std::ostringstream os;
  os << "[";
  for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << format_double(x[i]);
  os << "]";
  return os.str();
}

}  // namespace

Predictor Predictor::net(NetParams params, double step) { return Predictor{std::move(params), step}; }

Predictor Predictor::gresnet(GResNetModel model) {
  const double lag = model.lag;
  return Predictor{std::move(model), lag};
}

Predictor Predictor::reference(SystemSpec system, double step, int substeps) {
  if (substeps < 1) throw ValidationError("reference predictor needs substeps >= 1");
  return Predictor{ReferenceModel{std::move(system), substeps}, step};
}

State Predictor::advance(const State& x) const {
  if (const auto* p = std::get_if<NetParams>(&model)) return predict(*p, x);
  if (const auto* g = std::get_if<GResNetModel>(&model)) return g->predict(x);
  const auto& r = std::get<ReferenceModel>(model);
  return flow_map(r.system, x, step, r.substeps);
}

int Predictor::dim() const {
  if (const auto* p = std::get_if<NetParams>(&model)) return p->arch.input_dim;
  if (const auto* g = std::get_if<GResNetModel>(&model)) return g->prior_system.dim();
  return std::get<ReferenceModel>(model).system.dim();
}

bool GuardBox::admits(const State& x) const {
  if (!x.allFinite()) return false;
  const Eigen::Index m = lower.size();
  if (x.size() < m) return false;
  return (x.head(m).array() >= lower.array()).all() && (x.head(m).array() <= upper.array()).all();
}

GuardBox default_guard(const Domain& domain, double factor) {
  const Eigen::VectorXd center = 0.5 * (domain.lower + domain.upper);
  const Eigen::VectorXd half = 0.5 * (domain.upper - domain.lower);
  return GuardBox{center - factor * half, center + factor * half};
}

Trajectory rollout(const Predictor& p, const State& x0, int n_steps, const GuardBox* guard) {
  if (n_steps < 0) throw ValidationError("rollout needs n_steps >= 0");
  Trajectory t;
  t.states.reserve(static_cast<std::size_t>(n_steps) + 1);
  t.states.push_back(x0);
  for (int n = 0; n < n_steps; ++n) {
    State next;
    try {
      next = p.advance(t.states.back());
    } catch (const IntegrationError&) {
      t.truncated = true;
      break;
    }
    const bool ok = guard ? guard->admits(next) : next.allFinite();
    if (!ok) {
      t.truncated = true;
      break;
    }
    t.states.push_back(std::move(next));
  }
  return t;
}

int steps_for_horizon(double horizon, double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta)) throw ValidationError("time step must be positive");
  if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw ValidationError("horizon must be nonnegative");
  const double ratio = horizon / delta;
  const double n = std::round(ratio);
  if (std::abs(ratio - n) > 1e-9 * std::max(1.0, ratio)) {
    std::ostringstream os;
    os << "horizon " << horizon << " is not a multiple of the step " << delta;
    throw ValidationError(os.str());
  }
  return static_cast<int>(n);
}

ErrorCurve error_curve(const Predictor& model, const SystemSpec& truth, const Domain& domain, std::size_t n_traj,
                       double horizon, double delta, std::uint64_t seed, int substeps, InitialDraw draw) {
  if (n_traj < 1) throw ValidationError("error curve needs at least one trajectory");
  domain.validate();
  if (domain.dim() != truth.differential_dim()) throw ValidationError("domain does not match the truth system");
  std::vector<State> initials(n_traj);
  for (std::size_t i = 0; i < n_traj; ++i) {
    Rng rng(seed, i);
    initials[i] = draw_initial_state(truth, domain, draw, rng);
  }
  return error_curve_from_initials(model, truth, domain, initials, horizon, delta, substeps);
}

ErrorCurve error_curve_from_initials(const Predictor& model, const SystemSpec& truth, const Domain& domain,
                                     const std::vector<State>& initials, double horizon, double delta,
                                     int substeps) {
  if (initials.empty()) throw ValidationError("error curve needs at least one trajectory");
  const int n_steps = steps_for_horizon(horizon, delta);
  if (std::abs(model.step - delta) > 1e-12 * delta) {
    std::ostringstream os;
    os << "predictor step " << model.step << " differs from the evaluation step " << delta;
    throw ValidationError(os.str());
  }
  if (model.dim() != truth.dim()) throw ValidationError("predictor and truth system differ in state dimension");
  const int dim = truth.dim();
  const GuardBox guard = default_guard(domain);
  const Predictor reference = Predictor::reference(truth, delta, substeps);
  const auto len = static_cast<Eigen::Index>(n_steps) + 1;

  struct PerTrajectory {
    Eigen::VectorXd l2;
    Eigen::MatrixXd abs;
    bool truncated = false;
  };
  std::vector<PerTrajectory> parts(initials.size());
  parallel_for(initials.size(), [&](std::size_t i) {
    const State& x0 = initials[i];
    std::vector<State> exact;
    exact.reserve(static_cast<std::size_t>(len));
    exact.push_back(x0);
    try {
      for (int n = 0; n < n_steps; ++n) exact.push_back(reference.advance(exact.back()));
    } catch (const IntegrationError& e) {
      throw IntegrationError("reference trajectory from initial state " + format_state(x0) + " failed: " + e.what());
    }
    const Trajectory approx = rollout(model, x0, n_steps, &guard);
    PerTrajectory& out = parts[i];
    out.truncated = approx.truncated;
    out.l2.resize(len);
    out.abs.resize(len, dim);
    for (Eigen::Index n = 0; n < len; ++n) {
      const auto last = std::min<std::size_t>(static_cast<std::size_t>(n), approx.states.size() - 1);
      const Eigen::VectorXd diff = approx.states[last] - exact[static_cast<std::size_t>(last)];
      // Past truncation the last valid error is held.
      out.l2[n] = diff.norm();
      out.abs.row(n) = diff.cwiseAbs().transpose();
    }
  });

  ErrorCurve curve;
  curve.trajectories = initials.size();
  Eigen::VectorXd l2_sum = Eigen::VectorXd::Zero(len);
  curve.per_component = Eigen::MatrixXd::Zero(len, dim);
  for (const auto& part : parts) {
    l2_sum += part.l2;
    curve.per_component += part.abs;
    if (part.truncated) ++curve.truncated;
  }
  const double count = static_cast<double>(initials.size());
  curve.per_component /= count;
  curve.times.resize(static_cast<std::size_t>(len));
  curve.mean_l2.resize(static_cast<std::size_t>(len));
  for (Eigen::Index n = 0; n < len; ++n) {
    curve.times[static_cast<std::size_t>(n)] = static_cast<double>(n) * delta;
    curve.mean_l2[static_cast<std::size_t>(n)] = l2_sum[n] / count;
  }
  return curve;
}

double time_average(const ErrorCurve& curve) {
  if (curve.mean_l2.empty()) return 0.0;
  double s = 0.0;
  for (double v : curve.mean_l2) s += v;
  return s / static_cast<double>(curve.mean_l2.size());
}

double fraction_below(const ErrorCurve& a, const ErrorCurve& b) {
  if (a.size() != b.size()) throw ValidationError("error curves differ in length");
  if (a.size() < 2) return 1.0;
  std::size_t below = 0;
  for (std::size_t n = 1; n < a.size(); ++n) {
    if (a.mean_l2[n] < b.mean_l2[n]) ++below;
  }
  return static_cast<double>(below) / static_cast<double>(a.size() - 1);
}

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj, double delta) {
  CsvTable t;
  t.header.push_back("t");
  const Eigen::Index dim = traj.states.empty() ? 0 : traj.states.front().size();
  for (Eigen::Index i = 0; i < dim; ++i) t.header.push_back("x_" + std::to_string(i));
  for (std::size_t n = 0; n < traj.states.size(); ++n) {
    std::vector<double> row{static_cast<double>(n) * delta};
    for (Eigen::Index i = 0; i < dim; ++i) row.push_back(traj.states[n][i]);
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

void write_error_csv(const std::filesystem::path& path, const ErrorCurve& curve) {
  CsvTable t;
  t.header = {"t", "mean_l2"};
  const bool comps = curve.per_component.rows() == static_cast<Eigen::Index>(curve.size()) &&
                     curve.per_component.cols() > 0;
  if (comps) {
    for (Eigen::Index i = 0; i < curve.per_component.cols(); ++i) t.header.push_back("comp_" + std::to_string(i));
  }
  for (std::size_t n = 0; n < curve.size(); ++n) {
    std::vector<double> row{curve.times[n], curve.mean_l2[n]};
    if (comps) {
      for (Eigen::Index i = 0; i < curve.per_component.cols(); ++i) {
        row.push_back(curve.per_component(static_cast<Eigen::Index>(n), i));
      }
    }
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  if (t.header.empty() || t.header.front() != "t") throw IoError(path.string() + ": not a trajectory CSV");
  Trajectory traj;
  const auto dim = static_cast<Eigen::Index>(t.header.size() - 1);
  for (const auto& row : t.rows) {
    State x(dim);
    for (Eigen::Index i = 0; i < dim; ++i) x[i] = row[static_cast<std::size_t>(i) + 1];
    traj.states.push_back(std::move(x));
  }
  return traj;
}

ErrorCurve read_error_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  if (t.header.size() < 2 || t.header[0] != "t" || t.header[1] != "mean_l2") {
    throw IoError(path.string() + ": not an error-curve CSV");
  }
  ErrorCurve c;
  const auto comps = static_cast<Eigen::Index>(t.header.size() - 2);
  c.per_component.resize(static_cast<Eigen::Index>(t.rows.size()), comps);
  for (std::size_t n = 0; n < t.rows.size(); ++n) {
    c.times.push_back(t.rows[n][0]);
    c.mean_l2.push_back(t.rows[n][1]);
    for (Eigen::Index i = 0; i < comps; ++i) {
      c.per_component(static_cast<Eigen::Index>(n), i) = t.rows[n][static_cast<std::size_t>(i) + 2];
    }
  }
  return c;
}

}  // namespace flowcorr
