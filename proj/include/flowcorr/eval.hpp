#pragma once

// Rollouts of one-step predictors and ensemble error curves against a
// finely integrated reference.

#include "flowcorr/correction.hpp"
#include "flowcorr/dynsys.hpp"
#include "flowcorr/fml.hpp"
#include "flowcorr/nnet.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <variant>
#include <vector>

namespace flowcorr {

struct ReferenceModel {
  SystemSpec system;
  int substeps = 10;
};

/// A map advancing a state by one step of `step` time units.
struct Predictor {
  std::variant<NetParams, GResNetModel, ReferenceModel> model;
  double step = 0.0;

  static Predictor net(NetParams params, double step);
  static Predictor gresnet(GResNetModel model);
  static Predictor reference(SystemSpec system, double step, int substeps = 10);

  [[nodiscard]] State advance(const State& x) const;
  [[nodiscard]] int dim() const;
};

/// States are admitted while finite and inside [lower, upper] on the leading
/// (differential) components.
struct GuardBox {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  [[nodiscard]] bool admits(const State& x) const;
};

/// Box around the domain's center, `factor` times its extent.
GuardBox default_guard(const Domain& domain, double factor = 10.0);

struct Trajectory {
  std::vector<State> states;  // states[0] = x0; shorter than requested when truncated
  bool truncated = false;
};

/// Iterates the predictor n_steps times. A state rejected by the guard (or
/// a failed reference step) ends the rollout; the rejected state is dropped.
/// Without a guard only non-finite states truncate.
Trajectory rollout(const Predictor& p, const State& x0, int n_steps, const GuardBox* guard = nullptr);

struct ErrorCurve {
  std::vector<double> times;
  std::vector<double> mean_l2;
  Eigen::MatrixXd per_component;  // times.size() x state dim, mean absolute error
  std::size_t trajectories = 0;
  std::size_t truncated = 0;

  [[nodiscard]] std::size_t size() const { return times.size(); }
};

/// Number of steps of size delta in horizon; throws unless horizon is an
/// integer multiple of delta.
int steps_for_horizon(double horizon, double delta);

/// n_traj initial states drawn with Rng(seed, i); see error_curve_from_initials.
ErrorCurve error_curve(const Predictor& model, const SystemSpec& truth, const Domain& domain, std::size_t n_traj,
                       double horizon, double delta, std::uint64_t seed, int substeps = 10,
                       InitialDraw draw = InitialDraw::Box);

/// Mean over the ensemble of ||x_hat_n - x_n||_2 per time index, with truth
/// from RK4 (`substeps` per delta). Model trajectories are guarded by
/// default_guard(domain); a truncated trajectory repeats its last valid error.
/// Throws IntegrationError naming the initial state if the truth blows up.
ErrorCurve error_curve_from_initials(const Predictor& model, const SystemSpec& truth, const Domain& domain,
                                     const std::vector<State>& initials, double horizon, double delta,
                                     int substeps = 10);

/// Mean of mean_l2 over all time indices.
double time_average(const ErrorCurve& curve);

/// Fraction of time indices n >= 1 at which a.mean_l2 < b.mean_l2.
double fraction_below(const ErrorCurve& a, const ErrorCurve& b);

/// `t,x_0..x_{n-1}`, one row per state.
void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj, double delta);
/// `t,mean_l2,comp_0..comp_{n-1}` (component columns only when present).
void write_error_csv(const std::filesystem::path& path, const ErrorCurve& curve);

Trajectory read_trajectory_csv(const std::filesystem::path& path);
ErrorCurve read_error_csv(const std::filesystem::path& path);

}  // namespace flowcorr
