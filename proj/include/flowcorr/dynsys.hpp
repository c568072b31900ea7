#pragma once

// Catalog of autonomous ODE / explicit-DAE systems and fixed-step RK4
// integration used to sample their flow maps.

#include <Eigen/Dense>

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace flowcorr {

using State = Eigen::VectorXd;

enum class SystemKind {
  Exponential,         // x' = rate * x (scalar; test fixture)
  HarmonicOscillator,  // x1' = x2, x2' = -beta x1
  DampedPendulum,      // x1' = x2, x2' = -alpha x2 - beta sin x1
  Duffing,             // x1' = x2, x2' = -x1 - epsilon x1^3
  VanDerPol,           // x1' = x2, x2' = mu (1 - x1^2) x2 - x1
  Seir,                // I' = sigma E - (mu + gamma) I
  SeirLiteral,         // I' = sigma I - (mu + gamma) I, alternative incidence term
  Metabolic,           // three-step pathway, Michaelis-Menten kinetics
  MetabolicLinearized, // same with linearized enzyme/metabolite kinetics
  DaeCircuit,          // electric network with tanh conductance
  DaeCircuitCubic,     // cubic Taylor truncation of the tanh
};

/// An immutable system definition. Parameters are resolved into a flat
/// coefficient table at construction so the right-hand side does no lookups.
class SystemSpec {
 public:
  [[nodiscard]] const std::string& name() const { return name_; }
  [[nodiscard]] SystemKind kind() const { return kind_; }
  [[nodiscard]] int dim() const { return dim_; }
  /// Trailing components defined by explicit algebraic substitution.
  [[nodiscard]] int algebraic_dim() const { return algebraic_dim_; }
  [[nodiscard]] int differential_dim() const { return dim_ - algebraic_dim_; }
  [[nodiscard]] const std::map<std::string, double>& params() const { return params_; }
  [[nodiscard]] double param(const std::string& key) const;
  [[nodiscard]] const std::vector<double>& coefficients() const { return coeffs_; }

  friend SystemSpec make_system(std::string_view name, const std::map<std::string, double>& params);

 private:
  std::string name_;
  SystemKind kind_{SystemKind::Exponential};
  int dim_ = 0;
  int algebraic_dim_ = 0;
  std::map<std::string, double> params_;
  std::vector<double> coeffs_;
};

/// Builds a catalog system. Every parameter symbol of the system must be
/// supplied; missing or unknown parameter names and unknown systems are
/// rejected with ValidationError.
SystemSpec make_system(std::string_view name, const std::map<std::string, double>& params = {});

/// Every name accepted by make_system.
std::vector<std::string> system_names();

/// Parameter symbols appearing in the named system's equations, in the order
/// of its coefficient table.
std::vector<std::string> system_param_names(std::string_view name);

/// Axis-aligned box over the differential components of a state.
struct Domain {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  [[nodiscard]] int dim() const { return static_cast<int>(lower.size()); }
  /// Throws ValidationError unless lower < upper component-wise.
  void validate() const;
  [[nodiscard]] bool contains(const State& x) const;
};

Domain make_domain(std::vector<double> lower, std::vector<double> upper);

/// Recomputes the algebraic components of x from its differential ones.
/// No-op for pure ODEs.
void reconstruct_algebraic(const SystemSpec& system, State& x);

/// Residuals of the algebraic constraints at x (empty for pure ODEs).
Eigen::VectorXd algebraic_residuals(const SystemSpec& system, const State& x);

/// Time derivative of the differential components at x. Algebraic
/// components of x are ignored and recomputed from the differential ones.
State eval_rhs(const SystemSpec& system, const State& x);

/// One classical RK4 step of size h; algebraic components are reconstructed
/// after the step. Throws IntegrationError on non-finite values.
State step_rk4(const SystemSpec& system, const State& x, double h);

/// `substeps` RK4 steps of size lag/substeps.
State flow_map(const SystemSpec& system, const State& x0, double lag, int substeps);

}  // namespace flowcorr
