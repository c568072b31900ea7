#include "flowcorr/dynsys.hpp"

#include "flowcorr/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace flowcorr {

namespace {

struct CatalogEntry {
  const char* name;
  SystemKind kind;
  int dim;
  int algebraic_dim;
  std::vector<std::string> params;
};

std::vector<std::string> metabolic_params(bool linearized) {
  std::vector<std::string> p;
  for (int i = 1; i <= 3; ++i) {
    const auto s = std::to_string(i);
    for (const char* base : {"V", "Ki", "ni", "Ka", "na", "k"}) p.push_back(base + s);
  }
  for (int i = 4; i <= 6; ++i) {
    const auto s = std::to_string(i);
    p.push_back("V" + s);
    if (!linearized) p.push_back("K" + s);
    p.push_back("k" + s);
  }
  for (int i = 1; i <= 3; ++i) p.push_back("kcat" + std::to_string(i));
  for (int i = 1; i <= 6; ++i) {
    if (linearized && i % 2 == 0) continue;  // Km2, Km4, Km6 only enter the saturating denominators
    p.push_back("Km" + std::to_string(i));
  }
  p.push_back("S");
  p.push_back("P");
  return p;
}

const std::vector<CatalogEntry>& catalog() {
  static const std::vector<CatalogEntry> entries = {
      {"exponential", SystemKind::Exponential, 1, 0, {"rate"}},
      {"harmonic-oscillator", SystemKind::HarmonicOscillator, 2, 0, {"beta"}},
      {"damped-pendulum", SystemKind::DampedPendulum, 2, 0, {"alpha", "beta"}},
      {"duffing", SystemKind::Duffing, 2, 0, {"epsilon"}},
      {"van-der-pol", SystemKind::VanDerPol, 2, 0, {"mu"}},
      {"seir", SystemKind::Seir, 4, 0, {"mu", "beta", "sigma", "gamma"}},
      {"seir-literal", SystemKind::SeirLiteral, 4, 0, {"mu", "beta", "sigma", "gamma"}},
      {"metabolic", SystemKind::Metabolic, 8, 0, metabolic_params(false)},
      {"metabolic-linearized", SystemKind::MetabolicLinearized, 8, 0, metabolic_params(true)},
      {"dae-circuit", SystemKind::DaeCircuit, 4, 2, {"C", "L", "U0", "G0", "Ginf"}},
      {"dae-circuit-cubic", SystemKind::DaeCircuitCubic, 4, 2, {"C", "L", "U0", "G0", "Ginf"}},
  };
  return entries;
}

const CatalogEntry& lookup(std::string_view name) {
  for (const auto& e : catalog()) {
    if (name == e.name) return e;
  }
  throw ValidationError("unknown system '" + std::string(name) + "'");
}

// Coefficient slots for the metabolic kinetics, 1-based to match the symbols.
struct MetabolicCoeffs {
  double V[7], Ki[4], ni[4], Ka[4], na[4], k[7], K[7], kcat[4], Km[7], S, P;
};

// Positional unpack; the slot order is the one produced by metabolic_params().
MetabolicCoeffs unpack_metabolic(const std::vector<double>& c, bool linear) {
  MetabolicCoeffs m{};
  std::size_t at = 0;
  for (int i = 1; i <= 3; ++i) {
    m.V[i] = c[at++];
    m.Ki[i] = c[at++];
    m.ni[i] = c[at++];
    m.Ka[i] = c[at++];
    m.na[i] = c[at++];
    m.k[i] = c[at++];
  }
  for (int i = 4; i <= 6; ++i) {
    m.V[i] = c[at++];
    if (!linear) m.K[i] = c[at++];
    m.k[i] = c[at++];
  }
  for (int i = 1; i <= 3; ++i) m.kcat[i] = c[at++];
  for (int i = 1; i <= 6; ++i) {
    if (linear && i % 2 == 0) continue;
    m.Km[i] = c[at++];
  }
  m.S = c[at++];
  m.P = c[at++];
  return m;
}

void metabolic_rhs(const MetabolicCoeffs& c, bool linear, const double* x, double* dx) {
  const double G[4] = {0, x[0], x[1], x[2]};
  const double E[4] = {0, x[3], x[4], x[5]};
  const double M1 = x[6];
  const double M2 = x[7];
  const double activator[4] = {0, c.S, M1, M2};
  for (int i = 1; i <= 3; ++i) {
    const double denom =
        1.0 + std::pow(c.P / c.Ki[i], c.ni[i]) + std::pow(c.Ka[i] / activator[i], c.na[i]);
    dx[i - 1] = c.V[i] / denom - c.k[i] * G[i];
  }
  for (int i = 1; i <= 3; ++i) {
    const double production = linear ? c.V[i + 3] * G[i] : c.V[i + 3] * G[i] / (c.K[i + 3] + G[i]);
    dx[i + 2] = production + c.k[i + 3] * E[i];
  }
  double flux1 = c.kcat[1] * E[1] / c.Km[1] * (c.S - M1);
  double flux2 = c.kcat[2] * E[2] / c.Km[3] * (M1 - M2);
  double flux3 = c.kcat[3] * E[3] / c.Km[5] * (M2 - c.P);
  if (!linear) {
    flux1 /= 1.0 + c.S / c.Km[1] + M1 / c.Km[2];
    flux2 /= 1.0 + M1 / c.Km[3] + M2 / c.Km[4];
    flux3 /= 1.0 + M2 / c.Km[5] + c.P / c.Km[6];
  }
  dx[6] = flux1 - flux2;
  dx[7] = flux2 - flux3;
}

// v1 from the conductance relation; coeffs are C, L, U0, G0, Ginf.
double dae_v1(const std::vector<double>& c, SystemKind kind, double u1) {
  const double U0 = c[2], G0 = c[3], Ginf = c[4];
  const double shape = kind == SystemKind::DaeCircuit ? std::tanh(u1) : u1 - u1 * u1 * u1;
  return (G0 - Ginf) * U0 * shape + Ginf * u1;
}

// Derivative of the differential components only.
void differential_rhs(const SystemSpec& s, const double* x, double* dx) {
  const auto& c = s.coefficients();
  switch (s.kind()) {
    case SystemKind::Exponential:
      dx[0] = c[0] * x[0];
      return;
    case SystemKind::HarmonicOscillator:
      dx[0] = x[1];
      dx[1] = -c[0] * x[0];
      return;
    case SystemKind::DampedPendulum:
      dx[0] = x[1];
      dx[1] = -c[0] * x[1] - c[1] * std::sin(x[0]);
      return;
    case SystemKind::Duffing:
      dx[0] = x[1];
      dx[1] = -x[0] - c[0] * x[0] * x[0] * x[0];
      return;
    case SystemKind::VanDerPol:
      dx[0] = x[1];
      dx[1] = c[0] * (1.0 - x[0] * x[0]) * x[1] - x[0];
      return;
    case SystemKind::Seir:
    case SystemKind::SeirLiteral: {
      const double mu = c[0], beta = c[1], sigma = c[2], gamma = c[3];
      const double S = x[0], E = x[1], I = x[2], R = x[3];
      const double source = s.kind() == SystemKind::Seir ? E : I;
      dx[0] = mu * (1.0 - S) - beta * S * I;
      dx[1] = beta * S * I - (mu + sigma) * E;
      dx[2] = sigma * source - (mu + gamma) * I;
      dx[3] = gamma * I - mu * R;
      return;
    }
    case SystemKind::Metabolic:
    case SystemKind::MetabolicLinearized: {
      const bool linear = s.kind() == SystemKind::MetabolicLinearized;
      metabolic_rhs(unpack_metabolic(c, linear), linear, x, dx);
      return;
    }
    case SystemKind::DaeCircuit:
    case SystemKind::DaeCircuitCubic: {
      const double C = c[0], L = c[1];
      const double v1 = dae_v1(c, s.kind(), x[0]);
      const double v2 = -x[1] - v1;
      dx[0] = v2 / C;
      dx[1] = x[0] / L;
      return;
    }
  }
}

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

}  // namespace

double SystemSpec::param(const std::string& key) const {
  auto it = params_.find(key);
  if (it == params_.end()) {
    throw ValidationError("system '" + name_ + "' has no parameter '" + key + "'");
  }
  return it->second;
}

SystemSpec make_system(std::string_view name, const std::map<std::string, double>& params) {
  const CatalogEntry& entry = lookup(name);
  for (const auto& [key, value] : params) {
    if (std::find(entry.params.begin(), entry.params.end(), key) == entry.params.end()) {
      throw ValidationError("system '" + std::string(name) + "' has no parameter '" + key + "'");
    }
    if (!std::isfinite(value)) {
      throw ValidationError("system '" + std::string(name) + "': parameter '" + key + "' is not finite");
    }
  }
  SystemSpec spec;
  spec.name_ = entry.name;
  spec.kind_ = entry.kind;
  spec.dim_ = entry.dim;
  spec.algebraic_dim_ = entry.algebraic_dim;
  for (const auto& key : entry.params) {
    auto it = params.find(key);
    if (it == params.end()) {
      throw ValidationError("system '" + std::string(name) + "': missing parameter '" + key + "'");
    }
    spec.params_[key] = it->second;
    spec.coeffs_.push_back(it->second);
  }
  return spec;
}

std::vector<std::string> system_names() {
  std::vector<std::string> out;
  for (const auto& e : catalog()) out.emplace_back(e.name);
  return out;
}

std::vector<std::string> system_param_names(std::string_view name) { return lookup(name).params; }

void Domain::validate() const {
  if (lower.size() != upper.size() || lower.size() == 0) {
    throw ValidationError("domain bounds must be non-empty and of equal length");
  }
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    if (!(lower[i] < upper[i]) || !std::isfinite(lower[i]) || !std::isfinite(upper[i])) {
      std::ostringstream os;
      os << "domain component " << i << " is empty: [" << lower[i] << ", " << upper[i] << "]";
      throw ValidationError(os.str());
    }
  }
}

bool Domain::contains(const State& x) const {
  if (x.size() < lower.size()) return false;
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    if (!(x[i] >= lower[i] && x[i] <= upper[i])) return false;
  }
  return true;
}

Domain make_domain(std::vector<double> lower, std::vector<double> upper) {
  Domain d;
  d.lower = Eigen::Map<Eigen::VectorXd>(lower.data(), static_cast<Eigen::Index>(lower.size()));
  d.upper = Eigen::Map<Eigen::VectorXd>(upper.data(), static_cast<Eigen::Index>(upper.size()));
  d.validate();
  return d;
}

void reconstruct_algebraic(const SystemSpec& system, State& x) {
  if (system.algebraic_dim() == 0) return;
  const double v1 = dae_v1(system.coefficients(), system.kind(), x[0]);
  x[2] = v1;
  x[3] = -x[1] - v1;
}

Eigen::VectorXd algebraic_residuals(const SystemSpec& system, const State& x) {
  if (system.algebraic_dim() == 0) return {};
  Eigen::VectorXd r(2);
  r[0] = x[2] - dae_v1(system.coefficients(), system.kind(), x[0]);
  r[1] = x[3] + x[1] + x[2];
  return r;
}

State eval_rhs(const SystemSpec& system, const State& x) {
  if (x.size() != system.dim()) {
    std::ostringstream os;
    os << "system '" << system.name() << "' expects a state of dimension " << system.dim() << ", got "
       << x.size();
    throw ValidationError(os.str());
  }
  State dx(system.differential_dim());
  differential_rhs(system, x.data(), dx.data());
  return dx;
}

State step_rk4(const SystemSpec& system, const State& x, double h) {
  if (x.size() != system.dim()) {
    std::ostringstream os;
    os << "system '" << system.name() << "' expects a state of dimension " << system.dim() << ", got "
       << x.size();
    throw ValidationError(os.str());
  }
  if (!(h > 0.0)) throw ValidationError("RK4 step size must be positive");

  const int m = system.differential_dim();
  const Eigen::VectorXd y = x.head(m);
  Eigen::VectorXd k1(m), k2(m), k3(m), k4(m), tmp(m);
  differential_rhs(system, y.data(), k1.data());
  tmp = y + 0.5 * h * k1;
  differential_rhs(system, tmp.data(), k2.data());
  tmp = y + 0.5 * h * k2;
  differential_rhs(system, tmp.data(), k3.data());
  tmp = y + h * k3;
  differential_rhs(system, tmp.data(), k4.data());

  State out = x;
  out.head(m) = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  reconstruct_algebraic(system, out);
  if (!all_finite(k1) || !all_finite(k2) || !all_finite(k3) || !all_finite(k4) || !all_finite(out)) {
    std::ostringstream os;
    os << "system '" << system.name() << "': non-finite value in RK4 step (h=" << h << ")";
    throw IntegrationError(os.str());
  }
  return out;
}

State flow_map(const SystemSpec& system, const State& x0, double lag, int substeps) {
  if (!(lag > 0.0)) throw ValidationError("flow-map lag must be positive");
  if (substeps < 1) throw ValidationError("flow-map substeps must be >= 1");
  const double h = lag / substeps;
  State x = x0;
  for (int i = 0; i < substeps; ++i) {
    try {
      x = step_rk4(system, x, h);
    } catch (const IntegrationError& e) {
      throw IntegrationError(std::string(e.what()) + " at substep " + std::to_string(i));
    }
  }
  return x;
}

}  // namespace flowcorr
