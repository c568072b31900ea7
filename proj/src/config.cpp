#include "flowcorr/config.hpp"

#include "flowcorr/csv.hpp"
#include "flowcorr/errors.hpp"
#include "flowcorr/eval.hpp"
#include "flowcorr/hash.hpp"
#include "flowcorr/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>

namespace flowcorr {

namespace {

constexpr double kPi = std::numbers::pi;

enum SeedStream : std::uint64_t { kLfData = 1, kHfData = 2, kPrior = 3, kCorrection = 4, kEvaluation = 5 };

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double to_double(const std::string& s) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ValidationError("'" + s + "' is not a finite number");
  }
  return v;
}

long long to_integer(const std::string& s) {
  long long v = 0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end) throw ValidationError("'" + s + "' is not an integer");
  return v;
}

std::size_t to_count(const std::string& s) {
  const long long v = to_integer(s);
  if (v < 0) throw ValidationError("'" + s + "' must be nonnegative");
  return static_cast<std::size_t>(v);
}

int to_int(const std::string& s) {
  const long long v = to_integer(s);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ValidationError("'" + s + "' is out of range");
  }
  return static_cast<int>(v);
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end) throw ValidationError("'" + s + "' is not an unsigned 64-bit integer");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  throw ValidationError("'" + s + "' is not a boolean");
}

std::optional<int> to_patience(const std::string& s) {
  if (s == "none" || s == "off") return std::nullopt;
  return to_int(s);
}

Eigen::VectorXd to_vector(const std::string& s) {
  const auto parts = split(s, ',');
  Eigen::VectorXd v(static_cast<Eigen::Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i) v[static_cast<Eigen::Index>(i)] = to_double(parts[i]);
  return v;
}

std::string join(const Eigen::VectorXd& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_double(v[i]);
  return out;
}

std::vector<double> expand_values(std::string_view spec) {
  const std::string s = trim(spec);
  if (s.empty()) throw ValidationError("empty lag specification");
  if (s.find(':') != std::string::npos) {
    const auto parts = split(s, ':');
    if (parts.size() != 3) throw ValidationError("lag range must be start:step:stop");
    const double a = to_double(parts[0]);
    const double h = to_double(parts[1]);
    const double b = to_double(parts[2]);
    if (!(h > 0.0) || b < a) throw ValidationError("lag range needs step > 0 and stop >= start");
    const double span = (b - a) / h;
    const double n = std::round(span);
    if (std::abs(span - n) > 1e-9 * std::max(1.0, span)) throw ValidationError("lag range stop is not start + n*step");
    std::vector<double> out;
    for (long i = 0; i <= static_cast<long>(n); ++i) out.push_back(a + static_cast<double>(i) * h);
    return out;
  }
  std::vector<double> out;
  for (const auto& p : split(s, ',')) out.push_back(to_double(p));
  return out;
}

LagDistribution make_lags(const std::vector<int>& ks) {
  LagDistribution d;
  d.support = ks;
  std::sort(d.support.begin(), d.support.end());
  d.support.erase(std::unique(d.support.begin(), d.support.end()), d.support.end());
  d.validate();
  return d;
}

std::map<std::string, double> metabolic_values(bool prior) {
  std::map<std::string, double> p;
  for (int i = 1; i <= 3; ++i) {
    const auto s = std::to_string(i);
    p["V" + s] = 1.0;
    p["Ki" + s] = 1.0;
    p["Ka" + s] = 1.0;
    p["ni" + s] = prior ? 1.0 : 2.0;
    p["na" + s] = prior ? 1.0 : 2.0;
    p["k" + s] = 1.0;
    p["kcat" + s] = 1.0;
  }
  for (int i = 4; i <= 6; ++i) {
    const auto s = std::to_string(i);
    p["V" + s] = 0.1;
    if (!prior) p["K" + s] = 1.0;
    p["k" + s] = 0.1;
  }
  for (int i = 1; i <= 6; ++i) {
    if (prior && i % 2 == 0) continue;
    p["Km" + std::to_string(i)] = 1.0;
  }
  p["S"] = 1.0;
  p["P"] = 0.5;
  return p;
}

// Fields shared by every preset before per-experiment overrides.
ExperimentConfig base_preset(std::string name) {
  ExperimentConfig c;
  c.experiment = name;
  c.preset = std::move(name);
  c.seed = 1;
  c.network = Architecture{2, 3, 50, Activation::Tanh, true};
  c.prior_training.epochs = 10000;
  c.prior_training.batch_size = 100;
  c.prior_training.lr = 1e-3;
  c.correction.method = CorrectionMethod::TlAdam;
  c.correction.split_index = 3;
  c.correction.train.epochs = 5000;
  c.correction.train.batch_size = 100;
  c.correction.train.lr = 1e-3;
  c.correction.train.patience = 1000;
  c.evaluation = {100, 100.0};
  return c;
}

void make_coarse(ExperimentConfig& c, int k_lo, int k_hi) {
  c.network.hidden_layers = 5;
  c.network.hidden_width = 50;
  c.prior_training.patience = 1000;
  c.correction.method = CorrectionMethod::TlRecurrent;
  c.correction.split_index = 4;
  c.data.hf_count = 500;
  std::vector<int> ks;
  for (int k = k_lo; k <= k_hi; ++k) ks.push_back(k);
  c.data.hf_lags = make_lags(ks);
}

using PresetFn = std::function<ExperimentConfig()>;

const std::vector<std::pair<std::string, PresetFn>>& preset_table() {
  static const std::vector<std::pair<std::string, PresetFn>> table = {
      {"damped-pendulum",
       [] {
         auto c = base_preset("damped-pendulum");
         c.true_system = {"damped-pendulum", {{"alpha", 0.1}, {"beta", 9.0}}};
         c.prior_system = {"harmonic-oscillator", {{"beta", 9.0}}};
         c.data.domain = make_domain({-kPi, -2 * kPi}, {kPi, 2 * kPi});
         c.data.fine_step = 0.1;
         c.data.lf_count = 30000;
         c.data.hf_count = 250;
         return c;
       }},
      {"duffing",
       [] {
         auto c = base_preset("duffing");
         c.true_system = {"duffing", {{"epsilon", 0.05}}};
         c.prior_system = {"harmonic-oscillator", {{"beta", 1.0}}};
         c.data.domain = make_domain({0.0, 0.0}, {3.0, 3.0});
         c.data.fine_step = 0.1;
         c.data.lf_count = 30000;
         c.data.hf_count = 500;
         c.data.lf_sampling = c.data.hf_sampling = SamplingMode::TrajectoryWindow;
         c.data.trajectory_time = 12.0;
         return c;
       }},
      {"seir",
       [] {
         auto c = base_preset("seir");
         c.true_system = {"seir", {{"mu", 0.1792}, {"beta", 0.8669}, {"sigma", 0.3562}, {"gamma", 0.2235}}};
         c.prior_system = {"seir", {{"mu", 0.3}, {"beta", 0.9}, {"sigma", 0.5}, {"gamma", 0.2}}};
         c.network.input_dim = 4;
         c.data.domain = make_domain({0, 0, 0, 0}, {1, 1, 1, 1});
         c.data.fine_step = 0.2;
         c.data.lf_count = 30000;
         c.data.hf_count = 250;
         c.data.lf_sampling = c.data.hf_sampling = SamplingMode::TrajectoryWindow;
         c.data.trajectory_time = 5.0;
         c.data.initial_draw = InitialDraw::Simplex;
         c.evaluation.horizon = 20.0;
         return c;
       }},
      {"metabolic",
       [] {
         auto c = base_preset("metabolic");
         c.true_system = {"metabolic", metabolic_values(false)};
         c.prior_system = {"metabolic-linearized", metabolic_values(true)};
         c.network.input_dim = 8;
         c.network.hidden_width = 80;
         c.prior_training.epochs = 20000;
         c.data.domain = make_domain(std::vector<double>(8, 0.0), std::vector<double>(8, 1.0));
         c.data.fine_step = 0.05;
         c.data.lf_count = 75000;
         c.data.hf_count = 750;
         c.data.lf_sampling = c.data.hf_sampling = SamplingMode::TrajectoryWindow;
         c.data.trajectory_time = 12.5;
         c.evaluation.horizon = 25.0;
         return c;
       }},
      {"damped-pendulum-coarse",
       [] {
         auto c = base_preset("damped-pendulum-coarse");
         c.true_system = {"damped-pendulum", {{"alpha", 0.1}, {"beta", 9.0}}};
         c.prior_system = {"harmonic-oscillator", {{"beta", 9.0}}};
         c.data.domain = make_domain({-2 * kPi, -kPi}, {2 * kPi, kPi});
         c.data.fine_step = 0.2;
         c.data.lf_count = 50000;
         make_coarse(c, 5, 50);
         return c;
       }},
      {"van-der-pol-coarse",
       [] {
         auto c = base_preset("van-der-pol-coarse");
         c.true_system = {"van-der-pol", {{"mu", 1.0}}};
         c.prior_system = {"van-der-pol", {{"mu", 0.5}}};
         c.data.domain = make_domain({-2.0, -1.5}, {2.0, 1.5});
         c.data.fine_step = 0.2;
         c.data.lf_count = 50000;
         c.data.lf_sampling = c.data.hf_sampling = SamplingMode::TrajectoryWindow;
         c.data.trajectory_time = 20.0;
         make_coarse(c, 5, 50);
         return c;
       }},
      {"dae-coarse",
       [] {
         auto c = base_preset("dae-coarse");
         const std::map<std::string, double> p{{"C", 1e-9}, {"L", 1e-6}, {"U0", 1.0}, {"G0", -0.1}, {"Ginf", 0.25}};
         c.true_system = {"dae-circuit", p};
         c.prior_system = {"dae-circuit-cubic", p};
         c.network.input_dim = 4;
         c.data.domain = make_domain({-2.0, -0.2}, {2.0, 0.2});
         c.data.fine_step = 5e-9;
         c.data.lf_count = 60000;
         c.data.lf_sampling = c.data.hf_sampling = SamplingMode::TrajectoryWindow;
         c.data.trajectory_time = 5e-7;
         make_coarse(c, 5, 30);
         c.evaluation.horizon = 2.5e-6;
         return c;
       }},
      {"metabolic-coarse",
       [] {
         auto c = base_preset("metabolic-coarse");
         c.true_system = {"metabolic", metabolic_values(false)};
         c.prior_system = {"metabolic-linearized", metabolic_values(true)};
         c.network.input_dim = 8;
         c.data.domain = make_domain(std::vector<double>(8, 0.0), std::vector<double>(8, 1.0));
         c.data.fine_step = 0.2;
         c.data.lf_count = 60000;
         c.data.lf_sampling = c.data.hf_sampling = SamplingMode::TrajectoryWindow;
         c.data.trajectory_time = 20.0;
         make_coarse(c, 5, 50);
         c.evaluation.horizon = 25.0;
         return c;
       }},
  };
  return table;
}

std::string field_error(const std::string& field, const std::string& what) { return field + ": " + what; }

void validate_train(const TrainConfig& t, const std::string& section) {
  try {
    t.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(field_error(section, e.what()));
  }
}

std::size_t scale_count(std::size_t n, double scale, std::size_t floor) {
  const auto scaled = static_cast<std::size_t>(std::llround(static_cast<double>(n) * scale));
  return std::min(n, std::max(floor, scaled));
}

int scale_epochs(int epochs, double scale) {
  return static_cast<int>(scale_count(static_cast<std::size_t>(epochs), scale, 200));
}

nlohmann::json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"lr", t.lr},
          {"patience", t.patience ? nlohmann::json(*t.patience) : nlohmann::json(nullptr)},
          {"shuffle", t.shuffle},
          {"holdout_fraction", t.holdout_fraction},
          {"seed", t.seed}};
}

nlohmann::json system_json(const SystemChoice& s) { return {{"name", s.name}, {"params", s.params}}; }

struct Entry {
  std::string section;
  std::string key;
  std::string value;
  int line = 0;
};

bool apply_training_key(TrainConfig& t, const std::string& key, const std::string& value) {
  if (key == "epochs") {
    t.epochs = to_int(value);
  } else if (key == "batch_size") {
    t.batch_size = to_int(value);
  } else if (key == "lr") {
    t.lr = to_double(value);
  } else if (key == "patience") {
    t.patience = to_patience(value);
  } else if (key == "shuffle") {
    t.shuffle = to_bool(value);
  } else if (key == "holdout_fraction") {
    t.holdout_fraction = to_double(value);
  } else {
    return false;
  }
  return true;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (experiment.empty()) throw ValidationError("experiment: missing");
  for (char ch : experiment) {
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.')) {
      throw ValidationError("experiment: name may only contain letters, digits, '-', '_' and '.'");
    }
  }
  if (!(scale > 0.0 && scale <= 1.0)) throw ValidationError("scale: must lie in (0, 1]");
  if (true_system.name.empty()) throw ValidationError("true_system.name: missing");
  if (prior_system.name.empty()) throw ValidationError("prior_system.name: missing");
  SystemSpec truth = [&] {
    try {
      return true_system.build();
    } catch (const ValidationError& e) {
      throw ValidationError(field_error("true_system", e.what()));
    }
  }();
  SystemSpec prior = [&] {
    try {
      return prior_system.build();
    } catch (const ValidationError& e) {
      throw ValidationError(field_error("prior_system", e.what()));
    }
  }();
  if (truth.dim() != prior.dim() || truth.algebraic_dim() != prior.algebraic_dim()) {
    throw ValidationError("prior_system: state layout differs from true_system");
  }
  try {
    data.domain.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(field_error("data.domain", e.what()));
  }
  if (data.domain.dim() != truth.differential_dim()) {
    std::ostringstream os;
    os << "has " << data.domain.dim() << " components, the system has " << truth.differential_dim();
    throw ValidationError(field_error("data.domain", os.str()));
  }
  if (data.initial_draw == InitialDraw::Simplex &&
      ((data.domain.lower.array() > 0.0).any() || (data.domain.upper.array() < 1.0).any())) {
    throw ValidationError("data.initial_draw: simplex sampling needs a domain containing [0,1]^n");
  }
  if (!(data.fine_step > 0.0)) throw ValidationError("data.fine_step: must be positive");
  if (data.lf_count < 1) throw ValidationError("data.lf_count: must be >= 1");
  if (data.hf_count < 1) throw ValidationError("data.hf_count: must be >= 1");
  if (data.substeps < 1) throw ValidationError("data.substeps: must be >= 1");
  try {
    data.hf_lags.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(field_error("data.lag_steps", e.what()));
  }
  const bool trajectories =
      data.lf_sampling == SamplingMode::TrajectoryWindow || data.hf_sampling == SamplingMode::TrajectoryWindow;
  if (trajectories) {
    const int needed = data.hf_sampling == SamplingMode::TrajectoryWindow ? data.hf_lags.max() : 1;
    if (std::floor(data.trajectory_time / data.fine_step + 1e-9) < needed) {
      throw ValidationError("data.trajectory_time: shorter than the largest lag");
    }
  }
  if (network.input_dim != truth.dim()) {
    throw ValidationError("network.input_dim: must equal the state dimension " + std::to_string(truth.dim()));
  }
  try {
    network.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(field_error("network", e.what()));
  }
  validate_train(prior_training, "prior_training");
  validate_train(correction.train, "correction");
  if (correction.split_index < 0 || correction.split_index > network.hidden_layers) {
    throw ValidationError("correction.split_index: must lie in [0, " + std::to_string(network.hidden_layers) + "]");
  }
  if (!(correction.ridge >= 0.0)) throw ValidationError("correction.ridge: must be nonnegative");
  if (data.hf_lags.max() > 1 && correction.method != CorrectionMethod::TlRecurrent) {
    throw ValidationError("correction.method: lag_steps above 1 require tl-recurrent, got " +
                          to_string(correction.method));
  }
  if (correction.method == CorrectionMethod::TlLsq && correction.split_index != network.hidden_layers) {
    throw ValidationError("correction.split_index: tl-lsq re-solves the output layer only; set it to " +
                          std::to_string(network.hidden_layers));
  }
  if (evaluation.trajectories < 1) throw ValidationError("evaluation.trajectories: must be >= 1");
  try {
    steps_for_horizon(evaluation.horizon, data.fine_step);
  } catch (const ValidationError& e) {
    throw ValidationError(field_error("evaluation.horizon", e.what()));
  }
}

ExperimentConfig ExperimentConfig::effective() const {
  ExperimentConfig c = *this;
  c.data.lf_count = scale_count(data.lf_count, scale, 1);
  c.data.hf_count = scale_count(data.hf_count, scale, 20);
  c.prior_training.epochs = scale_epochs(prior_training.epochs, scale);
  c.correction.train.epochs = scale_epochs(correction.train.epochs, scale);
  c.prior_training.seed = prior_seed();
  c.correction.train.seed = correction_seed();
  c.scale = 1.0;
  return c;
}

std::uint64_t ExperimentConfig::lf_seed() const { return derive_seed(seed, kLfData); }
std::uint64_t ExperimentConfig::hf_seed() const { return derive_seed(seed, kHfData); }
std::uint64_t ExperimentConfig::prior_seed() const { return derive_seed(seed, kPrior); }
std::uint64_t ExperimentConfig::correction_seed() const { return derive_seed(seed, kCorrection); }
std::uint64_t ExperimentConfig::evaluation_seed() const { return derive_seed(seed, kEvaluation); }

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& [name, fn] : preset_table()) out.push_back(name);
  return out;
}

ExperimentConfig make_preset(std::string_view name) {
  for (const auto& [n, fn] : preset_table()) {
    if (n == name) return fn();
  }
  std::string known;
  for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw ValidationError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

LagDistribution parse_lag_steps(std::string_view spec) {
  std::vector<int> ks;
  for (double v : expand_values(spec)) {
    if (v != std::round(v)) throw ValidationError("lag steps must be integers");
    ks.push_back(static_cast<int>(v));
  }
  return make_lags(ks);
}

LagDistribution parse_lag_times(std::string_view spec, double fine_step) {
  if (!(fine_step > 0.0)) throw ValidationError("lag times need a positive fine step");
  std::vector<int> ks;
  for (double v : expand_values(spec)) {
    const double ratio = v / fine_step;
    const double k = std::round(ratio);
    if (std::abs(ratio - k) > 1e-9 * std::max(1.0, ratio)) {
      throw ValidationError("lag time " + format_double(v) + " is not a multiple of the fine step");
    }
    ks.push_back(static_cast<int>(k));
  }
  return make_lags(ks);
}

ExperimentConfig parse_config_text(std::string_view text, const std::string& origin) {
  static const std::set<std::string> sections = {"",        "true_system",    "prior_system", "data",
                                                 "network", "prior_training", "correction",   "evaluation"};
  std::vector<Entry> entries;
  std::set<std::pair<std::string, std::string>> seen;
  std::string section;
  int line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  auto fail = [&](int line, const std::string& what) -> ValidationError {
    return ValidationError(origin + ":" + std::to_string(line) + ": " + what);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty() || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw fail(line_no, "malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!sections.count(section)) throw fail(line_no, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw fail(line_no, "expected key = value");
    Entry e{section, trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)),
            line_no};
    if (e.key.empty()) throw fail(line_no, "empty key");
    if (e.value.empty()) throw fail(line_no, "empty value for '" + e.key + "'");
    if (!seen.insert({e.section, e.key}).second) throw fail(line_no, "duplicate key '" + e.key + "'");
    entries.push_back(std::move(e));
  }

  // Preset first, then system names (which reset parameters), then the rest.
  auto rank = [](const Entry& e) {
    if (e.section.empty() && e.key == "preset") return 0;
    if ((e.section == "true_system" || e.section == "prior_system") && e.key == "name") return 1;
    return 2;
  };
  std::stable_sort(entries.begin(), entries.end(),
                   [&](const Entry& a, const Entry& b) { return rank(a) < rank(b); });

  ExperimentConfig c;
  c.network = Architecture{0, 3, 50, Activation::Tanh, true};
  bool have_preset = false;
  bool split_set = false;
  bool fine_step_set = false;
  bool lf_set = false, hf_set = false, domain_lo = false, domain_hi = false;
  std::optional<Entry> lag_times;
  std::optional<Entry> lag_steps;
  int preset_layers = c.network.hidden_layers;

  for (const Entry& e : entries) {
    try {
      const std::string& k = e.key;
      const std::string& v = e.value;
      if (e.section.empty()) {
        if (k == "preset") {
          c = make_preset(v);
          have_preset = true;
          preset_layers = c.network.hidden_layers;
        } else if (k == "experiment") {
          c.experiment = v;
        } else if (k == "seed") {
          c.seed = to_u64(v);
        } else if (k == "scale") {
          c.scale = to_double(v);
        } else {
          throw ValidationError("unknown key '" + k + "'");
        }
      } else if (e.section == "true_system" || e.section == "prior_system") {
        SystemChoice& s = e.section == "true_system" ? c.true_system : c.prior_system;
        if (k == "name") {
          const auto names = system_names();
          if (std::find(names.begin(), names.end(), v) == names.end()) {
            throw ValidationError("unknown system '" + v + "'");
          }
          if (v != s.name) s.params.clear();
          s.name = v;
        } else {
          if (s.name.empty()) throw ValidationError("parameter '" + k + "' given before the system name");
          const auto allowed = system_param_names(s.name);
          if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
            throw ValidationError("unknown parameter '" + k + "' for system '" + s.name + "'");
          }
          s.params[k] = to_double(v);
        }
      } else if (e.section == "data") {
        if (k == "domain_lower") {
          c.data.domain.lower = to_vector(v);
          domain_lo = true;
        } else if (k == "domain_upper") {
          c.data.domain.upper = to_vector(v);
          domain_hi = true;
        } else if (k == "fine_step") {
          c.data.fine_step = to_double(v);
          fine_step_set = true;
        } else if (k == "lf_count") {
          c.data.lf_count = to_count(v);
          lf_set = true;
        } else if (k == "hf_count") {
          c.data.hf_count = to_count(v);
          hf_set = true;
        } else if (k == "lag_steps") {
          lag_steps = e;
        } else if (k == "lag_times") {
          lag_times = e;
        } else if (k == "substeps") {
          c.data.substeps = to_int(v);
        } else if (k == "lf_sampling") {
          c.data.lf_sampling = parse_sampling_mode(v);
        } else if (k == "hf_sampling") {
          c.data.hf_sampling = parse_sampling_mode(v);
        } else if (k == "trajectory_time") {
          c.data.trajectory_time = to_double(v);
        } else if (k == "initial_draw") {
          c.data.initial_draw = parse_initial_draw(v);
        } else {
          throw ValidationError("unknown key '" + k + "'");
        }
      } else if (e.section == "network") {
        if (k == "hidden_layers") {
          c.network.hidden_layers = to_int(v);
        } else if (k == "hidden_width") {
          c.network.hidden_width = to_int(v);
        } else if (k == "activation") {
          c.network.activation = parse_activation(v);
        } else if (k == "residual") {
          c.network.residual = to_bool(v);
        } else {
          throw ValidationError("unknown key '" + k + "'");
        }
      } else if (e.section == "prior_training") {
        if (!apply_training_key(c.prior_training, k, v)) throw ValidationError("unknown key '" + k + "'");
      } else if (e.section == "correction") {
        if (k == "method") {
          c.correction.method = parse_correction_method(v);
        } else if (k == "split_index") {
          c.correction.split_index = to_int(v);
          split_set = true;
        } else if (k == "ridge") {
          c.correction.ridge = to_double(v);
        } else if (k == "cold_start") {
          c.correction.cold_start = to_bool(v);
        } else if (!apply_training_key(c.correction.train, k, v)) {
          throw ValidationError("unknown key '" + k + "'");
        }
      } else if (e.section == "evaluation") {
        if (k == "trajectories") {
          c.evaluation.trajectories = to_count(v);
        } else if (k == "horizon") {
          c.evaluation.horizon = to_double(v);
        } else {
          throw ValidationError("unknown key '" + k + "'");
        }
      }
    } catch (const ValidationError& err) {
      const std::string where = e.section.empty() ? e.key : e.section + "." + e.key;
      throw fail(e.line, where + ": " + err.what());
    }
  }

  if (lag_steps && lag_times) throw fail(lag_times->line, "give either lag_steps or lag_times, not both");
  try {
    if (lag_steps) c.data.hf_lags = parse_lag_steps(lag_steps->value);
    if (lag_times) c.data.hf_lags = parse_lag_times(lag_times->value, c.data.fine_step);
  } catch (const ValidationError& err) {
    const Entry& e = lag_steps ? *lag_steps : *lag_times;
    throw fail(e.line, "data." + e.key + ": " + err.what());
  }

  if (!have_preset) {
    const std::pair<bool, const char*> required[] = {
        {!c.experiment.empty(), "experiment"},       {!c.true_system.name.empty(), "true_system.name"},
        {!c.prior_system.name.empty(), "prior_system.name"}, {domain_lo, "data.domain_lower"},
        {domain_hi, "data.domain_upper"},            {fine_step_set, "data.fine_step"},
        {lf_set, "data.lf_count"},                   {hf_set, "data.hf_count"},
    };
    for (const auto& [ok, name] : required) {
      if (!ok) throw ValidationError(origin + ": missing required field " + name);
    }
  }
  // Keep the preset's distance between the split and the output layer when
  // only the depth is overridden.
  if (!split_set) {
    const int offset = have_preset ? preset_layers - c.correction.split_index : 0;
    c.correction.split_index = std::max(0, c.network.hidden_layers - offset);
  }
  if (!c.true_system.name.empty()) {
    try {
      c.network.input_dim = make_system(c.true_system.name, c.true_system.params).dim();
    } catch (const ValidationError&) {
      // reported with field context by validate()
    }
  }
  try {
    c.validate();
  } catch (const ValidationError& err) {
    throw ValidationError(origin + ": " + err.what());
  }
  return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError& e) {
    throw ValidationError(std::string("cannot read config: ") + e.what());
  }
  return parse_config_text(text, path.string());
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  const ExperimentConfig eff = cfg.effective();
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json j;
  j["experiment"] = cfg.experiment;
  j["preset"] = cfg.preset;
  j["seed"] = cfg.seed;
  j["scale"] = cfg.scale;
  j["true_system"] = system_json(cfg.true_system);
  j["prior_system"] = system_json(cfg.prior_system);
  j["data"] = {{"domain_lower", vec(cfg.data.domain.lower)},
               {"domain_upper", vec(cfg.data.domain.upper)},
               {"fine_step", cfg.data.fine_step},
               {"lf_count", cfg.data.lf_count},
               {"hf_count", cfg.data.hf_count},
               {"lag_steps", cfg.data.hf_lags.support},
               {"substeps", cfg.data.substeps},
               {"lf_sampling", to_string(cfg.data.lf_sampling)},
               {"hf_sampling", to_string(cfg.data.hf_sampling)},
               {"trajectory_time", cfg.data.trajectory_time},
               {"initial_draw", to_string(cfg.data.initial_draw)}};
  j["network"] = {{"input_dim", cfg.network.input_dim},
                  {"hidden_layers", cfg.network.hidden_layers},
                  {"hidden_width", cfg.network.hidden_width},
                  {"activation", to_string(cfg.network.activation)},
                  {"residual", cfg.network.residual}};
  j["prior_training"] = train_json(cfg.prior_training);
  j["correction"] = train_json(cfg.correction.train);
  j["correction"]["method"] = to_string(cfg.correction.method);
  j["correction"]["split_index"] = cfg.correction.split_index;
  j["correction"]["ridge"] = cfg.correction.ridge;
  j["correction"]["cold_start"] = cfg.correction.cold_start;
  j["evaluation"] = {{"trajectories", cfg.evaluation.trajectories},
                     {"horizon", cfg.evaluation.horizon},
                     {"guard_factor", 10.0},
                     {"truth_substeps", cfg.data.substeps}};
  j["effective"] = {{"lf_count", eff.data.lf_count},
                    {"hf_count", eff.data.hf_count},
                    {"prior_epochs", eff.prior_training.epochs},
                    {"correction_epochs", eff.correction.train.epochs}};
  j["seeds"] = {{"lf_data", cfg.lf_seed()},
                {"hf_data", cfg.hf_seed()},
                {"prior_training", cfg.prior_seed()},
                {"correction", cfg.correction_seed()},
                {"evaluation", cfg.evaluation_seed()}};
  return j;
}

std::string config_to_text(const ExperimentConfig& cfg) {
  std::ostringstream os;
  auto train = [&](const TrainConfig& t) {
    os << "epochs = " << t.epochs << "\n"
       << "batch_size = " << t.batch_size << "\n"
       << "lr = " << format_double(t.lr) << "\n"
       << "patience = " << (t.patience ? std::to_string(*t.patience) : "none") << "\n"
       << "shuffle = " << (t.shuffle ? "true" : "false") << "\n"
       << "holdout_fraction = " << format_double(t.holdout_fraction) << "\n";
  };
  auto system = [&](const char* name, const SystemChoice& s) {
    os << "\n[" << name << "]\nname = " << s.name << "\n";
    for (const auto& [k, v] : s.params) os << k << " = " << format_double(v) << "\n";
  };
  if (!cfg.preset.empty()) os << "preset = " << cfg.preset << "\n";
  os << "experiment = " << cfg.experiment << "\n"
     << "seed = " << cfg.seed << "\n"
     << "scale = " << format_double(cfg.scale) << "\n";
  system("true_system", cfg.true_system);
  system("prior_system", cfg.prior_system);
  std::string lags;
  for (int k : cfg.data.hf_lags.support) lags += (lags.empty() ? "" : ",") + std::to_string(k);
  os << "\n[data]\n"
     << "domain_lower = " << join(cfg.data.domain.lower) << "\n"
     << "domain_upper = " << join(cfg.data.domain.upper) << "\n"
     << "fine_step = " << format_double(cfg.data.fine_step) << "\n"
     << "lf_count = " << cfg.data.lf_count << "\n"
     << "hf_count = " << cfg.data.hf_count << "\n"
     << "lag_steps = " << lags << "\n"
     << "substeps = " << cfg.data.substeps << "\n"
     << "lf_sampling = " << to_string(cfg.data.lf_sampling) << "\n"
     << "hf_sampling = " << to_string(cfg.data.hf_sampling) << "\n"
     << "trajectory_time = " << format_double(cfg.data.trajectory_time) << "\n"
     << "initial_draw = " << to_string(cfg.data.initial_draw) << "\n";
  os << "\n[network]\n"
     << "hidden_layers = " << cfg.network.hidden_layers << "\n"
     << "hidden_width = " << cfg.network.hidden_width << "\n"
     << "activation = " << to_string(cfg.network.activation) << "\n"
     << "residual = " << (cfg.network.residual ? "true" : "false") << "\n";
  os << "\n[prior_training]\n";
  train(cfg.prior_training);
  os << "\n[correction]\n"
     << "method = " << to_string(cfg.correction.method) << "\n"
     << "split_index = " << cfg.correction.split_index << "\n"
     << "ridge = " << format_double(cfg.correction.ridge) << "\n"
     << "cold_start = " << (cfg.correction.cold_start ? "true" : "false") << "\n";
  train(cfg.correction.train);
  os << "\n[evaluation]\n"
     << "trajectories = " << cfg.evaluation.trajectories << "\n"
     << "horizon = " << format_double(cfg.evaluation.horizon) << "\n";
  return os.str();
}

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(config_to_json(cfg).dump()); }

}  // namespace flowcorr
