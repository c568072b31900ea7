#pragma once

// Shared oracles for the test suites. Nothing here calls into the library's
// integrator or gradient code, so comparisons against it are independent.

#include "flowcorr/nnet.hpp"
#include "flowcorr/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace testsupport {

using Vec = Eigen::VectorXd;
using Field = std::function<Vec(const Vec&)>;

inline Vec v(std::initializer_list<double> xs) {
  Vec out(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) out[i++] = x;
  return out;
}

/// Textbook RK4, written independently of the library.
inline Vec rk4(const Field& f, Vec x, double lag, int substeps) {
  const double h = lag / substeps;
  for (int s = 0; s < substeps; ++s) {
    const Vec a = f(x);
    const Vec b = f(x + 0.5 * h * a);
    const Vec c = f(x + 0.5 * h * b);
    const Vec d = f(x + h * c);
    x = x + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d);
  }
  return x;
}

/// Network with every weight and bias drawn uniformly from [-scale, scale].
inline flowcorr::NetParams random_net(const flowcorr::Architecture& arch, std::uint64_t seed, double scale = 0.5) {
  flowcorr::NetParams p = flowcorr::init_params(arch, seed);
  flowcorr::Rng rng(seed, 991);
  for (auto& w : p.layers) {
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-scale, scale);
  }
  return p;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double lo = -1.0,
                                     double hi = 1.0) {
  flowcorr::Rng rng(seed, 17);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

struct GradCheck {
  double max_rel = 0.0;
  double max_abs = 0.0;
  std::size_t checked = 0;
};

/// Five-point central differences of `loss` with respect to every entry of
/// layers [first, M], compared entry-wise against `analytic`. The relative
/// error uses max(|analytic|, |numeric|, floor) as denominator.
inline GradCheck check_gradients(flowcorr::NetParams params, const std::vector<Eigen::MatrixXd>& analytic,
                                 const std::function<double(const flowcorr::NetParams&)>& loss, int first,
                                 double h = 1e-3, double floor = 1e-6) {
  GradCheck out;
  for (std::size_t l = static_cast<std::size_t>(first); l < params.layers.size(); ++l) {
    auto& w = params.layers[l];
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double saved = w.data()[i];
      auto at = [&](double offset) {
        w.data()[i] = saved + offset;
        return loss(params);
      };
      const double numeric = (at(-2 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2 * h)) / (12.0 * h);
      w.data()[i] = saved;
      const double a = analytic[l].data()[i];
      const double diff = std::abs(a - numeric);
      out.max_abs = std::max(out.max_abs, diff);
      out.max_rel = std::max(out.max_rel, diff / std::max({std::abs(a), std::abs(numeric), floor}));
      ++out.checked;
    }
  }
  return out;
}

}  // namespace testsupport
