#include "flowcorr/nnet.hpp"

#include "flowcorr/errors.hpp"
#include "flowcorr/rng.hpp"

#include <cmath>
#include <sstream>

namespace flowcorr {

namespace {

void apply_activation(Activation a, Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::Tanh:
      z = z.array().tanh().matrix();
      return;
    case Activation::Sigmoid:
      z = (1.0 / (1.0 + (-z.array()).exp())).matrix();
      return;
  }
}

// Derivative expressed through the post-activation value h.
Eigen::ArrayXXd activation_slope(Activation a, const Eigen::MatrixXd& h) {
  switch (a) {
    case Activation::Tanh:
      return 1.0 - h.array().square();
    case Activation::Sigmoid:
      return h.array() * (1.0 - h.array());
  }
  return {};
}

void check_input(const NetParams& params, Eigen::Index cols) {
  if (cols != params.arch.input_dim) {
    std::ostringstream os;
    os << "network expects input dimension " << params.arch.input_dim << ", got " << cols;
    throw ValidationError(os.str());
  }
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh:
      return "tanh";
    case Activation::Sigmoid:
      return "sigmoid";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw ValidationError("unknown activation '" + std::string(name) + "'");
}

void Architecture::validate() const {
  if (input_dim < 1) throw ValidationError("architecture input_dim must be >= 1");
  if (hidden_layers < 1) throw ValidationError("architecture needs at least one hidden layer");
  if (hidden_width < 1) throw ValidationError("architecture hidden_width must be >= 1");
}

std::size_t Architecture::parameter_count() const {
  std::size_t total = 0;
  for (int i = 0; i < layer_count(); ++i) {
    total += static_cast<std::size_t>(fan_in(i) + 1) * static_cast<std::size_t>(fan_out(i));
  }
  return total;
}

void NetParams::validate() const {
  arch.validate();
  if (static_cast<int>(layers.size()) != arch.layer_count()) {
    std::ostringstream os;
    os << "network has " << layers.size() << " layers, architecture requires " << arch.layer_count();
    throw ValidationError(os.str());
  }
  for (int i = 0; i < arch.layer_count(); ++i) {
    const auto& w = layers[static_cast<std::size_t>(i)];
    if (w.rows() != arch.fan_in(i) + 1 || w.cols() != arch.fan_out(i)) {
      std::ostringstream os;
      os << "layer " << i << " has shape " << w.rows() << "x" << w.cols() << ", expected "
         << arch.fan_in(i) + 1 << "x" << arch.fan_out(i);
      throw ValidationError(os.str());
    }
  }
}

void FreezeSpec::validate(const Architecture& arch) const {
  if (split_index < 0 || split_index > arch.hidden_layers) {
    std::ostringstream os;
    os << "freeze split index " << split_index << " outside [0, " << arch.hidden_layers << "]";
    throw ValidationError(os.str());
  }
}

NetParams init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  NetParams p;
  p.arch = arch;
  p.seed = seed;
  p.layers.resize(static_cast<std::size_t>(arch.layer_count()));
  reinit_layers(p, 0, seed);
  return p;
}

void reinit_layers(NetParams& params, int first_layer, std::uint64_t seed) {
  const auto& arch = params.arch;
  for (int i = first_layer; i < arch.layer_count(); ++i) {
    const int a = arch.fan_in(i);
    const int b = arch.fan_out(i);
    const double limit = std::sqrt(6.0 / (a + b));
    Rng rng(seed, static_cast<std::uint64_t>(i));
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(a + 1, b);
    for (int r = 1; r <= a; ++r) {
      for (int c = 0; c < b; ++c) w(r, c) = rng.uniform(-limit, limit);
    }
    params.layers[static_cast<std::size_t>(i)] = std::move(w);
  }
}

Eigen::MatrixXd forward_batch(const NetParams& params, const Eigen::MatrixXd& inputs, ForwardCache* cache) {
  check_input(params, inputs.cols());
  const auto& arch = params.arch;
  const int M = arch.hidden_layers;
  if (cache) {
    cache->activations.clear();
    cache->activations.reserve(static_cast<std::size_t>(M + 1));
    cache->activations.push_back(inputs);
  }
  Eigen::MatrixXd h = inputs;
  for (int i = 0; i < M; ++i) {
    const auto& w = params.layers[static_cast<std::size_t>(i)];
    Eigen::MatrixXd z = h * w.bottomRows(w.rows() - 1);
    z.rowwise() += w.row(0);
    apply_activation(arch.activation, z);
    h = std::move(z);
    if (cache) cache->activations.push_back(h);
  }
  const auto& out = params.layers[static_cast<std::size_t>(M)];
  Eigen::MatrixXd y = h * out.bottomRows(out.rows() - 1);
  y.rowwise() += out.row(0);
  if (arch.residual) y += inputs;
  return y;
}

State forward(const NetParams& params, const State& x, ForwardCache& cache) {
  Eigen::MatrixXd y = forward_batch(params, x.transpose(), &cache);
  return y.row(0).transpose();
}

State predict(const NetParams& params, const State& x) {
  Eigen::MatrixXd y = forward_batch(params, x.transpose(), nullptr);
  return y.row(0).transpose();
}

Gradients backward(const NetParams& params, const ForwardCache& cache, const Eigen::MatrixXd& out_grad,
                   int first_layer, bool input_grad) {
  const auto& arch = params.arch;
  const int M = arch.hidden_layers;
  if (static_cast<int>(cache.activations.size()) != M + 1) {
    throw ValidationError("forward cache does not match the network depth");
  }
  const Eigen::Index batch = cache.activations[0].rows();
  if (out_grad.rows() != batch || out_grad.cols() != arch.input_dim) {
    throw ValidationError("output gradient shape does not match the cached forward pass");
  }
  for (int i = 0; i <= M; ++i) {
    const auto& h = cache.activations[static_cast<std::size_t>(i)];
    if (h.rows() != batch || h.cols() != arch.fan_in(i)) {
      throw ValidationError("forward cache shape does not match the network");
    }
  }
  if (first_layer < 0 || first_layer > M + 1) throw ValidationError("backward first_layer out of range");

  Gradients g;
  g.layers.resize(static_cast<std::size_t>(M + 1));
  const int lowest = input_grad ? 0 : first_layer;

  Eigen::MatrixXd delta = out_grad;  // gradient w.r.t. the pre-activation of layer i's output
  for (int i = M; i >= lowest; --i) {
    const auto& h = cache.activations[static_cast<std::size_t>(i)];
    const auto& w = params.layers[static_cast<std::size_t>(i)];
    if (i >= first_layer) {
      Eigen::MatrixXd gw(w.rows(), w.cols());
      gw.row(0) = delta.colwise().sum();
      gw.bottomRows(w.rows() - 1).noalias() = h.transpose() * delta;
      g.layers[static_cast<std::size_t>(i)] = std::move(gw);
    }
    if (i == 0 && !input_grad) break;
    Eigen::MatrixXd dh = delta * w.bottomRows(w.rows() - 1).transpose();
    if (i == 0) {
      if (arch.residual) dh += out_grad;
      g.input = std::move(dh);
    } else {
      delta = (dh.array() * activation_slope(arch.activation, h)).matrix();
    }
  }
  return g;
}

AdamState AdamState::for_params(const NetParams& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& w : params.layers) {
    s.first_moment.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    s.second_moment.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  }
  return s;
}

void adam_step(AdamState& state, NetParams& params, const Gradients& grads, const FreezeSpec& freeze) {
  freeze.validate(params.arch);
  const std::size_t L = params.layers.size();
  if (grads.layers.size() != L || state.first_moment.size() != L) {
    throw ValidationError("Adam: gradient/state layout does not match the network");
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = static_cast<std::size_t>(freeze.split_index); i < L; ++i) {
    auto& w = params.layers[i];
    const auto& g = grads.layers[i];
    if (g.rows() != w.rows() || g.cols() != w.cols()) {
      throw ValidationError("Adam: gradient for trainable layer " + std::to_string(i) + " has the wrong shape");
    }
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseAbs2();
    w.array() -= state.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + state.epsilon);
  }
}

}  // namespace flowcorr
