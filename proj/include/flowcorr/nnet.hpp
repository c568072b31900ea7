#pragma once

// Fully connected flow-map network with an optional identity skip, exact
// reverse-mode gradients and Adam.
//
// Samples are rows: a batch of B states of dimension n is a B x n matrix.
// Layer i is stored as one (fan_in + 1) x fan_out matrix whose row 0 is the
// bias and whose remaining rows are the weights, so the output layer has
// exactly the [bias; weights] column-per-output layout of the last-layer
// least-squares problem.

#include "flowcorr/dynsys.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace flowcorr {

enum class Activation { Tanh, Sigmoid };

std::string to_string(Activation a);
Activation parse_activation(std::string_view name);

struct Architecture {
  int input_dim = 0;      // n; the output dimension is the same
  int hidden_layers = 0;  // M
  int hidden_width = 0;   // d
  Activation activation = Activation::Tanh;
  bool residual = true;   // y = x + net(x)

  void validate() const;
  [[nodiscard]] int layer_count() const { return hidden_layers + 1; }
  [[nodiscard]] int fan_in(int layer) const { return layer == 0 ? input_dim : hidden_width; }
  [[nodiscard]] int fan_out(int layer) const { return layer == hidden_layers ? input_dim : hidden_width; }
  [[nodiscard]] std::size_t parameter_count() const;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct NetParams {
  Architecture arch;
  std::vector<Eigen::MatrixXd> layers;  // W_0 .. W_M
  std::uint64_t seed = 0;

  /// Throws ValidationError when layer shapes disagree with arch.
  void validate() const;
};

/// Layers [0, split_index) are frozen, [split_index, M] are trainable.
struct FreezeSpec {
  int split_index = 0;

  void validate(const Architecture& arch) const;
};

/// Post-activation record of a forward pass: activations[0] is the input
/// batch, activations[i] the output of hidden layer i for i = 1..M.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> activations;
};

/// Gradients aligned with NetParams::layers. Entries for layers that were not
/// requested are empty matrices. `input` is empty unless requested.
struct Gradients {
  std::vector<Eigen::MatrixXd> layers;
  Eigen::MatrixXd input;
};

/// Glorot-uniform weights, zero biases.
NetParams init_params(const Architecture& arch, std::uint64_t seed);

/// Re-draws layers [first_layer, M] with the same scheme; earlier layers are
/// left untouched.
void reinit_layers(NetParams& params, int first_layer, std::uint64_t seed);

Eigen::MatrixXd forward_batch(const NetParams& params, const Eigen::MatrixXd& inputs,
                              ForwardCache* cache = nullptr);

/// Single-state forward pass returning the cache alongside the output.
State forward(const NetParams& params, const State& x, ForwardCache& cache);

State predict(const NetParams& params, const State& x);

/// Gradient of sum_rows(out_grad . y) with respect to layers
/// [first_layer, M], and optionally with respect to the input batch
/// (including the identity path when residual).
Gradients backward(const NetParams& params, const ForwardCache& cache, const Eigen::MatrixXd& out_grad,
                   int first_layer = 0, bool input_grad = true);

struct AdamState {
  std::vector<Eigen::MatrixXd> first_moment;
  std::vector<Eigen::MatrixXd> second_moment;
  long step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(const NetParams& params, double lr);
};

/// Bias-corrected Adam update on layers [freeze.split_index, M]; frozen layers
/// are not touched.
void adam_step(AdamState& state, NetParams& params, const Gradients& grads, const FreezeSpec& freeze);

}  // namespace flowcorr
