#include "flowcorr/checkpoint.hpp"
#include "flowcorr/errors.hpp"
#include "flowcorr/nnet.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace flowcorr;

namespace {

Architecture arch(int n, int M, int d, bool residual = true, Activation act = Activation::Tanh) {
  Architecture a;
  a.input_dim = n;
  a.hidden_layers = M;
  a.hidden_width = d;
  a.activation = act;
  a.residual = residual;
  return a;
}

NetParams zero_net(const Architecture& a) {
  NetParams p = init_params(a, 1);
  for (auto& w : p.layers) w.setZero();
  return p;
}

// Mean over the batch of the squared misfit, as a plain loop.
double batch_loss(const NetParams& p, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  const Eigen::MatrixXd out = forward_batch(p, x);
  return (out - y).squaredNorm() / static_cast<double>(x.rows());
}

}  // namespace

TEST_CASE("zero weights give the identity for a residual net and zero otherwise") {
  const Eigen::MatrixXd x = testsupport::random_matrix(7, 3, 1);
  CHECK(forward_batch(zero_net(arch(3, 3, 8)), x) == x);
  CHECK(forward_batch(zero_net(arch(3, 3, 8, false)), x).isZero(0.0));
}

TEST_CASE("forward pass on a hand-sized network") {
  // 1 -> 2 -> 1, tanh, non-residual: y = 0.5 + tanh(1) + tanh(1)
  NetParams p = zero_net(arch(1, 1, 2, false));
  p.layers[0] << 0.0, 0.0,  // biases
      1.0, 1.0;
  p.layers[1] << 0.5,  // bias
      1.0, 1.0;
  State x(1);
  x << 1.0;
  CHECK(predict(p, x)[0] == doctest::Approx(2.0 * std::tanh(1.0) + 0.5).epsilon(1e-15));

  p.arch.residual = true;
  CHECK(predict(p, x)[0] == doctest::Approx(2.0 * std::tanh(1.0) + 1.5).epsilon(1e-15));
}

TEST_CASE("forward is deterministic and batch rows are independent") {
  const NetParams p = testsupport::random_net(arch(2, 3, 20), 4);
  const Eigen::MatrixXd x = testsupport::random_matrix(16, 2, 2);
  const Eigen::MatrixXd y = forward_batch(p, x);
  CHECK(forward_batch(p, x) == y);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const State single = predict(p, x.row(r).transpose());
    CHECK((single - y.row(r).transpose()).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("residual output is the non-residual output plus the input") {
  NetParams p = testsupport::random_net(arch(3, 2, 10), 5);
  const Eigen::MatrixXd x = testsupport::random_matrix(5, 3, 3);
  const Eigen::MatrixXd with = forward_batch(p, x);
  p.arch.residual = false;
  CHECK((with - forward_batch(p, x) - x).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("backward with zero output gradient is zero") {
  const NetParams p = testsupport::random_net(arch(2, 3, 20), 6);
  ForwardCache cache;
  forward_batch(p, testsupport::random_matrix(4, 2, 4), &cache);
  const Gradients g = backward(p, cache, Eigen::MatrixXd::Zero(4, 2));
  for (const auto& gl : g.layers) CHECK(gl.isZero(0.0));
  CHECK(g.input.isZero(0.0));
}

TEST_CASE("output bias gradient is the column sum of the output gradient") {
  const NetParams p = testsupport::random_net(arch(2, 2, 6), 7);
  ForwardCache cache;
  forward_batch(p, testsupport::random_matrix(9, 2, 5), &cache);
  const Eigen::MatrixXd dy = testsupport::random_matrix(9, 2, 6);
  const Gradients g = backward(p, cache, dy);
  CHECK((g.layers[2].row(0) - dy.colwise().sum()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("backward matches central differences") {
  struct Case {
    Architecture a;
    int first;
  };
  const Case cases[] = {
      {arch(2, 3, 20), 0},
      {arch(2, 3, 20, false), 0},
      {arch(4, 2, 7, true, Activation::Sigmoid), 0},
      {arch(2, 5, 12), 3},
      {arch(1, 1, 3), 1},
  };
  std::uint64_t seed = 10;
  for (const auto& c : cases) {
    const NetParams p = testsupport::random_net(c.a, seed++);
    const Eigen::MatrixXd x = testsupport::random_matrix(12, c.a.input_dim, seed++);
    const Eigen::MatrixXd y = testsupport::random_matrix(12, c.a.input_dim, seed++);
    ForwardCache cache;
    const Eigen::MatrixXd out = forward_batch(p, x, &cache);
    const Gradients g = backward(p, cache, 2.0 * (out - y) / 12.0, c.first);
    const auto r = testsupport::check_gradients(
        p, g.layers, [&](const NetParams& q) { return batch_loss(q, x, y); }, c.first);
    INFO("M=", c.a.hidden_layers, " d=", c.a.hidden_width, " first=", c.first, " max_rel=", r.max_rel);
    CHECK(r.checked > 0);
    CHECK(r.max_rel < 1e-6);
    for (int l = 0; l < c.first; ++l) CHECK(g.layers[static_cast<std::size_t>(l)].size() == 0);
  }
}

TEST_CASE("input gradient matches central differences") {
  const NetParams p = testsupport::random_net(arch(3, 3, 10), 30);
  const Eigen::MatrixXd x = testsupport::random_matrix(4, 3, 31);
  const Eigen::MatrixXd w = testsupport::random_matrix(4, 3, 32);
  ForwardCache cache;
  forward_batch(p, x, &cache);
  const Gradients g = backward(p, cache, w);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::MatrixXd up = x, down = x;
    up.data()[i] += h;
    down.data()[i] -= h;
    const double num = ((forward_batch(p, up).array() * w.array()).sum() -
                        (forward_batch(p, down).array() * w.array()).sum()) /
                       (2 * h);
    CHECK(g.input.data()[i] == doctest::Approx(num).epsilon(1e-7));
  }
}

TEST_CASE("stale or mismatched caches are rejected") {
  const NetParams p = testsupport::random_net(arch(2, 3, 8), 40);
  const NetParams deeper = testsupport::random_net(arch(2, 4, 8), 41);
  ForwardCache cache;
  forward_batch(p, testsupport::random_matrix(3, 2, 42), &cache);
  CHECK_THROWS_AS(backward(deeper, cache, Eigen::MatrixXd::Zero(3, 2)), ValidationError);
  CHECK_THROWS_AS(backward(p, cache, Eigen::MatrixXd::Zero(4, 2)), ValidationError);
  CHECK_THROWS_AS(forward_batch(p, Eigen::MatrixXd::Zero(3, 5)), ValidationError);
}

TEST_CASE("Adam leaves parameters alone under zero gradient") {
  NetParams p = testsupport::random_net(arch(2, 2, 5), 50);
  const NetParams before = p;
  AdamState s = AdamState::for_params(p, 1e-3);
  Gradients g;
  for (const auto& w : p.layers) g.layers.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  for (int i = 0; i < 10; ++i) adam_step(s, p, g, FreezeSpec{0});
  for (std::size_t l = 0; l < p.layers.size(); ++l) CHECK(p.layers[l] == before.layers[l]);
}

TEST_CASE("first Adam step moves each entry by about lr against the gradient sign") {
  NetParams p = testsupport::random_net(arch(2, 2, 5), 51);
  const NetParams before = p;
  AdamState s = AdamState::for_params(p, 1e-3);
  Gradients g;
  std::uint64_t seed = 52;
  for (const auto& w : p.layers) g.layers.push_back(testsupport::random_matrix(w.rows(), w.cols(), seed++));
  adam_step(s, p, g, FreezeSpec{0});
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    for (Eigen::Index i = 0; i < p.layers[l].size(); ++i) {
      const double gi = g.layers[l].data()[i];
      const double expect = -1e-3 * gi / (std::abs(gi) + 1e-8);
      CHECK(p.layers[l].data()[i] - before.layers[l].data()[i] == doctest::Approx(expect).epsilon(1e-9));
    }
  }
}

TEST_CASE("frozen layers are bit-identical after many Adam steps") {
  const Architecture a = arch(2, 3, 20);
  NetParams p = testsupport::random_net(a, 60);
  const NetParams before = p;
  const Eigen::MatrixXd x = testsupport::random_matrix(32, 2, 61);
  const Eigen::MatrixXd y = testsupport::random_matrix(32, 2, 62);
  const FreezeSpec freeze{2};
  AdamState s = AdamState::for_params(p, 1e-2);
  for (int step = 0; step < 1000; ++step) {
    ForwardCache cache;
    const Eigen::MatrixXd out = forward_batch(p, x, &cache);
    adam_step(s, p, backward(p, cache, 2.0 * (out - y) / 32.0, freeze.split_index, false), freeze);
  }
  for (int l = 0; l < 2; ++l) {
    CHECK(serialize_layer(p.layers[static_cast<std::size_t>(l)]) ==
          serialize_layer(before.layers[static_cast<std::size_t>(l)]));
  }
  CHECK(p.layers[3] != before.layers[3]);
  CHECK(batch_loss(p, x, y) < batch_loss(before, x, y));
}

TEST_CASE("freeze spec bounds") {
  const Architecture a = arch(2, 3, 5);
  CHECK_NOTHROW(FreezeSpec{0}.validate(a));
  CHECK_NOTHROW(FreezeSpec{3}.validate(a));
  CHECK_THROWS_AS(FreezeSpec{4}.validate(a), ValidationError);
  CHECK_THROWS_AS(FreezeSpec{-1}.validate(a), ValidationError);
}

TEST_CASE("initialization: zero biases, Glorot-uniform bounds, reproducible by seed") {
  const Architecture a = arch(3, 3, 40);
  const NetParams p = init_params(a, 77);
  CHECK(p.layers.size() == 4);
  CHECK(a.parameter_count() == 4u * 40 + 41u * 40 * 2 + 41u * 3);
  for (int l = 0; l < a.layer_count(); ++l) {
    const auto& w = p.layers[static_cast<std::size_t>(l)];
    CHECK(w.rows() == a.fan_in(l) + 1);
    CHECK(w.cols() == a.fan_out(l));
    CHECK(w.row(0).isZero(0.0));
    const double limit = std::sqrt(6.0 / (a.fan_in(l) + a.fan_out(l)));
    CHECK(w.cwiseAbs().maxCoeff() <= limit);
    CHECK(w.bottomRows(w.rows() - 1).cwiseAbs().maxCoeff() > 0.5 * limit);
  }
  const NetParams q = init_params(a, 77);
  const NetParams r = init_params(a, 78);
  for (std::size_t l = 0; l < 4; ++l) CHECK(p.layers[l] == q.layers[l]);
  CHECK(p.layers[0] != r.layers[0]);

  NetParams s = p;
  reinit_layers(s, 2, 99);
  CHECK(s.layers[0] == p.layers[0]);
  CHECK(s.layers[1] == p.layers[1]);
  CHECK(s.layers[2] != p.layers[2]);
}

TEST_CASE("checkpoints round-trip exactly") {
  const NetParams p = testsupport::random_net(arch(2, 3, 11, true, Activation::Sigmoid), 80);
  Checkpoint ck{p, {{"note", "roundtrip"}}};
  const auto path = std::filesystem::temp_directory_path() / "flowcorr_test_ckpt.json";
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  std::filesystem::remove(path);
  CHECK(back.params.arch == p.arch);
  CHECK(back.params.seed == p.seed);
  for (std::size_t l = 0; l < p.layers.size(); ++l) CHECK(back.params.layers[l] == p.layers[l]);
  CHECK(back.provenance["note"] == "roundtrip");
  CHECK(params_hash(back.params) == params_hash(p));

  auto j = checkpoint_to_json(ck);
  j["layers"][1] = layer_to_json(Eigen::MatrixXd::Zero(3, 3));
  CHECK_THROWS(checkpoint_from_json(j));
}

TEST_CASE("architecture validation") {
  CHECK_THROWS_AS(init_params(arch(0, 3, 5), 1), ValidationError);
  CHECK_THROWS_AS(init_params(arch(2, 0, 5), 1), ValidationError);
  CHECK_THROWS_AS(init_params(arch(2, 3, 0), 1), ValidationError);
  CHECK(parse_activation("tanh") == Activation::Tanh);
  CHECK_THROWS_AS(parse_activation("relu"), ValidationError);
}
