#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <sstream>
#include <vector>

#include "nnet.hpp"

using namespace crossway::nn;

namespace {

// Plain-loop forward pass used as the reference for the Eigen path.
std::vector<double> reference_forward(const MlpD& net, std::vector<double> x) {
  for (const auto& l : net.layers()) {
    std::vector<double> y(static_cast<std::size_t>(l.w.rows()));
    for (int r = 0; r < l.w.rows(); ++r) {
      double z = l.b(r);
      for (int c = 0; c < l.w.cols(); ++c) z += l.w(r, c) * x[static_cast<std::size_t>(c)];
      switch (l.act) {
        case Activation::kIdentity: break;
        case Activation::kRelu: z = z > 0.0 ? z : 0.0; break;
        case Activation::kTanh: z = std::tanh(z); break;
        case Activation::kSigmoid: z = 1.0 / (1.0 + std::exp(-z)); break;
      }
      y[static_cast<std::size_t>(r)] = z;
    }
    x = std::move(y);
  }
  return x;
}

MlpD::Mat random_input(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  MlpD::Mat x(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) x(i, j) = n(rng);
  }
  return x;
}

// Scalar loss sum(c .* net(x)) and its analytic gradient.
struct Probe {
  MlpD& net;
  MlpD::Mat x, c;

  double loss() const { return (net.forward(x).array() * c.array()).sum(); }
  std::vector<double> grad() const {
    MlpD::Cache cache;
    net.forward(x, &cache);
    return net.backward(cache, c).flat();
  }
};

}  // namespace

TEST_CASE("identity and affine-degenerate layers") {
  MlpD net({{3, 3, Activation::kIdentity}}, 1);
  auto& l = net.mutable_layers()[0];
  l.w.setIdentity();
  l.b.setZero();
  MlpD::Mat x = random_input(3, 4, 2);
  CHECK((net.forward(x) - x).norm() == 0.0);
  net.mutable_layers()[0].w.setZero();
  net.mutable_layers()[0].b << 1.5, -2.0, 0.25;
  const auto y = net.forward(x);
  for (int j = 0; j < 4; ++j) {
    CHECK(y(0, j) == 1.5);
    CHECK(y(1, j) == -2.0);
    CHECK(y(2, j) == 0.25);
  }
}

TEST_CASE("forward matches a loop reimplementation") {
  MlpD net({{6, 8, Activation::kRelu}, {8, 5, Activation::kTanh}, {5, 2, Activation::kSigmoid}}, 3);
  const auto x = random_input(6, 7, 4);
  const auto y = net.forward(x);
  for (int j = 0; j < x.cols(); ++j) {
    std::vector<double> col(x.col(j).data(), x.col(j).data() + x.rows());
    const auto ref = reference_forward(net, col);
    for (int i = 0; i < 2; ++i) CHECK(std::abs(y(i, j) - ref[static_cast<std::size_t>(i)]) < 1e-12);
  }
}

TEST_CASE("forward is pure") {
  Mlp net({{5, 7, Activation::kRelu}, {7, 1, Activation::kTanh}}, 9);
  Mlp::Mat x = random_input(5, 3, 1).cast<float>();
  const Mlp::Mat a = net.forward(x);
  const Mlp::Mat b = net.forward(x);
  CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0);
}

TEST_CASE("glorot initialisation bounds") {
  MlpD net({{40, 20, Activation::kRelu}}, 5);
  const double bound = std::sqrt(6.0 / 60.0);
  CHECK(net.layers()[0].w.cwiseAbs().maxCoeff() <= bound);
  CHECK(net.layers()[0].b.isZero());
}

TEST_CASE("sparse batches agree with their dense form") {
  MlpD net({{10, 6, Activation::kRelu}, {6, 3, Activation::kIdentity}}, 7);
  SparseBatch<double> sb;
  sb.base = MlpD::Vec::LinSpaced(10, -1.0, 1.0);
  sb.deltas = {{}, {{2, 0.5}}, {{0, -1.0}, {9, 2.0}}};
  MlpD::Cache cs, cd;
  const auto ys = net.forward(sb, &cs);
  const auto yd = net.forward(sb.to_dense(), &cd);
  CHECK((ys - yd).norm() < 1e-12);
  MlpD::Mat dy = MlpD::Mat::Ones(3, 3);
  const auto gs = net.backward(cs, dy).flat();
  const auto gd = net.backward(cd, dy).flat();
  REQUIRE(gs.size() == gd.size());
  for (std::size_t k = 0; k < gs.size(); ++k) CHECK(std::abs(gs[k] - gd[k]) < 1e-10);
}

TEST_CASE("single linear layer gradient is the input outer ones") {
  MlpD net({{4, 3, Activation::kIdentity}}, 1);
  MlpD::Mat x = random_input(4, 1, 3);
  MlpD::Cache cache;
  net.forward(x, &cache);
  const auto g = net.backward(cache, MlpD::Mat::Ones(3, 1));
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) CHECK(g.w[0](r, c) == doctest::Approx(x(c, 0)));
    CHECK(g.b[0](r) == 1.0);
  }
}

TEST_CASE("zero output gradient propagates zeros") {
  MlpD net({{4, 6, Activation::kRelu}, {6, 2, Activation::kTanh}}, 2);
  MlpD::Cache cache;
  net.forward(random_input(4, 5, 6), &cache);
  for (double v : net.backward(cache, MlpD::Mat::Zero(2, 5)).flat()) CHECK(v == 0.0);
}

TEST_CASE("backward matches central differences") {
  for (auto out : {Activation::kTanh, Activation::kSigmoid, Activation::kIdentity}) {
    MlpD net({{6, 9, Activation::kRelu}, {9, 7, Activation::kRelu}, {7, 2, out}}, 13);
    Probe p{net, random_input(6, 4, 14), random_input(2, 4, 15)};
    const auto res = grad_check(net, [&] { return p.loss(); }, p.grad(), 100, 1e-5, 21);
    CHECK(res.checked == 100);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("quadratic loss on a linear net") {
  MlpD net({{3, 2, Activation::kIdentity}}, 4);
  const auto x = random_input(3, 6, 8);
  auto loss = [&] { return 0.5 * net.forward(x).squaredNorm(); };
  MlpD::Cache cache;
  const auto y = net.forward(x, &cache);
  const auto g = net.backward(cache, y).flat();
  const auto res = grad_check(net, loss, g, 8, 1e-5, 3);
  CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("relu kinks are resampled rather than reported") {
  MlpD net({{1, 1, Activation::kRelu}}, 1);
  net.mutable_layers()[0].w(0, 0) = 1.0;
  net.mutable_layers()[0].b(0) = -1.0 + 3e-6;
  MlpD::Mat x(1, 1);
  x(0, 0) = 1.0;  // pre-activation just off the kink, inside the stencil
  Probe p{net, x, MlpD::Mat::Ones(1, 1)};
  const auto res = grad_check(net, [&] { return p.loss(); }, p.grad(), 1, 1e-5, 1);
  CHECK(res.checked == 0);
  CHECK(res.resampled > 0);
}

TEST_CASE("stale caches and shape mismatches are rejected") {
  MlpD net({{3, 2, Activation::kTanh}}, 1);
  MlpD::Cache cache;
  net.forward(random_input(3, 2, 1), &cache);
  net.set_parameter(0, 0.3);
  CHECK_THROWS_AS(net.backward(cache, MlpD::Mat::Ones(2, 2)), StaleCacheError);
  CHECK_THROWS_AS(net.forward(random_input(4, 2, 1)), DimensionError);
  CHECK_THROWS_AS(MlpD({{3, 2, Activation::kTanh}, {3, 1, Activation::kTanh}}, 1), DimensionError);
}

TEST_CASE("adam first step moves by the learning rate") {
  MlpD net({{1, 1, Activation::kIdentity}}, 1);
  BasicAdam<double> opt(net, AdamParams{1e-5, 0.9, 0.999, 1e-8});
  MlpD::Gradients g;
  g.set_zero_like(net);
  g.w[0](0, 0) = 1.0;
  const double before = net.layers()[0].w(0, 0);
  opt.step(net, g);
  CHECK(net.layers()[0].w(0, 0) == doctest::Approx(before - 1e-5).epsilon(1e-9));
  CHECK(net.layers()[0].b(0) == 0.0);  // zero gradient leaves it in place
}

TEST_CASE("adam two steps follow the moment recursion") {
  const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8, gval = 0.7;
  MlpD net({{1, 1, Activation::kIdentity}}, 1);
  BasicAdam<double> opt(net, AdamParams{lr, b1, b2, eps});
  MlpD::Gradients g;
  g.set_zero_like(net);
  g.w[0](0, 0) = gval;
  double w = net.layers()[0].w(0, 0), m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    opt.step(net, g);
    m = b1 * m + (1 - b1) * gval;
    v = b2 * v + (1 - b2) * gval * gval;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    w -= lr * mh / (std::sqrt(vh) + eps);
    CHECK(net.layers()[0].w(0, 0) == doctest::Approx(w).epsilon(1e-12));
  }
}

TEST_CASE("adam skips non-finite gradients") {
  MlpD net({{2, 1, Activation::kIdentity}}, 1);
  BasicAdam<double> opt(net, AdamParams{});
  MlpD::Gradients g;
  g.set_zero_like(net);
  g.w[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
  const auto before = net.parameters();
  CHECK_FALSE(opt.step(net, g));
  CHECK(opt.skipped() == 1);
  CHECK(net.parameters() == before);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Mlp net({{5, 4, Activation::kRelu}, {4, 2, Activation::kSigmoid}}, 17);
  std::stringstream ss;
  net.save(ss);
  const auto back = Mlp::load(ss);
  CHECK(back.hash() == net.hash());
  CHECK(back.specs().size() == 2);
  CHECK(back.layers()[1].act == Activation::kSigmoid);

  std::string bytes = ss.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(Mlp::load(truncated), CheckpointError);
  std::stringstream garbage("not a checkpoint at all");
  CHECK_THROWS_AS(Mlp::load(garbage), CheckpointError);
}
