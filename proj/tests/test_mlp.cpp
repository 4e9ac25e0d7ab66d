#include <doctest.h>

#include <cmath>
#include <sstream>

#include "pointfields/mlp.hpp"

using namespace pf;

namespace {

// Independent oracle: plain nested-loop affine layers + activation.
template <typename S>
MatX<S> naive_forward(const Mlp<S>& mlp, const MatX<S>& x) {
  MatX<S> a = x;
  for (size_t l = 0; l < mlp.layer_count(); ++l) {
    const auto& layer = mlp.layer(l);
    MatX<S> z(a.rows(), layer.weight.rows());
    for (int r = 0; r < a.rows(); ++r) {
      for (int o = 0; o < layer.weight.rows(); ++o) {
        double acc = double(layer.bias(o));
        for (int i = 0; i < layer.weight.cols(); ++i) {
          acc += double(a(r, i)) * double(layer.weight(o, i));
        }
        switch (layer.act) {
          case Activation::kLinear: break;
          case Activation::kTanh: acc = std::tanh(acc); break;
          case Activation::kSigmoid: acc = 1.0 / (1.0 + std::exp(-acc)); break;
          case Activation::kRelu: acc = std::max(0.0, acc); break;
        }
        z(r, o) = S(acc);
      }
    }
    a = z;
  }
  return a;
}

template <typename S>
double max_rel_err(const VecX<S>& a, const VecX<S>& b, double floor_scale) {
  double worst = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    const double scale = std::max(floor_scale, std::max(std::abs(double(a[i])), std::abs(double(b[i]))));
    worst = std::max(worst, std::abs(double(a[i]) - double(b[i])) / scale);
  }
  return worst;
}

// Central-difference gradient of a scalar loss sum(forward(...) .* sel).
template <typename S>
VecX<S> fd_param_grads(Mlp<S>& mlp, const MatX<S>& x, const MatX<S>& sel, S h) {
  VecX<S> params = mlp.get_params();
  VecX<S> grads(params.size());
  for (int i = 0; i < params.size(); ++i) {
    VecX<S> p = params;
    p[i] += h;
    mlp.set_params(p);
    const double up = double(mlp.forward(x).cwiseProduct(sel).sum());
    p[i] = params[i] - h;
    mlp.set_params(p);
    const double dn = double(mlp.forward(x).cwiseProduct(sel).sum());
    grads[i] = S((up - dn) / (2.0 * double(h)));
  }
  mlp.set_params(params);
  return grads;
}

}  // namespace

TEST_CASE("zero network outputs zero through tanh") {
  Rng rng = make_rng(1);
  MlpF mlp({4, 8, 2}, {Activation::kTanh, Activation::kTanh}, rng);
  for (size_t l = 0; l < mlp.layer_count(); ++l) {
    mlp.layer(l).weight.setZero();
    mlp.layer(l).bias.setZero();
  }
  MatX<float> x(3, 4);
  x.setRandom();
  CHECK(mlp.forward(x).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("1x1 identity network with sigmoid output") {
  Rng rng = make_rng(2);
  MlpF mlp({1, 1}, {Activation::kSigmoid}, rng);
  mlp.layer(0).weight(0, 0) = 1.0f;
  mlp.layer(0).bias(0) = 0.0f;
  MatX<float> x(1, 1);
  x(0, 0) = 0.73f;
  CHECK(mlp.forward(x)(0, 0) ==
        doctest::Approx(1.0 / (1.0 + std::exp(-0.73))).epsilon(1e-6));
}

TEST_CASE("forward matches naive matmul oracle") {
  Rng rng = make_rng(3);
  MlpD mlp({5, 16, 3}, {Activation::kTanh, Activation::kSigmoid}, rng);
  MatX<double> x(7, 5);
  x.setRandom();
  const MatX<double> got = mlp.forward(x);
  const MatX<double> want = naive_forward(mlp, x);
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("forward rejects width mismatch") {
  Rng rng = make_rng(4);
  MlpF mlp({4, 8, 1}, {Activation::kTanh, Activation::kLinear}, rng);
  MatX<float> x(2, 3);
  x.setZero();
  CHECK_THROWS_AS(mlp.forward(x), std::invalid_argument);
}

TEST_CASE("backward: zero upstream gives zero gradients") {
  Rng rng = make_rng(5);
  MlpF mlp({3, 6, 2}, {Activation::kTanh, Activation::kLinear}, rng);
  MatX<float> x(4, 3);
  x.setRandom();
  Tape<float> tape;
  mlp.forward(x, &tape);
  MatX<float> dx;
  auto grads = mlp.backward(tape, MatX<float>::Zero(4, 2), &dx);
  CHECK(grads.flatten().cwiseAbs().maxCoeff() == 0.0f);
  CHECK(dx.cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("backward matches finite differences (double, 1e-7)") {
  Rng rng = make_rng(6);
  MlpD mlp({2, 2, 1}, {Activation::kTanh, Activation::kLinear}, rng);
  MatX<double> x(3, 2);
  x.setRandom();
  MatX<double> sel(3, 1);
  sel << 1.0, -0.5, 2.0;
  Tape<double> tape;
  mlp.forward(x, &tape);
  auto grads = mlp.backward(tape, sel);
  const VecX<double> fd = fd_param_grads(mlp, x, sel, 1e-6);
  CHECK(max_rel_err<double>(grads.flatten(), fd, 1e-3) < 1e-7);
}

TEST_CASE("backward matches finite differences (float, 1e-4)") {
  Rng rng = make_rng(7);
  MlpF mlp({4, 16, 2}, {Activation::kTanh, Activation::kSigmoid}, rng);
  MatX<float> x(5, 4);
  x.setRandom();
  MatX<float> sel(5, 2);
  sel.setRandom();
  Tape<float> tape;
  mlp.forward(x, &tape);
  auto grads = mlp.backward(tape, sel);
  const VecX<float> fd = fd_param_grads(mlp, x, sel, 3e-3f);
  CHECK(max_rel_err<float>(grads.flatten(), fd, 1e-2) < 1e-4);
}

TEST_CASE("input gradient of a linear layer equals transpose-weight product") {
  Rng rng = make_rng(8);
  MlpF mlp({3, 2}, {Activation::kLinear}, rng);
  MatX<float> x(1, 3);
  x.setRandom();
  MatX<float> up(1, 2);
  up << 1.0f, -2.0f;
  Tape<float> tape;
  mlp.forward(x, &tape);
  MatX<float> dx;
  mlp.backward(tape, up, &dx);
  const MatX<float> want = up * mlp.layer(0).weight;
  CHECK((dx - want).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("tape consumed exactly once") {
  Rng rng = make_rng(9);
  MlpF mlp({2, 2}, {Activation::kTanh}, rng);
  MatX<float> x(1, 2);
  x.setZero();
  Tape<float> tape;
  mlp.forward(x, &tape);
  mlp.backward(tape, MatX<float>::Zero(1, 2));
  CHECK_THROWS_AS(mlp.backward(tape, MatX<float>::Zero(1, 2)), std::logic_error);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Adam<float> adam(3, 0.01f);
  VecX<float> p(3);
  p << 1.0f, -2.0f, 0.5f;
  VecX<float> p0 = p;
  CHECK(adam.step(p, VecX<float>::Zero(3)));
  CHECK((p - p0).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("adam: single scalar first step matches reference formula") {
  // Reference: m = 0.1*g, v = 0.001*g^2, mhat = g, vhat = g^2,
  // delta = lr * g / (|g| + eps) ~= lr for g = 1.
  Adam<double> adam(1, 0.01);
  VecX<double> p(1);
  p << 3.0;
  VecX<double> g(1);
  g << 1.0;
  adam.step(p, g);
  const double expected = 3.0 - 0.01 * (1.0 / (1.0 + 1e-8));
  CHECK(p[0] == doctest::Approx(expected).epsilon(1e-12));
  // First step moves opposite the gradient sign.
  CHECK(p[0] < 3.0);
}

TEST_CASE("adam: rejects non-finite gradients") {
  Adam<float> adam(2, 0.01f);
  VecX<float> p(2);
  p << 1.0f, 2.0f;
  VecX<float> g(2);
  g << std::nanf(""), 1.0f;
  CHECK(!adam.step(p, g));
  CHECK(p[0] == 1.0f);
  CHECK(p[1] == 2.0f);
  CHECK(adam.steps() == 0);
}

TEST_CASE("adam: two identical runs are bit-identical") {
  auto run = [] {
    Rng rng = make_rng(42);
    MlpF mlp({2, 8, 1}, {Activation::kTanh, Activation::kLinear}, rng);
    Adam<float> adam(mlp.param_count(), 0.01f);
    MatX<float> x(4, 2);
    x << 0.1f, 0.2f, -0.3f, 0.4f, 0.5f, -0.6f, 0.7f, 0.8f;
    MatX<float> target(4, 1);
    target << 1.f, 0.f, -1.f, 0.5f;
    for (int i = 0; i < 20; ++i) {
      Tape<float> tape;
      MatX<float> y = mlp.forward(x, &tape);
      auto grads = mlp.backward(tape, 2.0f * (y - target));
      VecX<float> p = mlp.get_params();
      adam.step(p, grads.flatten());
      mlp.set_params(p);
    }
    return mlp.param_checksum();
  };
  CHECK(run() == run());
}

TEST_CASE("training a tiny regression decreases loss monotonically") {
  Rng rng = make_rng(100);
  MlpF mlp({1, 16, 1}, {Activation::kTanh, Activation::kLinear}, rng);
  Adam<float> adam(mlp.param_count(), 1e-3f);
  MatX<float> x(8, 1);
  MatX<float> y(8, 1);
  for (int i = 0; i < 8; ++i) {
    x(i, 0) = float(i) / 8.0f;
    y(i, 0) = std::sin(3.0f * x(i, 0));
  }
  double prev = 1e30;
  for (int step = 0; step < 10; ++step) {
    Tape<float> tape;
    MatX<float> out = mlp.forward(x, &tape);
    const double loss = double((out - y).squaredNorm());
    CHECK(loss < prev);
    prev = loss;
    auto grads = mlp.backward(tape, 2.0f * (out - y));
    VecX<float> p = mlp.get_params();
    adam.step(p, grads.flatten());
    mlp.set_params(p);
  }
}

TEST_CASE("parameter snapshot round trip") {
  Rng rng = make_rng(55);
  MlpF mlp({3, 8, 2}, {Activation::kTanh, Activation::kSigmoid}, rng);
  std::stringstream buf;
  mlp.save(buf);

  Rng rng2 = make_rng(56);
  MlpF other({3, 8, 2}, {Activation::kTanh, Activation::kSigmoid}, rng2);
  CHECK(other.param_checksum() != mlp.param_checksum());
  other.load(buf);
  CHECK(other.param_checksum() == mlp.param_checksum());

  std::stringstream bad("not a snapshot at all");
  CHECK_THROWS_AS(other.load(bad), std::runtime_error);

  // Shape mismatch is rejected.
  std::stringstream buf2;
  mlp.save(buf2);
  Rng rng3 = make_rng(57);
  MlpF wrong({3, 9, 2}, {Activation::kTanh, Activation::kSigmoid}, rng3);
  CHECK_THROWS_AS(wrong.load(buf2), std::runtime_error);
}
