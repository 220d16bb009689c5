#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "mixupe/mixup.hpp"
#include "mixupe/nn.hpp"
#include "support/test_support.hpp"

using namespace mixupe;
using mixupe::testing::random_tensor;

namespace {

MlpSpec small_spec(bool homogeneous = false,
                   Activation act = Activation::relu) {
  MlpSpec s;
  s.input_dim = 4;
  s.hidden_dims = {128, 128};
  s.output_dim = 3;
  s.hidden_activation = act;
  s.homogeneous = homogeneous;
  return s;
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("init is deterministic and respects the fan-in bound") {
    MlpModel a = MlpModel::init(small_spec(), 0);
    MlpModel b = MlpModel::init(small_spec(), 0);
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i)
      CHECK(pa[i].data() == pb[i].data());

    MlpModel c = MlpModel::init(small_spec(), 1);
    CHECK(c.layers()[0].weight.data() != a.layers()[0].weight.data());

    for (const auto& layer : a.layers()) {
      const double bound =
          1.0 / std::sqrt(static_cast<double>(layer.in_dim()));
      for (double w : layer.weight.data()) {
        CHECK(w <= bound);
        CHECK(w >= -bound);
      }
      REQUIRE(layer.bias.has_value());
      for (double v : layer.bias->data()) CHECK(v == 0.0);
    }
  }

  TEST_CASE("homogeneous mode has no bias tensors anywhere") {
    MlpModel m = MlpModel::init(small_spec(true), 3);
    for (const auto& layer : m.layers()) CHECK_FALSE(layer.bias.has_value());
    CHECK(m.parameters().size() == m.layers().size());
  }

  TEST_CASE("zero or negative dims are rejected") {
    MlpSpec s = small_spec();
    s.hidden_dims = {0};
    CHECK_THROWS_AS(MlpModel::init(s, 0), ConfigError);
    s = small_spec();
    s.input_dim = 0;
    CHECK_THROWS_AS(MlpModel::init(s, 0), ConfigError);
  }

  TEST_CASE("single identity layer forwards its input") {
    MlpSpec s;
    s.input_dim = 2;
    s.output_dim = 2;
    s.homogeneous = true;
    MlpModel m = MlpModel::init(s, 0);
    auto w = m.parameters()[0];
    w.data_mut() = {1, 0, 0, 1};
    Tensor out = m.forward(Tensor::from_rows({{1, 2}}));
    CHECK(out.at(0, 0) == 1.0);
    CHECK(out.at(0, 1) == 2.0);
  }

  TEST_CASE("forward checks the input width") {
    MlpModel m = MlpModel::init(small_spec(), 0);
    CHECK_THROWS_AS(m.forward(Tensor::zeros(1, 5)), ShapeError);
  }

  TEST_CASE("bias-free ReLU nets are positively homogeneous") {
    Rng rng(21);
    MlpModel m = MlpModel::init(small_spec(true), 5);
    for (int trial = 0; trial < 10; ++trial) {
      Tensor x = random_tensor(rng, 1, 4);
      const double c = 0.5 + 2.0 * rng.uniform();
      std::vector<double> scaled = x.data();
      for (auto& e : scaled) e *= c;
      Tensor cx = Tensor::from_flat(1, 4, std::move(scaled));
      Tensor fx = m.forward_detached(x);
      Tensor fcx = m.forward_detached(cx);
      for (std::size_t j = 0; j < 3; ++j)
        CHECK(std::fabs(fcx.at(0, j) - c * fx.at(0, j)) < 1e-9);
    }
  }

  TEST_CASE("a batch forward equals stacked single-row forwards") {
    Rng rng(22);
    MlpModel m = MlpModel::init(small_spec(false, Activation::tanh), 9);
    Tensor x = random_tensor(rng, 6, 4);
    Tensor batch = m.forward_detached(x);
    for (std::size_t r = 0; r < 6; ++r) {
      Tensor row = m.forward_detached(x.row_detached(r));
      for (std::size_t c = 0; c < 3; ++c)
        CHECK(batch.at(r, c) == doctest::Approx(row.at(0, c)).epsilon(1e-14));
    }
  }

  TEST_CASE("sgd step: lr 0.1, no momentum") {
    Tensor theta = Tensor::from_rows({{1.0}}, true);
    OptimizerSpec spec;
    spec.kind = OptimizerSpec::Kind::sgd_momentum;
    spec.learning_rate = 0.1;
    spec.momentum = 0.0;
    std::vector<Tensor> params{theta};
    Optimizer opt(spec, params);

    backward(scale(sum(theta), 2.0));  // gradient = 2
    opt.step(params);
    CHECK(theta.data()[0] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK_FALSE(theta.has_grad());
  }

  TEST_CASE("two momentum steps match the hand-unrolled recurrence") {
    Tensor theta = Tensor::from_rows({{1.0}}, true);
    OptimizerSpec spec;
    spec.kind = OptimizerSpec::Kind::sgd_momentum;
    spec.learning_rate = 0.1;
    spec.momentum = 0.9;
    std::vector<Tensor> params{theta};
    Optimizer opt(spec, params);

    // Constant gradient 2: v1 = 2, theta1 = 1 - 0.2 = 0.8;
    // v2 = 0.9*2 + 2 = 3.8, theta2 = 0.8 - 0.38 = 0.42.
    backward(scale(sum(theta), 2.0));
    opt.step(params);
    backward(scale(sum(theta), 2.0));
    opt.step(params);
    CHECK(theta.data()[0] == doctest::Approx(0.42).epsilon(1e-12));
  }

  TEST_CASE("adam first step moves by about lr") {
    Tensor theta = Tensor::from_rows({{1.0, -2.0}}, true);
    OptimizerSpec spec;  // adam defaults
    std::vector<Tensor> params{theta};
    Optimizer opt(spec, params);

    backward(sum(theta));  // gradient 1 everywhere
    opt.step(params);
    CHECK(theta.data()[0] == doctest::Approx(1.0 - 0.001).epsilon(1e-7));
    CHECK(theta.data()[1] == doctest::Approx(-2.0 - 0.001).epsilon(1e-7));
  }

  TEST_CASE("step without gradients is an error") {
    Tensor theta = Tensor::from_rows({{1.0}}, true);
    OptimizerSpec spec;
    std::vector<Tensor> params{theta};
    Optimizer opt(spec, params);
    CHECK_THROWS_AS(opt.step(params), AutogradError);
  }

  TEST_CASE("optimizer updates are deterministic functions of state") {
    auto run = []() {
      Tensor theta = Tensor::from_rows({{0.4, -0.7, 1.3}}, true);
      std::vector<Tensor> params{theta};
      OptimizerSpec spec;
      Optimizer opt(spec, params);
      for (int i = 0; i < 5; ++i) {
        backward(sum(mul(theta, theta)));
        opt.step(params);
      }
      return theta.data();
    };
    CHECK(run() == run());
  }

  TEST_CASE("training a 2x128 MLP on separable blobs reaches loss < 0.01") {
    Rng rng(33);
    const std::size_t n = 60;
    std::vector<double> xs(n * 4), ys(n * 3, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t cls = i % 3;
      for (std::size_t j = 0; j < 4; ++j)
        xs[i * 4 + j] = (j == cls ? 3.0 : 0.0) + 0.3 * rng.normal();
      ys[i * 3 + cls] = 1.0;
    }
    Tensor x = Tensor::from_flat(n, 4, xs);
    Tensor y = Tensor::from_flat(n, 3, ys);

    MlpModel m = MlpModel::init(small_spec(), 1);
    auto params = m.parameters();
    OptimizerSpec spec;  // adam, lr 0.001
    Optimizer opt(spec, params);

    double loss = 1e9;
    for (int epoch = 0; epoch < 200 && loss >= 0.01; ++epoch) {
      Tensor l = loss_h(m.forward(x), y, Head::softmax);
      loss = l.value();
      backward(l);
      opt.step(params);
    }
    CHECK(loss < 0.01);
  }

  TEST_CASE("checkpoint round trip is bit-exact") {
    MlpModel m = MlpModel::init(small_spec(false, Activation::tanh), 77);
    // Non-trivial values, including a negative zero.
    auto params = m.parameters();
    params[1].data_mut()[0] = -0.0;
    params[1].data_mut()[1] = 1.0 / 3.0;

    const std::string path =
        (std::filesystem::temp_directory_path() / "mixupe_ckpt_test.txt")
            .string();
    save_model(m, path);
    MlpModel loaded = load_model(path);
    const auto pa = m.parameters();
    const auto pb = loaded.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      REQUIRE(pa[i].size() == pb[i].size());
      for (std::size_t j = 0; j < pa[i].size(); ++j) {
        const double a = pa[i].data()[j];
        const double b = pb[i].data()[j];
        CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
      }
    }
    CHECK(loaded.spec().hidden_activation == Activation::tanh);
    std::filesystem::remove(path);
  }

  TEST_CASE("snapshot shares nothing with the original") {
    MlpModel m = MlpModel::init(small_spec(), 0);
    MlpModel copy = m.snapshot();
    m.parameters()[0].data_mut()[0] = 123.0;
    CHECK(copy.parameters()[0].data()[0] != 123.0);
  }
}
