#include <cmath>

#include "../common/trials.hpp"
#include "doctest.h"
#include "wwf/error.hpp"
#include "wwf/tensor.hpp"

using namespace wwf;
using ad::Tensor;
using testing::random_tensor;

namespace {

Tensor vec(std::vector<double> v, bool grad = false) {
  const std::size_t n = v.size();
  return Tensor::from_values({n}, std::move(v), grad);
}

}  // namespace

TEST_CASE("forward examples") {
  auto a = Tensor::zeros({2, 3}), b = Tensor::zeros({3, 4});
  CHECK(ad::matmul(a, b).shape() == ad::Shape{2, 4});

  auto r = ad::relu(vec({-1, 0, 2}));
  CHECK(r.value(0) == 0.0);
  CHECK(r.value(1) == 0.0);
  CHECK(r.value(2) == 2.0);

  auto s = ad::softmax(vec({0, 0, 0}), 0);
  for (int i = 0; i < 3; ++i) CHECK(s.value(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("backward examples") {
  auto x = Tensor::scalar(3.0, true);
  ad::backward(ad::mul(x, x));
  CHECK(x.grad()[0] == doctest::Approx(6.0));

  auto v = vec({0.3, -1.2, 2.0, 0.0}, true);
  ad::backward(ad::sum(ad::softmax(v, 0)));
  for (double g : v.grad()) CHECK(std::abs(g) < 1e-15);
}

TEST_CASE("non-scalar loss is rejected") {
  auto v = vec({1, 2}, true);
  CHECK_THROWS_AS(ad::backward(ad::relu(v)), ShapeError);
}

TEST_CASE("shape mismatch names the op and shapes") {
  auto a = Tensor::zeros({2, 3}), b = Tensor::zeros({2, 4});
  try {
    ad::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[2,4]") != std::string::npos);
  }
  CHECK_THROWS_AS(ad::add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
  CHECK_THROWS_AS(ad::conv1d(Tensor::zeros({1, 2, 5}), Tensor::zeros({1, 3, 2}), Tensor::zeros({1}), 1), ShapeError);
}

TEST_CASE("gradients accumulate over repeated use") {
  auto x = vec({1.5, -0.5}, true);
  // f = sum(x*x) + sum(3x) -> 2x + 3
  ad::backward(ad::add(ad::sum(ad::mul(x, x)), ad::sum(ad::scale(x, 3.0))));
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  CHECK(x.grad()[1] == doctest::Approx(2.0));
  // A second pass adds to the existing buffer.
  ad::backward(ad::sum(x));
  CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("tape is topologically ordered and visits each op once") {
  auto x = vec({0.1, 0.2, 0.3}, true);
  auto h = ad::tanh(x);
  auto y = ad::add(ad::mul(h, h), ad::sigmoid(h));
  auto loss = ad::sum(y);
  auto tape = ad::Tape::record(loss);
  CHECK(tape.size() == 5);  // tanh, mul, sigmoid, add, sum
  const auto& ops = tape.ops();
  for (std::size_t i = 0; i < ops.size(); ++i)
    for (const auto& in : ops[i]->inputs) {
      if (in->is_leaf()) continue;
      auto it = std::find(ops.begin(), ops.end(), in.get());
      REQUIRE(it != ops.end());
      CHECK(static_cast<std::size_t>(it - ops.begin()) < i);
    }
  std::vector<ad::Node*> seen(ops.begin(), ops.end());
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
}

TEST_CASE("no-grad guard records nothing") {
  auto x = vec({1, 2}, true);
  ad::NoGradGuard guard;
  auto y = ad::mul(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->is_leaf());
}

TEST_CASE("dropout") {
  std::mt19937_64 rng(1);
  auto x = random_tensor({4, 50}, rng);
  auto same = ad::dropout(x, 0.5, false, rng);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(same.value(i) == x.value(i));
  auto d = ad::dropout(x, 0.5, true, rng);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (d.value(i) == 0.0)
      ++zeros;
    else
      CHECK(d.value(i) == doctest::Approx(2.0 * x.value(i)));
  }
  CHECK(zeros > 50);
  CHECK(zeros < 150);
}

TEST_CASE("conv1d is causal with left padding") {
  // Single channel, kernel 2, dilation 2: y[t] = w0 x[t-2] + w1 x[t] + b
  auto x = Tensor::from_values({1, 1, 5}, {1, 2, 3, 4, 5});
  auto w = Tensor::from_values({1, 1, 2}, {10, 1});
  auto b = vec({0.5});
  auto y = ad::conv1d(x, w, b, 2);
  REQUIRE(y.shape() == ad::Shape{1, 1, 5});
  const double expect[] = {1.5, 2.5, 13.5, 24.5, 35.5};
  for (int t = 0; t < 5; ++t) CHECK(y.value(t) == doctest::Approx(expect[t]));
}

TEST_CASE("batch norm train and eval") {
  auto x = Tensor::from_values({4, 1}, {1, 2, 3, 4});
  auto g = vec({1}), b = vec({0});
  auto rm = vec({0}), rv = vec({1});
  auto y = ad::batch_norm(x, g, b, rm, rv, true);
  double m = 0;
  for (int i = 0; i < 4; ++i) m += y.value(i);
  CHECK(std::abs(m) < 1e-12);
  CHECK(rm.value(0) == doctest::Approx(0.25));            // 0.9*0 + 0.1*2.5
  CHECK(rv.value(0) == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0));  // unbiased variance
  auto e = ad::batch_norm(x, g, b, rm, rv, false);
  CHECK(e.value(0) == doctest::Approx((1 - 0.25) / std::sqrt(rv.value(0) + 1e-5)));
}

TEST_CASE("masked softmax zeroes masked entries") {
  auto a = Tensor::from_values({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto s = ad::masked_softmax(a, ad::Mask::causal(3, 3));
  CHECK(s.value(1) == 0.0);
  CHECK(s.value(2) == 0.0);
  CHECK(s.value(5) == 0.0);
  CHECK(s.value(0) == 1.0);
}

TEST_CASE("every op kind passes a gradient check") {
  std::mt19937_64 rng(2024);
  for (int k = 0; k <= static_cast<int>(ad::OpKind::dropout); ++k) {
    const auto kind = static_cast<ad::OpKind>(k);
    for (int trial = 0; trial < 10; ++trial) {
      auto r = testing::op_trial(kind, rng);
      INFO(ad::op_name(kind) << " trial " << trial);
      CHECK(r.rel_error <= 1e-4);
      CHECK(r.coords > 0);
    }
  }
}

TEST_CASE("five-layer composite gradient check") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor({3, 4}, rng);
    std::vector<Tensor> ws, leaves{x};
    for (int l = 0; l < 5; ++l) {
      ws.push_back(random_tensor({4, 4}, rng, -0.8, 0.8));
      leaves.push_back(ws.back());
    }
    auto f = [&] {
      Tensor h = x;
      for (int l = 0; l < 5; ++l) {
        h = ad::matmul(h, ws[l]);
        h = l % 2 ? ad::tanh(h) : ad::elu(h);
      }
      return ad::sum(ad::mul(h, h));
    };
    CHECK(testing::grad_check(f, leaves, rng).rel_error <= 1e-4);
  }
}

TEST_CASE("identical seeds give bit-identical outputs and gradients") {
  auto run = [] {
    std::mt19937_64 rng(77);
    auto x = random_tensor({5, 6}, rng), w = random_tensor({6, 3}, rng);
    auto y = ad::dropout(ad::tanh(ad::matmul(x, w)), 0.3, true, rng);
    auto loss = ad::sum(ad::mul(y, y));
    ad::backward(loss);
    std::vector<double> out{loss.item()};
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  CHECK(run() == run());
}
