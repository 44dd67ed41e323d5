#include <cmath>

#include "../common/trials.hpp"
#include "doctest.h"
#include "wwf/error.hpp"
#include "wwf/nn.hpp"

using namespace wwf;
using ad::Tensor;
using testing::random_tensor;

namespace {

// Zeroes every trainable tensor, then sets those whose name ends in `suffix`
// to `value`.
void fill_params(const nn::ParamList& ps, const std::string& suffix = {}, double value = 0.0) {
  for (auto p : ps) {
    if (!p.trainable) continue;
    const bool hit = !suffix.empty() && p.name.size() >= suffix.size() &&
                     p.name.compare(p.name.size() - suffix.size(), suffix.size(), suffix) == 0;
    for (auto& v : p.tensor.values_mut()) v = hit ? value : 0.0;
  }
}

std::vector<double> row_layer_norm(std::vector<double> row) {
  double m = 0, v = 0;
  for (double x : row) m += x;
  m /= row.size();
  for (double x : row) v += (x - m) * (x - m);
  v /= row.size();
  for (auto& x : row) x = (x - m) / std::sqrt(v + 1e-5);
  return row;
}

}  // namespace

TEST_CASE("conv block keeps the time length") {
  std::mt19937_64 rng(1);
  nn::DilatedCausalConvBlock block(1, 4, 2, 4, rng);
  auto y = block.forward(random_tensor({2, 1, 8}, rng), nn::Mode::eval());
  CHECK(y.shape() == ad::Shape{2, 4, 8});
}

TEST_CASE("conv block with zero weights reduces to the batch-norm bias path") {
  std::mt19937_64 rng(2);
  nn::DilatedCausalConvBlock block(2, 3, 3, 2, rng);
  nn::ParamList ps;
  block.collect("b", ps);
  fill_params(ps, ".beta", 0.3);
  auto y = block.forward(random_tensor({2, 2, 6}, rng), nn::Mode::eval());
  REQUIRE(y.shape() == ad::Shape{2, 3, 6});
  for (double v : y.values()) CHECK(v == doctest::Approx(0.3));
}

TEST_CASE("conv block rejects a channel mismatch") {
  std::mt19937_64 rng(3);
  nn::DilatedCausalConvBlock block(2, 3, 2, 1, rng);
  CHECK_THROWS_AS(block.forward(Tensor::zeros({1, 3, 5}), nn::Mode::eval()), ShapeError);
}

TEST_CASE("conv block is causal") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    nn::DilatedCausalConvBlock block(2, 3, 2, 1 + trial % 3, rng);
    auto x = random_tensor({2, 2, 9}, rng);
    auto base = block.forward(x, nn::Mode::eval());
    const std::size_t t = trial % 8;
    auto x2 = x.detach();
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t s = t + 1; s < 9; ++s) x2.values_mut()[(b * 2 + c) * 9 + s] += 1.7;
    auto moved = block.forward(x2, nn::Mode::eval());
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t s = 0; s <= t; ++s) CHECK(moved.value((b * 3 + c) * 9 + s) == base.value((b * 3 + c) * 9 + s));
  }
}

TEST_CASE("GRN with zero weights equals the normalised skip path") {
  std::mt19937_64 rng(5);
  nn::GatedResidualNetwork grn(4, 6, 4, 0, 0.0, rng);
  nn::ParamList ps;
  grn.collect("g", ps);
  fill_params(ps, ".norm.gain", 1.0);
  auto x = random_tensor({3, 4}, rng);
  auto y = grn.forward(x, std::nullopt, nn::Mode::eval());
  for (std::size_t r = 0; r < 3; ++r) {
    auto expect = row_layer_norm({x.value(r * 4), x.value(r * 4 + 1), x.value(r * 4 + 2), x.value(r * 4 + 3)});
    for (std::size_t c = 0; c < 4; ++c) CHECK(y.value(r * 4 + c) == doctest::Approx(expect[c]).epsilon(1e-12));
  }
}

TEST_CASE("GRN projects the skip path to the output width") {
  std::mt19937_64 rng(6);
  nn::GatedResidualNetwork grn(7, 8, 16, 0, 0.1, rng);
  CHECK(grn.forward(random_tensor({5, 7}, rng), std::nullopt, nn::Mode::eval()).shape() == ad::Shape{5, 16});
}

TEST_CASE("GRN rejects context when built without one") {
  std::mt19937_64 rng(7);
  nn::GatedResidualNetwork grn(3, 3, 3, 0, 0.0, rng);
  CHECK_THROWS_AS(grn.forward(Tensor::zeros({2, 3}), Tensor::zeros({2, 2}), nn::Mode::eval()), ConfigError);
}

TEST_CASE("variable selection weights") {
  std::mt19937_64 rng(8);
  SUBCASE("uniform selector") {
    nn::VariableSelectionUnit vsu(5, 1, 4, 0, 0.0, rng);
    nn::ParamList ps;
    vsu.selector().collect("s", ps);
    fill_params(ps);
    std::vector<Tensor> vars;
    for (int i = 0; i < 5; ++i) vars.push_back(random_tensor({3, 1}, rng));
    auto out = vsu.forward(vars, std::nullopt, nn::Mode::eval());
    for (double w : out.weights.values()) CHECK(w == doctest::Approx(0.2).epsilon(1e-14));
  }
  SUBCASE("single variable") {
    nn::VariableSelectionUnit vsu(1, 2, 4, 0, 0.0, rng);
    auto out = vsu.forward({random_tensor({4, 2}, rng)}, std::nullopt, nn::Mode::eval());
    for (double w : out.weights.values()) CHECK(w == 1.0);
  }
  SUBCASE("rows sum to one and combine the per-variable outputs") {
    nn::VariableSelectionUnit vsu(4, 1, 3, 2, 0.0, rng);
    std::vector<Tensor> vars;
    for (int i = 0; i < 4; ++i) vars.push_back(random_tensor({6, 1}, rng));
    auto out = vsu.forward(vars, random_tensor({6, 2}, rng), nn::Mode::eval());
    REQUIRE(out.weights.shape() == ad::Shape{6, 4});
    for (std::size_t r = 0; r < 6; ++r) {
      double s = 0;
      for (std::size_t i = 0; i < 4; ++i) {
        CHECK(out.weights.value(r * 4 + i) >= 0.0);
        s += out.weights.value(r * 4 + i);
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
  SUBCASE("empty variable list") {
    nn::VariableSelectionUnit vsu(2, 1, 3, 0, 0.0, rng);
    CHECK_THROWS_AS(vsu.forward({}, std::nullopt, nn::Mode::eval()), ConfigError);
  }
}

TEST_CASE("LSTM cell") {
  std::mt19937_64 rng(9);
  SUBCASE("zero weights and state give zero output") {
    nn::LSTMCell cell(3, 4, rng);
    nn::ParamList ps;
    cell.collect("l", ps);
    fill_params(ps);
    auto s = cell.forward(random_tensor({2, 3}, rng), cell.zero_state(2));
    for (double v : s.h.values()) CHECK(v == 0.0);
  }
  SUBCASE("hidden state bounded") {
    nn::LSTMCell cell(3, 4, rng);
    auto state = cell.zero_state(2);
    std::vector<Tensor> xs;
    for (int t = 0; t < 20; ++t) xs.push_back(random_tensor({2, 3}, rng, -50, 50));
    auto hs = cell.run(xs, state);
    for (auto& h : hs)
      for (double v : h.values()) CHECK(std::abs(v) < 1.0);
    for (double v : state.c.values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("attention weights") {
  std::mt19937_64 rng(10);
  for (auto sharing : {nn::AttentionSharing::values, nn::AttentionSharing::keys}) {
    nn::InterpretableMultiHeadAttention att(6, 3, sharing, 0.0, rng);
    SUBCASE("length one") {
      auto x = random_tensor({2, 1, 6}, rng);
      auto o = att.forward(x, x, x, true, nn::Mode::eval());
      for (double w : o.mean_weights.values()) CHECK(w == 1.0);
    }
    SUBCASE("causal mask") {
      auto x = random_tensor({2, 3, 6}, rng);
      auto o = att.forward(x, x, x, true, nn::Mode::eval());
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t r = 0; r < 3; ++r) {
          double s = 0;
          for (std::size_t c = 0; c < 3; ++c) {
            const double w = o.mean_weights.value((b * 3 + r) * 3 + c);
            if (c > r) CHECK(w == 0.0);
            s += w;
          }
          CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
    SUBCASE("identical keys give uniform weights") {
      auto q = random_tensor({1, 4, 6}, rng);
      auto row = random_tensor({1, 1, 6}, rng);
      auto k = ad::concat({row, row, row, row}, 1);
      auto o = att.forward(q, k, random_tensor({1, 4, 6}, rng), true, nn::Mode::eval());
      for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c <= r; ++c)
          CHECK(o.mean_weights.value(r * 4 + c) == doctest::Approx(1.0 / (r + 1)).epsilon(1e-12));
    }
    SUBCASE("mask shape mismatch") {
      auto x = random_tensor({1, 3, 6}, rng);
      auto mask = ad::Mask::causal(2, 3);
      CHECK_THROWS_AS(att.forward(x, x, x, false, nn::Mode::eval(), &mask), ShapeError);
    }
  }
}

TEST_CASE("masked attention is causal") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    nn::InterpretableMultiHeadAttention att(4, 2, trial % 2 ? nn::AttentionSharing::keys : nn::AttentionSharing::values,
                                            0.0, rng);
    auto x = random_tensor({1, 6, 4}, rng);
    auto base = att.forward(x, x, x, true, nn::Mode::eval()).output;
    const std::size_t t = trial % 5;
    auto x2 = x.detach();
    for (std::size_t s = t + 1; s < 6; ++s)
      for (std::size_t d = 0; d < 4; ++d) x2.values_mut()[s * 4 + d] -= 0.9;
    auto moved = att.forward(x2, x2, x2, true, nn::Mode::eval()).output;
    for (std::size_t s = 0; s <= t; ++s)
      for (std::size_t d = 0; d < 4; ++d) CHECK(moved.value(s * 4 + d) == base.value(s * 4 + d));
  }
}

TEST_CASE("every block passes a gradient check") {
  std::mt19937_64 rng(12);
  for (auto kind : testing::kAllBlocks)
    for (int trial = 0; trial < 5; ++trial) {
      INFO(testing::block_name(kind) << " trial " << trial);
      CHECK(testing::block_trial(kind, rng).rel_error <= 1e-4);
    }
}
