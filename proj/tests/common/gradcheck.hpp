#pragma once

// Central finite-difference gradient checks shared by the unit and
// acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "wwf/tensor.hpp"

namespace wwf::testing {

struct GradCheck {
  double rel_error = 0.0;
  std::size_t coords = 0;
  std::size_t kinks = 0;  // probed coordinates left out as non-differentiable
};

// ||g_ad - g_fd|| / max(||g_ad||, ||g_fd||, 1e-8) over the checked
// coordinates. `f` must rebuild its graph from the current leaf values on
// every call. At most `per_leaf` coordinates of each leaf are probed.
// When the one-sided slopes disagree the step straddles a ReLU kink; the
// step shrinks 100x up to twice, and a coordinate still straddling one is
// left out and counted.
inline GradCheck grad_check(const std::function<ad::Tensor()>& f, std::vector<ad::Tensor> leaves,
                            std::mt19937_64& rng, std::size_t per_leaf = 1u << 30, double h = 1e-5) {
  for (auto& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  ad::backward(f());
  double diff = 0.0, na = 0.0, nf = 0.0;
  std::size_t coords = 0, kinks = 0;
  for (auto& l : leaves) {
    std::vector<std::size_t> idx(l.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > per_leaf) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(per_leaf);
    }
    const std::vector<double> analytic = l.has_grad() ? std::vector<double>(l.grad().begin(), l.grad().end())
                                                      : std::vector<double>(l.size(), 0.0);
    auto values = l.values_mut();
    ad::NoGradGuard no_grad;
    for (auto i : idx) {
      const double saved = values[i];
      const double mid = f().item();
      double numeric = 0.0;
      bool smooth = false;
      for (double step = h; !smooth && step >= h * 1e-4; step *= 1e-2) {
        values[i] = saved + step;
        const double up = f().item();
        values[i] = saved - step;
        const double down = f().item();
        values[i] = saved;
        const double fwd = (up - mid) / step, bwd = (mid - down) / step;
        numeric = (up - down) / (2.0 * step);
        smooth = std::fabs(fwd - bwd) <= 1e-3 * std::max(1.0, std::fabs(numeric));
      }
      if (!smooth) {
        ++kinks;
        continue;
      }
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      na += analytic[i] * analytic[i];
      nf += numeric * numeric;
      ++coords;
    }
  }
  for (auto& l : leaves) l.zero_grad();
  const double denom = std::max({std::sqrt(na), std::sqrt(nf), 1e-8});
  return {std::sqrt(diff) / denom, coords, kinks};
}

inline ad::Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = u(rng);
  return ad::Tensor::from_values(std::move(shape), std::move(v), true);
}

// Scalarises an output with fixed random weights so every output element
// contributes a distinct sensitivity.
inline ad::Tensor project(const ad::Tensor& out, const ad::Tensor& weights) {
  return ad::sum(ad::mul(out, weights));
}

}  // namespace wwf::testing
