#pragma once

#include <cmath>
#include <cstdint>

#include "pad/rng.hpp"
#include "pad/tensor.hpp"

namespace tst {

inline pad::Tensor random_tensor(pad::Rng& rng, pad::Shape shape, double lo = -1.0,
                                 double hi = 1.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return pad::Tensor(std::move(shape), std::move(v));
}

// Uniform in +-[margin, 1]; keeps finite differences away from activation kinks.
inline pad::Tensor random_tensor_kink_free(pad::Rng& rng, pad::Shape shape,
                                           double margin = 0.05) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) {
    double m = rng.uniform(margin, 1.0);
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return pad::Tensor(std::move(shape), std::move(v));
}

inline double max_abs_diff(const pad::Tensor& a, const pad::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace tst
