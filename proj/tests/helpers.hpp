#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "mmcgan/rng.hpp"
#include "mmcgan/tensor.hpp"

namespace testutil {

inline mmc::Tensor random_tensor(mmc::Rng& rng, std::vector<std::size_t> shape,
                                 double lo = -1.0, double hi = 1.0) {
  mmc::Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Max-norm relative disagreement between two gradient tensors.
inline double rel_err(const mmc::Tensor& a, const mmc::Tensor& b) {
  double diff = 0.0, mag = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    mag = std::max({mag, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / std::max(mag, 1e-12);
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-300);
}

}  // namespace testutil
