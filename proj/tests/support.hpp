#pragma once

#include <cstdint>

#include "fwadv/fwadv.hpp"

namespace fwadv::testing {

inline ImageTensor random_tensor(const Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  ImageTensor x(s);
  for (auto& v : x.values()) v = rng.uniform(lo, hi);
  return x;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (auto& v : m.data) v = rng.normal();
  return m;
}

inline ImageTensor from_matrix(const Matrix& m) { return ImageTensor(Shape{1, m.rows, m.cols}, m.data); }

inline double max_abs_diff(const ImageTensor& a, const ImageTensor& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

inline double frobenius_distance(const ImageTensor& a, const ImageTensor& b) { return l2_norm(a - b); }

} // namespace fwadv::testing
