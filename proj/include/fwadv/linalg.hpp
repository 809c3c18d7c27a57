#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "fwadv/error.hpp"
#include "fwadv/random.hpp"
#include "fwadv/tensor.hpp"

namespace fwadv {

/// A singular value with its left (rows) and right (cols) unit singular vectors.
struct SvdTriplet {
  double sigma = 0.0;
  std::vector<double> u;
  std::vector<double> v;
  bool converged = true;
  std::size_t iterations = 0;
};

struct SvdResult {
  Matrix u; // rows x k, orthonormal columns
  std::vector<double> s; // k = min(rows, cols), nonincreasing
  Matrix v; // cols x k, orthonormal columns
};

namespace detail {

inline double norm2(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc);
}

inline void scale(std::span<double> x, double a) {
  for (auto& v : x) v *= a;
}

inline void mat_vec(const Matrix& m, std::span<const double> x, std::span<double> out) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    double acc = 0.0;
    const double* row = m.data.data() + i * m.cols;
    for (std::size_t j = 0; j < m.cols; ++j) acc += row[j] * x[j];
    out[i] = acc;
  }
}

inline void mat_t_vec(const Matrix& m, std::span<const double> x, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* row = m.data.data() + i * m.cols;
    for (std::size_t j = 0; j < m.cols; ++j) out[j] += row[j] * xi;
  }
}

// Flip (u, v) together so the first clearly nonzero entry of u is positive.
inline void canonicalize_signs(std::span<double> u, std::span<double> v) {
  const double big = *std::max_element(u.begin(), u.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
  const double threshold = 1e-12 * std::abs(big);
  for (double x : u) {
    if (std::abs(x) > threshold) {
      if (x < 0.0) {
        scale(u, -1.0);
        scale(v, -1.0);
      }
      return;
    }
  }
}

// One-sided Jacobi on the columns of a (rows >= cols). Returns the thin SVD.
inline SvdResult jacobi_tall(Matrix a) {
  const std::size_t m = a.rows;
  const std::size_t n = a.cols;
  Matrix v = Matrix::identity(n);
  constexpr double eps = 1e-15;
  constexpr int max_sweeps = 80;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double ap = a(i, p), aq = a(i, q);
          alpha += ap * ap;
          beta += aq * aq;
          gamma += ap * aq;
        }
        if (gamma == 0.0 || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double ap = a(i, p), aq = a(i, q);
          a(i, p) = c * ap - s * aq;
          a(i, q) = s * ap + c * aq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += a(i, j) * a(i, j);
    sigma[j] = std::sqrt(acc);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  SvdResult out{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
  const double top = n ? sigma[order[0]] : 0.0;
  std::vector<bool> filled(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.s[k] = sigma[j];
    for (std::size_t i = 0; i < n; ++i) out.v(i, k) = v(i, j);
    if (sigma[j] > 0.0 && sigma[j] > 1e-14 * top) {
      for (std::size_t i = 0; i < m; ++i) out.u(i, k) = a(i, j) / sigma[j];
      filled[k] = true;
    }
  }

  // Complete U with an orthonormal basis for the numerically null directions.
  std::size_t candidate = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (filled[k]) continue;
    std::vector<double> w(m);
    while (candidate < m) {
      std::fill(w.begin(), w.end(), 0.0);
      w[candidate++] = 1.0;
      for (int pass = 0; pass < 2; ++pass)
        for (std::size_t o = 0; o < n; ++o) {
          if (!filled[o]) continue;
          double proj = 0.0;
          for (std::size_t i = 0; i < m; ++i) proj += out.u(i, o) * w[i];
          for (std::size_t i = 0; i < m; ++i) w[i] -= proj * out.u(i, o);
        }
      const double len = norm2(w);
      if (len > 1e-6) {
        for (std::size_t i = 0; i < m; ++i) out.u(i, k) = w[i] / len;
        filled[k] = true;
        break;
      }
    }
  }
  return out;
}

} // namespace detail

/// Thin SVD by one-sided Jacobi rotations. Meant for desk-scale matrices
/// (a few hundred rows and columns at most).
inline SvdResult full_svd(const Matrix& m) {
  if (m.rows == 0 || m.cols == 0) throw ValidationError("full_svd: empty matrix");
  for (double x : m.data)
    if (!std::isfinite(x)) throw ValidationError("full_svd: non-finite entry");
  if (m.rows >= m.cols) return detail::jacobi_tall(m);
  SvdResult t = detail::jacobi_tall(m.transposed());
  return SvdResult{std::move(t.v), std::move(t.s), std::move(t.u)};
}

inline std::vector<double> singular_values(const Matrix& m) { return full_svd(m).s; }

/// Number of singular values above rel_tol times the largest one.
inline std::size_t numerical_rank(std::span<const double> sorted_singular_values, double rel_tol = 1e-8) {
  if (sorted_singular_values.empty() || sorted_singular_values[0] <= 0.0) return 0;
  const double cutoff = rel_tol * sorted_singular_values[0];
  return static_cast<std::size_t>(
      std::count_if(sorted_singular_values.begin(), sorted_singular_values.end(), [&](double s) { return s > cutoff; }));
}

inline std::size_t numerical_rank(const Matrix& m, double rel_tol = 1e-8) {
  const auto s = singular_values(m);
  return numerical_rank(s, rel_tol);
}

/// Dominant singular triplet by alternating power iteration (v <- M^T u, u <- M v).
///
/// Stops once the residual ||M v - sigma u|| falls below tol * sigma; M^T u = sigma v
/// holds by construction at every step. A run that hits max_iter returns the last
/// iterate with converged = false.
inline SvdTriplet top_singular_triplet(const Matrix& m, double tol = 1e-9, std::size_t max_iter = 1000,
                                       std::uint64_t seed = 0) {
  if (m.rows == 0 || m.cols == 0) throw ValidationError("top_singular_triplet: empty matrix");
  for (double x : m.data)
    if (!std::isfinite(x)) throw ValidationError("top_singular_triplet: non-finite entry");
  if (m.is_zero()) throw ValidationError("zero matrix has no dominant pair");

  Rng rng(seed);
  SvdTriplet out;
  out.u.assign(m.rows, 0.0);
  out.v.assign(m.cols, 0.0);
  std::vector<double> mv(m.rows);

  // A start vector in the null space of M is possible in exact arithmetic only;
  // redraw a bounded number of times before giving up.
  double len = 0.0;
  for (int attempt = 0; attempt < 8 && len == 0.0; ++attempt) {
    for (auto& x : out.v) x = rng.normal();
    detail::scale(out.v, 1.0 / detail::norm2(out.v));
    detail::mat_vec(m, out.v, mv);
    len = detail::norm2(mv);
  }
  if (len == 0.0) throw RuntimeFailure("top_singular_triplet: start vector annihilated by matrix");

  out.converged = false;
  std::size_t it = 0;
  for (; it < max_iter; ++it) {
    for (std::size_t i = 0; i < m.rows; ++i) out.u[i] = mv[i] / len;
    detail::mat_t_vec(m, out.u, out.v);
    const double sigma = detail::norm2(out.v);
    detail::scale(out.v, 1.0 / sigma);
    detail::mat_vec(m, out.v, mv);
    double res = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) res += (mv[i] - sigma * out.u[i]) * (mv[i] - sigma * out.u[i]);
    len = detail::norm2(mv);
    if (std::sqrt(res) <= tol * sigma) {
      out.converged = true;
      ++it;
      break;
    }
  }
  out.iterations = it;
  out.sigma = len;
  for (std::size_t i = 0; i < m.rows; ++i) out.u[i] = mv[i] / len;
  detail::canonicalize_signs(out.u, out.v);
  return out;
}

/// Top triplet taken from the Jacobi SVD, with the same sign convention.
inline SvdTriplet top_triplet_from_svd(const Matrix& m) {
  const SvdResult svd = full_svd(m);
  SvdTriplet t;
  t.sigma = svd.s[0];
  t.u.resize(m.rows);
  t.v.resize(m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) t.u[i] = svd.u(i, 0);
  for (std::size_t j = 0; j < m.cols; ++j) t.v[j] = svd.v(j, 0);
  detail::canonicalize_signs(t.u, t.v);
  return t;
}

/// Euclidean projection onto {w : ||w||_1 <= radius} by sort-and-threshold.
inline std::vector<double> project_l1_ball(std::span<const double> v, double radius) {
  if (!(radius > 0.0)) throw ValidationError("project_l1_ball: radius must be positive");
  double total = 0.0;
  for (double x : v) total += std::abs(x);
  std::vector<double> w(v.begin(), v.end());
  if (total <= radius) return w;

  std::vector<double> mags(v.size());
  std::transform(v.begin(), v.end(), mags.begin(), [](double x) { return std::abs(x); });
  std::sort(mags.begin(), mags.end(), std::greater<>());
  double running = 0.0;
  double theta = 0.0;
  for (std::size_t k = 0; k < mags.size(); ++k) {
    running += mags[k];
    const double candidate = (running - radius) / static_cast<double>(k + 1);
    if (mags[k] - candidate > 0.0) theta = candidate;
  }
  for (auto& x : w) {
    const double shrunk = std::max(std::abs(x) - theta, 0.0);
    x = x < 0.0 ? -shrunk : shrunk;
  }
  return w;
}

/// U diag(s) V^T.
inline Matrix reconstruct(const SvdResult& svd, std::span<const double> s) {
  Matrix out(svd.u.rows, svd.v.rows);
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k] == 0.0) continue;
    for (std::size_t i = 0; i < out.rows; ++i) {
      const double ui = svd.u(i, k) * s[k];
      if (ui == 0.0) continue;
      for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += ui * svd.v(j, k);
    }
  }
  return out;
}

inline Matrix outer(std::span<const double> u, std::span<const double> v, double scale = 1.0) {
  Matrix out(u.size(), v.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) out(i, j) = scale * u[i] * v[j];
  return out;
}

} // namespace fwadv
