#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "fwadv/ball.hpp"
#include "fwadv/linalg.hpp"
#include "fwadv/random.hpp"
#include "fwadv/tensor.hpp"

namespace fwadv {

/// An extreme point returned by the LMO, in perturbation coordinates.
struct LmoVertex {
  ImageTensor tensor;
  std::optional<std::size_t> group; // index of the supporting group, for group balls
  bool degenerate = false; // direction was zero; tensor is the zero vertex
};

namespace detail {

inline double vector_pnorm(std::span<const double> s, double p) {
  if (std::isinf(p)) {
    double m = 0.0;
    for (double x : s) m = std::max(m, std::abs(x));
    return m;
  }
  if (p == 1.0) {
    double acc = 0.0;
    for (double x : s) acc += std::abs(x);
    return acc;
  }
  double m = 0.0;
  for (double x : s) m = std::max(m, std::abs(x));
  if (m == 0.0) return 0.0;
  double acc = 0.0;
  for (double x : s) acc += std::pow(std::abs(x) / m, p);
  return m * std::pow(acc, 1.0 / p);
}

inline double conjugate_exponent(double q) {
  if (q == 1.0) return std::numeric_limits<double>::infinity();
  if (std::isinf(q)) return 1.0;
  return q / (q - 1.0);
}

inline std::vector<double> concatenated_singular_values(const std::vector<Matrix>& blocks) {
  std::vector<double> s;
  for (const auto& b : blocks) {
    const auto sb = singular_values(b);
    s.insert(s.end(), sb.begin(), sb.end());
  }
  return s;
}

// Entries not covered by any group.
inline bool has_mass_outside(const GroupPartition& part, const ImageTensor& x) {
  const auto& s = x.shape();
  std::vector<char> covered(s.size(), 0);
  for (const auto& g : part.groups())
    for (std::size_t c : g.channels)
      for (std::size_t r = g.row_begin; r < g.row_end; ++r)
        for (std::size_t col = g.col_begin; col < g.col_end; ++col) covered[(c * s.height + r) * s.width + col] = 1;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!covered[i] && x[i] != 0.0) return true;
  return false;
}

inline void require_partition_shape(const GroupNuclearBall& b, const ImageTensor& x) {
  if (!(b.partition.shape() == x.shape()))
    throw ValidationError("shape mismatch: partition is " + to_string(b.partition.shape()) + ", tensor is " +
                          to_string(x.shape()));
}

// Top triplet with power iteration, falling back to Jacobi if it stalls.
inline SvdTriplet dominant_pair(const Matrix& m) {
  SvdTriplet t = top_singular_triplet(m, 1e-12, 2000);
  if (!t.converged) t = top_triplet_from_svd(m);
  return t;
}

inline double nuclear_norm(const Matrix& m) {
  double acc = 0.0;
  for (double s : singular_values(m)) acc += s;
  return acc;
}

inline double spectral_norm(const Matrix& m) {
  if (m.is_zero()) return 0.0;
  return singular_values(m)[0];
}

} // namespace detail

/// The norm whose ball is `ball`, evaluated at delta. For group balls, a tensor
/// with mass outside every group lies outside every ball, so its gauge is +inf.
inline double norm_value(const DistortionBall& ball, const ImageTensor& delta) {
  return std::visit(
      [&](const auto& b) -> double {
        using B = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<B, LpBall>) {
          switch (b.p) {
            case LpKind::L1: return l1_norm(delta);
            case LpKind::L2: return l2_norm(delta);
            case LpKind::Linf: return linf_norm(delta);
          }
          return 0.0;
        } else if constexpr (std::is_same_v<B, SchattenBall>) {
          const auto s = detail::concatenated_singular_values(matricize(delta, b.mode));
          return detail::vector_pnorm(s, b.q);
        } else {
          detail::require_partition_shape(b, delta);
          if (detail::has_mass_outside(b.partition, delta)) return std::numeric_limits<double>::infinity();
          double acc = 0.0;
          for (std::size_t k = 0; k < b.partition.size(); ++k)
            acc += b.partition.weights()[k] * detail::nuclear_norm(extract_group(delta, b.partition.groups()[k]));
          return acc;
        }
      },
      ball.variant());
}

/// Dual norm of the ball's norm: <d, lmo(d)> = -radius * dual_norm_value(d).
inline double dual_norm_value(const DistortionBall& ball, const ImageTensor& d) {
  return std::visit(
      [&](const auto& b) -> double {
        using B = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<B, LpBall>) {
          switch (b.p) {
            case LpKind::L1: return linf_norm(d);
            case LpKind::L2: return l2_norm(d);
            case LpKind::Linf: return l1_norm(d);
          }
          return 0.0;
        } else if constexpr (std::is_same_v<B, SchattenBall>) {
          const auto s = detail::concatenated_singular_values(matricize(d, b.mode));
          return detail::vector_pnorm(s, detail::conjugate_exponent(b.q));
        } else {
          detail::require_partition_shape(b, d);
          double best = 0.0;
          for (std::size_t k = 0; k < b.partition.size(); ++k)
            best = std::max(best, detail::spectral_norm(extract_group(d, b.partition.groups()[k])) /
                                      b.partition.weights()[k]);
          return best;
        }
      },
      ball.variant());
}

/// Appendix-style mixed group norm (sum_g ||x[g]||_{S(p)}^r)^(1/r). Evaluation only.
inline double group_norm_general(const GroupPartition& part, const ImageTensor& x, double r, double p) {
  if (!(r >= 1.0)) throw ValidationError("outer exponent r must be >= 1");
  if (!(p >= 1.0)) throw ValidationError("Schatten exponent p must be >= 1");
  if (!(part.shape() == x.shape())) throw ValidationError("shape mismatch between partition and tensor");
  std::vector<double> per_group;
  for (const auto& g : part.groups()) per_group.push_back(detail::vector_pnorm(singular_values(extract_group(x, g)), p));
  return detail::vector_pnorm(per_group, r);
}

namespace detail {

inline LmoVertex zero_vertex(const Shape& s) { return LmoVertex{ImageTensor(s), std::nullopt, true}; }

inline LmoVertex lmo_lp(const LpBall& b, const ImageTensor& d) {
  LmoVertex out{ImageTensor(d.shape()), std::nullopt, false};
  const double eps = b.radius;
  switch (b.p) {
    case LpKind::Linf:
      for (std::size_t i = 0; i < d.size(); ++i) out.tensor[i] = d[i] > 0.0 ? -eps : (d[i] < 0.0 ? eps : 0.0);
      break;
    case LpKind::L1: {
      std::size_t best = 0;
      for (std::size_t i = 1; i < d.size(); ++i)
        if (std::abs(d[i]) > std::abs(d[best])) best = i;
      out.tensor[best] = d[best] > 0.0 ? -eps : eps;
      break;
    }
    case LpKind::L2: {
      const double n = l2_norm(d);
      for (std::size_t i = 0; i < d.size(); ++i) out.tensor[i] = -eps * d[i] / n;
      break;
    }
  }
  return out;
}

inline LmoVertex lmo_schatten(const SchattenBall& b, const ImageTensor& d) {
  const double eps = b.radius;
  auto blocks = matricize(d, b.mode);
  std::vector<Matrix> vertex_blocks;
  vertex_blocks.reserve(blocks.size());
  for (const auto& blk : blocks) vertex_blocks.emplace_back(blk.rows, blk.cols);

  if (b.is_nuclear()) {
    // Rank one on the block with the largest top singular value.
    std::optional<std::size_t> best;
    SvdTriplet best_pair;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      if (blocks[k].is_zero()) continue;
      SvdTriplet t = dominant_pair(blocks[k]);
      if (!best || t.sigma > best_pair.sigma) {
        best = k;
        best_pair = std::move(t);
      }
    }
    vertex_blocks[*best] = outer(best_pair.u, best_pair.v, -eps);
  } else {
    std::vector<SvdResult> svds;
    std::vector<double> all_s;
    for (const auto& blk : blocks) {
      svds.push_back(full_svd(blk));
      all_s.insert(all_s.end(), svds.back().s.begin(), svds.back().s.end());
    }
    if (b.is_spectral()) {
      for (std::size_t k = 0; k < blocks.size(); ++k) {
        std::vector<double> ones(svds[k].s.size(), -eps);
        vertex_blocks[k] = reconstruct(svds[k], ones);
      }
    } else {
      const double qd = conjugate_exponent(b.q);
      const double dual = vector_pnorm(all_s, qd);
      for (std::size_t k = 0; k < blocks.size(); ++k) {
        std::vector<double> weights(svds[k].s.size());
        for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = -eps * std::pow(svds[k].s[i] / dual, qd - 1.0);
        vertex_blocks[k] = reconstruct(svds[k], weights);
      }
    }
  }
  return LmoVertex{dematricize(vertex_blocks, d.shape(), b.mode), std::nullopt, false};
}

} // namespace detail

/// Group LMO restricted to the groups listed in `active` (all groups when empty).
/// Ties break to the lowest group index.
inline LmoVertex lmo_group(const GroupNuclearBall& b, const ImageTensor& d, std::span<const std::size_t> active = {}) {
  detail::require_partition_shape(b, d);
  if (!d.all_finite()) throw ValidationError("lmo: direction has non-finite entries");
  const auto& groups = b.partition.groups();
  const auto& weights = b.partition.weights();
  std::vector<std::size_t> candidates(active.begin(), active.end());
  if (candidates.empty())
    for (std::size_t k = 0; k < groups.size(); ++k) candidates.push_back(k);

  std::optional<std::size_t> best;
  double best_score = 0.0;
  SvdTriplet best_pair;
  for (std::size_t k : candidates) {
    if (k >= groups.size()) throw ValidationError("lmo: group index out of range");
    const Matrix m = extract_group(d, groups[k]);
    if (m.is_zero()) continue;
    SvdTriplet t;
    double score = 0.0;
    if (b.selection == GroupSelection::Spectral) {
      t = detail::dominant_pair(m);
      score = t.sigma / weights[k];
    } else {
      score = detail::nuclear_norm(m) / weights[k];
    }
    if (!best || score > best_score) {
      best = k;
      best_score = score;
      best_pair = std::move(t);
    }
  }
  if (!best || b.radius == 0.0) return detail::zero_vertex(d.shape());
  if (b.selection == GroupSelection::Nuclear) best_pair = detail::dominant_pair(extract_group(d, groups[*best]));

  ImageTensor vertex(d.shape());
  scatter_group(vertex, groups[*best], outer(best_pair.u, best_pair.v, -b.radius / weights[*best]));
  return LmoVertex{std::move(vertex), best, false};
}

/// argmin over the ball of <d, v>. Frank-Wolfe calls this with d = gradient.
/// A zero direction returns the zero vertex flagged degenerate.
inline LmoVertex lmo(const DistortionBall& ball, const ImageTensor& d) {
  if (!d.all_finite()) throw ValidationError("lmo: direction has non-finite entries");
  if (const auto* g = ball.as_group()) return lmo_group(*g, d);
  if (linf_norm(d) == 0.0 || ball.radius() == 0.0) {
    auto v = detail::zero_vertex(d.shape());
    v.degenerate = linf_norm(d) == 0.0;
    return v;
  }
  return std::visit(
      [&](const auto& b) -> LmoVertex {
        using B = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<B, LpBall>) return detail::lmo_lp(b, d);
        else if constexpr (std::is_same_v<B, SchattenBall>) return detail::lmo_schatten(b, d);
        else return lmo_group(b, d);
      },
      ball.variant());
}

/// Euclidean projection onto the ball. Available for l-inf, l2 and the nuclear ball.
inline ImageTensor project(const DistortionBall& ball, const ImageTensor& delta) {
  const double eps = ball.radius();
  return std::visit(
      [&](const auto& b) -> ImageTensor {
        using B = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<B, LpBall>) {
          if (b.p == LpKind::Linf) {
            ImageTensor out = delta;
            for (auto& v : out.values()) v = std::clamp(v, -eps, eps);
            return out;
          }
          if (b.p == LpKind::L2) {
            const double n = l2_norm(delta);
            if (n <= eps) return delta;
            return (eps / n) * delta;
          }
        } else if constexpr (std::is_same_v<B, SchattenBall>) {
          if (b.is_nuclear()) {
            auto blocks = matricize(delta, b.mode);
            std::vector<SvdResult> svds;
            std::vector<double> all_s;
            for (const auto& blk : blocks) {
              svds.push_back(full_svd(blk));
              all_s.insert(all_s.end(), svds.back().s.begin(), svds.back().s.end());
            }
            double total = 0.0;
            for (double s : all_s) total += s;
            if (total <= eps) return delta;
            if (eps == 0.0) return ImageTensor(delta.shape());
            const auto shrunk = project_l1_ball(all_s, eps);
            std::size_t offset = 0;
            for (std::size_t k = 0; k < blocks.size(); ++k) {
              const std::size_t n = svds[k].s.size();
              blocks[k] = reconstruct(svds[k], std::span<const double>(shrunk).subspan(offset, n));
              offset += n;
            }
            return dematricize(blocks, delta.shape(), b.mode);
          }
        }
        throw ValidationError("projection not available for this ball");
      },
      ball.variant());
}

/// A seeded random point inside the ball. Spectral-family balls draw a scaled
/// rank-one matrix t * radius * u v^T on a uniformly chosen block or group.
inline ImageTensor sample_in_ball(const DistortionBall& ball, const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  const double eps = ball.radius();
  ImageTensor out(shape);

  auto unit_vector = [&rng](std::size_t n) {
    std::vector<double> v(n);
    double len = 0.0;
    while (len == 0.0) {
      for (auto& x : v) x = rng.normal();
      len = detail::norm2(v);
    }
    for (auto& x : v) x /= len;
    return v;
  };

  std::visit(
      [&](const auto& b) {
        using B = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<B, LpBall>) {
          if (b.p == LpKind::Linf) {
            for (auto& v : out.values()) v = rng.uniform(-eps, eps);
            return;
          }
          const double t = rng.uniform();
          if (b.p == LpKind::L2) {
            const auto dir = unit_vector(out.size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = t * eps * dir[i];
          } else {
            std::vector<double> w(out.size());
            double total = 0.0;
            for (auto& x : w) {
              x = -std::log(1.0 - rng.uniform());
              total += x;
            }
            for (std::size_t i = 0; i < out.size(); ++i)
              out[i] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * t * eps * w[i] / total;
          }
        } else if constexpr (std::is_same_v<B, SchattenBall>) {
          auto blocks = matricize(out, b.mode);
          const std::size_t k = static_cast<std::size_t>(rng.below(blocks.size()));
          const double t = rng.uniform();
          const auto u = unit_vector(blocks[k].rows);
          const auto v = unit_vector(blocks[k].cols);
          blocks[k] = outer(u, v, t * eps);
          out = dematricize(blocks, shape, b.mode);
        } else {
          if (!(b.partition.shape() == shape)) throw ValidationError("shape mismatch between partition and sample");
          const std::size_t k = static_cast<std::size_t>(rng.below(b.partition.size()));
          const auto& g = b.partition.groups()[k];
          const double t = rng.uniform();
          const auto u = unit_vector(g.matrix_rows());
          const auto v = unit_vector(g.cols());
          scatter_group(out, g, outer(u, v, t * eps / b.partition.weights()[k]));
        }
      },
      ball.variant());
  return out;
}

} // namespace fwadv
