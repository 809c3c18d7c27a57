#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <variant>

#include "fwadv/error.hpp"
#include "fwadv/tensor.hpp"

namespace fwadv {

enum class LpKind { L1, L2, Linf };

struct LpBall {
  LpKind p = LpKind::Linf;
  double radius = 0.0;
};

/// Ball of the Schatten-q norm (q = 1 nuclear, q = inf spectral) of the matricized tensor.
struct SchattenBall {
  double q = 1.0;
  double radius = 0.0;
  Matricization mode = Matricization::Stacked;

  bool is_nuclear() const { return q == 1.0; }
  bool is_spectral() const { return std::isinf(q); }
};

/// How the group LMO picks the group that receives the vertex.
/// Spectral maximizes ||d[g]||_{S-inf} / w_g, the dual norm, and yields the exact
/// linear minimizer. Nuclear maximizes ||d[g]||_{S1} / w_g instead; it is kept for
/// comparison only and is not a linear minimizer in general.
enum class GroupSelection { Spectral, Nuclear };

/// Ball of sum_g w_g ||x[g]||_{S1}. Pixels outside every group are pinned at zero.
struct GroupNuclearBall {
  GroupPartition partition;
  double radius = 0.0;
  GroupSelection selection = GroupSelection::Spectral;
};

/// The distortion set around the clean image.
///
/// A radius of zero is accepted and describes the single point {0}; every LMO
/// then returns the zero vertex. This makes the identity attack expressible.
class DistortionBall {
public:
  using Variant = std::variant<LpBall, SchattenBall, GroupNuclearBall>;

  explicit DistortionBall(Variant v) : v_(std::move(v)) {
    const double r = radius();
    if (!(r >= 0.0) || !std::isfinite(r)) throw ValidationError("ball radius must be finite and nonnegative");
    if (const auto* s = std::get_if<SchattenBall>(&v_); s && !(s->q >= 1.0))
      throw ValidationError("Schatten exponent q must lie in [1, inf]");
  }

  static DistortionBall l1(double eps) { return DistortionBall(LpBall{LpKind::L1, eps}); }
  static DistortionBall l2(double eps) { return DistortionBall(LpBall{LpKind::L2, eps}); }
  static DistortionBall linf(double eps) { return DistortionBall(LpBall{LpKind::Linf, eps}); }
  static DistortionBall nuclear(double eps, Matricization mode = Matricization::Stacked) {
    return DistortionBall(SchattenBall{1.0, eps, mode});
  }
  static DistortionBall schatten(double q, double eps, Matricization mode = Matricization::Stacked) {
    return DistortionBall(SchattenBall{q, eps, mode});
  }
  static DistortionBall spectral(double eps, Matricization mode = Matricization::Stacked) {
    return DistortionBall(SchattenBall{std::numeric_limits<double>::infinity(), eps, mode});
  }
  static DistortionBall group_nuclear(GroupPartition partition, double eps,
                                      GroupSelection selection = GroupSelection::Spectral) {
    return DistortionBall(GroupNuclearBall{std::move(partition), eps, selection});
  }

  const Variant& variant() const { return v_; }

  double radius() const {
    return std::visit([](const auto& b) { return b.radius; }, v_);
  }

  DistortionBall with_radius(double eps) const {
    Variant copy = v_;
    std::visit([eps](auto& b) { b.radius = eps; }, copy);
    return DistortionBall(std::move(copy));
  }

  bool is_linf() const {
    const auto* b = std::get_if<LpBall>(&v_);
    return b && b->p == LpKind::Linf;
  }
  bool is_nuclear() const {
    const auto* b = std::get_if<SchattenBall>(&v_);
    return b && b->is_nuclear();
  }
  const GroupNuclearBall* as_group() const { return std::get_if<GroupNuclearBall>(&v_); }

  /// Short family name used in reports.
  std::string name() const {
    return std::visit(
        [](const auto& b) -> std::string {
          using B = std::decay_t<decltype(b)>;
          if constexpr (std::is_same_v<B, LpBall>) {
            switch (b.p) {
              case LpKind::L1: return "l1";
              case LpKind::L2: return "l2";
              case LpKind::Linf: return "linf";
            }
            return "lp";
          } else if constexpr (std::is_same_v<B, SchattenBall>) {
            const std::string suffix = b.mode == Matricization::PerChannel ? "/per-channel" : "";
            if (b.is_nuclear()) return "nuclear" + suffix;
            if (b.is_spectral()) return "schatten-inf" + suffix;
            return "schatten-" + format_real(b.q) + suffix;
          } else {
            return "group-nuclear";
          }
        },
        v_);
  }

private:
  Variant v_;
};

} // namespace fwadv
