#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "fwadv/ball.hpp"
#include "fwadv/norm_balls.hpp"
#include "fwadv/random.hpp"
#include "fwadv/tensor.hpp"

namespace fwadv {

struct LossAndGradient {
  double loss = 0.0;
  ImageTensor gradient;
};

/// x -> (f(x), grad f(x)).
using Objective = std::function<LossAndGradient(const ImageTensor&)>;

/// gamma = clip(<-g, s - x> / (L ||s - x||^2), 0, 1).
struct ShortStep {
  double lipschitz = 1.0;
};

/// Halve gamma from `init` until the loss decreases; gamma = 0 if it never does.
struct Backtracking {
  double init = 1.0;
  double shrink = 0.5;
  int max_halvings = 30;
};

/// gamma_t = 2 / (t + 2).
struct Harmonic {};

using StepRule = std::variant<ShortStep, Backtracking, Harmonic>;

inline void validate(const StepRule& rule) {
  if (const auto* s = std::get_if<ShortStep>(&rule); s && !(s->lipschitz > 0.0))
    throw ValidationError("short step needs L > 0");
  if (const auto* b = std::get_if<Backtracking>(&rule)) {
    if (!(b->shrink > 0.0 && b->shrink < 1.0)) throw ValidationError("backtracking shrink must lie in (0,1)");
    if (!(b->init > 0.0 && b->init <= 1.0)) throw ValidationError("backtracking init must lie in (0,1]");
  }
}

/// Which per-iteration quantities to keep. Losses, gaps and steps are cheap and on
/// by default; full iterates are opt-in.
struct RecordOptions {
  bool losses = true;
  bool gaps = true;
  bool steps = true;
  bool iterates = false;
  std::size_t iterate_stride = 1;
};

enum class FwStatus { Completed, Aborted };

struct FwTrajectory {
  std::vector<ImageTensor> iterates; // x_t for recorded t (x_0 included)
  std::vector<double> losses; // f(x_t), t = 0..T-1
  std::vector<double> gaps; // <-grad f(x_t), s_t - x_t>
  std::vector<double> steps; // gamma_t
  std::vector<std::size_t> vertex_groups; // supporting group per step (group balls only)
  ImageTensor final;
  double final_loss = 0.0;
  std::size_t iterations = 0;
  FwStatus status = FwStatus::Completed;
  std::string diagnostic;
};

/// <-gradient, s - x>.
inline double fw_gap(const ImageTensor& gradient, const ImageTensor& x, const ImageTensor& s) {
  gradient.require_same_shape(x);
  x.require_same_shape(s);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc -= gradient[i] * (s[i] - x[i]);
  return acc;
}

/// Short step size along r = s - x. Returns 0 for r = 0.
inline double short_step(const ImageTensor& gradient, const ImageTensor& r, double lipschitz) {
  if (!(lipschitz > 0.0)) throw ValidationError("short step needs L > 0");
  const double rr = dot(r, r);
  if (rr == 0.0) return 0.0;
  const double gamma = -dot(gradient, r) / (lipschitz * rr);
  return std::clamp(gamma, 0.0, 1.0);
}

namespace detail {

inline bool finite(const LossAndGradient& e) { return std::isfinite(e.loss) && e.gradient.all_finite(); }

// Shared loop. `vertex_for(t, grad)` returns the LMO vertex in perturbation coordinates.
template <typename VertexFn>
FwTrajectory run_frank_wolfe(const Objective& objective, const DistortionBall& ball, const ImageTensor& center,
                             const ImageTensor& start, std::size_t steps, const StepRule& rule,
                             const RecordOptions& record, VertexFn&& vertex_for) {
  if (steps == 0) throw ValidationError("frank_wolfe: steps must be >= 1");
  validate(rule);
  center.require_same_shape(start);
  ImageTensor delta = start - center;
  {
    const double n = norm_value(ball, delta);
    if (!(n <= ball.radius() * (1.0 + 1e-9) + 1e-12))
      throw ValidationError("frank_wolfe: start point lies outside the ball");
  }

  FwTrajectory traj;
  ImageTensor x = start;
  if (record.iterates) traj.iterates.push_back(x);

  LossAndGradient eval = objective(x);
  for (std::size_t t = 0; t < steps; ++t) {
    if (!finite(eval)) {
      traj.status = FwStatus::Aborted;
      traj.diagnostic = "non-finite loss or gradient at iteration " + std::to_string(t);
      break;
    }
    eval.gradient.require_same_shape(x);

    // lmo is argmin <d, v>, so the descent vertex is lmo(grad f) = argmax <-grad f, v>.
    LmoVertex vertex = vertex_for(t, eval.gradient);
    if (const auto g = vertex.group) traj.vertex_groups.push_back(*g);
    // r = s - x in perturbation coordinates is vertex - delta.
    ImageTensor r = vertex.tensor - delta;
    const double gap = -dot(eval.gradient, r);

    double gamma = 0.0;
    std::optional<LossAndGradient> next_eval;
    if (const auto* s = std::get_if<ShortStep>(&rule)) {
      gamma = short_step(eval.gradient, r, s->lipschitz);
    } else if (const auto* b = std::get_if<Backtracking>(&rule)) {
      double trial = b->init;
      for (int h = 0; h <= b->max_halvings; ++h, trial *= b->shrink) {
        LossAndGradient cand = objective(x + trial * r);
        if (finite(cand) && cand.loss < eval.loss) {
          gamma = trial;
          next_eval = std::move(cand);
          break;
        }
      }
    } else {
      gamma = 2.0 / (static_cast<double>(t) + 2.0);
    }

    if (record.losses) traj.losses.push_back(eval.loss);
    if (record.gaps) traj.gaps.push_back(gap);
    if (record.steps) traj.steps.push_back(gamma);

    if (gamma == 1.0) {
      delta = std::move(vertex.tensor);
    } else if (gamma > 0.0) {
      for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = (1.0 - gamma) * delta[i] + gamma * vertex.tensor[i];
    }
    x = center + delta;
    traj.iterations = t + 1;
    if (record.iterates && ((t + 1) % std::max<std::size_t>(record.iterate_stride, 1) == 0 || t + 1 == steps))
      traj.iterates.push_back(x);

    eval = next_eval && gamma > 0.0 ? std::move(*next_eval) : objective(x);
  }

  if (traj.status == FwStatus::Completed && !finite(eval)) {
    traj.status = FwStatus::Aborted;
    traj.diagnostic = "non-finite loss or gradient at final iterate";
  }
  traj.final_loss = eval.loss;
  traj.final = std::move(x);
  return traj;
}

} // namespace detail

/// Vanilla Frank-Wolfe over {x : ||x - center|| <= radius}.
///
/// Each step takes s_t = center + argmax_{v in ball} <-grad f(x_t), v>, which is
/// lmo(ball, grad f(x_t)) under the argmin convention, and moves to
/// (1 - gamma_t) x_t + gamma_t s_t. The update is carried out on delta = x - center,
/// so every iterate is an exact convex combination of start and vertices.
/// No box constraint is applied here.
inline FwTrajectory frank_wolfe(const Objective& objective, const DistortionBall& ball, const ImageTensor& center,
                                const ImageTensor& start, std::size_t steps, const StepRule& rule,
                                const RecordOptions& record = {}) {
  return detail::run_frank_wolfe(objective, ball, center, start, steps, rule, record,
                                 [&](std::size_t, const ImageTensor& d) { return lmo(ball, d); });
}

/// Randomized block variant for group balls: each iteration draws `block_count`
/// distinct groups uniformly and solves the group LMO over those groups only.
inline FwTrajectory frank_wolfe_block(const Objective& objective, const DistortionBall& ball, const ImageTensor& center,
                                      const ImageTensor& start, std::size_t steps, const StepRule& rule,
                                      std::size_t block_count, std::uint64_t seed, const RecordOptions& record = {}) {
  const auto* group_ball = ball.as_group();
  if (!group_ball) throw ValidationError("frank_wolfe_block requires a group-nuclear ball");
  const std::size_t n_groups = group_ball->partition.size();
  if (block_count < 1 || block_count > n_groups)
    throw ValidationError("block count must lie in [1, number of groups]");

  Rng rng(seed);
  std::vector<std::size_t> pool(n_groups);
  return detail::run_frank_wolfe(objective, ball, center, start, steps, rule, record,
                                 [&](std::size_t, const ImageTensor& d) {
                                   for (std::size_t k = 0; k < n_groups; ++k) pool[k] = k;
                                   // Partial Fisher-Yates: the first block_count slots are the draw.
                                   for (std::size_t k = 0; k < block_count; ++k) {
                                     const std::size_t j = k + static_cast<std::size_t>(rng.below(n_groups - k));
                                     std::swap(pool[k], pool[j]);
                                   }
                                   std::vector<std::size_t> chosen(pool.begin(),
                                                                   pool.begin() + static_cast<std::ptrdiff_t>(block_count));
                                   std::sort(chosen.begin(), chosen.end());
                                   if (group_ball->radius == 0.0) return lmo(ball, d);
                                   return lmo_group(*group_ball, d, chosen);
                                 });
}

} // namespace fwadv
