#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fwadv/ball.hpp"
#include "fwadv/frank_wolfe.hpp"
#include "fwadv/linalg.hpp"
#include "fwadv/models.hpp"
#include "fwadv/norm_balls.hpp"
#include "fwadv/tensor.hpp"

namespace fwadv {

enum class AttackKind { Fgsm, Pgd, PgdNuclear, FrankWolfe };

inline std::string attack_name(AttackKind k) {
  switch (k) {
    case AttackKind::Fgsm: return "fgsm";
    case AttackKind::Pgd: return "pgd";
    case AttackKind::PgdNuclear: return "pgd-nucl";
    case AttackKind::FrankWolfe: return "fw";
  }
  return "unknown";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  if (s == "fgsm") return AttackKind::Fgsm;
  if (s == "pgd") return AttackKind::Pgd;
  if (s == "pgd-nucl" || s == "pgdnucl") return AttackKind::PgdNuclear;
  if (s == "fw" || s == "fwnucl") return AttackKind::FrankWolfe;
  throw ValidationError("unknown attack '" + s + "' (expected fgsm, pgd, pgd-nucl or fw)");
}

struct AttackConfig {
  DistortionBall ball = DistortionBall::linf(8.0 / 255.0);
  std::size_t steps = 20;
  StepRule rule = ShortStep{1.0}; // Frank-Wolfe attacks
  double step_size = 0.01; // alpha, PGD family
  bool random_start = false;
  std::uint64_t seed = 0;
  bool clamp_final = true;
  LossSpec::Mode loss_mode = LossSpec::Mode::Untargeted;
  std::size_t target_label = 0; // used when loss_mode is Targeted
  std::size_t block_count = 0; // > 0 selects the randomized block variant (group balls)
  bool record_history = false;

  LossSpec loss_for(std::size_t true_label) const {
    return loss_mode == LossSpec::Mode::Untargeted ? LossSpec::untargeted(true_label) : LossSpec::targeted(target_label);
  }
};

struct AttackStep {
  double loss = 0.0;
  double gap = 0.0; // Frank-Wolfe gap; 0 for the PGD family
  bool success = false;
};

struct AttackResult {
  ImageTensor x_adv;
  ImageTensor perturbation; // x_adv - x, bit for bit
  bool success = false;
  std::size_t prediction = 0;
  double final_loss = 0.0;
  double l2 = 0.0;
  double nuclear = 0.0; // nuclear norm of the stacked (c*h) x w matricization
  double linf = 0.0;
  std::size_t nonzero_pixels = 0;
  double pre_clamp_l2 = 0.0;
  double pre_clamp_nuclear = 0.0;
  std::vector<AttackStep> history;
  bool aborted = false;
  std::string diagnostic;
};

/// Entrywise min(1, max(0, x)).
inline ImageTensor clamp_box(ImageTensor x) {
  for (auto& v : x.values()) v = std::min(1.0, std::max(0.0, v));
  return x;
}

inline double stacked_nuclear_norm(const ImageTensor& delta) {
  double acc = 0.0;
  for (double s : singular_values(matricize(delta, Matricization::Stacked)[0])) acc += s;
  return acc;
}

/// Entries whose magnitude is at least one 8-bit level after rounding |d|*255 half-up.
inline std::size_t count_nonzero_pixels(const ImageTensor& delta) {
  std::size_t n = 0;
  for (double v : delta.values()) n += std::floor(std::abs(v) * 255.0 + 0.5) >= 1.0;
  return n;
}

namespace detail {

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// base + step * sign(-gradient): one signed descent step on the attack objective.
inline ImageTensor sign_step(const ImageTensor& base, const ImageTensor& gradient, double step) {
  ImageTensor out = base;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = base[i] + step * sgn(-gradient[i]);
  return out;
}

inline AttackResult finalize(const GradientModel& model, const ImageTensor& x, ImageTensor x_adv, const LossSpec& spec,
                             const ImageTensor& pre_clamp_delta) {
  AttackResult r;
  r.perturbation = x_adv - x;
  r.x_adv = std::move(x_adv);
  const auto eval = adversarial_objective(model, r.x_adv, spec);
  r.final_loss = eval.loss;
  r.prediction = model.predict(r.x_adv);
  r.success = spec.achieved_by(r.prediction);
  r.l2 = l2_norm(r.perturbation);
  r.nuclear = stacked_nuclear_norm(r.perturbation);
  r.linf = linf_norm(r.perturbation);
  r.nonzero_pixels = count_nonzero_pixels(r.perturbation);
  r.pre_clamp_l2 = l2_norm(pre_clamp_delta);
  r.pre_clamp_nuclear = stacked_nuclear_norm(pre_clamp_delta);
  return r;
}

inline void require_linf(const AttackConfig& cfg, const char* who) {
  if (!cfg.ball.is_linf()) throw ValidationError(std::string(who) + " requires an l-inf ball");
}

} // namespace detail

/// x_adv = clamp(x + eps * sign(-grad)), i.e. one step ascending the true-label loss.
inline AttackResult fgsm(const GradientModel& model, const ImageTensor& x, std::size_t label, const AttackConfig& cfg) {
  detail::require_linf(cfg, "fgsm");
  const LossSpec spec = cfg.loss_for(label);
  const double eps = cfg.ball.radius();
  const auto grad = adversarial_objective(model, x, spec).gradient;
  ImageTensor stepped = detail::sign_step(x, grad, eps);
  const ImageTensor pre = stepped - x;
  return detail::finalize(model, x, clamp_box(std::move(stepped)), spec, pre);
}

/// Signed-gradient PGD on the l-inf ball, projected onto the ball and the [0,1] box
/// after every step.
inline AttackResult pgd(const GradientModel& model, const ImageTensor& x, std::size_t label, const AttackConfig& cfg) {
  detail::require_linf(cfg, "pgd");
  if (cfg.steps == 0) throw ValidationError("pgd: steps must be >= 1");
  if (!(cfg.step_size >= 0.0)) throw ValidationError("pgd: step size must be nonnegative");
  const LossSpec spec = cfg.loss_for(label);
  const double eps = cfg.ball.radius();

  auto project = [&](ImageTensor y) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::min(std::max(y[i], x[i] - eps), x[i] + eps);
    return clamp_box(std::move(y));
  };

  ImageTensor cur = x;
  if (cfg.random_start) cur = project(x + sample_in_ball(cfg.ball, x.shape(), cfg.seed));

  std::vector<AttackStep> history;
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const auto eval = adversarial_objective(model, cur, spec);
    if (cfg.record_history) history.push_back({eval.loss, 0.0, spec.achieved_by(model.predict(cur))});
    cur = project(detail::sign_step(cur, eval.gradient, cfg.step_size));
  }
  const ImageTensor pre = cur - x;
  auto r = detail::finalize(model, x, std::move(cur), spec, pre);
  r.history = std::move(history);
  return r;
}

/// Projected gradient descent in perturbation coordinates:
/// delta <- P(delta - alpha * grad f(center + delta)), `steps` times.
/// `observe` (optional) sees every iterate before its update.
inline ImageTensor projected_gradient_descent(
    const Objective& objective, const DistortionBall& ball, const ImageTensor& center, ImageTensor delta,
    std::size_t steps, double alpha,
    const std::function<void(const ImageTensor&, const LossAndGradient&)>& observe = {}) {
  if (!(alpha >= 0.0)) throw ValidationError("projected gradient: step size must be nonnegative");
  center.require_same_shape(delta);
  for (std::size_t t = 0; t < steps; ++t) {
    const ImageTensor cur = center + delta;
    const auto eval = objective(cur);
    if (observe) observe(cur, eval);
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= alpha * eval.gradient[i];
    delta = project(ball, delta);
  }
  return delta;
}

/// Projected gradient descent on the nuclear ball with a plain (unsigned) gradient.
/// The box is applied once, to the last iterate.
inline AttackResult pgd_nucl(const GradientModel& model, const ImageTensor& x, std::size_t label,
                             const AttackConfig& cfg) {
  if (!cfg.ball.is_nuclear()) throw ValidationError("pgd-nucl requires a nuclear (Schatten q=1) ball");
  if (cfg.steps == 0) throw ValidationError("pgd-nucl: steps must be >= 1");
  if (!(cfg.step_size >= 0.0)) throw ValidationError("pgd-nucl: step size must be nonnegative");
  const LossSpec spec = cfg.loss_for(label);

  ImageTensor delta(x.shape());
  if (cfg.random_start) delta = sample_in_ball(cfg.ball, x.shape(), cfg.seed);

  std::vector<AttackStep> history;
  std::function<void(const ImageTensor&, const LossAndGradient&)> observe;
  if (cfg.record_history)
    observe = [&](const ImageTensor& cur, const LossAndGradient& eval) {
      history.push_back({eval.loss, 0.0, spec.achieved_by(model.predict(cur))});
    };
  delta = projected_gradient_descent(make_objective(model, spec), cfg.ball, x, std::move(delta), cfg.steps,
                                     cfg.step_size, observe);
  ImageTensor out = x + delta;
  if (cfg.clamp_final) out = clamp_box(std::move(out));
  auto r = detail::finalize(model, x, std::move(out), spec, delta);
  r.history = std::move(history);
  return r;
}

/// Frank-Wolfe attack over any distortion ball (FWnucl for the nuclear ball).
/// Runs from x, or from a random point of the ball, and clamps the last iterate.
inline AttackResult fw_attack(const GradientModel& model, const ImageTensor& x, std::size_t label,
                              const AttackConfig& cfg) {
  const LossSpec spec = cfg.loss_for(label);
  const Objective objective = make_objective(model, spec);
  ImageTensor start = x;
  if (cfg.random_start) start = x + sample_in_ball(cfg.ball, x.shape(), cfg.seed);

  RecordOptions rec;
  rec.iterates = cfg.record_history;
  FwTrajectory traj = cfg.block_count > 0
                          ? frank_wolfe_block(objective, cfg.ball, x, start, cfg.steps, cfg.rule, cfg.block_count,
                                              mix_seed(cfg.seed, 0xb10c), rec)
                          : frank_wolfe(objective, cfg.ball, x, start, cfg.steps, cfg.rule, rec);

  const ImageTensor pre = traj.final - x;
  ImageTensor out = cfg.clamp_final ? clamp_box(traj.final) : traj.final;
  auto r = detail::finalize(model, x, std::move(out), spec, pre);
  if (cfg.record_history) {
    for (std::size_t t = 0; t < traj.losses.size(); ++t)
      r.history.push_back({traj.losses[t], traj.gaps[t], spec.achieved_by(model.predict(traj.iterates[t]))});
  }
  if (traj.status == FwStatus::Aborted) {
    r.aborted = true;
    r.diagnostic = traj.diagnostic;
  }
  return r;
}

inline AttackResult run_attack(AttackKind kind, const GradientModel& model, const ImageTensor& x, std::size_t label,
                               const AttackConfig& cfg) {
  switch (kind) {
    case AttackKind::Fgsm: return fgsm(model, x, label, cfg);
    case AttackKind::Pgd: return pgd(model, x, label, cfg);
    case AttackKind::PgdNuclear: return pgd_nucl(model, x, label, cfg);
    case AttackKind::FrankWolfe: return fw_attack(model, x, label, cfg);
  }
  throw ValidationError("unknown attack kind");
}

} // namespace fwadv
