#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fwadv/attacks.hpp"
#include "fwadv/dataset.hpp"
#include "fwadv/group_spec.hpp"
#include "fwadv/models.hpp"
#include "fwadv/random.hpp"

namespace fwadv {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is processed
/// exactly once; callers write results into slot i so output order never depends
/// on scheduling.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// One row of an accuracy-under-attack table. Percentages are in [0, 100].
struct MetricsRow {
  std::string attack;
  std::string ball;
  double eps = 0.0;
  std::size_t steps = 0;
  double clean_accuracy = 0.0;
  double attacked_accuracy = 0.0;
  double success_rate = 0.0; // over originally correct images
  double mean_l2 = 0.0;
  double mean_nuclear = 0.0;
  double mean_linf = 0.0;
  double mean_nonzero_pixels = 0.0;
  // Secondary columns.
  double success_rate_all = 0.0; // over every image
  double successful_mean_l2 = 0.0;
  double successful_mean_nuclear = 0.0;
  double successful_mean_linf = 0.0;
  double successful_mean_nonzero_pixels = 0.0;
  std::size_t images = 0;
  std::size_t clean_correct = 0;
  std::size_t successes = 0;
};

struct ReportMeta {
  std::string model_id;
  std::string dataset_id;
  std::uint64_t seed = 0;
  std::optional<double> wall_time_s; // omitted unless requested, so reruns stay byte-identical
};

struct MetricsReport {
  ReportMeta meta;
  std::vector<MetricsRow> rows;
};

struct PerImageOutcome {
  bool clean_correct = false;
  AttackResult result;
};

struct Evaluation {
  MetricsRow row;
  std::vector<PerImageOutcome> outcomes;
};

/// (model, x, label, per-image seed) -> result.
using AttackFn = std::function<AttackResult(const GradientModel&, const ImageTensor&, std::size_t, std::uint64_t)>;

struct EvalOptions {
  std::size_t threads = 1;
  std::optional<double> auto_weight_kappa; // per-image variance weights for group balls
};

struct PerturbationStats {
  double mean_l2 = 0.0, median_l2 = 0.0;
  double mean_nuclear = 0.0, median_nuclear = 0.0;
  double mean_linf = 0.0, median_linf = 0.0;
  double mean_nonzero_pixels = 0.0, median_nonzero_pixels = 0.0;
  std::size_t count = 0;
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace detail

inline PerturbationStats perturbation_stats(const std::vector<const AttackResult*>& results) {
  std::vector<double> l2, nuc, linf, nnz;
  for (const auto* r : results) {
    l2.push_back(r->l2);
    nuc.push_back(r->nuclear);
    linf.push_back(r->linf);
    nnz.push_back(static_cast<double>(r->nonzero_pixels));
  }
  PerturbationStats s;
  s.count = results.size();
  s.mean_l2 = detail::mean_of(l2);
  s.median_l2 = detail::median_of(l2);
  s.mean_nuclear = detail::mean_of(nuc);
  s.median_nuclear = detail::median_of(nuc);
  s.mean_linf = detail::mean_of(linf);
  s.median_linf = detail::median_of(linf);
  s.mean_nonzero_pixels = detail::mean_of(nnz);
  s.median_nonzero_pixels = detail::median_of(nnz);
  return s;
}

inline PerturbationStats perturbation_stats(const std::vector<AttackResult>& results) {
  std::vector<const AttackResult*> ptrs;
  for (const auto& r : results) ptrs.push_back(&r);
  return perturbation_stats(ptrs);
}

/// Runs `attack` on every image. An image counts as accurate under attack only if
/// it was classified correctly before and after the attack, so
/// attacked_accuracy + success share of clean-correct images add up exactly.
inline Evaluation evaluate_attack(const GradientModel& model, const Dataset& ds, const AttackFn& attack,
                                  const std::string& attack_label, const std::string& ball_label, double eps,
                                  std::size_t steps, std::uint64_t seed, const EvalOptions& opt = {}) {
  if (ds.empty()) throw ValidationError("evaluate_attack: empty dataset");
  Evaluation ev;
  ev.outcomes.resize(ds.size());
  parallel_for(ds.size(), opt.threads, [&](std::size_t i) {
    ev.outcomes[i].clean_correct = model.predict(ds.images[i]) == ds.labels[i];
    ev.outcomes[i].result = attack(model, ds.images[i], ds.labels[i], mix_seed(seed, i));
  });

  auto& row = ev.row;
  row.attack = attack_label;
  row.ball = ball_label;
  row.eps = eps;
  row.steps = steps;
  row.images = ds.size();
  std::size_t still_correct = 0, success_any = 0;
  std::vector<const AttackResult*> all, successful;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& o = ev.outcomes[i];
    const bool adv_correct = o.result.prediction == ds.labels[i];
    row.clean_correct += o.clean_correct;
    still_correct += o.clean_correct && adv_correct;
    if (o.clean_correct && o.result.success) ++row.successes;
    success_any += o.result.success;
    all.push_back(&o.result);
    if (o.result.success) successful.push_back(&o.result);
  }
  const double n = static_cast<double>(ds.size());
  row.clean_accuracy = 100.0 * static_cast<double>(row.clean_correct) / n;
  row.attacked_accuracy = 100.0 * static_cast<double>(still_correct) / n;
  row.success_rate =
      row.clean_correct ? 100.0 * static_cast<double>(row.successes) / static_cast<double>(row.clean_correct) : 0.0;
  row.success_rate_all = 100.0 * static_cast<double>(success_any) / n;
  const auto s_all = perturbation_stats(all);
  row.mean_l2 = s_all.mean_l2;
  row.mean_nuclear = s_all.mean_nuclear;
  row.mean_linf = s_all.mean_linf;
  row.mean_nonzero_pixels = s_all.mean_nonzero_pixels;
  const auto s_ok = perturbation_stats(successful);
  row.successful_mean_l2 = s_ok.mean_l2;
  row.successful_mean_nuclear = s_ok.mean_nuclear;
  row.successful_mean_linf = s_ok.mean_linf;
  row.successful_mean_nonzero_pixels = s_ok.mean_nonzero_pixels;
  return ev;
}

/// Builds the per-image attack closure for a configured attack. The per-image seed
/// replaces cfg.seed; with auto weights the group ball is re-weighted per image.
inline AttackFn make_attack_fn(AttackKind kind, const AttackConfig& cfg, const EvalOptions& opt = {}) {
  return [kind, cfg, opt](const GradientModel& model, const ImageTensor& x, std::size_t label, std::uint64_t seed) {
    AttackConfig local = cfg;
    local.seed = seed;
    if (opt.auto_weight_kappa) {
      if (const auto* g = cfg.ball.as_group()) {
        GroupNuclearBall b = *g;
        b.partition = b.partition.with_weights(auto_weights(b.partition, x, *opt.auto_weight_kappa));
        local.ball = DistortionBall(std::move(b));
      }
    }
    return run_attack(kind, model, x, label, local);
  };
}

inline Evaluation accuracy_under_attack(const GradientModel& model, const Dataset& ds, AttackKind kind,
                                        const AttackConfig& cfg, const EvalOptions& opt = {}) {
  const std::size_t steps = kind == AttackKind::Fgsm ? 1 : cfg.steps;
  return evaluate_attack(model, ds, make_attack_fn(kind, cfg, opt), attack_name(kind), cfg.ball.name(),
                         cfg.ball.radius(), steps, cfg.seed, opt);
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { Radius, Steps };

struct SweepResult {
  SweepAxis axis = SweepAxis::Radius;
  std::vector<double> values;
  std::vector<MetricsRow> rows;
  /// Largest increase of attacked accuracy between consecutive points, in percentage points.
  double max_accuracy_increase = 0.0;

  bool monotone_within(double tolerance_pp) const { return max_accuracy_increase <= tolerance_pp; }
};

inline SweepResult sweep(const GradientModel& model, const Dataset& ds, AttackKind kind, const AttackConfig& base,
                         SweepAxis axis, const std::vector<double>& values, const EvalOptions& opt = {}) {
  if (values.empty()) throw ValidationError("sweep: no values");
  for (std::size_t i = 1; i < values.size(); ++i)
    if (!(values[i] > values[i - 1])) throw ValidationError("sweep: values must be strictly increasing");
  SweepResult out;
  out.axis = axis;
  out.values = values;
  for (double v : values) {
    AttackConfig cfg = base;
    if (axis == SweepAxis::Radius) {
      cfg.ball = base.ball.with_radius(v);
    } else {
      if (v < 1.0 || v != std::floor(v)) throw ValidationError("sweep: step counts must be positive integers");
      cfg.steps = static_cast<std::size_t>(v);
    }
    out.rows.push_back(accuracy_under_attack(model, ds, kind, cfg, opt).row);
  }
  for (std::size_t i = 1; i < out.rows.size(); ++i)
    out.max_accuracy_increase =
        std::max(out.max_accuracy_increase, out.rows[i].attacked_accuracy - out.rows[i - 1].attacked_accuracy);
  return out;
}

// ---------------------------------------------------------------------------
// Transferability

/// entry(i, j) = % of examples crafted on models[i] that models[j] misclassifies.
inline std::vector<std::vector<double>> transfer_matrix(const std::vector<const GradientModel*>& models,
                                                        const Dataset& ds, AttackKind kind, const AttackConfig& cfg,
                                                        const EvalOptions& opt = {}) {
  if (models.size() < 2) throw ValidationError("transfer_matrix needs at least two models");
  if (ds.empty()) throw ValidationError("transfer_matrix: empty dataset");
  const std::size_t m = models.size();
  std::vector<std::vector<double>> out(m, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < m; ++i) {
    const auto ev = accuracy_under_attack(*models[i], ds, kind, cfg, opt);
    for (std::size_t j = 0; j < m; ++j) {
      std::size_t fooled = 0;
      for (std::size_t k = 0; k < ds.size(); ++k)
        fooled += models[j]->predict(ev.outcomes[k].result.x_adv) != ds.labels[k];
      out[i][j] = 100.0 * static_cast<double>(fooled) / static_cast<double>(ds.size());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report emission

inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols = {
      "attack", "ball", "eps", "steps", "clean_accuracy", "attacked_accuracy", "success_rate", "mean_l2",
      "mean_nuclear", "mean_linf", "mean_nonzero_pixels", "success_rate_all", "successful_mean_l2",
      "successful_mean_nuclear", "successful_mean_linf", "successful_mean_nonzero_pixels", "images", "clean_correct",
      "successes"};
  return cols;
}

inline void write_report_csv(const MetricsReport& report, std::ostream& os) {
  const auto& cols = report_columns();
  for (std::size_t k = 0; k < cols.size(); ++k) os << (k ? "," : "") << cols[k];
  os << '\n';
  for (const auto& r : report.rows) {
    os << r.attack << ',' << r.ball << ',' << format_real(r.eps) << ',' << r.steps << ',' << format_real(r.clean_accuracy)
       << ',' << format_real(r.attacked_accuracy) << ',' << format_real(r.success_rate) << ','
       << format_real(r.mean_l2) << ',' << format_real(r.mean_nuclear) << ',' << format_real(r.mean_linf) << ','
       << format_real(r.mean_nonzero_pixels) << ',' << format_real(r.success_rate_all) << ','
       << format_real(r.successful_mean_l2) << ',' << format_real(r.successful_mean_nuclear) << ','
       << format_real(r.successful_mean_linf) << ',' << format_real(r.successful_mean_nonzero_pixels) << ','
       << r.images << ',' << r.clean_correct << ',' << r.successes << '\n';
  }
}

inline nlohmann::ordered_json to_json(const MetricsRow& r) {
  nlohmann::ordered_json j;
  j["attack"] = r.attack;
  j["ball"] = r.ball;
  j["eps"] = r.eps;
  j["steps"] = r.steps;
  j["clean_accuracy"] = r.clean_accuracy;
  j["attacked_accuracy"] = r.attacked_accuracy;
  j["success_rate"] = r.success_rate;
  j["mean_l2"] = r.mean_l2;
  j["mean_nuclear"] = r.mean_nuclear;
  j["mean_linf"] = r.mean_linf;
  j["mean_nonzero_pixels"] = r.mean_nonzero_pixels;
  j["success_rate_all"] = r.success_rate_all;
  j["successful_mean_l2"] = r.successful_mean_l2;
  j["successful_mean_nuclear"] = r.successful_mean_nuclear;
  j["successful_mean_linf"] = r.successful_mean_linf;
  j["successful_mean_nonzero_pixels"] = r.successful_mean_nonzero_pixels;
  j["images"] = r.images;
  j["clean_correct"] = r.clean_correct;
  j["successes"] = r.successes;
  return j;
}

inline nlohmann::ordered_json to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["meta"]["model_id"] = report.meta.model_id;
  j["meta"]["dataset_id"] = report.meta.dataset_id;
  j["meta"]["seed"] = report.meta.seed;
  if (report.meta.wall_time_s) j["meta"]["wall_time_s"] = *report.meta.wall_time_s;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) j["rows"].push_back(to_json(r));
  return j;
}

} // namespace fwadv
