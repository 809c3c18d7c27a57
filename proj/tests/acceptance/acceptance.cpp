// Desk-scale acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "fwadv/fwadv.hpp"

using namespace fwadv;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const std::string& title, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << " (" << title << "): " << detail << std::endl;
  failures += !ok;
}

ImageTensor random_tensor(const Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  ImageTensor x(s);
  for (auto& v : x.values()) v = rng.uniform(lo, hi);
  return x;
}

Objective quadratic(const ImageTensor& z) {
  return [z](const ImageTensor& x) {
    ImageTensor g = x - z;
    return LossAndGradient{0.5 * dot(g, g), g};
  };
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------

void lmo_oracle() {
  const auto t0 = Clock::now();
  const Shape s{1, 8, 8};
  const double eps = 1.0;
  auto weighted = GroupPartition::grid(s, 4, 4).with_weights({1.0, 2.0, 0.5, 3.0});
  const std::vector<std::pair<std::string, DistortionBall>> families{
      {"l1", DistortionBall::l1(eps)},
      {"l2", DistortionBall::l2(eps)},
      {"linf", DistortionBall::linf(eps)},
      {"nuclear", DistortionBall::nuclear(eps)},
      {"schatten-1.5", DistortionBall::schatten(1.5, eps)},
      {"schatten-3", DistortionBall::schatten(3.0, eps)},
      {"spectral", DistortionBall::spectral(eps)},
      {"group-nuclear", DistortionBall::group_nuclear(GroupPartition::grid(s, 4, 4), eps)},
      {"weighted-group-nuclear", DistortionBall::group_nuclear(weighted, eps)},
  };
  double worst_identity = 0.0, worst_violation = 0.0;
  std::string worst_family = "-";
  for (const auto& [name, ball] : families) {
    // 1000 points: rank-one samples, dense points on the boundary, dense points inside.
    std::vector<ImageTensor> pts;
    Rng rng(mix_seed(11, pts.size()));
    for (std::size_t k = 0; k < 1000; ++k) {
      if (k % 2 == 0) {
        pts.push_back(sample_in_ball(ball, s, mix_seed(12, k)));
      } else {
        const ImageTensor x = random_tensor(s, mix_seed(13, k));
        const double scale = (k % 4 == 1 ? 1.0 : rng.uniform()) * eps / norm_value(ball, x);
        pts.push_back(scale * x);
      }
    }
    for (std::uint64_t j = 0; j < 100; ++j) {
      const ImageTensor d = random_tensor(s, mix_seed(14, j));
      const double best = dot(d, lmo(ball, d).tensor);
      const double target = -eps * dual_norm_value(ball, d);
      const double rel = std::abs(best - target) / std::abs(target);
      if (rel > worst_identity) worst_identity = rel;
      for (const auto& p : pts) {
        const double violation = (best - dot(d, p)) / std::abs(target);
        if (violation > worst_violation) {
          worst_violation = violation;
          worst_family = name;
        }
      }
    }
  }
  const double elapsed = seconds_since(t0);
  // The sampled points are exact boundary points up to rounding, so a relative slack of 1e-12 is allowed.
  const bool ok = worst_identity <= 1e-8 && worst_violation <= 1e-12 && elapsed < 30.0;
  report(1, "LMO optimality oracle", ok,
         std::to_string(families.size()) + " families, worst identity rel err " + fmt(worst_identity) +
             ", worst oracle violation " + fmt(worst_violation) + " (" + worst_family + "), " + fmt(elapsed) + " s");
}

void rank_growth() {
  const Shape s{1, 16, 16};
  const std::vector<std::shared_ptr<GradientModel>> models{std::make_shared<LinearSoftmax>(s, 3, 1, 0.3),
                                                           std::make_shared<Mlp>(s, 8, 3, 2),
                                                           std::make_shared<TinyConv>(s, 3, 3, 3)};
  const auto ball = DistortionBall::nuclear(1.0);
  std::size_t max_rank = 0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto& m = *models[i % models.size()];
    const ImageTensor x = random_tensor(s, mix_seed(21, i), 0, 1);
    const auto traj = frank_wolfe(make_objective(m, LossSpec::untargeted(i % 3)), ball, x, x, 5, ShortStep{1.0});
    const ImageTensor delta = traj.final - x;
    max_rank = std::max(max_rank, numerical_rank(matricize(delta, Matricization::Stacked)[0], 1e-8));
  }
  report(2, "rank growth", max_rank <= 5, "max numerical rank after T=5 over 50 inputs = " + std::to_string(max_rank));
}

void gradient_fidelity() {
  const Shape s{1, 8, 8};
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const std::vector<std::shared_ptr<GradientModel>> models{std::make_shared<LinearSoftmax>(s, 3, i, 0.3),
                                                             std::make_shared<Mlp>(s, 6, 3, i),
                                                             std::make_shared<TinyConv>(s, 3, 3, i)};
    const ImageTensor x = random_tensor(s, mix_seed(31, i), 0, 1);
    for (const auto& m : models) worst = std::max(worst, finite_diff_check(*m, x, LossSpec::untargeted(i % 3), 1e-4, 64, i));
  }
  report(3, "gradient fidelity", worst < 1e-4, "worst relative error " + fmt(worst) + " over linear/mlp/conv x 10 inputs");
}

void projection_oracle() {
  const Shape s{1, 8, 8};
  // At radius 1 the projection of most z is a single vertex, which FW hits in one step.
  const auto ball = DistortionBall::nuclear(2.0);
  double worst_dist = 0.0, worst_ratio = 0.0;
  std::size_t min_rank = 64;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ImageTensor z = random_tensor(s, mix_seed(41, seed));
    const auto traj = frank_wolfe(quadratic(z), ball, ImageTensor(s), ImageTensor(s), 300, ShortStep{1.0});
    const ImageTensor oracle = project(ball, z);
    worst_dist = std::max(worst_dist, l2_norm(traj.final - oracle));
    worst_ratio = std::max(worst_ratio, traj.gaps[100] / traj.gaps[10]);
    min_rank = std::min(min_rank, numerical_rank(matricize(oracle, Matricization::Stacked)[0]));
  }
  report(4, "FW vs projection", worst_dist < 1e-2 && worst_ratio < 0.05,
         "radius 2, projection rank >= " + std::to_string(min_rank) + ", worst Frobenius distance " + fmt(worst_dist) +
             ", worst gap[100]/gap[10] " + fmt(worst_ratio));
}

// Frozen desk operating point.
constexpr double kNuclearEps = 1.0;
constexpr double kPgdEps = 0.1;
constexpr double kPgdAlpha = 0.02;
constexpr std::size_t kSteps = 20;

AttackConfig fw_config() {
  AttackConfig cfg;
  cfg.ball = DistortionBall::nuclear(kNuclearEps);
  cfg.steps = kSteps;
  cfg.rule = ShortStep{1.0};
  cfg.seed = 7;
  return cfg;
}

AttackConfig pgd_config() {
  AttackConfig cfg;
  cfg.ball = DistortionBall::linf(kPgdEps);
  cfg.steps = kSteps;
  cfg.step_size = kPgdAlpha;
  cfg.seed = 7;
  return cfg;
}

void pipeline(const Dataset& train, const Dataset& test, LinearSoftmax& model) {
  const auto t0 = Clock::now();
  train_sgd(model, train, {50, 0.1, 32, 7});
  const double clean = accuracy(model, test);
  const auto fw = accuracy_under_attack(model, test, AttackKind::FrankWolfe, fw_config()).row;
  const auto pg = accuracy_under_attack(model, test, AttackKind::Pgd, pgd_config()).row;
  const double elapsed = seconds_since(t0);
  report(5, "desk-scale efficacy",
         clean >= 0.95 && fw.success_rate >= 90.0 && pg.success_rate >= 90.0 && elapsed <= 60.0,
         "clean " + fmt(100 * clean) + "%, FW-nuclear(eps=1) success " + fmt(fw.success_rate) + "%, PGD-linf success " +
             fmt(pg.success_rate) + "%, " + fmt(elapsed) + " s single-threaded");
  report(6, "structural contrast",
         fw.mean_nuclear < pg.mean_nuclear && pg.mean_nonzero_pixels > fw.mean_nonzero_pixels,
         "nuclear FW " + fmt(fw.mean_nuclear) + " < PGD " + fmt(pg.mean_nuclear) + "; nonzero pixels PGD " +
             fmt(pg.mean_nonzero_pixels) + " > FW " + fmt(fw.mean_nonzero_pixels));
}

void sweeps(const GradientModel& model, const Dataset& test) {
  const auto by_eps = sweep(model, test, AttackKind::FrankWolfe, fw_config(), SweepAxis::Radius,
                            {0.0, 0.5 * kNuclearEps, kNuclearEps, 2 * kNuclearEps, 4 * kNuclearEps});
  const auto by_steps = sweep(model, test, AttackKind::FrankWolfe, fw_config(), SweepAxis::Steps, {1, 5, 20});
  auto curve = [](const SweepResult& r) {
    std::string out;
    for (const auto& row : r.rows) out += (out.empty() ? "" : ",") + fmt(row.attacked_accuracy);
    return out;
  };
  report(7, "monotone sweeps", by_eps.monotone_within(2.0) && by_steps.monotone_within(2.0),
         "attacked accuracy vs eps [" + curve(by_eps) + "], vs T [" + curve(by_steps) + "]");
}

void reductions(const GradientModel& model, const Dataset& test) {
  bool fgsm_ok = true;
  for (std::size_t i = 0; i < test.size(); ++i) {
    AttackConfig cfg = pgd_config();
    const auto a = fgsm(model, test.images[i], test.labels[i], cfg);
    cfg.steps = 1;
    cfg.step_size = kPgdEps;
    cfg.random_start = false;
    const auto b = pgd(model, test.images[i], test.labels[i], cfg);
    fgsm_ok = fgsm_ok && a.x_adv == b.x_adv;
  }

  const Shape s{1, 8, 8};
  const auto nuclear = DistortionBall::nuclear(0.7);
  const auto group = DistortionBall::group_nuclear(GroupPartition(s, {PixelGroup::full_frame(s, 0)}), 0.7);
  double worst = 0.0;
  for (std::uint64_t j = 0; j < 100; ++j) {
    const ImageTensor d = random_tensor(s, mix_seed(81, j));
    const double pairs[3][2] = {{norm_value(nuclear, d), norm_value(group, d)},
                                {dual_norm_value(nuclear, d), dual_norm_value(group, d)},
                                {dot(d, lmo(nuclear, d).tensor), dot(d, lmo(group, d).tensor)}};
    for (const auto& p : pairs) worst = std::max(worst, std::abs(p[0] - p[1]) / std::max(1.0, std::abs(p[0])));
  }

  const Shape rgb{3, 6, 6};
  const auto gball = DistortionBall::group_nuclear(GroupPartition::grid(rgb, 3, 3), 1.0);
  bool block_ok = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ImageTensor center = random_tensor(rgb, mix_seed(82, seed), 0, 1);
    const ImageTensor z = center + random_tensor(rgb, mix_seed(83, seed));
    RecordOptions rec;
    rec.iterates = true;
    const auto a = frank_wolfe(quadratic(z), gball, center, center, 25, ShortStep{1.0}, rec);
    const auto b = frank_wolfe_block(quadratic(z), gball, center, center, 25, ShortStep{1.0}, 4, seed, rec);
    block_ok = block_ok && a.iterates == b.iterates && a.vertex_groups == b.vertex_groups;
  }
  report(8, "reductions", fgsm_ok && worst <= 1e-8 && block_ok,
         std::string("FGSM==PGD(T=1) ") + (fgsm_ok ? "bit-exact" : "MISMATCH") + ", full-frame group vs nuclear max rel diff " +
             fmt(worst) + ", block k=all " + (block_ok ? "identical" : "MISMATCH"));
}

#ifdef FWADV_CLI_PATH
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool run_pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cli = std::string("\"") + FWADV_CLI_PATH + "\"";
  const std::string model = (dir / "model.txt").string();
  const std::string common = " --data synth:7:200:400 --seed 7 --threads 2";
  const std::vector<std::string> commands{
      cli + " train --model linear --data synth:7:400 --epochs 50 --lr 0.1 --seed 7 --out " + model,
      cli + " attack --model " + model + common + " --ball nuclear --eps 1 --steps 20 --rule short:1 --heatmaps 2 --out " +
          (dir / "attack").string(),
      cli + " attack --model " + model + common + " --attack pgd --ball linf --eps 0.1 --alpha 0.02 --steps 20 --out " +
          (dir / "pgd").string(),
      cli + " sweep --model " + model + common + " --ball nuclear --eps 1 --steps 20 --axis eps --values 0,0.5,1,2 --out " +
          (dir / "sweep").string(),
  };
  for (const auto& c : commands)
    if (std::system((c + " > \"" + (dir / "log.txt").string() + "\" 2>&1").c_str()) != 0) {
      std::cout << "  command failed: " << c << "\n" << slurp(dir / "log.txt");
      return false;
    }
  return true;
}

void determinism() {
  const fs::path base = fs::temp_directory_path() / "fwadv_acceptance";
  const fs::path a = base / "run_a", b = base / "run_b";
  if (!run_pipeline(a) || !run_pipeline(b)) {
    report(9, "determinism", false, "CLI pipeline did not complete");
    return;
  }
  std::size_t compared = 0, differing = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file() || entry.path().filename() == "log.txt") continue;
    const fs::path rel = fs::relative(entry.path(), a);
    ++compared;
    if (!fs::exists(b / rel) || slurp(entry.path()) != slurp(b / rel)) {
      ++differing;
      std::cout << "  differs: " << rel.string() << "\n";
    }
  }
  report(9, "determinism", compared >= 7 && differing == 0,
         std::to_string(compared) + " files (model, CSV/JSON reports, heatmaps) compared across reruns, " +
             std::to_string(differing) + " differ");
}
#else
void determinism() { report(9, "determinism", false, "built without the CLI"); }
#endif

} // namespace

int main() {
  try {
    lmo_oracle();
    rank_growth();
    gradient_fidelity();
    projection_oracle();
    const Dataset train = synth(7, 400, 0), test = synth(7, 200, 400);
    LinearSoftmax model(Shape{1, 16, 16}, 2, 7);
    pipeline(train, test, model);
    sweeps(model, test);
    reductions(model, test);
    determinism();
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures ? "FAILED " + std::to_string(failures) + " criteria" : std::string("ALL CRITERIA PASSED"))
            << std::endl;
  return failures ? 1 : 0;
}
