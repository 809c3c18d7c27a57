// fwadv command-line driver: train, attack, sweep, transfer, selftest.
// Exit codes: 0 success, 2 validation/usage error, 3 runtime failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fwadv/fwadv.hpp"

using namespace fwadv;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Input parsing

// synth:SEED:N[:OFFSET] | idx:IMAGES,LABELS | csv:PATH
Dataset load_data(const std::string& src) {
  const auto colon = src.find(':');
  if (colon == std::string::npos) throw ValidationError("data source '" + src + "' must be synth:, idx: or csv:");
  const std::string kind = src.substr(0, colon), rest = src.substr(colon + 1);
  if (kind == "synth") {
    const auto parts = split(rest, ':');
    if (parts.size() < 2 || parts.size() > 3) throw ValidationError("expected synth:SEED:N[:OFFSET], got '" + src + "'");
    const auto seed = static_cast<std::uint64_t>(parse_real(parts[0]));
    const auto n = static_cast<std::size_t>(parse_real(parts[1]));
    const auto offset = parts.size() == 3 ? static_cast<std::size_t>(parse_real(parts[2])) : 0;
    if (n == 0) throw ValidationError("synth dataset needs N > 0");
    return synth(seed, n, offset);
  }
  if (kind == "idx") {
    const auto parts = split(rest, ',');
    if (parts.size() != 2) throw ValidationError("expected idx:IMAGES,LABELS, got '" + src + "'");
    return load_idx(parts[0], parts[1]);
  }
  if (kind == "csv") return load_dataset_csv(rest);
  throw ValidationError("unknown data source kind '" + kind + "'");
}

StepRule parse_rule(const std::string& s) {
  if (s == "harmonic") return Harmonic{};
  if (s == "backtrack") return Backtracking{};
  if (s == "short") return ShortStep{1.0};
  if (s.rfind("short:", 0) == 0) {
    const double L = parse_real(s.substr(6));
    if (!(L > 0.0)) throw ValidationError("short step needs L > 0");
    return ShortStep{L};
  }
  throw ValidationError("unknown step rule '" + s + "' (expected short:L, backtrack or harmonic)");
}

std::unique_ptr<GradientModel> read_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open model file " + path);
  return load_model(in);
}

// ---------------------------------------------------------------------------
// --config: key=value lines become "--key value" unless the flag is already given.

std::vector<std::string> apply_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path);
  std::set<std::string> given;
  for (const auto& a : args)
    if (a.rfind("--", 0) == 0) given.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(line_no) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (given.count(key)) continue;
    if (value == "true") {
      args.push_back("--" + key);
    } else if (value != "false") {
      args.push_back("--" + key);
      args.push_back(value);
    }
  }
  return args;
}

// ---------------------------------------------------------------------------
// Shared attack options

struct AttackArgs {
  std::string model;
  std::string data;
  std::string attack = "fw";
  std::string ball = "nuclear";
  double eps = 1.0;
  double q = 2.0;
  bool per_channel = false;
  std::size_t steps = 20;
  std::string rule = "short:1";
  double alpha = 0.01;
  std::string groups = "channels";
  std::string weights;
  double kappa = 0.1;
  std::string selection = "spectral";
  bool random_start = false;
  std::size_t block = 0;
  long target = -1;
  bool no_clamp = false;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::size_t limit = 0;
  std::size_t heatmaps = 0;
  bool wall_time = false;
  std::string out = "out";
};

void add_attack_options(CLI::App* cmd, AttackArgs& a, bool single_model) {
  if (single_model) cmd->add_option("--model", a.model, "Model file written by `train`")->required();
  cmd->add_option("--data", a.data, "synth:SEED:N[:OFFSET], idx:IMAGES,LABELS or csv:PATH")->required();
  cmd->add_option("--attack", a.attack, "fw, pgd, pgd-nucl or fgsm")->check(CLI::IsMember({"fw", "pgd", "pgd-nucl", "fgsm"}));
  cmd->add_option("--ball", a.ball, "Distortion ball")
      ->check(CLI::IsMember({"nuclear", "groupnuclear", "linf", "l1", "l2", "schatten", "spectral"}));
  cmd->add_option("--eps", a.eps, "Ball radius");
  cmd->add_option("--q", a.q, "Schatten exponent for --ball schatten");
  cmd->add_flag("--per-channel", a.per_channel, "Matricize each channel separately");
  cmd->add_option("--steps", a.steps, "Iterations T");
  cmd->add_option("--rule", a.rule, "Frank-Wolfe step rule: short:L, backtrack or harmonic");
  cmd->add_option("--alpha", a.alpha, "Step size for pgd and pgd-nucl");
  cmd->add_option("--groups", a.groups, "Group spec file, `channels` or grid:R,C");
  cmd->add_option("--weights", a.weights, "`auto` or a file with one weight per group");
  cmd->add_option("--kappa", a.kappa, "Offset in the auto weights 1/(std + kappa)");
  cmd->add_option("--selection", a.selection, "Group choice in the LMO")->check(CLI::IsMember({"spectral", "nuclear"}));
  cmd->add_flag("--random-start", a.random_start, "Start from a random point of the ball");
  cmd->add_option("--block", a.block, "Randomized block Frank-Wolfe with k groups per step");
  cmd->add_option("--target", a.target, "Targeted attack toward this label");
  cmd->add_flag("--no-clamp", a.no_clamp, "Skip the final clamp to [0,1]");
  cmd->add_option("--seed", a.seed, "Seed for random starts and block draws");
  cmd->add_option("--threads", a.threads, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--limit", a.limit, "Use only the first N images");
  cmd->add_option("--heatmaps", a.heatmaps, "Write perturbation heatmaps for the first N images");
  cmd->add_flag("--wall-time", a.wall_time, "Record wall time in the JSON report");
  cmd->add_option("--out", a.out, "Output directory");
}

GroupPartition make_partition(const AttackArgs& a, const Shape& shape) {
  GroupPartition part;
  if (a.groups == "channels") {
    part = GroupPartition::per_channel(shape);
  } else if (a.groups.rfind("grid:", 0) == 0) {
    const auto dims = split(a.groups.substr(5), ',');
    if (dims.size() != 2) throw ValidationError("expected grid:R,C, got '" + a.groups + "'");
    part = GroupPartition::grid(shape, static_cast<std::size_t>(parse_real(dims[0])),
                                static_cast<std::size_t>(parse_real(dims[1])));
  } else {
    part = load_group_spec(a.groups, shape);
  }
  if (!a.weights.empty() && a.weights != "auto") part = part.with_weights(load_weights(a.weights));
  return part;
}

DistortionBall make_ball(const AttackArgs& a, const Shape& shape) {
  const Matricization mode = a.per_channel ? Matricization::PerChannel : Matricization::Stacked;
  if (a.ball == "nuclear") return DistortionBall::nuclear(a.eps, mode);
  if (a.ball == "schatten") return DistortionBall::schatten(a.q, a.eps, mode);
  if (a.ball == "spectral") return DistortionBall::spectral(a.eps, mode);
  if (a.ball == "linf") return DistortionBall::linf(a.eps);
  if (a.ball == "l1") return DistortionBall::l1(a.eps);
  if (a.ball == "l2") return DistortionBall::l2(a.eps);
  return DistortionBall::group_nuclear(make_partition(a, shape), a.eps,
                                       a.selection == "nuclear" ? GroupSelection::Nuclear : GroupSelection::Spectral);
}

AttackConfig make_config(const AttackArgs& a, const Shape& shape) {
  AttackConfig cfg;
  cfg.ball = make_ball(a, shape);
  cfg.steps = a.steps;
  cfg.rule = parse_rule(a.rule);
  cfg.step_size = a.alpha;
  cfg.random_start = a.random_start;
  cfg.seed = a.seed;
  cfg.clamp_final = !a.no_clamp;
  cfg.block_count = a.block;
  if (a.target >= 0) {
    cfg.loss_mode = LossSpec::Mode::Targeted;
    cfg.target_label = static_cast<std::size_t>(a.target);
  }
  return cfg;
}

EvalOptions make_eval_options(const AttackArgs& a) {
  EvalOptions opt;
  opt.threads = a.threads;
  if (a.weights == "auto") opt.auto_weight_kappa = a.kappa;
  return opt;
}

Dataset load_limited(const AttackArgs& a) {
  Dataset ds = load_data(a.data);
  if (a.limit > 0) ds = ds.slice(0, a.limit);
  ds.validate();
  return ds;
}

void write_reports(const MetricsReport& report, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream csv(dir / "report.csv");
  write_report_csv(report, csv);
  std::ofstream json(dir / "report.json");
  json << to_json(report).dump(2) << '\n';
  if (!csv || !json) throw RuntimeFailure("cannot write reports to " + dir.string());
}

void print_rows(const std::vector<MetricsRow>& rows) {
  for (const auto& r : rows)
    std::cout << r.attack << " " << r.ball << " eps=" << format_real(r.eps) << " T=" << r.steps
              << " clean=" << format_real(r.clean_accuracy) << "% attacked=" << format_real(r.attacked_accuracy)
              << "% success=" << format_real(r.success_rate) << "% nuclear=" << format_real(r.mean_nuclear)
              << " nonzero_px=" << format_real(r.mean_nonzero_pixels) << '\n';
}

std::string stem(const std::string& path) { return fs::path(path).stem().string(); }

// ---------------------------------------------------------------------------
// Subcommands

struct TrainArgs {
  std::string model = "linear";
  std::string data;
  std::size_t epochs = 50;
  double lr = 0.1;
  std::size_t batch = 32;
  std::size_t hidden = 16;
  std::uint64_t seed = 0;
  std::string out = "model.txt";
};

int run_train(const TrainArgs& a) {
  const Dataset ds = load_data(a.data);
  ds.validate();
  auto model = make_model(parse_model_kind(a.model), ds.images.at(0).shape(), ds.num_classes, a.hidden, a.seed);
  const auto rep = train_sgd(*model, ds, {a.epochs, a.lr, a.batch, a.seed});
  if (const auto parent = fs::path(a.out).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream os(a.out);
  if (!os) throw RuntimeFailure("cannot write " + a.out);
  save_model(*model, os);
  std::cout << "trained " << model->kind() << " on " << ds.size() << " images: train accuracy "
            << format_real(100.0 * rep.train_accuracy) << "%, last epoch loss " << format_real(rep.final_epoch_loss)
            << "\n";
  return 0;
}

int run_attack_cmd(const AttackArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto model = read_model(a.model);
  const Dataset ds = load_limited(a);
  const AttackKind kind = parse_attack_kind(a.attack);
  const auto ev = accuracy_under_attack(*model, ds, kind, make_config(a, model->input_shape()), make_eval_options(a));
  MetricsReport report{{stem(a.model), a.data, a.seed, std::nullopt}, {ev.row}};
  if (a.wall_time) report.meta.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_reports(report, a.out);
  for (std::size_t i = 0; i < std::min(a.heatmaps, ds.size()); ++i) {
    const auto& r = ev.outcomes[i].result;
    write_heatmap(r.perturbation, (fs::path(a.out) / ("heatmap_" + std::to_string(i) + ".pgm")).string());
    if (r.x_adv.channels() == 1 || r.x_adv.channels() == 3)
      write_image(r.x_adv, (fs::path(a.out) / ("adv_" + std::to_string(i) + (r.x_adv.channels() == 1 ? ".pgm" : ".ppm"))).string());
  }
  print_rows(report.rows);
  std::size_t aborted = 0;
  for (const auto& o : ev.outcomes) aborted += o.result.aborted;
  if (aborted) std::cerr << "warning: " << aborted << " attacks aborted on non-finite values\n";
  return 0;
}

int run_sweep_cmd(const AttackArgs& a, const std::string& axis, const std::vector<double>& values) {
  const auto model = read_model(a.model);
  const Dataset ds = load_limited(a);
  const auto result = sweep(*model, ds, parse_attack_kind(a.attack), make_config(a, model->input_shape()),
                            axis == "eps" ? SweepAxis::Radius : SweepAxis::Steps, values, make_eval_options(a));
  MetricsReport report{{stem(a.model), a.data, a.seed, std::nullopt}, result.rows};
  write_reports(report, a.out);
  print_rows(report.rows);
  std::cout << "largest accuracy increase between consecutive points: " << format_real(result.max_accuracy_increase)
            << " pp\n";
  return 0;
}

int run_transfer_cmd(const AttackArgs& a, const std::vector<std::string>& paths) {
  if (paths.size() < 2) throw ValidationError("transfer needs at least two models");
  std::vector<std::unique_ptr<GradientModel>> models;
  std::vector<const GradientModel*> raw;
  for (const auto& p : paths) {
    models.push_back(read_model(p));
    raw.push_back(models.back().get());
  }
  const Dataset ds = load_limited(a);
  const AttackKind kind = parse_attack_kind(a.attack);
  const AttackConfig cfg = make_config(a, raw[0]->input_shape());
  const auto matrix = transfer_matrix(raw, ds, kind, cfg, make_eval_options(a));

  fs::create_directories(a.out);
  std::ofstream csv(fs::path(a.out) / "transfer.csv");
  csv << "source";
  for (const auto& p : paths) csv << ',' << stem(p);
  csv << '\n';
  nlohmann::ordered_json j;
  j["meta"]["dataset_id"] = a.data;
  j["meta"]["seed"] = a.seed;
  j["meta"]["attack"] = attack_name(kind);
  j["meta"]["ball"] = cfg.ball.name();
  j["meta"]["eps"] = cfg.ball.radius();
  j["models"] = nlohmann::ordered_json::array();
  for (const auto& p : paths) j["models"].push_back(stem(p));
  j["misclassification_percent"] = matrix;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    csv << stem(paths[i]);
    for (double v : matrix[i]) csv << ',' << format_real(v);
    csv << '\n';
  }
  std::ofstream(fs::path(a.out) / "transfer.json") << j.dump(2) << '\n';

  MetricsReport report{{stem(paths[0]), a.data, a.seed, std::nullopt}, {}};
  for (const auto* m : raw) report.rows.push_back(accuracy_under_attack(*m, ds, kind, cfg, make_eval_options(a)).row);
  write_reports(report, a.out);
  for (std::size_t i = 0; i < paths.size(); ++i) {
    std::cout << stem(paths[i]) << ":";
    for (double v : matrix[i]) std::cout << ' ' << format_real(v);
    std::cout << '\n';
  }
  return 0;
}

// Quick invariant suite; the full one lives in the test binaries.
int run_selftest() {
  int failed = 0;
  auto check = [&](const std::string& name, bool ok) {
    std::cout << (ok ? "PASS " : "FAIL ") << name << '\n';
    failed += !ok;
  };
  const Shape s{1, 6, 6};
  auto rand = [&](std::uint64_t seed) {
    Rng rng(seed);
    ImageTensor x(s);
    for (auto& v : x.values()) v = rng.uniform(-1, 1);
    return x;
  };

  bool lmo_ok = true;
  for (const auto& ball : {DistortionBall::l1(1), DistortionBall::l2(1), DistortionBall::linf(1), DistortionBall::nuclear(1),
                           DistortionBall::schatten(1.5, 1), DistortionBall::spectral(1),
                           DistortionBall::group_nuclear(GroupPartition::grid(s, 3, 3), 1)})
    for (std::uint64_t j = 0; j < 10; ++j) {
      const ImageTensor d = rand(j);
      const double best = dot(d, lmo(ball, d).tensor), dual = dual_norm_value(ball, d);
      lmo_ok = lmo_ok && std::abs(best + dual) <= 1e-8 * dual;
      for (std::uint64_t k = 0; k < 20; ++k) lmo_ok = lmo_ok && dot(d, sample_in_ball(ball, s, k)) >= best - 1e-12;
    }
  check("lmo attains minus the dual norm and beats sampled points", lmo_ok);

  double fd = 0.0;
  for (auto kind : {ModelKind::Linear, ModelKind::Mlp, ModelKind::Conv}) {
    const auto m = make_model(kind, s, 3, 4, 1);
    fd = std::max(fd, finite_diff_check(*m, 0.5 * rand(9) + ImageTensor(s, 0.5), LossSpec::untargeted(1)));
  }
  check("model gradients match finite differences", fd < 1e-4);

  const auto m = make_model(ModelKind::Mlp, s, 2, 4, 2);
  const ImageTensor x = ImageTensor(s, 0.5) + 0.3 * rand(3);
  AttackConfig cfg;
  cfg.ball = DistortionBall::linf(0.05);
  const auto a = fgsm(*m, x, 0, cfg);
  cfg.steps = 1;
  cfg.step_size = 0.05;
  check("fgsm equals one pgd step", a.x_adv == pgd(*m, x, 0, cfg).x_adv);

  const auto traj = frank_wolfe(make_objective(*m, LossSpec::untargeted(0)), DistortionBall::nuclear(1), x, x, 3,
                                ShortStep{1.0});
  check("three nuclear steps give rank at most three",
        numerical_rank(matricize(traj.final - x, Matricization::Stacked)[0]) <= 3);

  std::cout << (failed ? "selftest FAILED" : "selftest passed") << '\n';
  return failed ? 3 : 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frank-Wolfe adversarial attacks over structured norm balls"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a classifier with SGD");
  train_cmd->add_option("--model", train.model, "linear, mlp or conv")->check(CLI::IsMember({"linear", "mlp", "conv"}));
  train_cmd->add_option("--data", train.data, "Training data source")->required();
  train_cmd->add_option("--epochs", train.epochs);
  train_cmd->add_option("--lr", train.lr);
  train_cmd->add_option("--batch", train.batch)->check(CLI::PositiveNumber);
  train_cmd->add_option("--hidden", train.hidden, "Hidden units (mlp) or filters (conv)")->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", train.seed);
  train_cmd->add_option("--out", train.out, "Model file to write");

  AttackArgs attack;
  auto* attack_cmd = app.add_subcommand("attack", "Attack every image and write report.csv / report.json");
  add_attack_options(attack_cmd, attack, true);

  AttackArgs sweep_args;
  std::string axis = "eps";
  std::vector<double> values;
  auto* sweep_cmd = app.add_subcommand("sweep", "Attacked accuracy along eps or steps");
  add_attack_options(sweep_cmd, sweep_args, true);
  sweep_cmd->add_option("--axis", axis)->check(CLI::IsMember({"eps", "steps"}));
  sweep_cmd->add_option("--values", values, "Comma-separated, strictly increasing")->delimiter(',')->required();

  AttackArgs transfer_args;
  std::vector<std::string> model_paths;
  auto* transfer_cmd = app.add_subcommand("transfer", "Cross-model misclassification matrix");
  add_attack_options(transfer_cmd, transfer_args, false);
  transfer_cmd->add_option("--models", model_paths, "Comma-separated model files")->delimiter(',')->required();

  auto* selftest_cmd = app.add_subcommand("selftest", "Run a quick invariant check");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = apply_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*train_cmd) return run_train(train);
    if (*attack_cmd) return run_attack_cmd(attack);
    if (*sweep_cmd) return run_sweep_cmd(sweep_args, axis, values);
    if (*transfer_cmd) return run_transfer_cmd(transfer_args, model_paths);
    if (*selftest_cmd) return run_selftest();
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
