// Acceptance checks. Prints one PASS/FAIL line per criterion; exits nonzero if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "schedopt/cli.hpp"
#include "schedopt/config.hpp"
#include "schedopt/eval.hpp"
#include "schedopt/finetune.hpp"
#include "schedopt/sampler.hpp"
#include "schedopt/sched_opt.hpp"
#include "stubs.hpp"

using namespace schedopt;
using namespace schedopt::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << name << " | " << o.detail
            << " | " << std::fixed << std::setprecision(1) << secs << " s" << std::defaultfloat
            << std::endl;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x) {
  std::ostringstream s;
  s << std::setprecision(4) << x;
  return s.str();
}

const NoiseRange kRange{};

GaussianMixture canonical() { return ExperimentConfig::canonical_problem(); }

/// Stage 1 with the default run settings on the analytic denoiser.
Schedule stage1_schedule(const GaussianMixture& g, std::size_t n, std::uint64_t seed) {
  RunConfig cfg;
  cfg.stage2_iters = 0;
  cfg.max_outer_iters = 1;
  cfg.seed = seed;
  return run_two_stage(cfg, {g, kRange, n, 7.0}).schedule;
}

Outcome unroll_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t dim = 1 + rng.index(3);
    const AnalyticDenoiser d(random_mixture(dim, rng));
    const auto s = random_schedule(2 + rng.index(31), rng);
    const Vec x0 = kRange.sigma_max * rng.normal_vec(dim);
    const Vec iterated = sample(d, s, x0).trajectory.iterates.back();
    const Vec unrolled = unrolled_sample(d, s, x0);
    worst = std::max(worst, (unrolled - iterated).norm() / iterated.norm());
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-10 && secs < 10.0, "max relative deviation " + fmt(worst) + " over 100 triples"};
}

Outcome weight_identity() {
  Rng rng(102);
  double worst = 0.0;
  bool open_interval = true;
  for (int t = 0; t < 1000; ++t) {
    const auto w = weights_from_schedule(random_schedule(2 + rng.index(63), rng));
    double sum = w.initial_coeff;
    for (double l : w.lambdas) {
      sum += l;
      open_interval = open_interval && l > 0.0 && l < 1.0;
    }
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return {worst <= 1e-12 && open_interval,
          "max |sum - 1| " + fmt(worst) + (open_interval ? ", all weights in (0,1)" : ", weight outside (0,1)")};
}

Outcome gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(103);
  double worst = 0.0;
  int cases = 0;
  for (std::size_t dim : {1, 2}) {
    const GaussianMixture g({{0.4, 1.5 * rng.normal_vec(dim), 0.4}, {0.6, 1.5 * rng.normal_vec(dim), 0.7}});
    const AnalyticDenoiser d(g);
    for (std::size_t n : {3, 5, 8}) {
      const Batch data = g.sample(256, rng);
      const auto batch = draw_noise_batch(data, rng);
      const auto p = init_params_from_reference(rho_schedule(kRange, n, 7.0));
      const auto full = disc_loss_grad_full(d, p, batch);
      const auto fd = disc_loss_grad_finite_diff(d, p, batch);
      worst = std::max(worst, relative_norm_error(full.grad_v, fd.grad_v));
      ++cases;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 60.0,
          "max relative error " + fmt(worst) + " over " + std::to_string(cases) + " problems"};
}

Outcome jensen_bound() {
  Rng rng(104);
  int held = 0;
  double worst_margin = -1e300;
  for (int t = 0; t < 20; ++t) {
    const std::size_t dim = 1 + rng.index(2);
    const auto g = random_mixture(dim, rng);
    const auto s = random_schedule(2 + rng.index(9), rng);
    const auto batch = draw_noise_batch(g.sample(512, rng), rng);
    const auto c = jensen_check(AnalyticDenoiser(g), s, batch);
    const double margin = (c.disc - c.bound) / c.combined_stderr();
    worst_margin = std::max(worst_margin, margin);
    if (c.disc <= c.bound + 3.0 * c.combined_stderr()) ++held;
  }
  return {held == 20, std::to_string(held) + "/20 configurations, largest (disc - bound)/stderr " +
                          fmt(worst_margin)};
}

Outcome noise_floor() {
  // Dense log-uniform schedules on the canonical problem, analytic denoiser.
  const auto g = canonical();
  const AnalyticDenoiser d(g);
  Rng rng(105);
  const auto batch = draw_noise_batch(g.sample(4096, rng), rng);
  const double floor = 2.0 * kRange.sigma_min * kRange.sigma_min * static_cast<double>(g.dim());
  std::ostringstream detail;
  bool ok = true;
  for (std::size_t n : {128, 512}) {
    const auto est = disc_loss(d, log_uniform_schedule(kRange, n), batch);
    const bool hit = std::abs(est.value - floor) <= 3.0 * est.std_error;
    ok = ok && hit;
    detail << "N=" << n << ": " << fmt(est.value) << " +- " << fmt(est.std_error) << "; ";
  }
  // Same check on point-mass data, where the trajectory term vanishes.
  const AnalyticDenoiser point(single_gaussian(vec({2.0, 0.0}), 1e-9));
  const auto pbatch = draw_noise_batch(point.mixture().sample(4096, rng), rng);
  const auto pm = disc_loss(point, log_uniform_schedule(kRange, 512), pbatch);
  detail << "floor " << fmt(floor) << "; point-mass data N=512: " << fmt(pm.value) << " +- " << fmt(pm.std_error);
  return {ok, detail.str()};
}

struct Stage1Result {
  Schedule learned;
  MeanStderr vs_uniform;
  MeanStderr vs_rho;
  MeanStderr learned_error;
};

Stage1Result& stage1_canonical() {
  static Stage1Result result = [] {
    const auto g = canonical();
    const AnalyticDenoiser d(g);
    const Schedule learned = stage1_schedule(g, 5, 0);
    const auto set = make_eval_set(d, kRange, 512, 106);
    const auto e_learned = global_errors(d, learned, set);
    const auto e_uniform = global_errors(d, uniform_schedule(kRange, 5), set);
    const auto e_rho = global_errors(d, rho_schedule(kRange, 5, 7.0), set);
    return Stage1Result{learned, paired_difference(e_learned, e_uniform),
                        paired_difference(e_learned, e_rho), mean_stderr(e_learned)};
  }();
  return result;
}

std::string sigmas_text(const Schedule& s) {
  std::ostringstream o;
  o << "[";
  for (std::size_t i = 0; i < s.n_steps(); ++i) o << (i ? ", " : "") << fmt(s[i]);
  o << "]";
  return o.str();
}

Outcome stage1_efficacy() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& r = stage1_canonical();
  const double secs = seconds_since(t0);
  const bool beats_uniform = r.vs_uniform.mean < -3.0 * r.vs_uniform.std_error;
  const bool beats_rho = r.vs_rho.mean < -3.0 * r.vs_rho.std_error;
  return {beats_uniform && beats_rho && secs < 300.0,
          "learned " + sigmas_text(r.learned) + " error " + fmt(r.learned_error.mean) +
              "; paired diff vs uniform " + fmt(r.vs_uniform.mean) + " +- " + fmt(r.vs_uniform.std_error) +
              ", vs rho=7 " + fmt(r.vs_rho.mean) + " +- " + fmt(r.vs_rho.std_error)};
}

Outcome two_stage_ordering() {
  const auto g = canonical();
  ExperimentConfig base;
  MlpSpec spec = base.denoiser.mlp;
  spec.init_seed = 1;
  MlpDenoiser pretrained(g.dim(), spec);
  PretrainConfig pre;
  pre.iters = 2000;
  Rng pre_rng(107);
  pretrain_denoiser(pretrained, g, kRange, pre, pre_rng);

  Rng truth_rng(108);
  const Batch truth = g.sample(1024, truth_rng);
  Rng noise_rng(109);
  Batch noise;
  for (int i = 0; i < 1024; ++i) noise.push_back(noise_rng.normal_vec(g.dim()));
  auto score = [&](const Denoiser& h, const Schedule& s) {
    Batch gen;
    for (const auto& e : noise) gen.push_back(sample_from_noise(h, s, e).final);
    return energy_distance(gen, truth);
  };

  bool ok = true;
  std::ostringstream detail;
  for (std::size_t n : {5, 10}) {
    RunConfig cfg;
    cfg.batch_size = 128;
    cfg.stage1_iters = 100;
    cfg.stage2_iters = 200;
    cfg.max_outer_iters = 3;
    cfg.seed = 110;
    const Problem problem{g, kRange, n, 7.0};
    auto variant = [&](std::size_t n1, std::size_t n2, WeightScheme w) {
      RunConfig c = cfg;
      c.stage1_iters = n1;
      c.stage2_iters = n2;
      c.weights = w;
      const auto r = run_two_stage(c, problem, pretrained);
      return score(*r.denoiser, r.schedule);
    };
    const double base_ed = score(pretrained, rho_schedule(kRange, n, 7.0));
    const double both = variant(cfg.stage1_iters, cfg.stage2_iters, WeightScheme::learned);
    const double only1 = variant(cfg.stage1_iters, 0, WeightScheme::learned);
    const double only2 = variant(0, cfg.stage2_iters, WeightScheme::learned);
    const double original = variant(cfg.stage1_iters, cfg.stage2_iters, WeightScheme::original);
    const bool here = both < only1 && both < only2 && !(original < both);
    ok = ok && here;
    detail << "N=" << n << ": pretrained " << fmt(base_ed) << ", two-stage " << fmt(both)
           << ", stage-1 only " << fmt(only1) << ", stage-2 only " << fmt(only2)
           << ", original weights " << fmt(original) << "; ";
  }
  return {ok, "energy distance " + detail.str()};
}

Outcome schedule_shape() {
  const auto g = canonical();
  int expected = 0, total = 0;
  std::ostringstream detail;
  for (std::size_t n : {5, 10}) {
    const Schedule learned = n == 5 ? stage1_canonical().learned : stage1_schedule(g, n, 0);
    const Schedule rho = rho_schedule(kRange, n, 7.0);
    auto second = [](const Schedule& s, std::size_t i) {
      return std::log(s[i + 1]) - 2.0 * std::log(s[i]) + std::log(s[i - 1]);
    };
    for (std::size_t i = 1; i + 1 < n; ++i) {
      ++total;
      if (second(learned, i) > second(rho, i)) ++expected;
    }
    detail << "N=" << n << " learned " << sigmas_text(learned) << "; ";
  }
  const double frac = static_cast<double>(expected) / total;
  return {frac >= 0.7, std::to_string(expected) + "/" + std::to_string(total) +
                           " interior log-sigma second differences above rho=7; " + detail.str()};
}

Outcome residual_diagnostic() {
  const auto g = single_gaussian(vec({0.0}), 1.0);
  const AnalyticDenoiser d(g);
  const Schedule learned = stage1_schedule(g, 5, 0);
  const Schedule uniform = uniform_schedule(kRange, 5);
  Rng rng(111);
  std::vector<double> a, b;
  for (int i = 0; i < 256; ++i) {
    const Vec x0 = kRange.sigma_max * rng.normal_vec(1);
    auto mean_residual = [&](const Schedule& s) {
      const auto r = backward_euler_residual(sample(d, s, x0).trajectory, d);
      double m = 0.0;
      for (double x : r) m += x;
      return m / static_cast<double>(r.size());
    };
    a.push_back(mean_residual(learned));
    b.push_back(mean_residual(uniform));
  }
  const auto diff = paired_difference(a, b);
  return {diff.mean < -3.0 * diff.std_error,
          "learned " + sigmas_text(learned) + "; mean residual learned " + fmt(mean_stderr(a).mean) +
              ", uniform " + fmt(mean_stderr(b).mean) + ", paired diff " + fmt(diff.mean) + " +- " +
              fmt(diff.std_error)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "schedopt_acceptance_runs";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path config = root / "toy2d.json";
  std::ofstream(config) << R"({"format_version": 1,
    "denoiser": {"kind": "trainable-mlp", "mlp": {"hidden": [32, 32]},
                 "pretrain": {"iters": 200, "batch_size": 128}},
    "run": {"stage1_iters": 20, "stage2_iters": 20, "batch_size": 64, "max_outer_iters": 2}})";
  std::vector<fs::path> dirs;
  for (int k = 0; k < 2; ++k) {
    std::ostringstream out, err;
    const int code = dispatch({"run", "--config", config.string(), "--seed", "7", "--out", root.string()},
                              out, err);
    if (code != 0) return {false, "run exited with " + std::to_string(code) + ": " + err.str()};
    std::string line = out.str();
    line.erase(line.find_last_not_of('\n') + 1);
    dirs.emplace_back(line);
  }
  int compared = 0;
  for (const auto& entry : fs::directory_iterator(dirs[0])) {
    if (entry.path().extension() != ".csv") continue;
    ++compared;
    if (slurp(entry.path()) != slurp(dirs[1] / entry.path().filename())) {
      return {false, entry.path().filename().string() + " differs between runs"};
    }
  }
  fs::remove_all(root);
  return {compared >= 2, std::to_string(compared) + " CSV artifacts byte-identical across two runs"};
}

}  // namespace

int main() {
  report(1, "unroll equivalence", unroll_equivalence);
  report(2, "weight identity", weight_identity);
  report(3, "gradient oracle", gradient_oracle);
  report(4, "Jensen bound", jensen_bound);
  report(5, "noise floor", noise_floor);
  report(6, "stage-1 efficacy", stage1_efficacy);
  report(7, "two-stage ordering", two_stage_ordering);
  report(8, "schedule shape", schedule_shape);
  report(9, "backward-Euler residual", residual_diagnostic);
  report(10, "determinism", determinism);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
