#include <cmath>
#include <iostream>
#include <numeric>

#include "doctest.h"
#include "schedopt/error.hpp"
#include "schedopt/gmm.hpp"
#include "schedopt/sched_opt.hpp"
#include "stubs.hpp"

using namespace schedopt;
using namespace schedopt::testing;

namespace {

NoiseBatch batch_for(const GaussianMixture& g, std::size_t n, std::uint64_t seed,
                     bool shared = false) {
  Rng rng(seed);
  return draw_noise_batch(g.sample(n, rng), rng, shared);
}

ScheduleParams params_for(const Schedule& s) { return init_params_from_reference(s); }

}  // namespace

TEST_CASE("discretization loss floor on point-mass data") {
  // With a point mass the trajectory term vanishes and only sigma_min^2 ||eps - eps'||^2 is left.
  const Vec point = vec({1.0, -2.0});
  const AnalyticDenoiser d(single_gaussian(point, 1e-9));
  const auto batch = batch_for(d.mixture(), 4096, 1);
  const auto est = disc_loss(d, log_uniform_schedule({}, 200), batch);
  const double floor = 2.0 * 0.002 * 0.002 * 2;
  CHECK(std::abs(est.value - floor) <= 3.0 * est.std_error);
  CHECK(est.mc_batch == 4096);
}

TEST_CASE("two-level loss on a single Gaussian matches the quadratic form") {
  const double s = 0.9;
  const AnalyticDenoiser d(single_gaussian(vec({0.0}), s));
  const Schedule two({80.0, 0.002});
  const double a0 = s * s / (s * s + 6400.0);
  const double k = (1 - 0.002 / 80.0) * a0 + 0.002 / 80.0;
  // x_last = k (x + 80 eps), target x + 0.002 eps'
  const double expected = (k - 1) * (k - 1) * s * s + k * k * 6400.0 + 0.002 * 0.002;
  const auto est = disc_loss(d, two, batch_for(d.mixture(), 20000, 2));
  CHECK(std::abs(est.value - expected) <= 3.0 * est.std_error);
}

TEST_CASE("shared noise and a perfect denoiser reconstruct exactly") {
  const Vec point = vec({0.5});
  const ConstantDenoiser d(point);
  NoiseBatch b{{point}, {vec({1.3})}, {vec({1.3})}};
  CHECK(disc_loss(d, Schedule({80.0, 0.002}), b).value < 1e-24);
  Rng rng(1);
  const auto shared = draw_noise_batch({point, point}, rng, true);
  CHECK(shared.noise == shared.target_noise);
  CHECK_THROWS_AS(disc_loss(d, Schedule({80.0, 0.002}), NoiseBatch{}), ValidationError);
}

TEST_CASE("efficient estimator") {
  const ConstantDenoiser flat(vec({0.3, 0.1}));
  const Schedule s = rho_schedule({}, 6, 7.0);
  const auto batch = batch_for(single_gaussian(vec({0.0, 0.0}), 1.0), 64, 3);
  for (double g : efficient_sigma_gradient(flat, s, weights_from_schedule(s), batch)) CHECK(g == 0.0);

  const AnalyticDenoiser d(GaussianMixture({{0.5, vec({-2.0, 0.0}), 0.5}, {0.5, vec({2.0, 0.0}), 0.5}}));
  auto w = weights_from_schedule(s);
  w.lambdas[2] = 0.0;
  const auto g = efficient_sigma_gradient(d, s, w, batch);
  CHECK(g[2] == 0.0);
  CHECK(g[1] != 0.0);

  // Compared with the exact gradient on a 1-D linear problem: logged only.
  const AnalyticDenoiser lin(single_gaussian(vec({0.0}), 1.0));
  const auto p = params_for(Schedule({80.0, 1.0, 0.002}));
  const auto b1 = batch_for(lin.mixture(), 4096, 4);
  const auto eff = disc_loss_grad_efficient(lin, p, b1);
  const auto full = disc_loss_grad_full(lin, p, b1);
  const double cos = std::inner_product(eff.grad_v.begin(), eff.grad_v.end(), full.grad_v.begin(), 0.0) /
                     std::sqrt(std::inner_product(eff.grad_v.begin(), eff.grad_v.end(), eff.grad_v.begin(), 0.0) *
                               std::inner_product(full.grad_v.begin(), full.grad_v.end(), full.grad_v.begin(), 0.0));
  MESSAGE("efficient vs exact gradient cosine (N=3, linear): " << cos);
  CHECK(std::isfinite(cos));
  CHECK(eff.estimator == GradientEstimator::efficient);
}

TEST_CASE("exact gradient matches finite differences") {
  const AnalyticDenoiser lin(single_gaussian(vec({0.3}), 0.8));
  const auto batch = batch_for(lin.mixture(), 512, 5);
  for (const auto& s : {rho_schedule({}, 4, 7.0), Schedule({80.0, 20.0, 0.3, 0.002})}) {
    const auto p = params_for(s);
    const auto full = disc_loss_grad_full(lin, p, batch);
    const auto fd = disc_loss_grad_finite_diff(lin, p, batch);
    CHECK(relative_norm_error(full.grad_v, fd.grad_v) < 1e-4);
    CHECK(full.value == doctest::Approx(fd.value).epsilon(1e-12));
    CHECK(full.grad_sigma.size() == 4);
  }
  CHECK_THROWS_AS(disc_loss_grad_full(lin, params_for(log_uniform_schedule({}, 65)), batch),
                  ValidationError);
}

TEST_CASE("point-mass data has no trajectory gradient") {
  const Vec point = vec({1.0, 1.0});
  const AnalyticDenoiser d(single_gaussian(point, 1e-9));
  const auto batch = batch_for(d.mixture(), 64, 6);
  const auto p = params_for(rho_schedule({}, 5, 7.0));
  for (auto est : {GradientEstimator::efficient, GradientEstimator::full_unroll}) {
    const auto g = disc_loss_grad(d, p, batch, est);
    for (double x : g.grad_v) CHECK(std::abs(x) < 1e-12);
  }
}

TEST_CASE("weighted diffusion loss gradient matches finite differences") {
  const AnalyticDenoiser d(GaussianMixture({{0.5, vec({-2.0}), 0.5}, {0.5, vec({2.0}), 0.5}}));
  Rng rng(8);
  const Batch data = d.mixture().sample(128, rng);
  const auto noise = draw_step_noise(4, data.size(), 1, rng);
  const Schedule s({80.0, 9.0, 1.1, 0.05, 0.002});
  const auto est = weighted_diffusion_loss(d, s, data, noise);
  std::vector<double> fd(5, 0.0);
  for (std::size_t i = 1; i < 4; ++i) {
    std::vector<double> up(s.sigmas().begin(), s.sigmas().end()), dn = up;
    const double h = 1e-6 * s[i];
    up[i] += h;
    dn[i] -= h;
    fd[i] = (weighted_diffusion_loss(d, Schedule(up), data, noise).value -
             weighted_diffusion_loss(d, Schedule(dn), data, noise).value) / (2 * h);
  }
  for (std::size_t i = 1; i < 4; ++i) CHECK(est.grad_sigma[i] == doctest::Approx(fd[i]).epsilon(1e-5));

  const auto one = weighted_diffusion_loss(d, s, data, noise, 2);
  double total = 0.0;
  for (std::size_t i = 0; i < 4; ++i) total += weighted_diffusion_loss(d, s, data, noise, i).value;
  CHECK(total == doctest::Approx(est.value).epsilon(1e-12));
  CHECK(one.value < est.value);
}

TEST_CASE("stage-1 step") {
  const AnalyticDenoiser d(GaussianMixture({{0.5, vec({-2.0}), 0.5}, {0.5, vec({2.0}), 0.5}}));
  Rng data_rng(9);
  const Batch data = d.mixture().sample(64, data_rng);
  const auto init = params_for(rho_schedule({}, 5, 7.0));

  SUBCASE("zero learning rate leaves the schedule unchanged") {
    RunConfig cfg;
    cfg.schedule_optimizer.learning_rate = 0.0;
    Stage1State st(init, cfg.schedule_optimizer);
    Rng rng(1);
    const auto rep = stage1_step(d, st, data, cfg, rng);
    CHECK(st.params.v == init.v);
    CHECK(std::isfinite(rep.disc_loss));
    CHECK(std::isfinite(rep.diff_loss));
    CHECK(rep.sigmas.size() == 5);
  }
  SUBCASE("gamma zero ignores the discretization gradient") {
    RunConfig a, b;
    a.gamma = b.gamma = 0.0;
    a.estimator = GradientEstimator::efficient;
    b.estimator = GradientEstimator::full_unroll;
    Stage1State sa(init, a.schedule_optimizer), sb(init, b.schedule_optimizer);
    Rng ra(2), rb(2);
    stage1_step(d, sa, data, a, ra);
    stage1_step(d, sb, data, b, rb);
    CHECK(sa.params.v == sb.params.v);
    CHECK(sa.params.v != init.v);
  }
  SUBCASE("per-step updates take one optimizer step per weighted level") {
    RunConfig cfg;
    cfg.per_step_updates = true;
    Stage1State st(init, cfg.schedule_optimizer);
    Rng rng(3);
    stage1_step(d, st, data, cfg, rng);
    CHECK(st.optimizer.steps_taken() == 4);
    CHECK(st.iteration == 1);
  }
}

TEST_CASE("stage-1 optimization on a 1-D two-Gaussian problem") {
  const AnalyticDenoiser d(GaussianMixture({{0.5, vec({-2.0}), 0.5}, {0.5, vec({2.0}), 0.5}}));
  const Schedule rho = rho_schedule({}, 5, 7.0);
  RunConfig cfg;
  Stage1State st(params_for(rho), cfg.schedule_optimizer);
  Rng data_rng(10), rng(11);
  std::vector<double> losses;
  for (int it = 0; it < 200; ++it) {
    losses.push_back(stage1_step(d, st, d.mixture().sample(cfg.batch_size, data_rng), cfg, rng).disc_loss);
  }
  auto window = [&](std::size_t start) {
    return std::accumulate(losses.begin() + start, losses.begin() + start + 20, 0.0) / 20.0;
  };
  const auto eval = batch_for(d.mixture(), 8192, 12);
  const auto learned = disc_loss(d, st.schedule(), eval);
  const auto baseline = disc_loss(d, rho, eval);
  MESSAGE("disc loss: first window " << window(0) << ", last window " << window(180)
                                     << ", learned " << learned.value << " +- " << learned.std_error
                                     << ", rho=7 " << baseline.value << " +- " << baseline.std_error);
  CHECK(window(180) < window(0));
  CHECK(learned.value < baseline.value);
}
