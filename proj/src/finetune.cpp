#include "schedopt/finetune.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "schedopt/error.hpp"
#include "schedopt/parallel.hpp"
#include "schedopt/sampler.hpp"

namespace schedopt {

namespace {

double edm_weight(double sigma, double data_scale) {
  const double sd2 = data_scale * data_scale;
  return (sigma * sigma + sd2) / (sigma * sigma * sd2);
}

double lognormal_density(double sigma, const PretrainConfig& c) {
  const double z = (std::log(sigma) - c.p_mean) / c.p_std;
  return std::exp(-0.5 * z * z) / (c.p_std * std::sqrt(2.0 * std::numbers::pi));
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& xs) {
  MeanSe out;
  const double n = static_cast<double>(xs.size());
  for (double x : xs) out.mean += x;
  out.mean /= n;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(ss / (n - 1.0) / n);
  }
  return out;
}

const MlpDenoiser& as_trainable(const Denoiser& h) {
  const auto* net = dynamic_cast<const MlpDenoiser*>(&h);
  if (!net) throw ValidationError("stage-2 objective needs a trainable denoiser");
  return *net;
}

// Mean over per-sample weighted squared errors and their parameter gradients.
struct Draw {
  Vec x;
  Vec noisy;
  double sigma = 0.0;
  double weight = 0.0;
};

MeanSe accumulate(const MlpDenoiser& net, const std::vector<Draw>& draws,
                  std::vector<double>& grad) {
  const std::size_t n = draws.size();
  const std::size_t p = net.param_count();
  std::vector<double> losses(n);
  std::vector<std::vector<double>> rows(n);
  parallel_for(n, [&](std::size_t b) {
    rows[b].assign(p, 0.0);
    losses[b] = net.accumulate_loss_grad(draws[b].noisy, draws[b].sigma, draws[b].x,
                                         draws[b].weight, rows[b]);
  });
  grad.assign(p, 0.0);
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < p; ++k) grad[k] += r[k];
  }
  for (double& g : grad) g /= static_cast<double>(n);
  return mean_se(losses);
}

bool finite(const std::vector<double>& xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace

std::vector<double> stage2_weights(const Schedule& s, WeightScheme scheme, double data_scale,
                                   const PretrainConfig& lognormal) {
  auto w = weights_from_schedule(s);
  if (scheme == WeightScheme::learned) return w.lambdas;
  const auto sig = s.sigmas();
  std::vector<double> out(w.lambdas.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = edm_weight(sig[i], data_scale) * lognormal_density(sig[i], lognormal);
  }
  const double total = std::accumulate(out.begin(), out.end(), 0.0);
  const double target = 1.0 - w.initial_coeff;
  for (double& x : out) x *= target / total;
  return out;
}

UbLossEstimate ub_loss(const Denoiser& h, const Schedule& s, const Batch& data, Rng& rng,
                       WeightScheme scheme) {
  const auto& net = as_trainable(h);
  if (data.empty()) throw ValidationError("stage-2 loss needs a nonempty batch");
  const auto sig = s.sigmas();
  const auto weights = stage2_weights(s, scheme, net.spec().data_scale);
  const std::size_t steps = sig.size() - 1;
  std::vector<Draw> draws;
  draws.reserve(data.size());
  for (const auto& x : data) {
    const std::size_t t = rng.index(steps);
    const Vec eps = rng.normal_vec(static_cast<std::size_t>(x.size()));
    draws.push_back({x, x + sig[t] * eps, sig[t], weights[t]});
  }
  UbLossEstimate out;
  const auto st = accumulate(net, draws, out.grad_theta);
  out.value = st.mean;
  out.std_error = st.se;
  out.constant = 2.0 * s.sigma_min() * s.sigma_min() * static_cast<double>(net.dim());
  out.bound = static_cast<double>(steps) * out.value + out.constant;
  return out;
}

double JensenCheck::combined_stderr() const {
  return std::sqrt(disc_stderr * disc_stderr + bound_stderr * bound_stderr);
}

JensenCheck jensen_check(const Denoiser& h, const Schedule& s, const NoiseBatch& batch) {
  if (batch.data.empty()) throw ValidationError("bound check needs a nonempty batch");
  const auto w = weights_from_schedule(s);
  const double constant =
      2.0 * s.sigma_min() * s.sigma_min() * static_cast<double>(batch.data.front().size());
  const std::size_t n = batch.data.size();
  std::vector<double> disc(n), bound(n);
  parallel_for(n, [&](std::size_t b) {
    const Vec& x = batch.data[b];
    const auto run = sample(h, s, x + s.sigma_max() * batch.noise[b]);
    const auto& traj = run.trajectory;
    const Vec target = x + s.sigma_min() * batch.target_noise[b];
    disc[b] = (traj.iterates.back() - target).squaredNorm();
    double ub = constant;
    for (std::size_t i = 0; i < w.lambdas.size(); ++i) {
      ub += w.lambdas[i] * (traj.denoised[i] - x).squaredNorm();
    }
    bound[b] = ub;
  });
  const auto d = mean_se(disc);
  const auto u = mean_se(bound);
  return {d.mean, d.se, u.mean, u.se};
}

UbLossEstimate stage2_step(FinetuneState& state, const Batch& data, const RunConfig& cfg,
                           Rng& rng) {
  auto ub = ub_loss(state.denoiser, state.schedule, data, rng, cfg.weights);
  if (!std::isfinite(ub.value) || !finite(ub.grad_theta)) {
    std::ostringstream msg;
    msg << "stage-2 loss is not finite at iteration " << state.iteration << " (loss "
        << ub.value << ", " << state.denoiser.param_count() << " parameters)";
    throw RuntimeFailure(msg.str());
  }
  state.optimizer.step(state.denoiser.mutable_params(), ub.grad_theta);
  state.history.push_back(ub.value);
  while (state.history.size() > state.history_capacity) state.history.pop_front();
  ++state.iteration;
  return ub;
}

double pretrain_denoiser(MlpDenoiser& net, const GaussianMixture& data, const NoiseRange& range,
                         const PretrainConfig& cfg, Rng& rng) {
  range.validate();
  if (cfg.iters == 0) return 0.0;
  if (cfg.batch_size == 0 || !(cfg.p_std > 0.0)) throw ValidationError("invalid pretrain config");
  Adam opt(net.param_count(), {cfg.learning_rate, 0.9, 0.999, 1e-8});
  const double sd = net.spec().data_scale;
  double last = 0.0;
  std::vector<double> grad;
  for (std::size_t it = 0; it < cfg.iters; ++it) {
    const Batch xs = data.sample(cfg.batch_size, rng);
    std::vector<Draw> draws;
    draws.reserve(xs.size());
    for (const auto& x : xs) {
      double sigma = std::exp(cfg.p_mean + cfg.p_std * rng.normal());
      sigma = std::clamp(sigma, range.sigma_min, range.sigma_max);
      const Vec eps = rng.normal_vec(static_cast<std::size_t>(x.size()));
      draws.push_back({x, x + sigma * eps, sigma, edm_weight(sigma, sd)});
    }
    last = accumulate(net, draws, grad).mean;
    if (!std::isfinite(last) || !finite(grad)) {
      throw RuntimeFailure("pretraining diverged at iteration " + std::to_string(it));
    }
    opt.step(net.mutable_params(), grad);
  }
  return last;
}

namespace {

template <class F>
auto with_context(const std::string& ctx, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const ValidationError& e) {
    throw ValidationError(ctx + ": " + e.what());
  } catch (const RuntimeFailure& e) {
    throw RuntimeFailure(ctx + ": " + e.what());
  }
}

std::string context(const char* stage, std::size_t outer, std::size_t it) {
  std::ostringstream s;
  s << stage << " (outer " << outer << ", iteration " << it << ")";
  return s.str();
}

}  // namespace

TwoStageResult run_two_stage(const RunConfig& cfg, const Problem& problem,
                             std::optional<MlpDenoiser> trainable) {
  cfg.validate();
  problem.range.validate();
  if (!trainable && cfg.stage2_iters > 0) {
    throw ValidationError("stage 2 needs a trainable denoiser; set stage2_iters = 0");
  }
  if (trainable && trainable->dim() != problem.data.dim()) {
    throw ValidationError("denoiser and data dimensions differ");
  }
  const AnalyticDenoiser analytic(problem.data);
  const Schedule init = rho_schedule(problem.range, problem.n_steps, problem.init_rho);
  Stage1State stage1(init_params_from_reference(init), cfg.schedule_optimizer);
  std::optional<Adam> denoiser_opt;
  if (trainable) denoiser_opt.emplace(trainable->param_count(), cfg.denoiser_optimizer);

  Rng data_rng(cfg.seed, Stream::data);
  Rng stage1_rng(cfg.seed, Stream::stage1);
  Rng stage2_rng(cfg.seed, Stream::stage2);
  const bool schedule_free = problem.n_steps >= 3;

  TwoStageResult result{init, std::nullopt, {}, 0, false};
  std::vector<double> outer_metric;
  for (std::size_t outer = 0; outer < cfg.max_outer_iters; ++outer) {
    Batch outer_batch;
    if (cfg.reuse_outer_batch) outer_batch = problem.data.sample(cfg.batch_size, data_rng);
    auto next_batch = [&]() {
      return cfg.reuse_outer_batch ? outer_batch : problem.data.sample(cfg.batch_size, data_rng);
    };
    double metric = 0.0;

    if (schedule_free) {
      const Denoiser& h = trainable ? static_cast<const Denoiser&>(*trainable) : analytic;
      for (std::size_t it = 0; it < cfg.stage1_iters; ++it) {
        const Batch batch = next_batch();
        auto report = with_context(context("stage 1", outer, it),
                                   [&] { return stage1_step(h, stage1, batch, cfg, stage1_rng); });
        report.outer = outer;
        report.iteration = it;
        metric = report.disc_loss;
        result.history.push_back(std::move(report));
      }
    }
    const Schedule schedule = stage1.schedule();

    if (cfg.stage2_iters > 0) {
      FinetuneState state(std::move(*trainable), schedule, std::move(*denoiser_opt));
      for (std::size_t it = 0; it < cfg.stage2_iters; ++it) {
        const Batch batch = next_batch();
        const auto ub = with_context(context("stage 2", outer, it),
                                     [&] { return stage2_step(state, batch, cfg, stage2_rng); });
        LossReport report;
        report.stage = "stage2";
        report.outer = outer;
        report.iteration = it;
        report.disc_loss = std::numeric_limits<double>::quiet_NaN();
        report.disc_stderr = std::numeric_limits<double>::quiet_NaN();
        report.diff_loss = ub.value;
        report.diff_stderr = ub.std_error;
        report.sigmas.assign(schedule.sigmas().begin(), schedule.sigmas().end());
        if (cfg.stage1_iters == 0 || !schedule_free) metric = ub.value;
        result.history.push_back(std::move(report));
      }
      trainable.emplace(std::move(state.denoiser));
      denoiser_opt.emplace(std::move(state.optimizer));
    }

    result.outer_iterations = outer + 1;
    outer_metric.push_back(metric);
    const std::size_t w = cfg.convergence_window;
    if (outer_metric.size() >= 2 * w) {
      const auto end = outer_metric.end();
      const double recent = std::accumulate(end - static_cast<std::ptrdiff_t>(w), end, 0.0);
      const double before = std::accumulate(end - static_cast<std::ptrdiff_t>(2 * w),
                                            end - static_cast<std::ptrdiff_t>(w), 0.0);
      if (std::abs(recent - before) <= cfg.convergence_tol * std::abs(before)) {
        result.converged = true;
        break;
      }
    }
  }
  result.schedule = stage1.schedule();
  result.denoiser = std::move(trainable);
  return result;
}

std::vector<WeightRow> export_weight_scheme(const Schedule& s, double data_scale) {
  const auto w = weights_from_schedule(s);
  const auto original = stage2_weights(s, WeightScheme::original, data_scale);
  const double steps = static_cast<double>(w.lambdas.size());
  std::vector<WeightRow> rows;
  rows.reserve(w.lambdas.size());
  for (std::size_t i = 0; i < w.lambdas.size(); ++i) {
    rows.push_back({i, s[i], w.lambdas[i], w.lambdas[i] / steps, original[i]});
  }
  return rows;
}

}  // namespace schedopt
