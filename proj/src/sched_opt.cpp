#include "schedopt/sched_opt.hpp"

#include <cmath>
#include <sstream>

#include "schedopt/error.hpp"
#include "schedopt/parallel.hpp"
#include "schedopt/sampler.hpp"

namespace schedopt {

namespace {

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

void check_batch(const NoiseBatch& b) {
  if (b.data.empty()) throw ValidationError("discretization loss needs a nonempty batch");
  if (b.noise.size() != b.data.size() || b.target_noise.size() != b.data.size()) {
    throw ValidationError("noise batch components disagree in size");
  }
}

// Reduces per-sample gradient rows in index order.
std::vector<double> mean_rows(const std::vector<std::vector<double>>& rows, std::size_t width) {
  std::vector<double> out(width, 0.0);
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < width; ++k) out[k] += r[k];
  }
  for (double& v : out) v /= static_cast<double>(rows.size());
  return out;
}

// Forward pass of the Euler recursion, iterates and denoised outputs for steps 0..N-2.
struct Forward {
  Batch xs;
  Batch ds;
};

Forward run_forward(const Denoiser& h, std::span<const double> sig, const Vec& x0) {
  Forward f;
  f.xs.reserve(sig.size());
  f.ds.reserve(sig.size() - 1);
  f.xs.push_back(x0);
  for (std::size_t i = 0; i + 1 < sig.size(); ++i) {
    f.ds.push_back(h.denoise(f.xs[i], sig[i]));
    f.xs.push_back(euler_step(f.xs[i], sig[i], sig[i + 1], f.ds[i]));
  }
  return f;
}

}  // namespace

NoiseBatch draw_noise_batch(const Batch& data, Rng& rng, bool shared_noise) {
  NoiseBatch b;
  b.data = data;
  b.noise.reserve(data.size());
  b.target_noise.reserve(data.size());
  for (const auto& x : data) {
    b.noise.push_back(rng.normal_vec(static_cast<std::size_t>(x.size())));
    b.target_noise.push_back(shared_noise ? b.noise.back()
                                          : rng.normal_vec(static_cast<std::size_t>(x.size())));
  }
  return b;
}

DiscLossEstimate disc_loss(const Denoiser& h, const Schedule& s, const NoiseBatch& batch) {
  check_batch(batch);
  const std::size_t n = batch.data.size();
  std::vector<double> per(n);
  parallel_for(n, [&](std::size_t b) {
    const Vec x0 = batch.data[b] + s.sigma_max() * batch.noise[b];
    const Vec target = batch.data[b] + s.sigma_min() * batch.target_noise[b];
    per[b] = (unrolled_sample(h, s, x0) - target).squaredNorm();
  });
  const auto st = mean_se(per);
  DiscLossEstimate out;
  out.value = st.mean;
  out.std_error = st.se;
  out.mc_batch = n;
  return out;
}

std::vector<double> efficient_sigma_gradient(const Denoiser& h, const Schedule& s,
                                             const StepWeights& weights, const NoiseBatch& batch) {
  check_batch(batch);
  const auto sig = s.sigmas();
  const std::size_t n_sig = sig.size();
  const std::size_t n = batch.data.size();
  std::vector<std::vector<double>> rows(n);
  parallel_for(n, [&](std::size_t b) {
    const Vec x0 = batch.data[b] + s.sigma_max() * batch.noise[b];
    const Vec target = batch.data[b] + s.sigma_min() * batch.target_noise[b];
    const auto f = run_forward(h, sig, x0);
    const Vec resid = f.xs.back() - target;
    auto& row = rows[b];
    row.assign(n_sig, 0.0);
    for (std::size_t i = 0; i + 1 < n_sig; ++i) {
      if (weights.lambdas[i] == 0.0) continue;
      row[i] = 2.0 * weights.lambdas[i] * resid.dot(h.sigma_grad(f.xs[i], sig[i]));
    }
  });
  return mean_rows(rows, n_sig);
}

DiscLossEstimate disc_loss_grad_efficient(const Denoiser& h, const ScheduleParams& p,
                                          const NoiseBatch& batch) {
  if (p.n_steps < 3) throw ValidationError("efficient estimator needs n_steps >= 3");
  const Schedule s = schedule_from_params(p);
  auto out = disc_loss(h, s, batch);
  out.grad_sigma = efficient_sigma_gradient(h, s, weights_from_schedule(s), batch);
  out.grad_v = params_gradient(p, out.grad_sigma);
  out.estimator = GradientEstimator::efficient;
  return out;
}

DiscLossEstimate disc_loss_grad_full(const Denoiser& h, const ScheduleParams& p,
                                     const NoiseBatch& batch) {
  check_batch(batch);
  if (p.n_steps > kMaxFullUnrollSteps) {
    throw ValidationError("full-unroll gradient is limited to " +
                          std::to_string(kMaxFullUnrollSteps) + " steps");
  }
  const Schedule s = schedule_from_params(p);
  const auto sig = s.sigmas();
  const std::size_t n_sig = sig.size();
  const std::size_t n = batch.data.size();
  std::vector<double> per(n);
  std::vector<std::vector<double>> rows(n);
  parallel_for(n, [&](std::size_t b) {
    const Vec& eps = batch.noise[b];
    const Vec& eps_t = batch.target_noise[b];
    const Vec x0 = batch.data[b] + s.sigma_max() * eps;
    const Vec target = batch.data[b] + s.sigma_min() * eps_t;
    const auto f = run_forward(h, sig, x0);
    const Vec resid = f.xs.back() - target;
    per[b] = resid.squaredNorm();

    auto& gs = rows[b];
    gs.assign(n_sig, 0.0);
    Vec g = 2.0 * resid;
    gs[n_sig - 1] -= g.dot(eps_t);
    for (std::size_t i = n_sig - 1; i-- > 0;) {
      const double r = sig[i + 1] / sig[i];
      const double g_ratio = g.dot(f.xs[i] - f.ds[i]);
      gs[i + 1] += g_ratio / sig[i];
      gs[i] -= g_ratio * sig[i + 1] / (sig[i] * sig[i]);
      const auto vjp = h.vjp(f.xs[i], sig[i], (1.0 - r) * g);
      gs[i] += vjp.sigma;
      g = r * g + vjp.x;
    }
    gs[0] += g.dot(eps);
  });
  const auto st = mean_se(per);
  DiscLossEstimate out;
  out.value = st.mean;
  out.std_error = st.se;
  out.mc_batch = n;
  out.grad_sigma = mean_rows(rows, n_sig);
  out.grad_v = params_gradient(p, out.grad_sigma);
  out.estimator = GradientEstimator::full_unroll;
  return out;
}

DiscLossEstimate disc_loss_grad_finite_diff(const Denoiser& h, const ScheduleParams& p,
                                            const NoiseBatch& batch, double step) {
  auto out = disc_loss(h, schedule_from_params(p), batch);
  out.grad_v.assign(p.v.size(), 0.0);
  for (std::size_t k = 0; k < p.v.size(); ++k) {
    ScheduleParams up = p;
    ScheduleParams down = p;
    up.v[k] += step;
    down.v[k] -= step;
    const double fu = disc_loss(h, schedule_from_params(up), batch).value;
    const double fd = disc_loss(h, schedule_from_params(down), batch).value;
    out.grad_v[k] = (fu - fd) / (2.0 * step);
  }
  out.estimator = GradientEstimator::finite_diff;
  return out;
}

DiscLossEstimate disc_loss_grad(const Denoiser& h, const ScheduleParams& p,
                                const NoiseBatch& batch, GradientEstimator estimator) {
  switch (estimator) {
    case GradientEstimator::efficient: return disc_loss_grad_efficient(h, p, batch);
    case GradientEstimator::full_unroll: return disc_loss_grad_full(h, p, batch);
    case GradientEstimator::finite_diff: return disc_loss_grad_finite_diff(h, p, batch);
  }
  throw ValidationError("unknown estimator");
}

StepNoise draw_step_noise(std::size_t steps, std::size_t batch, std::size_t dim, Rng& rng) {
  StepNoise out;
  out.noise.resize(steps);
  for (auto& row : out.noise) {
    row.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) row.push_back(rng.normal_vec(dim));
  }
  return out;
}

DiffLossEstimate weighted_diffusion_loss(const Denoiser& h, const Schedule& s, const Batch& data,
                                         const StepNoise& noise,
                                         std::optional<std::size_t> only_step) {
  if (data.empty()) throw ValidationError("diffusion loss needs a nonempty batch");
  const auto sig = s.sigmas();
  const std::size_t n_sig = sig.size();
  if (noise.noise.size() != n_sig - 1) throw ValidationError("step noise has wrong step count");
  const auto w = weights_from_schedule(s);
  const double smin = s.sigma_min();
  const std::size_t n = data.size();
  std::vector<double> per(n);
  std::vector<std::vector<double>> rows(n);
  parallel_for(n, [&](std::size_t b) {
    const Vec& x = data[b];
    auto& gs = rows[b];
    gs.assign(n_sig, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < n_sig; ++i) {
      if (only_step && *only_step != i) continue;
      const Vec& eps = noise.noise[i][b];
      const Vec y = x + sig[i] * eps;
      const Vec err = h.denoise(y, sig[i]) - x;
      const double sq = err.squaredNorm();
      total += w.lambdas[i] * sq;
      // lambda_i = smin / sigma_{i+1} - smin / sigma_i
      gs[i] += sq * smin / (sig[i] * sig[i]);
      gs[i + 1] -= sq * smin / (sig[i + 1] * sig[i + 1]);
      const auto vjp = h.vjp(y, sig[i], 2.0 * w.lambdas[i] * err);
      gs[i] += vjp.sigma + vjp.x.dot(eps);
    }
    per[b] = total;
  });
  const auto st = mean_se(per);
  return {st.mean, st.se, mean_rows(rows, n_sig)};
}

namespace {

[[noreturn]] void dump_and_abort(const ScheduleParams& p, std::span<const double> grad,
                                 std::size_t iteration) {
  std::ostringstream msg;
  msg.precision(17);
  msg << "stage-1 gradient is not finite at iteration " << iteration << "; v = [";
  for (std::size_t k = 0; k < p.v.size(); ++k) msg << (k ? ", " : "") << p.v[k];
  msg << "], grad_v = [";
  for (std::size_t k = 0; k < grad.size(); ++k) msg << (k ? ", " : "") << grad[k];
  msg << "]";
  try {
    const auto s = schedule_from_params(p);
    msg << ", sigma = [";
    for (std::size_t i = 0; i < s.n_steps(); ++i) msg << (i ? ", " : "") << s[i];
    msg << "]";
  } catch (const std::exception&) {
  }
  throw RuntimeFailure(msg.str());
}

std::vector<double> combined_grad(const Denoiser& h, const ScheduleParams& p,
                                  const Batch& data, const NoiseBatch& disc_batch,
                                  const StepNoise& step_noise, const RunConfig& cfg,
                                  std::optional<std::size_t> only_step, DiffLossEstimate* diff_out,
                                  DiscLossEstimate* disc_out) {
  const Schedule s = schedule_from_params(p);
  auto diff = weighted_diffusion_loss(h, s, data, step_noise, only_step);
  std::vector<double> grad = params_gradient(p, diff.grad_sigma);
  DiscLossEstimate disc;
  if (cfg.gamma > 0.0 && p.n_steps >= 3) {
    disc = disc_loss_grad(h, p, disc_batch, cfg.estimator);
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += cfg.gamma * disc.grad_v[k];
  } else {
    disc = disc_loss(h, s, disc_batch);
  }
  if (diff_out) *diff_out = std::move(diff);
  if (disc_out) *disc_out = std::move(disc);
  return grad;
}

bool all_finite(const std::vector<double>& g) {
  for (double x : g) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace

LossReport stage1_step(const Denoiser& h, Stage1State& state, const Batch& data,
                       const RunConfig& cfg, Rng& rng) {
  if (data.empty()) throw ValidationError("stage-1 step needs a nonempty batch");
  const std::size_t dim = static_cast<std::size_t>(data.front().size());
  const std::size_t n_sig = state.params.n_steps;
  const NoiseBatch disc_batch = draw_noise_batch(data, rng, cfg.shared_noise);
  const StepNoise step_noise = draw_step_noise(n_sig - 1, data.size(), dim, rng);

  LossReport report;
  report.stage = "stage1";
  report.iteration = state.iteration;
  {
    const auto s = state.schedule();
    report.sigmas.assign(s.sigmas().begin(), s.sigmas().end());
  }

  DiffLossEstimate diff;
  DiscLossEstimate disc;
  if (!cfg.per_step_updates) {
    auto grad = combined_grad(h, state.params, data, disc_batch, step_noise, cfg, std::nullopt,
                              &diff, &disc);
    if (!all_finite(grad)) dump_and_abort(state.params, grad, state.iteration);
    if (!grad.empty()) state.optimizer.step(state.params.v, grad);
  } else {
    // Losses are reported at the pre-update schedule.
    const Schedule s = state.schedule();
    diff = weighted_diffusion_loss(h, s, data, step_noise);
    disc = disc_loss(h, s, disc_batch);
    for (std::size_t t = 0; t + 1 < n_sig; ++t) {
      auto grad = combined_grad(h, state.params, data, disc_batch, step_noise, cfg, t, nullptr,
                                nullptr);
      if (!all_finite(grad)) dump_and_abort(state.params, grad, state.iteration);
      if (!grad.empty()) state.optimizer.step(state.params.v, grad);
    }
  }
  if (!std::isfinite(disc.value) || !std::isfinite(diff.value)) {
    dump_and_abort(state.params, {}, state.iteration);
  }
  report.disc_loss = disc.value;
  report.disc_stderr = disc.std_error;
  report.diff_loss = diff.value;
  report.diff_stderr = diff.std_error;
  ++state.iteration;
  return report;
}

}  // namespace schedopt
