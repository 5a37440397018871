#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "schedopt/adam.hpp"
#include "schedopt/config.hpp"
#include "schedopt/denoiser.hpp"
#include "schedopt/rng.hpp"
#include "schedopt/schedule.hpp"
#include "schedopt/types.hpp"

namespace schedopt {

/// Monte-Carlo draws for one discretization-loss estimate. The sampler starts at
/// x + sigma_max * noise; the target is x + sigma_min * target_noise.
struct NoiseBatch {
  Batch data;
  Batch noise;
  Batch target_noise;
};

/// Draws start and target noise for every datum. With shared_noise the target reuses the
/// start noise.
NoiseBatch draw_noise_batch(const Batch& data, Rng& rng, bool shared_noise = false);

struct DiscLossEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::vector<double> grad_v;      // N-2, empty for value-only estimates
  std::vector<double> grad_sigma;  // N, empty for value-only and finite-difference estimates
  std::size_t mc_batch = 0;
  std::optional<GradientEstimator> estimator;
};

/// Mean over the batch of ||unrolled_sample(x0) - (x + sigma_min * eps')||^2.
/// Throws ValidationError on an empty batch.
DiscLossEstimate disc_loss(const Denoiser& h, const Schedule& s, const NoiseBatch& batch);

/// dL/dsigma_i ~= 2 lambda_i <x_last - target, dD/dsigma(x_i, sigma_i)>, batch mean. Ignores the
/// dependence of the weights and of later iterates on sigma_i. Weights are passed in so
/// callers can inspect single-step contributions.
std::vector<double> efficient_sigma_gradient(const Denoiser& h, const Schedule& s,
                                             const StepWeights& weights, const NoiseBatch& batch);

/// Efficient estimator chained to v. Needs N >= 3.
DiscLossEstimate disc_loss_grad_efficient(const Denoiser& h, const ScheduleParams& p,
                                          const NoiseBatch& batch);

/// Exact gradient by reverse accumulation through every Euler step, including the step
/// ratios and the denoiser's x- and sigma-sensitivities. N is capped at kMaxFullUnrollSteps.
inline constexpr std::size_t kMaxFullUnrollSteps = 64;
DiscLossEstimate disc_loss_grad_full(const Denoiser& h, const ScheduleParams& p,
                                     const NoiseBatch& batch);

/// Central differences of disc_loss over v with common noise.
DiscLossEstimate disc_loss_grad_finite_diff(const Denoiser& h, const ScheduleParams& p,
                                            const NoiseBatch& batch, double step = 1e-5);

DiscLossEstimate disc_loss_grad(const Denoiser& h, const ScheduleParams& p,
                                const NoiseBatch& batch, GradientEstimator estimator);

/// Per-step noise for the lambda-weighted denoising loss: noise[i][b] is the draw for
/// scheduled step i and datum b.
struct StepNoise {
  std::vector<Batch> noise;
};

StepNoise draw_step_noise(std::size_t steps, std::size_t batch, std::size_t dim, Rng& rng);

struct DiffLossEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::vector<double> grad_sigma;  // N
};

/// sum_i lambda_i ||D(x + sigma_i eps_i, sigma_i) - x||^2 over the N-1 weighted steps, batch
/// mean, with its sigma-gradient through both lambda(sigma) and D. When only_step is set the
/// sum is restricted to that index.
DiffLossEstimate weighted_diffusion_loss(const Denoiser& h, const Schedule& s, const Batch& data,
                                         const StepNoise& noise,
                                         std::optional<std::size_t> only_step = std::nullopt);

struct LossReport {
  std::string stage;
  std::size_t outer = 0;
  std::size_t iteration = 0;
  double disc_loss = 0.0;
  double disc_stderr = 0.0;
  double diff_loss = 0.0;
  double diff_stderr = 0.0;
  std::vector<double> sigmas;
};

struct Stage1State {
  ScheduleParams params;
  Adam optimizer;
  std::size_t iteration = 0;

  Stage1State(ScheduleParams p, const AdamConfig& cfg)
      : params(std::move(p)), optimizer(params.v.size(), cfg) {}
  Schedule schedule() const { return schedule_from_params(params); }
};

/// One schedule update on grad_v (L_diff + gamma * L_disc). The report carries the losses at
/// the schedule before the update. With cfg.per_step_updates the update is split into one
/// step per scheduled index, each driven by that index's diffusion term plus gamma * L_disc.
/// Throws RuntimeFailure with a parameter dump if the gradient is not finite.
LossReport stage1_step(const Denoiser& h, Stage1State& state, const Batch& data,
                       const RunConfig& cfg, Rng& rng);

}  // namespace schedopt
