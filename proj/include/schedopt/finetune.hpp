#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <vector>

#include "schedopt/adam.hpp"
#include "schedopt/config.hpp"
#include "schedopt/gmm.hpp"
#include "schedopt/mlp.hpp"
#include "schedopt/rng.hpp"
#include "schedopt/sched_opt.hpp"
#include "schedopt/schedule.hpp"

namespace schedopt {

/// Per-step weights used by the stage-2 objective. Learned: lambda_i from the schedule.
/// Original: the log-normal-sigma weighting of standard denoiser training, evaluated at the
/// scheduled levels and rescaled to the same total as the learned weights.
std::vector<double> stage2_weights(const Schedule& s, WeightScheme scheme, double data_scale,
                                   const PretrainConfig& lognormal = {});

struct UbLossEstimate {
  double value = 0.0;      // batch mean of w_t ||D(x + sigma_t eps, sigma_t) - x||^2, t ~ U{0..N-2}
  double std_error = 0.0;
  double constant = 0.0;   // 2 sigma_min^2 d, excluded from the gradient
  double bound = 0.0;      // (N-1) * value + constant, estimate of the weighted-sum bound
  std::vector<double> grad_theta;
};

/// Single-term Monte-Carlo estimator of the lambda-weighted bound: one uniformly drawn step
/// and one fresh noise per datum. Throws ValidationError unless h is a trainable denoiser.
UbLossEstimate ub_loss(const Denoiser& h, const Schedule& s, const Batch& data, Rng& rng,
                       WeightScheme scheme = WeightScheme::learned);

/// Matched-draw evaluation of the discretization loss and its upper bound on the same
/// trajectories: bound_b = sum_i lambda_i ||d_i - x||^2 + 2 sigma_min^2 d.
struct JensenCheck {
  double disc = 0.0;
  double disc_stderr = 0.0;
  double bound = 0.0;
  double bound_stderr = 0.0;
  double combined_stderr() const;
};

JensenCheck jensen_check(const Denoiser& h, const Schedule& s, const NoiseBatch& batch);

/// Stage-2 loop state. The schedule is frozen for the lifetime of the state.
struct FinetuneState {
  MlpDenoiser denoiser;
  const Schedule schedule;
  Adam optimizer;
  std::size_t iteration = 0;
  std::deque<double> history;
  std::size_t history_capacity = 1000;

  FinetuneState(MlpDenoiser net, Schedule s, const AdamConfig& cfg)
      : denoiser(std::move(net)),
        schedule(std::move(s)),
        optimizer(denoiser.param_count(), cfg) {}
  FinetuneState(MlpDenoiser net, Schedule s, Adam opt)
      : denoiser(std::move(net)), schedule(std::move(s)), optimizer(std::move(opt)) {}
};

/// One Adam update of the denoiser parameters on ub_loss. Returns the loss estimate.
/// Throws RuntimeFailure if the loss or gradient is not finite.
UbLossEstimate stage2_step(FinetuneState& state, const Batch& data, const RunConfig& cfg, Rng& rng);

/// Supervised denoiser training with ln(sigma) ~ N(p_mean, p_std^2), clipped to the range,
/// and weight (sigma^2 + s_d^2) / (sigma s_d)^2. Returns the final-iteration loss.
double pretrain_denoiser(MlpDenoiser& net, const GaussianMixture& data, const NoiseRange& range,
                         const PretrainConfig& cfg, Rng& rng);

struct Problem {
  GaussianMixture data;
  NoiseRange range;
  std::size_t n_steps = 5;
  double init_rho = 7.0;
};

struct TwoStageResult {
  Schedule schedule;
  std::optional<MlpDenoiser> denoiser;  // empty when run on the analytic denoiser
  std::vector<LossReport> history;
  std::size_t outer_iterations = 0;
  bool converged = false;
};

/// Alternates stage1_iters schedule updates and stage2_iters denoiser updates from a rho
/// warm start until the outer moving-average loss settles or max_outer_iters is reached.
/// Without a trainable denoiser the analytic posterior mean is used and stage2_iters must
/// be zero. Stage failures are rethrown with stage and iteration context.
TwoStageResult run_two_stage(const RunConfig& cfg, const Problem& problem,
                             std::optional<MlpDenoiser> trainable = std::nullopt);

struct WeightRow {
  std::size_t step = 0;
  double sigma = 0.0;
  double lambda = 0.0;
  double active_weight = 0.0;    // lambda * P(step drawn) = lambda / (N-1)
  double original_weight = 0.0;  // log-normal-sigma weighting at the same levels, same total
};

std::vector<WeightRow> export_weight_scheme(const Schedule& s, double data_scale = 1.0);

}  // namespace schedopt
