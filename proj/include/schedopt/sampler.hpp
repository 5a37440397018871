#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "schedopt/denoiser.hpp"
#include "schedopt/schedule.hpp"
#include "schedopt/types.hpp"

namespace schedopt {

/// x_next = (sigma_next / sigma_cur) * x + (1 - sigma_next / sigma_cur) * d_out.
/// Throws ValidationError unless sigma_cur > sigma_next > 0.
Vec euler_step(const Vec& x, double sigma_cur, double sigma_next, const Vec& d_out);

/// Iterates x_i and denoiser outputs d_i = D(x_i, sigma_i) of one deterministic sampling run.
struct Trajectory {
  std::vector<double> sigmas;
  Batch iterates;
  Batch denoised;
  /// Standard-normal noise behind x_0, when the run was seeded from noise.
  std::optional<Vec> initial_noise;
};

struct SampleResult {
  Vec final;  // last denoiser output, the projection to sigma = 0
  Trajectory trajectory;
};

/// N-1 Euler steps down the schedule, then returns D(x_{N-1}, sigma_min).
SampleResult sample(const Denoiser& h, const Schedule& s, const Vec& x0);

/// Generative mode: x0 = sigma_max * noise.
SampleResult sample_from_noise(const Denoiser& h, const Schedule& s, const Vec& noise);

/// The sigma_min-level iterate, built as a weighted sum of denoiser outputs:
/// x_last = sum_i lambda_i d_i + (sigma_min / sigma_max) x0.
/// Intermediate states are reconstructed the same way (accumulated in 1/sigma), never by
/// iterating euler_step.
Vec unrolled_sample(const Denoiser& h, const Schedule& s, const Vec& x0);

enum class OdeMethod { euler, rk4 };

struct ReferenceOptions {
  std::size_t fine_steps = 2000;  // grid points, log-spaced
  OdeMethod method = OdeMethod::rk4;
  double tolerance = 1e-4;        // relative change allowed when the grid is doubled
  bool check_convergence = true;
};

struct ReferenceResult {
  Vec final;           // D(x(sigma_min), sigma_min)
  Vec state_at_min;    // x(sigma_min)
  bool converged = true;
  double relative_change = 0.0;
  std::optional<std::string> warning;
};

/// Integrates x from sigma_from to sigma_to over `intervals` log-spaced sub-steps of
/// dx/dsigma = (x - D(x, sigma)) / sigma. Euler sub-steps are exactly euler_step.
Vec integrate_pf_ode(const Denoiser& h, const Vec& x, double sigma_from, double sigma_to,
                     std::size_t intervals, OdeMethod method);

/// Dense solution of the probability-flow ODE from sigma_max to sigma_min, then the final
/// denoise projection. Throws ValidationError if fine_steps < 1000. Non-convergence under
/// grid doubling is reported through `converged` / `warning`, not thrown.
ReferenceResult reference_solve(const Denoiser& h, const NoiseRange& range, const Vec& x0,
                                const ReferenceOptions& opts = {});

/// Backward-Euler residuals of the denoised sequence against the reference trajectory:
///   r_i = || (d_i - d_{i-1}) - (1/sigma_{i+1} - 1/sigma_i) * dtau/du(u = 1/sigma_i) ||
/// for i = 1 .. N-2, where tau(u) = D(x(sigma), sigma) along the dense ODE solution from the
/// trajectory's x_0. The slope is a central difference in u around each sigma_i.
std::vector<double> backward_euler_residual(const Trajectory& traj, const Denoiser& h,
                                            const ReferenceOptions& opts = {});

}  // namespace schedopt
