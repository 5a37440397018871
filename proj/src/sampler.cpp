#include "schedopt/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "schedopt/error.hpp"

namespace schedopt {

Vec euler_step(const Vec& x, double sigma_cur, double sigma_next, const Vec& d_out) {
  if (!(sigma_cur > sigma_next && sigma_next > 0.0)) {
    std::ostringstream msg;
    msg << "euler_step needs sigma_cur > sigma_next > 0, got " << sigma_cur << " -> "
        << sigma_next;
    throw ValidationError(msg.str());
  }
  const double r = sigma_next / sigma_cur;
  return r * x + (1.0 - r) * d_out;
}

SampleResult sample(const Denoiser& h, const Schedule& s, const Vec& x0) {
  const auto sig = s.sigmas();
  SampleResult out;
  auto& traj = out.trajectory;
  traj.sigmas.assign(sig.begin(), sig.end());
  traj.iterates.reserve(sig.size());
  traj.denoised.reserve(sig.size());
  traj.iterates.push_back(x0);
  for (std::size_t i = 0; i < sig.size(); ++i) {
    traj.denoised.push_back(h.denoise(traj.iterates[i], sig[i]));
    if (i + 1 < sig.size()) {
      traj.iterates.push_back(euler_step(traj.iterates[i], sig[i], sig[i + 1], traj.denoised[i]));
    }
  }
  out.final = traj.denoised.back();
  return out;
}

SampleResult sample_from_noise(const Denoiser& h, const Schedule& s, const Vec& noise) {
  auto out = sample(h, s, s.sigma_max() * noise);
  out.trajectory.initial_noise = noise;
  return out;
}

Vec unrolled_sample(const Denoiser& h, const Schedule& s, const Vec& x0) {
  const auto sig = s.sigmas();
  const auto weights = weights_from_schedule(s);
  // x_i / sigma_i = x0 / sigma_max + sum_{j<i} (1/sigma_{j+1} - 1/sigma_j) d_j
  Vec scaled = x0 / s.sigma_max();
  Vec x_last = weights.initial_coeff * x0;
  for (std::size_t i = 0; i + 1 < sig.size(); ++i) {
    const Vec x_i = i == 0 ? x0 : Vec(sig[i] * scaled);
    const Vec d_i = h.denoise(x_i, sig[i]);
    scaled += (1.0 / sig[i + 1] - 1.0 / sig[i]) * d_i;
    x_last += weights.lambdas[i] * d_i;
  }
  return x_last;
}

namespace {

std::vector<double> log_grid(double from, double to, std::size_t points) {
  std::vector<double> grid(points);
  const double hi = std::log(from);
  const double lo = std::log(to);
  for (std::size_t i = 0; i < points; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(points - 1);
    grid[i] = std::exp(hi + t * (lo - hi));
  }
  grid.front() = from;
  grid.back() = to;
  return grid;
}

Vec drift(const Denoiser& h, const Vec& x, double sigma) {
  return (x - h.denoise(x, sigma)) / sigma;
}

}  // namespace

Vec integrate_pf_ode(const Denoiser& h, const Vec& x, double sigma_from, double sigma_to,
                     std::size_t intervals, OdeMethod method) {
  if (!(sigma_from > 0.0 && sigma_to > 0.0)) {
    throw ValidationError("ODE integration bounds must be positive");
  }
  if (intervals == 0) throw ValidationError("ODE integration needs at least one interval");
  if (sigma_from == sigma_to) return x;
  const auto grid = log_grid(sigma_from, sigma_to, intervals + 1);
  Vec state = x;
  for (std::size_t k = 0; k < intervals; ++k) {
    const double s0 = grid[k];
    const double s1 = grid[k + 1];
    if (method == OdeMethod::euler) {
      state = euler_step(state, s0, s1, h.denoise(state, s0));
      continue;
    }
    const double dt = s1 - s0;
    const double mid = 0.5 * (s0 + s1);
    const Vec k1 = drift(h, state, s0);
    const Vec k2 = drift(h, state + 0.5 * dt * k1, mid);
    const Vec k3 = drift(h, state + 0.5 * dt * k2, mid);
    const Vec k4 = drift(h, state + dt * k3, s1);
    state += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return state;
}

ReferenceResult reference_solve(const Denoiser& h, const NoiseRange& range, const Vec& x0,
                                const ReferenceOptions& opts) {
  range.validate();
  if (opts.fine_steps < 1000) throw ValidationError("reference solve needs fine_steps >= 1000");
  ReferenceResult out;
  const std::size_t intervals = opts.fine_steps - 1;
  out.state_at_min =
      integrate_pf_ode(h, x0, range.sigma_max, range.sigma_min, intervals, opts.method);
  out.final = h.denoise(out.state_at_min, range.sigma_min);
  if (opts.check_convergence) {
    const Vec finer = h.denoise(
        integrate_pf_ode(h, x0, range.sigma_max, range.sigma_min, 2 * intervals, opts.method),
        range.sigma_min);
    const double scale = std::max(finer.norm(), 1e-300);
    out.relative_change = (out.final - finer).norm() / scale;
    out.converged = out.relative_change < opts.tolerance;
    if (!out.converged) {
      std::ostringstream msg;
      msg << "reference solution not converged: doubling the grid changed the output by "
          << out.relative_change << " (relative), tolerance " << opts.tolerance;
      out.warning = msg.str();
    }
  }
  return out;
}

std::vector<double> backward_euler_residual(const Trajectory& traj, const Denoiser& h,
                                            const ReferenceOptions& opts) {
  const std::size_t n = traj.sigmas.size();
  if (n < 3) return {};
  const double smax = traj.sigmas.front();
  const double smin = traj.sigmas.back();
  const double log_span = std::log(smax / smin);
  const Vec& x0 = traj.iterates.front();
  constexpr double kHalfWidth = 1e-3;  // in log sigma

  auto intervals_for = [&](double from, double to) {
    const double frac = std::abs(std::log(from / to)) / log_span;
    return std::max<std::size_t>(
        8, static_cast<std::size_t>(std::ceil(frac * static_cast<double>(opts.fine_steps))));
  };

  std::vector<double> residuals;
  residuals.reserve(n - 2);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double s = traj.sigmas[i];
    const double hi = std::min(smax, s * std::exp(kHalfWidth));
    const double lo = s * std::exp(-kHalfWidth);
    const Vec x_hi = integrate_pf_ode(h, x0, smax, hi, intervals_for(smax, hi), opts.method);
    const Vec x_lo = integrate_pf_ode(h, x_hi, hi, lo, 16, opts.method);
    const Vec slope = (h.denoise(x_lo, lo) - h.denoise(x_hi, hi)) / (1.0 / lo - 1.0 / hi);
    const double step = 1.0 / traj.sigmas[i + 1] - 1.0 / s;
    residuals.push_back(((traj.denoised[i] - traj.denoised[i - 1]) - step * slope).norm());
  }
  return residuals;
}

}  // namespace schedopt
