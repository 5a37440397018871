#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"

namespace schedopt {

/// Closed interval of noise levels a sampler traverses, from sigma_max down to sigma_min.
struct NoiseRange {
  double sigma_min = 0.002;
  double sigma_max = 80.0;

  /// Throws ValidationError unless 0 < sigma_min < sigma_max.
  void validate() const;
  double width() const { return sigma_max - sigma_min; }
};

/// Strictly decreasing noise levels sigma[0] = sigma_max > ... > sigma[N-1] = sigma_min.
///
/// N is the number of denoiser evaluations per sample. The projection to sigma = 0
/// (returning the last denoiser output) is not a schedule entry.
class Schedule {
 public:
  /// Throws ValidationError if fewer than two entries, non-positive, non-finite or not
  /// strictly decreasing.
  explicit Schedule(std::vector<double> sigmas);

  std::span<const double> sigmas() const { return sigmas_; }
  std::size_t n_steps() const { return sigmas_.size(); }
  double operator[](std::size_t i) const { return sigmas_[i]; }
  double sigma_max() const { return sigmas_.front(); }
  double sigma_min() const { return sigmas_.back(); }
  NoiseRange range() const { return {sigma_min(), sigma_max()}; }

  bool operator==(const Schedule&) const = default;

 private:
  std::vector<double> sigmas_;
};

/// Unconstrained parameterization of a schedule: N-2 free logits. The last softmax logit is
/// pinned to 1, so the softmax has N-1 entries, one increment per step.
struct ScheduleParams {
  std::vector<double> v;
  NoiseRange range;
  std::size_t n_steps = 2;
};

/// Coefficients with which each step's denoiser output enters the sigma_min-level iterate:
/// x_last = sum_i lambdas[i] * d_i + initial_coeff * x0.
struct StepWeights {
  std::vector<double> lambdas;  // N-1 entries
  double initial_coeff = 0.0;   // sigma_min / sigma_max
};

StepWeights weights_from_schedule(const Schedule& s);

/// sigma_i = sigma_min + (sigma_max - sigma_min) * sum_{j>=i} softmax([v, 1])_j, endpoints exact.
/// Throws ValidationError for non-finite v, wrong length, or if the softmax underflows so far
/// that two levels coincide in floating point.
Schedule schedule_from_params(const ScheduleParams& p);

/// Chain rule through schedule_from_params: maps dL/dsigma (length N) to dL/dv (length N-2).
/// Gradient entries for the fixed endpoints are ignored.
std::vector<double> params_gradient(const ScheduleParams& p, std::span<const double> grad_sigma);

/// Inverse of schedule_from_params up to the softmax shift gauge (last logit anchored at 1).
ScheduleParams init_params_from_reference(const Schedule& ref);

/// sigma_i = (sigma_max^(1/rho) + i/(N-1) * (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho.
Schedule rho_schedule(const NoiseRange& range, std::size_t n_steps, double rho);

/// Evenly spaced in sigma (rho = 1).
Schedule uniform_schedule(const NoiseRange& range, std::size_t n_steps);

/// Evenly spaced in log sigma. Used as the dense reference grid.
Schedule log_uniform_schedule(const NoiseRange& range, std::size_t n_steps);

nlohmann::json to_json(const Schedule& s);
Schedule schedule_from_json(const nlohmann::json& j);
void write_schedule(const std::filesystem::path& path, const Schedule& s);
Schedule read_schedule(const std::filesystem::path& path);

}  // namespace schedopt
