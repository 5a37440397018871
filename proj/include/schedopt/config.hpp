#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "schedopt/adam.hpp"
#include "schedopt/gmm.hpp"
#include "schedopt/mlp.hpp"
#include "schedopt/schedule.hpp"

namespace schedopt {

enum class GradientEstimator { efficient, full_unroll, finite_diff };
enum class WeightScheme { learned, original };
enum class DenoiserKind { analytic_gmm, trainable_mlp };

GradientEstimator estimator_from_string(const std::string& s);
std::string to_string(GradientEstimator e);
WeightScheme weight_scheme_from_string(const std::string& s);
std::string to_string(WeightScheme w);
DenoiserKind denoiser_kind_from_string(const std::string& s);
std::string to_string(DenoiserKind k);

/// Hyperparameters of the two-stage loop.
struct RunConfig {
  double gamma = 1.0;  // scale of the discretization loss in the stage-1 objective
  std::size_t batch_size = 256;
  std::size_t stage1_iters = 500;
  std::size_t stage2_iters = 500;
  std::size_t max_outer_iters = 4;
  std::uint64_t seed = 0;
  AdamConfig schedule_optimizer{1e-2, 0.9, 0.999, 1e-8};
  AdamConfig denoiser_optimizer{1e-3, 0.9, 0.999, 1e-8};
  GradientEstimator estimator = GradientEstimator::full_unroll;
  WeightScheme weights = WeightScheme::learned;
  bool shared_noise = false;       // eps' = eps in the discretization-loss target
  bool per_step_updates = false;   // one schedule update per scheduled step (literal inner loop)
  bool reuse_outer_batch = false;  // one data batch per outer iteration for both stages
  double convergence_tol = 1e-4;
  std::size_t convergence_window = 50;

  /// Throws ValidationError on non-positive counts, negative gamma or bad optimizer settings.
  void validate() const;
};

/// Supervised pretraining of the trainable denoiser with log-normal sigma sampling.
struct PretrainConfig {
  std::size_t iters = 4000;
  std::size_t batch_size = 256;
  double learning_rate = 2e-3;
  double p_mean = -1.2;
  double p_std = 1.2;
};

struct DenoiserConfig {
  DenoiserKind kind = DenoiserKind::trainable_mlp;
  MlpSpec mlp;
  PretrainConfig pretrain;
};

struct ScheduleConfig {
  NoiseRange range;
  std::size_t n_steps = 5;
  double rho = 7.0;  // warm start curvature
};

struct EvalConfig {
  std::size_t samples = 512;
  std::size_t fine_steps = 2000;
  std::size_t projections = 64;
};

/// Everything one CLI run needs; round-trips through JSON and rejects unknown keys.
struct ExperimentConfig {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  GaussianMixture problem = canonical_problem();
  DenoiserConfig denoiser;
  ScheduleConfig schedule;
  RunConfig run;
  EvalConfig eval;
  std::string output_dir = "runs";

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);

  /// Two isotropic Gaussians at (+-2, 0) with scale 0.5, equal weights.
  static GaussianMixture canonical_problem();
};

}  // namespace schedopt
