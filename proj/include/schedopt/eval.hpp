#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "schedopt/config.hpp"
#include "schedopt/denoiser.hpp"
#include "schedopt/gmm.hpp"
#include "schedopt/rng.hpp"
#include "schedopt/sampler.hpp"
#include "schedopt/schedule.hpp"

namespace schedopt {

struct MeanStderr {
  double mean = 0.0;
  double std_error = 0.0;
};

MeanStderr mean_stderr(std::span<const double> xs);

/// Mean and standard error of a[i] - b[i].
MeanStderr paired_difference(std::span<const double> a, std::span<const double> b);

/// Shared initial noise and its dense reference solutions. Build once per (denoiser, seed) and
/// reuse across schedule comparisons.
struct EvalSet {
  std::uint64_t seed = 0;
  NoiseRange range;
  Batch x0;
  Batch reference;
  std::size_t unconverged = 0;
};

/// x0 = sigma_max * eps with eps from the eval stream of `seed`. Throws ValidationError if
/// count < 2.
EvalSet make_eval_set(const Denoiser& h, const NoiseRange& range, std::size_t count,
                      std::uint64_t seed, const ReferenceOptions& opts = {});

/// Per-sample ||sample(x0) - reference(x0)||^2. The schedule must span the set's range.
std::vector<double> global_errors(const Denoiser& h, const Schedule& s, const EvalSet& set);
MeanStderr global_error(const Denoiser& h, const Schedule& s, const EvalSet& set);

/// V-statistic 2 E||X - Y|| - E||X - X'|| - E||Y - Y'||. Both batches need >= 64 samples.
double energy_distance(const Batch& a, const Batch& b);

/// Sliced 2-Wasserstein distance over random unit directions. Equal batch sizes required.
double sliced_wasserstein(const Batch& a, const Batch& b, std::size_t projections, Rng& rng);

struct NamedSchedule {
  std::string id;
  Schedule schedule;
};

struct EvalReport {
  std::string schedule_id;
  std::string denoiser_id;
  std::size_t n_steps = 0;
  MeanStderr global_error;
  double energy_distance = 0.0;
  double sliced_wasserstein = 0.0;
  std::size_t sample_count = 0;
  std::uint64_t seed = 0;
};

/// One report per schedule, all on the same eval set and the same true-data batch.
std::vector<EvalReport> compare_schedules(const std::vector<NamedSchedule>& schedules,
                                          const Denoiser& h, const GaussianMixture& data,
                                          const EvalConfig& cfg, std::uint64_t seed);

/// Long format: schedule_id, n_steps, metric, value, stderr, seed.
void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalReport>& reports);

}  // namespace schedopt
