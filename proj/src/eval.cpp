#include "schedopt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "schedopt/csv.hpp"
#include "schedopt/error.hpp"
#include "schedopt/parallel.hpp"

namespace schedopt {

MeanStderr mean_stderr(std::span<const double> xs) {
  MeanStderr out;
  if (xs.empty()) return out;
  const double n = static_cast<double>(xs.size());
  for (double x : xs) out.mean += x;
  out.mean /= n;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.std_error = std::sqrt(ss / (n - 1.0) / n);
  }
  return out;
}

MeanStderr paired_difference(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("paired samples differ in size");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return mean_stderr(d);
}

EvalSet make_eval_set(const Denoiser& h, const NoiseRange& range, std::size_t count,
                      std::uint64_t seed, const ReferenceOptions& opts) {
  range.validate();
  if (count < 2) throw ValidationError("evaluation needs at least 2 samples");
  EvalSet set{seed, range, {}, {}, 0};
  Rng rng(seed, Stream::eval, 0);
  set.x0.reserve(count);
  for (std::size_t i = 0; i < count; ++i) set.x0.push_back(range.sigma_max * rng.normal_vec(h.dim()));
  set.reference.resize(count);
  std::vector<char> converged(count, 1);
  parallel_for(count, [&](std::size_t i) {
    auto ref = reference_solve(h, range, set.x0[i], opts);
    converged[i] = ref.converged;
    set.reference[i] = std::move(ref.final);
  });
  set.unconverged = static_cast<std::size_t>(std::count(converged.begin(), converged.end(), 0));
  return set;
}

std::vector<double> global_errors(const Denoiser& h, const Schedule& s, const EvalSet& set) {
  if (s.sigma_max() != set.range.sigma_max || s.sigma_min() != set.range.sigma_min) {
    throw ValidationError("schedule endpoints differ from the evaluation range");
  }
  std::vector<double> err(set.x0.size());
  parallel_for(err.size(), [&](std::size_t i) {
    err[i] = (sample(h, s, set.x0[i]).final - set.reference[i]).squaredNorm();
  });
  return err;
}

MeanStderr global_error(const Denoiser& h, const Schedule& s, const EvalSet& set) {
  return mean_stderr(global_errors(h, s, set));
}

namespace {

double mean_pair_distance(const Batch& a, const Batch& b) {
  std::vector<double> rows(a.size());
  parallel_for(a.size(), [&](std::size_t i) {
    double acc = 0.0;
    for (const auto& y : b) acc += (a[i] - y).norm();
    rows[i] = acc;
  });
  double total = 0.0;
  for (double r : rows) total += r;
  return total / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

}  // namespace

double energy_distance(const Batch& a, const Batch& b) {
  if (a.size() < 64 || b.size() < 64) throw ValidationError("energy distance needs >= 64 samples per batch");
  return 2.0 * mean_pair_distance(a, b) - mean_pair_distance(a, a) - mean_pair_distance(b, b);
}

double sliced_wasserstein(const Batch& a, const Batch& b, std::size_t projections, Rng& rng) {
  if (a.empty() || a.size() != b.size()) throw ValidationError("sliced Wasserstein needs equal nonempty batches");
  if (projections == 0) throw ValidationError("sliced Wasserstein needs at least one projection");
  const auto dim = static_cast<std::size_t>(a.front().size());
  double total = 0.0;
  std::vector<double> pa(a.size()), pb(b.size());
  for (std::size_t k = 0; k < projections; ++k) {
    Vec dir = rng.normal_vec(dim);
    dir.normalize();
    for (std::size_t i = 0; i < a.size(); ++i) {
      pa[i] = dir.dot(a[i]);
      pb[i] = dir.dot(b[i]);
    }
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) acc += (pa[i] - pb[i]) * (pa[i] - pb[i]);
    total += acc / static_cast<double>(pa.size());
  }
  return std::sqrt(total / static_cast<double>(projections));
}

std::vector<EvalReport> compare_schedules(const std::vector<NamedSchedule>& schedules,
                                          const Denoiser& h, const GaussianMixture& data,
                                          const EvalConfig& cfg, std::uint64_t seed) {
  if (schedules.empty()) throw ValidationError("no schedules to compare");
  const auto range = schedules.front().schedule.range();
  ReferenceOptions ref;
  ref.fine_steps = cfg.fine_steps;
  const EvalSet set = make_eval_set(h, range, cfg.samples, seed, ref);
  Rng data_rng(seed, Stream::eval, 1);
  const Batch truth = data.sample(cfg.samples, data_rng);

  std::vector<EvalReport> out;
  for (const auto& [id, s] : schedules) {
    EvalReport r;
    r.schedule_id = id;
    r.denoiser_id = std::string(h.kind());
    r.n_steps = s.n_steps();
    r.global_error = global_error(h, s, set);
    Batch generated(set.x0.size());
    parallel_for(generated.size(), [&](std::size_t i) { generated[i] = sample(h, s, set.x0[i]).final; });
    if (generated.size() >= 64) r.energy_distance = energy_distance(generated, truth);
    else r.energy_distance = std::numeric_limits<double>::quiet_NaN();
    Rng proj(seed, Stream::eval, 2);
    r.sliced_wasserstein = sliced_wasserstein(generated, truth, cfg.projections, proj);
    r.sample_count = set.x0.size();
    r.seed = seed;
    out.push_back(std::move(r));
  }
  return out;
}

void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalReport>& reports) {
  CsvWriter csv(path, {"schedule_id", "n_steps", "metric", "value", "stderr", "seed"});
  const std::string none = format_double(std::numeric_limits<double>::quiet_NaN());
  for (const auto& r : reports) {
    const auto n = std::to_string(r.n_steps);
    const auto seed = std::to_string(r.seed);
    csv.row({r.schedule_id, n, "global_error", format_double(r.global_error.mean),
             format_double(r.global_error.std_error), seed});
    csv.row({r.schedule_id, n, "energy_distance", format_double(r.energy_distance), none, seed});
    csv.row({r.schedule_id, n, "sliced_wasserstein", format_double(r.sliced_wasserstein), none, seed});
  }
}

}  // namespace schedopt
