#include <cmath>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "schedopt/error.hpp"
#include "schedopt/eval.hpp"
#include "stubs.hpp"

using namespace schedopt;
using namespace schedopt::testing;

TEST_CASE("dense grid reproduces the reference") {
  Rng rng(1);
  const AnalyticDenoiser d(random_mixture(2, rng));
  ReferenceOptions opts;
  opts.fine_steps = 1000;
  opts.method = OdeMethod::euler;
  opts.check_convergence = false;
  const auto set = make_eval_set(d, {}, 16, 3, opts);
  CHECK(global_error(d, log_uniform_schedule({}, 1000), set).mean <= 1e-8);
  CHECK_THROWS_AS(make_eval_set(d, {}, 1, 3, opts), ValidationError);
  CHECK_THROWS_AS(global_errors(d, Schedule({81.0, 0.002}), set), ValidationError);
}

TEST_CASE("global error on a single Gaussian matches composed shrinkage") {
  const double s = 0.6;
  const AnalyticDenoiser d(single_gaussian(vec({0.0}), s));
  const NoiseRange range;
  const auto set = make_eval_set(d, range, 64, 5);
  auto a = [&](double sigma) { return s * s / (s * s + sigma * sigma); };
  const Schedule sched = rho_schedule(range, 6, 7.0);
  double k = 1.0;
  for (std::size_t i = 0; i + 1 < 6; ++i) {
    const double r = sched[i + 1] / sched[i];
    k *= r + (1 - r) * a(sched[i]);
  }
  k *= a(range.sigma_min);
  const double k_ref = a(range.sigma_min) * std::sqrt(s * s + range.sigma_min * range.sigma_min) /
                       std::sqrt(s * s + range.sigma_max * range.sigma_max);
  const auto errs = global_errors(d, sched, set);
  for (std::size_t i = 0; i < errs.size(); ++i) {
    const double expected = std::pow((k - k_ref) * set.x0[i][0], 2);
    CHECK(errs[i] == doctest::Approx(expected).epsilon(1e-6));
  }
}

TEST_CASE("energy distance") {
  Rng rng(2);
  Batch a, b, c;
  for (int i = 0; i < 100; ++i) {
    a.push_back(rng.normal_vec(2));
    b.push_back(vec({0.0, 0.0}));
    c.push_back(vec({3.0, 4.0}));
  }
  CHECK(energy_distance(a, a) == 0.0);
  CHECK(energy_distance(b, c) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(energy_distance(a, c) == doctest::Approx(energy_distance(c, a)).epsilon(1e-12));
  CHECK_THROWS_AS(energy_distance(Batch(a.begin(), a.begin() + 63), c), ValidationError);
}

TEST_CASE("energy distance agrees with quadrature in one dimension") {
  // For 1-D laws, 2E|X-Y| - E|X-X'| - E|Y-Y'| = 2 * integral (F - G)^2.
  const GaussianMixture p({{0.4, vec({-1.0}), 0.5}, {0.6, vec({1.5}), 0.7}});
  const GaussianMixture q({{0.4, vec({-1.0}), 0.5}, {0.6, vec({2.5}), 0.7}});
  auto cdf = [](const GaussianMixture& g, double t) {
    double f = 0.0;
    for (const auto& c : g.components()) f += c.weight * 0.5 * std::erfc(-(t - c.mean[0]) / (c.scale * std::sqrt(2.0)));
    return f;
  };
  double integral = 0.0;
  const double lo = -12.0, hi = 14.0;
  const int n = 100000;
  const double h = (hi - lo) / n;
  for (int i = 0; i < n; ++i) {
    const double t = lo + (i + 0.5) * h;
    integral += std::pow(cdf(p, t) - cdf(q, t), 2) * h;
  }
  // Component counts are fixed at their expected values to keep the estimate's spread small.
  Rng rng(3);
  auto draw = [&](const GaussianMixture& g) {
    Batch out;
    for (const auto& c : g.components()) {
      for (int i = 0; i < static_cast<int>(c.weight * 8000); ++i) out.push_back(c.mean + c.scale * rng.normal_vec(1));
    }
    return out;
  };
  const double ed = energy_distance(draw(p), draw(q));
  MESSAGE("energy distance " << ed << ", quadrature " << 2 * integral);
  CHECK(ed == doctest::Approx(2 * integral).epsilon(0.05));
}

TEST_CASE("sliced Wasserstein") {
  Rng rng(4);
  Batch a, b;
  for (int i = 0; i < 200; ++i) {
    a.push_back(rng.normal_vec(2));
    b.push_back(a.back() + vec({3.0, 0.0}));
  }
  Rng proj(5);
  CHECK(sliced_wasserstein(a, a, 16, proj) == 0.0);
  // A translation by m gives SW2^2 = E (theta . m)^2 = |m|^2 / d.
  Rng proj2(6);
  const double sw = sliced_wasserstein(a, b, 4000, proj2);
  CHECK(sw * sw == doctest::Approx(4.5).epsilon(0.05));
  CHECK_THROWS_AS(sliced_wasserstein(a, Batch(b.begin(), b.begin() + 10), 4, proj), ValidationError);
}

TEST_CASE("schedule comparison") {
  const GaussianMixture g({{0.5, vec({-2.0, 0.0}), 0.5}, {0.5, vec({2.0, 0.0}), 0.5}});
  const AnalyticDenoiser d(g);
  EvalConfig cfg;
  cfg.samples = 256;
  cfg.fine_steps = 1000;
  std::vector<NamedSchedule> list;
  for (std::size_t n : {5, 8, 10, 12, 15, 20}) list.push_back({"rho" + std::to_string(n), rho_schedule({}, n, 7.0)});
  list.push_back({"rho5-again", rho_schedule({}, 5, 7.0)});
  const auto reports = compare_schedules(list, d, g, cfg, 9);
  REQUIRE(reports.size() == 7);
  for (std::size_t i = 1; i < 6; ++i) {
    CHECK(reports[i].global_error.mean < reports[i - 1].global_error.mean);
  }
  CHECK(reports[6].global_error.mean == reports[0].global_error.mean);
  CHECK(reports[6].energy_distance == reports[0].energy_distance);
  CHECK(reports[6].sliced_wasserstein == reports[0].sliced_wasserstein);
  CHECK(reports[0].sample_count == 256);

  const auto path = std::filesystem::temp_directory_path() / "schedopt_eval_test.csv";
  write_eval_csv(path, reports);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "schedule_id,n_steps,metric,value,stderr,seed");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 21);
  std::filesystem::remove(path);
}
