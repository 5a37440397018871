#include <atomic>
#include <cstdlib>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "schedopt/adam.hpp"
#include "schedopt/csv.hpp"
#include "schedopt/error.hpp"
#include "schedopt/parallel.hpp"
#include "schedopt/rng.hpp"

using namespace schedopt;

TEST_CASE("sub-streams are distinct and stable") {
  std::set<std::uint64_t> seen;
  for (auto s : {Stream::data, Stream::init, Stream::stage1, Stream::stage2, Stream::eval,
                 Stream::sample, Stream::pretrain}) {
    seen.insert(derive_seed(7, s));
    seen.insert(derive_seed(7, s, 1));
  }
  CHECK(seen.size() == 14);
  CHECK(derive_seed(7, Stream::data) == derive_seed(7, Stream::data));
  Rng a(7, Stream::eval), b(7, Stream::eval);
  for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
  for (int i = 0; i < 100; ++i) CHECK(a.index(3) < 3);
}

TEST_CASE("adam update") {
  std::vector<double> p{1.0, -2.0}, g{0.5, -3.0};
  Adam opt(2, {0.1, 0.9, 0.999, 1e-8});
  opt.step(p, g);
  // First step moves each coordinate by about lr against the gradient sign.
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(-1.9).epsilon(1e-6));
  CHECK(opt.steps_taken() == 1);

  std::vector<double> q{1.0, 2.0};
  Adam frozen(2, {0.0, 0.9, 0.999, 1e-8});
  frozen.step(q, g);
  CHECK(q == std::vector<double>{1.0, 2.0});

  CHECK_THROWS_AS(Adam(2, {0.1, 1.0, 0.999, 1e-8}), ValidationError);
  CHECK_THROWS_AS(Adam(2, {-0.1, 0.9, 0.999, 1e-8}), ValidationError);
  std::vector<double> wrong{1.0};
  CHECK_THROWS_AS(opt.step(p, wrong), ValidationError);
}

TEST_CASE("parallel_for covers every index once and rethrows") {
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
  CHECK_THROWS_AS(parallel_for(100, [](std::size_t i) {
                    if (i == 57) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
  parallel_for(0, [](std::size_t) { FAIL("called"); });
}

TEST_CASE("worker count honours the environment cap") {
  setenv("SCHED_OPT_THREADS", "1", 1);
  CHECK(worker_count() == 1);
  unsetenv("SCHED_OPT_THREADS");
  CHECK(worker_count() >= 1);
}

TEST_CASE("doubles format exactly") {
  for (double x : {0.1, 1.0 / 3.0, 80.0, 2e-300, -7.25}) CHECK(std::stod(format_double(x)) == x);
  CHECK(format_double(NAN) == "nan");
}
