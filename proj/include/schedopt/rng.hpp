#pragma once

#include <cstdint>
#include <random>

#include "schedopt/types.hpp"

namespace schedopt {

/// Named sub-streams of the master seed. Adding draws to one phase never shifts another.
enum class Stream : std::uint64_t {
  data = 1,
  init = 2,
  stage1 = 3,
  stage2 = 4,
  eval = 5,
  sample = 6,
  pretrain = 7,
};

/// SplitMix64 finalizer over (master, stream, counter).
std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t counter = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t master, Stream stream, std::uint64_t counter = 0)
      : engine_(derive_seed(master, stream, counter)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::size_t index(std::size_t n);
  Vec normal_vec(std::size_t dim);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace schedopt
