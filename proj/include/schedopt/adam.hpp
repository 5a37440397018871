#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace schedopt {

struct AdamConfig {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment optimizer state for one flat parameter vector.
class Adam {
 public:
  Adam(std::size_t size, AdamConfig cfg);

  /// params -= lr * mhat / (sqrt(vhat) + eps). Sizes must match.
  void step(std::span<double> params, std::span<const double> grad);

  std::size_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

}  // namespace schedopt
