#pragma once

#include <cstddef>
#include <string_view>

#include "schedopt/types.hpp"

namespace schedopt {

/// Vector-Jacobian product of D(x, sigma) with a cotangent c:
/// x = J_x^T c, sigma = <c, dD/dsigma>.
struct DenoiserVjp {
  Vec x;
  double sigma = 0.0;
};

/// Denoising function D(x, sigma): estimate of clean data from a sigma-level noisy input.
///
/// Public entry points validate sigma > 0 (ValidationError otherwise) and forward to the
/// implementation hooks. Implementations are read-only and safe to call concurrently.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual std::size_t dim() const = 0;
  virtual std::string_view kind() const = 0;

  Vec denoise(const Vec& x, double sigma) const;
  /// Partial derivative of D with respect to its scalar sigma argument, x held fixed.
  Vec sigma_grad(const Vec& x, double sigma) const;
  DenoiserVjp vjp(const Vec& x, double sigma, const Vec& cotangent) const;

 protected:
  virtual Vec do_denoise(const Vec& x, double sigma) const = 0;
  virtual Vec do_sigma_grad(const Vec& x, double sigma) const = 0;
  virtual DenoiserVjp do_vjp(const Vec& x, double sigma, const Vec& cotangent) const = 0;
};

}  // namespace schedopt
