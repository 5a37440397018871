#include "schedopt/denoiser.hpp"

#include <cmath>
#include <sstream>

#include "schedopt/error.hpp"

namespace schedopt {

namespace {

void check_call(const Denoiser& h, const Vec& x, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    std::ostringstream msg;
    msg << "denoiser evaluated at non-positive sigma " << sigma;
    throw ValidationError(msg.str());
  }
  if (static_cast<std::size_t>(x.size()) != h.dim()) {
    throw ValidationError("denoiser input has wrong dimension");
  }
}

}  // namespace

Vec Denoiser::denoise(const Vec& x, double sigma) const {
  check_call(*this, x, sigma);
  return do_denoise(x, sigma);
}

Vec Denoiser::sigma_grad(const Vec& x, double sigma) const {
  check_call(*this, x, sigma);
  return do_sigma_grad(x, sigma);
}

DenoiserVjp Denoiser::vjp(const Vec& x, double sigma, const Vec& cotangent) const {
  check_call(*this, x, sigma);
  if (cotangent.size() != x.size()) throw ValidationError("cotangent has wrong dimension");
  return do_vjp(x, sigma, cotangent);
}

}  // namespace schedopt
