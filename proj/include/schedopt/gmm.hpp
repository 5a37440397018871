#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "schedopt/denoiser.hpp"
#include "schedopt/rng.hpp"
#include "schedopt/types.hpp"

namespace schedopt {

/// Isotropic component: weight * N(mean, scale^2 I).
struct MixtureComponent {
  double weight = 1.0;
  Vec mean;
  double scale = 1.0;
};

/// Data distribution for desk-scale experiments. Weights may be zero (degenerate mixtures)
/// but must sum to one.
class GaussianMixture {
 public:
  explicit GaussianMixture(std::vector<MixtureComponent> components);

  std::size_t dim() const { return dim_; }
  const std::vector<MixtureComponent>& components() const { return components_; }

  /// Component index ~ weight, then mean + scale * N(0, I).
  Batch sample(std::size_t count, Rng& rng) const;

  /// Posterior component responsibilities of y under the sigma-convolved mixture.
  /// Evaluated with log-sum-exp.
  std::vector<double> posterior_weights(const Vec& y, double sigma) const;

  /// log p_sigma(y) of the mixture convolved with N(0, sigma^2 I).
  double log_density(const Vec& y, double sigma) const;

  /// grad_y log p_sigma(y), differentiated directly from the convolved density.
  Vec score(const Vec& y, double sigma) const;

  /// Marginal variance of all coordinates summed, E||x - E x||^2.
  double total_variance() const;

  nlohmann::json to_json() const;
  static GaussianMixture from_json(const nlohmann::json& j);

 private:
  std::vector<double> log_terms(const Vec& y, double sigma) const;

  std::vector<MixtureComponent> components_;
  std::size_t dim_ = 0;
};

/// Exact posterior mean E[x | x + sigma * eps = y] for mixture data.
class AnalyticDenoiser final : public Denoiser {
 public:
  explicit AnalyticDenoiser(GaussianMixture gmm) : gmm_(std::move(gmm)) {}

  std::size_t dim() const override { return gmm_.dim(); }
  std::string_view kind() const override { return "analytic-gmm"; }
  const GaussianMixture& mixture() const { return gmm_; }

 protected:
  Vec do_denoise(const Vec& x, double sigma) const override;
  Vec do_sigma_grad(const Vec& x, double sigma) const override;
  DenoiserVjp do_vjp(const Vec& x, double sigma, const Vec& cotangent) const override;

 private:
  GaussianMixture gmm_;
};

}  // namespace schedopt
