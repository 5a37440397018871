#include "schedopt/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "schedopt/error.hpp"

namespace schedopt {

GaussianMixture::GaussianMixture(std::vector<MixtureComponent> components)
    : components_(std::move(components)) {
  if (components_.empty()) throw ValidationError("mixture needs at least one component");
  dim_ = static_cast<std::size_t>(components_.front().mean.size());
  if (dim_ == 0) throw ValidationError("mixture dimension must be positive");
  double total = 0.0;
  for (const auto& c : components_) {
    if (static_cast<std::size_t>(c.mean.size()) != dim_) {
      throw ValidationError("mixture components disagree on dimension");
    }
    if (!(c.weight >= 0.0) || !(c.scale > 0.0) || !c.mean.allFinite()) {
      throw ValidationError("mixture weights must be >= 0 and scales > 0");
    }
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("mixture weights must sum to 1");
}

Batch GaussianMixture::sample(std::size_t count, Rng& rng) const {
  std::vector<double> cdf(components_.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < components_.size(); ++k) {
    acc += components_[k].weight;
    cdf[k] = acc;
  }
  Batch out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const double u = rng.uniform() * acc;
    std::size_t k = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    k = std::min(k, components_.size() - 1);
    while (components_[k].weight == 0.0 && k > 0) --k;
    const auto& c = components_[k];
    out.push_back(c.mean + c.scale * rng.normal_vec(dim_));
  }
  return out;
}

std::vector<double> GaussianMixture::log_terms(const Vec& y, double sigma) const {
  const double d = static_cast<double>(dim_);
  std::vector<double> terms(components_.size());
  for (std::size_t k = 0; k < components_.size(); ++k) {
    const auto& c = components_[k];
    const double var = c.scale * c.scale + sigma * sigma;
    terms[k] = (c.weight > 0.0 ? std::log(c.weight) : -std::numeric_limits<double>::infinity()) -
               0.5 * d * std::log(2.0 * std::numbers::pi * var) -
               0.5 * (y - c.mean).squaredNorm() / var;
  }
  return terms;
}

namespace {

double log_sum_exp(const std::vector<double>& terms) {
  const double top = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - top);
  return top + std::log(s);
}

}  // namespace

std::vector<double> GaussianMixture::posterior_weights(const Vec& y, double sigma) const {
  auto terms = log_terms(y, sigma);
  const double lse = log_sum_exp(terms);
  for (double& t : terms) t = std::exp(t - lse);
  return terms;
}

double GaussianMixture::log_density(const Vec& y, double sigma) const {
  return log_sum_exp(log_terms(y, sigma));
}

Vec GaussianMixture::score(const Vec& y, double sigma) const {
  const auto w = posterior_weights(y, sigma);
  Vec g = Vec::Zero(static_cast<Eigen::Index>(dim_));
  for (std::size_t k = 0; k < components_.size(); ++k) {
    const auto& c = components_[k];
    g -= w[k] * (y - c.mean) / (c.scale * c.scale + sigma * sigma);
  }
  return g;
}

double GaussianMixture::total_variance() const {
  Vec mean = Vec::Zero(static_cast<Eigen::Index>(dim_));
  for (const auto& c : components_) mean += c.weight * c.mean;
  double v = 0.0;
  for (const auto& c : components_) {
    v += c.weight * ((c.mean - mean).squaredNorm() + static_cast<double>(dim_) * c.scale * c.scale);
  }
  return v;
}

nlohmann::json GaussianMixture::to_json() const {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : components_) {
    comps.push_back({{"weight", c.weight},
                     {"mean", std::vector<double>(c.mean.begin(), c.mean.end())},
                     {"scale", c.scale}});
  }
  return {{"components", comps}};
}

GaussianMixture GaussianMixture::from_json(const nlohmann::json& j) {
  try {
    for (const auto& [key, _] : j.items()) {
      if (key != "components") throw ValidationError("unknown key in problem: " + key);
    }
    std::vector<MixtureComponent> comps;
    for (const auto& cj : j.at("components")) {
      for (const auto& [key, _] : cj.items()) {
        if (key != "weight" && key != "mean" && key != "scale") {
          throw ValidationError("unknown key in mixture component: " + key);
        }
      }
      const auto mean = cj.at("mean").get<std::vector<double>>();
      comps.push_back({cj.at("weight").get<double>(),
                       Eigen::Map<const Vec>(mean.data(), static_cast<Eigen::Index>(mean.size())),
                       cj.at("scale").get<double>()});
    }
    return GaussianMixture(std::move(comps));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed mixture spec: ") + e.what());
  }
}

// D(y, s) = sum_k w_k m_k,  m_k = mu_k + a_k (y - mu_k),  a_k = s_k^2 / (s_k^2 + sigma^2),
// w_k = softmax(l_k),  l_k = log pi_k - d/2 log v_k - |y - mu_k|^2 / (2 v_k),  v_k = s_k^2 + sigma^2.

Vec AnalyticDenoiser::do_denoise(const Vec& x, double sigma) const {
  const auto w = gmm_.posterior_weights(x, sigma);
  Vec out = Vec::Zero(x.size());
  const auto& comps = gmm_.components();
  for (std::size_t k = 0; k < comps.size(); ++k) {
    if (w[k] == 0.0) continue;
    const auto& c = comps[k];
    const double a = c.scale * c.scale / (c.scale * c.scale + sigma * sigma);
    out += w[k] * (c.mean + a * (x - c.mean));
  }
  return out;
}

Vec AnalyticDenoiser::do_sigma_grad(const Vec& x, double sigma) const {
  const auto w = gmm_.posterior_weights(x, sigma);
  const auto& comps = gmm_.components();
  const double d = static_cast<double>(x.size());
  const std::size_t K = comps.size();
  std::vector<Vec> m(K);
  std::vector<double> dl(K);
  Vec direct = Vec::Zero(x.size());
  double mean_dl = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& c = comps[k];
    const double s2 = c.scale * c.scale;
    const double var = s2 + sigma * sigma;
    const Vec diff = x - c.mean;
    m[k] = c.mean + (s2 / var) * diff;
    dl[k] = -d * sigma / var + diff.squaredNorm() * sigma / (var * var);
    direct += w[k] * (-2.0 * sigma * s2 / (var * var)) * diff;
    mean_dl += w[k] * dl[k];
  }
  Vec out = direct;
  for (std::size_t k = 0; k < K; ++k) {
    if (w[k] == 0.0) continue;
    out += w[k] * (dl[k] - mean_dl) * m[k];
  }
  return out;
}

DenoiserVjp AnalyticDenoiser::do_vjp(const Vec& x, double sigma, const Vec& cot) const {
  const auto w = gmm_.posterior_weights(x, sigma);
  const auto& comps = gmm_.components();
  const double d = static_cast<double>(x.size());
  const std::size_t K = comps.size();
  std::vector<double> cm(K);
  Vec dmean = Vec::Zero(x.size());
  double cd = 0.0;
  double shrink = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& c = comps[k];
    const double s2 = c.scale * c.scale;
    const double var = s2 + sigma * sigma;
    const Vec mk = c.mean + (s2 / var) * (x - c.mean);
    cm[k] = cot.dot(mk);
    cd += w[k] * cm[k];
    shrink += w[k] * s2 / var;
  }
  DenoiserVjp out{shrink * cot, 0.0};
  double dsig = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    if (w[k] == 0.0) continue;
    const auto& c = comps[k];
    const double s2 = c.scale * c.scale;
    const double var = s2 + sigma * sigma;
    const Vec diff = x - c.mean;
    // responsibility sensitivity
    const double coeff = w[k] * (cm[k] - cd);
    out.x -= coeff * diff / var;
    const double dl = -d * sigma / var + diff.squaredNorm() * sigma / (var * var);
    dsig += coeff * dl;
    // shrinkage sensitivity
    dsig += w[k] * (-2.0 * sigma * s2 / (var * var)) * cot.dot(diff);
  }
  out.sigma = dsig;
  return out;
}

}  // namespace schedopt
