#include "schedopt/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "schedopt/error.hpp"

namespace schedopt {

void NoiseRange::validate() const {
  if (!(std::isfinite(sigma_min) && std::isfinite(sigma_max) && sigma_min > 0.0 &&
        sigma_min < sigma_max)) {
    std::ostringstream msg;
    msg << "invalid noise range [" << sigma_min << ", " << sigma_max
        << "]: need 0 < sigma_min < sigma_max";
    throw ValidationError(msg.str());
  }
}

Schedule::Schedule(std::vector<double> sigmas) : sigmas_(std::move(sigmas)) {
  if (sigmas_.size() < 2) throw ValidationError("schedule needs at least two noise levels");
  for (std::size_t i = 0; i < sigmas_.size(); ++i) {
    if (!std::isfinite(sigmas_[i]) || sigmas_[i] <= 0.0) {
      throw ValidationError("schedule entries must be finite and positive");
    }
    if (i > 0 && !(sigmas_[i] < sigmas_[i - 1])) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "schedule is not strictly decreasing at index " << i << " (" << sigmas_[i - 1]
          << " -> " << sigmas_[i] << ")";
      throw ValidationError(msg.str());
    }
  }
}

StepWeights weights_from_schedule(const Schedule& s) {
  const auto sig = s.sigmas();
  const double smin = s.sigma_min();
  StepWeights w;
  w.lambdas.resize(sig.size() - 1);
  for (std::size_t i = 0; i + 1 < sig.size(); ++i) {
    w.lambdas[i] = smin / sig[i + 1] - smin / sig[i];
  }
  w.initial_coeff = smin / s.sigma_max();
  return w;
}

namespace {

std::vector<double> increments(const ScheduleParams& p) {
  // softmax over [v, 1]
  std::vector<double> w(p.v.size() + 1);
  std::copy(p.v.begin(), p.v.end(), w.begin());
  w.back() = 1.0;
  const double top = *std::max_element(w.begin(), w.end());
  double total = 0.0;
  for (double& wi : w) {
    wi = std::exp(wi - top);
    total += wi;
  }
  for (double& wi : w) wi /= total;
  return w;
}

void check_params(const ScheduleParams& p) {
  p.range.validate();
  if (p.n_steps < 2) throw ValidationError("n_steps must be at least 2");
  if (p.v.size() != p.n_steps - 2) {
    throw ValidationError("schedule parameter vector must have n_steps - 2 entries");
  }
  for (double vi : p.v) {
    if (!std::isfinite(vi)) throw ValidationError("non-finite schedule parameter");
  }
}

}  // namespace

Schedule schedule_from_params(const ScheduleParams& p) {
  check_params(p);
  const std::size_t n = p.n_steps;
  const auto w = increments(p);
  std::vector<double> sig(n);
  sig.front() = p.range.sigma_max;
  sig.back() = p.range.sigma_min;
  // Suffix sums from the small-sigma end keep precision near sigma_min.
  double tail = 0.0;
  for (std::size_t i = n - 2; i >= 1; --i) {
    tail += w[i];
    sig[i] = p.range.sigma_min + p.range.width() * tail;
  }
  return Schedule(std::move(sig));
}

std::vector<double> params_gradient(const ScheduleParams& p, std::span<const double> grad_sigma) {
  check_params(p);
  const std::size_t n = p.n_steps;
  if (grad_sigma.size() != n) throw ValidationError("grad_sigma must have n_steps entries");
  const auto w = increments(p);
  // dsigma_i/dw_j = width for 1 <= i <= j, i <= N-2
  std::vector<double> grad_w(n - 1, 0.0);
  double prefix = 0.0;
  for (std::size_t j = 0; j + 1 < n; ++j) {
    if (j >= 1 && j <= n - 2) prefix += grad_sigma[j];
    grad_w[j] = p.range.width() * prefix;
  }
  const double mean = std::inner_product(w.begin(), w.end(), grad_w.begin(), 0.0);
  std::vector<double> grad_v(n - 2);
  for (std::size_t k = 0; k + 2 < n; ++k) grad_v[k] = w[k] * (grad_w[k] - mean);
  return grad_v;
}

ScheduleParams init_params_from_reference(const Schedule& ref) {
  const auto sig = ref.sigmas();
  const std::size_t n = sig.size();
  ScheduleParams p{.v = {}, .range = ref.range(), .n_steps = n};
  std::vector<double> log_inc(n - 1);
  for (std::size_t j = 0; j + 1 < n; ++j) {
    const double inc = sig[j] - sig[j + 1];
    if (!(inc > 0.0)) throw ValidationError("reference schedule increments must be positive");
    log_inc[j] = std::log(inc);
  }
  p.v.resize(n - 2);
  for (std::size_t k = 0; k + 2 < n; ++k) p.v[k] = log_inc[k] - log_inc.back() + 1.0;
  return p;
}

Schedule rho_schedule(const NoiseRange& range, std::size_t n_steps, double rho) {
  range.validate();
  if (n_steps < 2) throw ValidationError("n_steps must be at least 2");
  if (!(rho > 0.0) || !std::isfinite(rho)) throw ValidationError("rho must be positive");
  const double a = std::pow(range.sigma_max, 1.0 / rho);
  const double b = std::pow(range.sigma_min, 1.0 / rho);
  std::vector<double> sig(n_steps);
  for (std::size_t i = 0; i < n_steps; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n_steps - 1);
    sig[i] = std::pow(a + t * (b - a), rho);
  }
  sig.front() = range.sigma_max;
  sig.back() = range.sigma_min;
  return Schedule(std::move(sig));
}

Schedule uniform_schedule(const NoiseRange& range, std::size_t n_steps) {
  range.validate();
  if (n_steps < 2) throw ValidationError("n_steps must be at least 2");
  std::vector<double> sig(n_steps);
  for (std::size_t i = 0; i < n_steps; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n_steps - 1);
    sig[i] = range.sigma_max + t * (range.sigma_min - range.sigma_max);
  }
  sig.back() = range.sigma_min;
  return Schedule(std::move(sig));
}

Schedule log_uniform_schedule(const NoiseRange& range, std::size_t n_steps) {
  range.validate();
  if (n_steps < 2) throw ValidationError("n_steps must be at least 2");
  const double hi = std::log(range.sigma_max);
  const double lo = std::log(range.sigma_min);
  std::vector<double> sig(n_steps);
  for (std::size_t i = 0; i < n_steps; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n_steps - 1);
    sig[i] = std::exp(hi + t * (lo - hi));
  }
  sig.front() = range.sigma_max;
  sig.back() = range.sigma_min;
  return Schedule(std::move(sig));
}

nlohmann::json to_json(const Schedule& s) {
  nlohmann::json j;
  j["sigma"] = std::vector<double>(s.sigmas().begin(), s.sigmas().end());
  j["range"] = {{"min", s.sigma_min()}, {"max", s.sigma_max()}};
  return j;
}

Schedule schedule_from_json(const nlohmann::json& j) {
  try {
    for (const auto& [key, _] : j.items()) {
      if (key != "sigma" && key != "range") {
        throw ValidationError("unknown key in schedule document: " + key);
      }
    }
    Schedule s(j.at("sigma").get<std::vector<double>>());
    if (j.contains("range")) {
      const double lo = j.at("range").at("min").get<double>();
      const double hi = j.at("range").at("max").get<double>();
      if (lo != s.sigma_min() || hi != s.sigma_max()) {
        throw ValidationError("schedule endpoints disagree with its declared range");
      }
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed schedule document: ") + e.what());
  }
}

void write_schedule(const std::filesystem::path& path, const Schedule& s) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << to_json(s).dump(2) << '\n';
}

Schedule read_schedule(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open schedule file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("cannot parse " + path.string() + ": " + e.what());
  }
  return schedule_from_json(j);
}

}  // namespace schedopt
