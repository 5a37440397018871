#include "schedopt/config.hpp"

#include <fstream>
#include <set>

#include "schedopt/error.hpp"

namespace schedopt {

GradientEstimator estimator_from_string(const std::string& s) {
  if (s == "efficient") return GradientEstimator::efficient;
  if (s == "full-unroll") return GradientEstimator::full_unroll;
  if (s == "finite-diff") return GradientEstimator::finite_diff;
  throw ValidationError("unknown estimator: " + s);
}

std::string to_string(GradientEstimator e) {
  switch (e) {
    case GradientEstimator::efficient: return "efficient";
    case GradientEstimator::full_unroll: return "full-unroll";
    case GradientEstimator::finite_diff: return "finite-diff";
  }
  return "?";
}

WeightScheme weight_scheme_from_string(const std::string& s) {
  if (s == "learned") return WeightScheme::learned;
  if (s == "original") return WeightScheme::original;
  throw ValidationError("unknown weight scheme: " + s);
}

std::string to_string(WeightScheme w) { return w == WeightScheme::learned ? "learned" : "original"; }

DenoiserKind denoiser_kind_from_string(const std::string& s) {
  if (s == "analytic-gmm") return DenoiserKind::analytic_gmm;
  if (s == "trainable-mlp") return DenoiserKind::trainable_mlp;
  throw ValidationError("unknown denoiser kind: " + s);
}

std::string to_string(DenoiserKind k) {
  return k == DenoiserKind::analytic_gmm ? "analytic-gmm" : "trainable-mlp";
}

void RunConfig::validate() const {
  if (!(gamma >= 0.0)) throw ValidationError("gamma must be >= 0");
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (max_outer_iters == 0) throw ValidationError("max_outer_iters must be positive");
  if (stage1_iters == 0 && stage2_iters == 0) {
    throw ValidationError("at least one of stage1_iters and stage2_iters must be positive");
  }
  if (convergence_window == 0 || !(convergence_tol >= 0.0)) {
    throw ValidationError("invalid convergence settings");
  }
  Adam(0, schedule_optimizer);
  Adam(0, denoiser_optimizer);
}

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ValidationError("unknown key in " + where + ": " + key);
  }
}

json adam_json(const AdamConfig& a) {
  return {{"lr", a.learning_rate}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.epsilon}};
}

AdamConfig adam_from_json(const json& j, AdamConfig a, const std::string& where) {
  check_keys(j, {"lr", "beta1", "beta2", "eps"}, where);
  if (j.contains("lr")) a.learning_rate = j.at("lr").get<double>();
  if (j.contains("beta1")) a.beta1 = j.at("beta1").get<double>();
  if (j.contains("beta2")) a.beta2 = j.at("beta2").get<double>();
  if (j.contains("eps")) a.epsilon = j.at("eps").get<double>();
  return a;
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

GaussianMixture ExperimentConfig::canonical_problem() {
  Vec left(2), right(2);
  left << -2.0, 0.0;
  right << 2.0, 0.0;
  return GaussianMixture({{0.5, left, 0.5}, {0.5, right, 0.5}});
}

json ExperimentConfig::to_json() const {
  const auto& r = run;
  return {
      {"format_version", format_version},
      {"problem", problem.to_json()},
      {"denoiser",
       {{"kind", schedopt::to_string(denoiser.kind)},
        {"mlp", denoiser.mlp.to_json()},
        {"pretrain",
         {{"iters", denoiser.pretrain.iters},
          {"batch_size", denoiser.pretrain.batch_size},
          {"lr", denoiser.pretrain.learning_rate},
          {"p_mean", denoiser.pretrain.p_mean},
          {"p_std", denoiser.pretrain.p_std}}}}},
      {"schedule",
       {{"sigma_min", schedule.range.sigma_min},
        {"sigma_max", schedule.range.sigma_max},
        {"n_steps", schedule.n_steps},
        {"rho", schedule.rho}}},
      {"run",
       {{"gamma", r.gamma},
        {"batch_size", r.batch_size},
        {"stage1_iters", r.stage1_iters},
        {"stage2_iters", r.stage2_iters},
        {"max_outer_iters", r.max_outer_iters},
        {"seed", r.seed},
        {"schedule_optimizer", adam_json(r.schedule_optimizer)},
        {"denoiser_optimizer", adam_json(r.denoiser_optimizer)},
        {"estimator", schedopt::to_string(r.estimator)},
        {"weights", schedopt::to_string(r.weights)},
        {"shared_noise", r.shared_noise},
        {"per_step_updates", r.per_step_updates},
        {"reuse_outer_batch", r.reuse_outer_batch},
        {"convergence_tol", r.convergence_tol},
        {"convergence_window", r.convergence_window}}},
      {"eval",
       {{"samples", eval.samples},
        {"fine_steps", eval.fine_steps},
        {"projections", eval.projections}}},
      {"output_dir", output_dir},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig cfg;
  try {
    check_keys(j, {"format_version", "problem", "denoiser", "schedule", "run", "eval", "output_dir"},
               "config");
    if (!j.contains("format_version")) throw ValidationError("config lacks format_version");
    cfg.format_version = j.at("format_version").get<int>();
    if (cfg.format_version != kFormatVersion) {
      throw ValidationError("unsupported config format_version " +
                            std::to_string(cfg.format_version));
    }
    if (j.contains("problem")) cfg.problem = GaussianMixture::from_json(j.at("problem"));
    if (j.contains("denoiser")) {
      const auto& d = j.at("denoiser");
      check_keys(d, {"kind", "mlp", "pretrain"}, "denoiser");
      if (d.contains("kind")) cfg.denoiser.kind = denoiser_kind_from_string(d.at("kind"));
      if (d.contains("mlp")) cfg.denoiser.mlp = MlpSpec::from_json(d.at("mlp"));
      if (d.contains("pretrain")) {
        const auto& p = d.at("pretrain");
        check_keys(p, {"iters", "batch_size", "lr", "p_mean", "p_std"}, "denoiser.pretrain");
        auto& pc = cfg.denoiser.pretrain;
        read_opt(p, "iters", pc.iters);
        read_opt(p, "batch_size", pc.batch_size);
        read_opt(p, "lr", pc.learning_rate);
        read_opt(p, "p_mean", pc.p_mean);
        read_opt(p, "p_std", pc.p_std);
      }
    }
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      check_keys(s, {"sigma_min", "sigma_max", "n_steps", "rho"}, "schedule");
      read_opt(s, "sigma_min", cfg.schedule.range.sigma_min);
      read_opt(s, "sigma_max", cfg.schedule.range.sigma_max);
      read_opt(s, "n_steps", cfg.schedule.n_steps);
      read_opt(s, "rho", cfg.schedule.rho);
    }
    if (j.contains("run")) {
      const auto& r = j.at("run");
      check_keys(r,
                 {"gamma", "batch_size", "stage1_iters", "stage2_iters", "max_outer_iters", "seed",
                  "schedule_optimizer", "denoiser_optimizer", "estimator", "weights",
                  "shared_noise", "per_step_updates", "reuse_outer_batch", "convergence_tol",
                  "convergence_window"},
                 "run");
      auto& rc = cfg.run;
      read_opt(r, "gamma", rc.gamma);
      read_opt(r, "batch_size", rc.batch_size);
      read_opt(r, "stage1_iters", rc.stage1_iters);
      read_opt(r, "stage2_iters", rc.stage2_iters);
      read_opt(r, "max_outer_iters", rc.max_outer_iters);
      read_opt(r, "seed", rc.seed);
      if (r.contains("schedule_optimizer")) {
        rc.schedule_optimizer =
            adam_from_json(r.at("schedule_optimizer"), rc.schedule_optimizer, "run.schedule_optimizer");
      }
      if (r.contains("denoiser_optimizer")) {
        rc.denoiser_optimizer =
            adam_from_json(r.at("denoiser_optimizer"), rc.denoiser_optimizer, "run.denoiser_optimizer");
      }
      if (r.contains("estimator")) rc.estimator = estimator_from_string(r.at("estimator"));
      if (r.contains("weights")) rc.weights = weight_scheme_from_string(r.at("weights"));
      read_opt(r, "shared_noise", rc.shared_noise);
      read_opt(r, "per_step_updates", rc.per_step_updates);
      read_opt(r, "reuse_outer_batch", rc.reuse_outer_batch);
      read_opt(r, "convergence_tol", rc.convergence_tol);
      read_opt(r, "convergence_window", rc.convergence_window);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      check_keys(e, {"samples", "fine_steps", "projections"}, "eval");
      read_opt(e, "samples", cfg.eval.samples);
      read_opt(e, "fine_steps", cfg.eval.fine_steps);
      read_opt(e, "projections", cfg.eval.projections);
    }
    read_opt(j, "output_dir", cfg.output_dir);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
  cfg.schedule.range.validate();
  if (cfg.schedule.n_steps < 2) throw ValidationError("schedule.n_steps must be at least 2");
  if (!(cfg.schedule.rho > 0.0)) throw ValidationError("schedule.rho must be positive");
  if (cfg.eval.samples < 2 || cfg.eval.fine_steps < 1000 || cfg.eval.projections == 0) {
    throw ValidationError("eval needs samples >= 2, fine_steps >= 1000, projections >= 1");
  }
  cfg.run.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("cannot parse " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace schedopt
