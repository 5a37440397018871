#include "schedopt/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "schedopt/csv.hpp"
#include "schedopt/error.hpp"
#include "schedopt/eval.hpp"
#include "schedopt/finetune.hpp"
#include "schedopt/parallel.hpp"
#include "schedopt/sampler.hpp"

namespace schedopt {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> n_steps;
  std::optional<double> gamma;
  std::optional<std::string> estimator;
  std::optional<std::string> weights;
  std::optional<int> format_version;
  std::optional<std::size_t> iters;
  std::optional<std::size_t> batch;
  std::optional<std::size_t> count;
  std::string schedule;
  std::string schedules;
  std::string params;
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(o.config);
  if (o.format_version && *o.format_version != cfg.format_version) {
    throw ValidationError("requested format version " + std::to_string(*o.format_version) +
                          " but config has " + std::to_string(cfg.format_version));
  }
  if (o.seed) cfg.run.seed = *o.seed;
  if (o.out) cfg.output_dir = *o.out;
  if (o.n_steps) cfg.schedule.n_steps = *o.n_steps;
  if (o.gamma) cfg.run.gamma = *o.gamma;
  if (o.estimator) cfg.run.estimator = estimator_from_string(*o.estimator);
  if (o.weights) cfg.run.weights = weight_scheme_from_string(*o.weights);
  if (o.batch) cfg.run.batch_size = *o.batch;
  // Round trip so overrides go through the same validation as file input.
  return ExperimentConfig::from_json(cfg.to_json());
}

std::string utc_stamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  return s.str();
}

fs::path make_run_dir(const ExperimentConfig& cfg, const std::string& subcommand) {
  const fs::path root(cfg.output_dir);
  fs::create_directories(root);
  const std::string base = subcommand + "-" + utc_stamp() + "-s" + std::to_string(cfg.run.seed);
  for (int k = 0;; ++k) {
    fs::path dir = root / (k == 0 ? base : base + "-" + std::to_string(k));
    if (fs::create_directory(dir)) return dir;
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream f(path, std::ios::binary);
  f << j.dump(2) << '\n';
  if (!f) throw RuntimeFailure("cannot write " + path.string());
}

void echo_config(const fs::path& dir, const ExperimentConfig& cfg, const std::string& subcommand,
                 const Options& o) {
  nlohmann::json j = cfg.to_json();
  nlohmann::json inputs = nlohmann::json::object();
  if (!o.schedule.empty()) inputs["schedule"] = o.schedule;
  if (!o.schedules.empty()) inputs["schedules"] = o.schedules;
  if (!o.params.empty()) inputs["params"] = o.params;
  if (o.iters) inputs["iters"] = *o.iters;
  if (o.count) inputs["count"] = *o.count;
  write_json(dir / "config.json", j);
  write_json(dir / "invocation.json", {{"subcommand", subcommand},
                                       {"seed", cfg.run.seed},
                                       {"format_version", cfg.format_version},
                                       {"inputs", inputs}});
}

/// The configured denoiser: analytic, loaded from --params, or freshly pretrained.
class DenoiserHandle {
 public:
  DenoiserHandle(const ExperimentConfig& cfg, const std::string& params) : analytic_(cfg.problem) {
    if (cfg.denoiser.kind == DenoiserKind::analytic_gmm) {
      if (!params.empty()) throw ValidationError("--params given but denoiser.kind is analytic-gmm");
      return;
    }
    if (!params.empty()) {
      fs::path blob(params);
      fs::path sidecar = blob;
      sidecar.replace_extension(".json");
      mlp_.emplace(MlpDenoiser::load(blob, sidecar));
      if (mlp_->dim() != cfg.problem.dim()) throw ValidationError("loaded denoiser has the wrong dimension");
      return;
    }
    MlpSpec spec = cfg.denoiser.mlp;
    spec.init_seed = derive_seed(cfg.run.seed, Stream::init);
    mlp_.emplace(cfg.problem.dim(), spec);
    Rng rng(cfg.run.seed, Stream::pretrain);
    pretrain_denoiser(*mlp_, cfg.problem, cfg.schedule.range, cfg.denoiser.pretrain, rng);
  }

  const Denoiser& get() const {
    return mlp_ ? static_cast<const Denoiser&>(*mlp_) : analytic_;
  }
  std::optional<MlpDenoiser>& trainable() { return mlp_; }

 private:
  AnalyticDenoiser analytic_;
  std::optional<MlpDenoiser> mlp_;
};

void write_loss_history(const fs::path& path, const std::vector<LossReport>& history,
                        std::size_t n_steps) {
  std::vector<std::string> header{"stage", "outer", "iter", "disc_loss", "disc_stderr",
                                  "diff_loss", "diff_stderr"};
  for (std::size_t i = 0; i < n_steps; ++i) header.push_back("sigma_" + std::to_string(i));
  CsvWriter csv(path, header);
  for (const auto& r : history) {
    std::vector<std::string> row{r.stage,
                                 std::to_string(r.outer),
                                 std::to_string(r.iteration),
                                 format_double(r.disc_loss),
                                 format_double(r.disc_stderr),
                                 format_double(r.diff_loss),
                                 format_double(r.diff_stderr)};
    for (double s : r.sigmas) row.push_back(format_double(s));
    csv.row(row);
  }
}

void write_weights(const fs::path& path, const Schedule& s, double data_scale) {
  CsvWriter csv(path, {"step", "sigma", "lambda", "active_weight", "original_weight"});
  for (const auto& w : export_weight_scheme(s, data_scale)) {
    csv.row({std::to_string(w.step), format_double(w.sigma), format_double(w.lambda),
             format_double(w.active_weight), format_double(w.original_weight)});
  }
}

void save_mlp(const fs::path& dir, const MlpDenoiser& net) {
  net.save(dir / "mlp.bin", dir / "mlp.json");
}

Problem problem_of(const ExperimentConfig& cfg) {
  return {cfg.problem, cfg.schedule.range, cfg.schedule.n_steps, cfg.schedule.rho};
}

Schedule input_schedule(const ExperimentConfig& cfg, const std::string& path) {
  if (path.empty()) return rho_schedule(cfg.schedule.range, cfg.schedule.n_steps, cfg.schedule.rho);
  return read_schedule(path);
}

void cmd_gen_data(const ExperimentConfig& cfg, const Options& o, const fs::path& dir) {
  const std::size_t count = o.count.value_or(cfg.eval.samples);
  Rng rng(cfg.run.seed, Stream::data);
  const Batch xs = cfg.problem.sample(count, rng);
  std::vector<std::string> header{"index"};
  for (std::size_t k = 0; k < cfg.problem.dim(); ++k) header.push_back("x_" + std::to_string(k));
  CsvWriter csv(dir / "data.csv", header);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::vector<std::string> row{std::to_string(i)};
    for (double v : xs[i]) row.push_back(format_double(v));
    csv.row(row);
  }
  write_json(dir / "problem.json", cfg.problem.to_json());
}

void cmd_optimize(ExperimentConfig cfg, const Options& o, const fs::path& dir) {
  cfg.run.stage2_iters = 0;
  cfg.run.max_outer_iters = 1;
  if (o.iters) cfg.run.stage1_iters = *o.iters;
  cfg.run.validate();
  DenoiserHandle h(cfg, o.params);
  const auto result = run_two_stage(cfg.run, problem_of(cfg), h.trainable());
  write_loss_history(dir / "loss_history.csv", result.history, cfg.schedule.n_steps);
  write_schedule(dir / "schedule.json", result.schedule);
}

void cmd_finetune(ExperimentConfig cfg, const Options& o, const fs::path& dir) {
  if (cfg.denoiser.kind != DenoiserKind::trainable_mlp) {
    throw ValidationError("finetune needs denoiser.kind = trainable-mlp");
  }
  if (o.iters) cfg.run.stage2_iters = *o.iters;
  if (cfg.run.stage2_iters == 0) throw ValidationError("finetune needs a positive iteration count");
  const Schedule s = input_schedule(cfg, o.schedule);
  DenoiserHandle h(cfg, o.params);
  FinetuneState state(std::move(*h.trainable()), s, cfg.run.denoiser_optimizer);
  Rng data_rng(cfg.run.seed, Stream::data);
  Rng rng(cfg.run.seed, Stream::stage2);
  std::vector<LossReport> history;
  for (std::size_t it = 0; it < cfg.run.stage2_iters; ++it) {
    const Batch batch = cfg.problem.sample(cfg.run.batch_size, data_rng);
    const auto ub = stage2_step(state, batch, cfg.run, rng);
    LossReport r;
    r.stage = "stage2";
    r.iteration = it;
    r.disc_loss = r.disc_stderr = std::numeric_limits<double>::quiet_NaN();
    r.diff_loss = ub.value;
    r.diff_stderr = ub.std_error;
    r.sigmas.assign(s.sigmas().begin(), s.sigmas().end());
    history.push_back(std::move(r));
  }
  write_loss_history(dir / "loss_history.csv", history, s.n_steps());
  save_mlp(dir, state.denoiser);
  write_schedule(dir / "schedule.json", s);
}

void cmd_run(const ExperimentConfig& cfg, const Options& o, const fs::path& dir) {
  if (cfg.denoiser.kind != DenoiserKind::trainable_mlp && cfg.run.stage2_iters > 0) {
    throw ValidationError("run finetunes the denoiser: set denoiser.kind = trainable-mlp or run.stage2_iters = 0");
  }
  DenoiserHandle h(cfg, o.params);
  const auto result = run_two_stage(cfg.run, problem_of(cfg), std::move(h.trainable()));
  write_schedule(dir / "schedule.json", result.schedule);
  if (result.denoiser) save_mlp(dir, *result.denoiser);
  write_loss_history(dir / "loss_history.csv", result.history, cfg.schedule.n_steps);
  write_weights(dir / "weights.csv", result.schedule, cfg.denoiser.mlp.data_scale);
  write_json(dir / "summary.json", {{"outer_iterations", result.outer_iterations},
                                    {"converged", result.converged}});
}

void cmd_sample(const ExperimentConfig& cfg, const Options& o, const fs::path& dir) {
  const Schedule s = input_schedule(cfg, o.schedule);
  DenoiserHandle h(cfg, o.params);
  const std::size_t count = o.count.value_or(cfg.eval.samples);
  const std::size_t dim = cfg.problem.dim();
  std::vector<std::string> header{"seed", "step", "sigma"};
  for (std::size_t k = 0; k < dim; ++k) header.push_back("x_" + std::to_string(k));
  for (std::size_t k = 0; k < dim; ++k) header.push_back("d_" + std::to_string(k));
  std::vector<SampleResult> runs(count);
  std::vector<std::uint64_t> seeds(count);
  for (std::size_t i = 0; i < count; ++i) seeds[i] = derive_seed(cfg.run.seed, Stream::sample, i);
  parallel_for(count, [&](std::size_t i) {
    Rng rng(seeds[i]);
    runs[i] = sample_from_noise(h.get(), s, rng.normal_vec(dim));
  });
  CsvWriter csv(dir / "samples.csv", header);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& t = runs[i].trajectory;
    for (std::size_t step = 0; step <= t.iterates.size(); ++step) {
      const bool final = step == t.iterates.size();
      const Vec& x = final ? runs[i].final : t.iterates[step];
      const Vec& d = final ? runs[i].final : t.denoised[step];
      std::vector<std::string> row{std::to_string(seeds[i]), std::to_string(step),
                                   format_double(final ? 0.0 : t.sigmas[step])};
      for (double v : x) row.push_back(format_double(v));
      for (double v : d) row.push_back(format_double(v));
      csv.row(row);
    }
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, sep)) {
    if (!part.empty()) parts.push_back(part);
  }
  return parts;
}

void cmd_eval(const ExperimentConfig& cfg, const Options& o, const fs::path& dir) {
  std::vector<NamedSchedule> list;
  const auto paths = split(o.schedules.empty() ? o.schedule : o.schedules, ',');
  if (paths.empty()) {
    list.push_back({"rho", input_schedule(cfg, "")});
    list.push_back({"uniform", uniform_schedule(cfg.schedule.range, cfg.schedule.n_steps)});
  }
  for (const auto& p : paths) {
    std::string id = fs::path(p).stem().string();
    if (fs::path(p).filename() == "schedule.json") id = fs::path(p).parent_path().filename().string();
    list.push_back({id, read_schedule(p)});
  }
  DenoiserHandle h(cfg, o.params);
  const auto reports = compare_schedules(list, h.get(), cfg.problem, cfg.eval, cfg.run.seed);
  write_eval_csv(dir / "eval.csv", reports);
}

void cmd_export_weights(const ExperimentConfig& cfg, const Options& o, const fs::path& dir) {
  write_weights(dir / "weights.csv", input_schedule(cfg, o.schedule), cfg.denoiser.mlp.data_scale);
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Schedule optimization and denoiser finetuning for few-step diffusion samplers",
               "schedopt"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config JSON")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_option("--out", o.out, "Output root directory");
    sub->add_option("--n-steps", o.n_steps, "Number of noise levels");
    sub->add_option("--gamma", o.gamma, "Weight of the discretization loss");
    sub->add_option("--estimator", o.estimator, "Schedule gradient estimator")
        ->check(CLI::IsMember({"efficient", "full-unroll", "finite-diff"}));
    sub->add_option("--weights", o.weights, "Stage-2 weights")
        ->check(CLI::IsMember({"learned", "original"}));
    sub->add_option("--format-version", o.format_version, "Expected config format version");
    sub->add_option("--params", o.params, "Trained denoiser blob (sidecar: same stem, .json)");
  };
  struct Sub {
    const char* name;
    const char* help;
    void (*run)(const ExperimentConfig&, const Options&, const fs::path&);
  };
  const std::vector<Sub> subs{
      {"gen-data", "Sample the configured data distribution", &cmd_gen_data},
      {"optimize", "Optimize the schedule for a fixed denoiser",
       [](const ExperimentConfig& c, const Options& op, const fs::path& d) { cmd_optimize(c, op, d); }},
      {"finetune", "Finetune the denoiser for a fixed schedule",
       [](const ExperimentConfig& c, const Options& op, const fs::path& d) { cmd_finetune(c, op, d); }},
      {"run", "Alternate schedule optimization and finetuning", &cmd_run},
      {"sample", "Write sampling trajectories", &cmd_sample},
      {"eval", "Compare schedules by global error and sample distances", &cmd_eval},
      {"export-weights", "Write per-step weights of a schedule", &cmd_export_weights},
  };
  std::vector<CLI::App*> handles;
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    common(sub);
    const std::string name = s.name;
    if (name == "optimize" || name == "finetune") {
      sub->add_option("--iters", o.iters, "Iterations");
      sub->add_option("--batch", o.batch, "Batch size");
    }
    if (name == "finetune" || name == "sample" || name == "export-weights") {
      sub->add_option("--schedule", o.schedule, "Schedule JSON")->check(CLI::ExistingFile);
    }
    if (name == "gen-data" || name == "sample") sub->add_option("--count", o.count, "Sample count");
    if (name == "eval") sub->add_option("--schedules", o.schedules, "Comma-separated schedule JSONs");
    handles.push_back(sub);
  }

  std::vector<std::string> argv_store{"schedopt"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  for (std::size_t k = 0; k < subs.size(); ++k) {
    if (!handles[k]->parsed()) continue;
    try {
      const ExperimentConfig cfg = resolve(o);
      const fs::path dir = make_run_dir(cfg, subs[k].name);
      echo_config(dir, cfg, subs[k].name, o);
      subs[k].run(cfg, o, dir);
      out << dir.string() << '\n';
      return 0;
    } catch (const ValidationError& e) {
      err << "error: " << e.what() << '\n';
      return 1;
    } catch (const RuntimeFailure& e) {
      err << "runtime failure: " << e.what() << '\n';
      return 2;
    } catch (const fs::filesystem_error& e) {
      err << "runtime failure: " << e.what() << '\n';
      return 2;
    }
  }
  err << app.help();
  return 1;
}

}  // namespace schedopt
