#include "schedopt/mlp.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include "schedopt/error.hpp"
#include "schedopt/rng.hpp"

namespace schedopt {

namespace {

constexpr int kSidecarVersion = 1;

using ConstMat = Eigen::Map<const Eigen::MatrixXd>;
using ConstVecMap = Eigen::Map<const Vec>;

}  // namespace

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw ValidationError("unknown activation: " + name);
}

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

nlohmann::json MlpSpec::to_json() const {
  return {{"hidden", hidden},
          {"activation", schedopt::to_string(activation)},
          {"input_scaling", input_scaling},
          {"data_scale", data_scale},
          {"init_seed", init_seed}};
}

MlpSpec MlpSpec::from_json(const nlohmann::json& j) {
  MlpSpec spec;
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "hidden") {
        spec.hidden = val.get<std::vector<std::size_t>>();
      } else if (key == "activation") {
        spec.activation = activation_from_string(val.get<std::string>());
      } else if (key == "input_scaling") {
        spec.input_scaling = val.get<bool>();
      } else if (key == "data_scale") {
        spec.data_scale = val.get<double>();
      } else if (key == "init_seed") {
        spec.init_seed = val.get<std::uint64_t>();
      } else {
        throw ValidationError("unknown key in mlp spec: " + key);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed mlp spec: ") + e.what());
  }
  if (!(spec.data_scale > 0.0)) throw ValidationError("mlp data_scale must be positive");
  return spec;
}

MlpDenoiser::MlpDenoiser(std::size_t dim, MlpSpec spec) : dim_(dim), spec_(std::move(spec)) {
  if (dim_ == 0) throw ValidationError("mlp dimension must be positive");
  std::vector<std::size_t> widths{dim_ + 1};
  for (auto h : spec_.hidden) {
    if (h == 0) throw ValidationError("hidden widths must be positive");
    widths.push_back(h);
  }
  widths.push_back(dim_);
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Layer layer{widths[l], widths[l + 1], offset, offset + widths[l] * widths[l + 1]};
    offset = layer.bias_offset + layer.out;
    layers_.push_back(layer);
  }
  theta_.assign(offset, 0.0);
  Rng rng(spec_.init_seed);
  for (const auto& layer : layers_) {
    const double std = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (std::size_t i = 0; i < layer.in * layer.out; ++i) {
      theta_[layer.weight_offset + i] = std * rng.normal();
    }
  }
}

double MlpDenoiser::activate(double z) const {
  return spec_.activation == Activation::tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

double MlpDenoiser::activate_grad_from_output(double a) const {
  return spec_.activation == Activation::tanh ? 1.0 - a * a : (a > 0.0 ? 1.0 : 0.0);
}

MlpDenoiser::Tape MlpDenoiser::forward(const Vec& x, double sigma) const {
  Tape tape;
  tape.c_in = spec_.input_scaling
                  ? 1.0 / std::sqrt(sigma * sigma + spec_.data_scale * spec_.data_scale)
                  : 1.0;
  Vec z(static_cast<Eigen::Index>(dim_ + 1));
  z.head(static_cast<Eigen::Index>(dim_)) = tape.c_in * x;
  z[static_cast<Eigen::Index>(dim_)] = std::log(sigma);
  tape.acts.reserve(layers_.size() + 1);
  tape.acts.push_back(std::move(z));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const ConstMat W(theta_.data() + layer.weight_offset, static_cast<Eigen::Index>(layer.out),
                     static_cast<Eigen::Index>(layer.in));
    const ConstVecMap b(theta_.data() + layer.bias_offset, static_cast<Eigen::Index>(layer.out));
    Vec a = W * tape.acts.back() + b;
    if (l + 1 < layers_.size()) {
      for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = activate(a[i]);
    }
    tape.acts.push_back(std::move(a));
  }
  return tape;
}

MlpDenoiser::Backward MlpDenoiser::backward(const Tape& tape, const Vec& out_grad,
                                            std::span<double> param_grad) const {
  Vec g = out_grad;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    const Vec& out = tape.acts[l + 1];
    if (l + 1 < layers_.size()) {
      for (Eigen::Index i = 0; i < g.size(); ++i) g[i] *= activate_grad_from_output(out[i]);
    }
    const Vec& in = tape.acts[l];
    if (!param_grad.empty()) {
      Eigen::Map<Eigen::MatrixXd> gW(param_grad.data() + layer.weight_offset,
                                     static_cast<Eigen::Index>(layer.out),
                                     static_cast<Eigen::Index>(layer.in));
      Eigen::Map<Vec> gb(param_grad.data() + layer.bias_offset,
                         static_cast<Eigen::Index>(layer.out));
      gW.noalias() += g * in.transpose();
      gb += g;
    }
    const ConstMat W(theta_.data() + layer.weight_offset, static_cast<Eigen::Index>(layer.out),
                     static_cast<Eigen::Index>(layer.in));
    g = W.transpose() * g;
  }
  return {std::move(g)};
}

DenoiserVjp MlpDenoiser::input_vjp(const Vec& x, double sigma, const Tape& tape,
                                   const Vec& input_grad) const {
  const auto d = static_cast<Eigen::Index>(dim_);
  DenoiserVjp out;
  out.x = tape.c_in * input_grad.head(d);
  out.sigma = input_grad[d] / sigma;
  if (spec_.input_scaling) {
    const double dc = -sigma * tape.c_in * tape.c_in * tape.c_in;
    out.sigma += dc * input_grad.head(d).dot(x);
  }
  return out;
}

Vec MlpDenoiser::do_denoise(const Vec& x, double sigma) const { return forward(x, sigma).acts.back(); }

Vec MlpDenoiser::do_sigma_grad(const Vec& x, double sigma) const {
  // Forward-mode tangent along sigma.
  const Tape tape = forward(x, sigma);
  const auto d = static_cast<Eigen::Index>(dim_);
  Vec t = Vec::Zero(d + 1);
  if (spec_.input_scaling) t.head(d) = (-sigma * tape.c_in * tape.c_in * tape.c_in) * x;
  t[d] = 1.0 / sigma;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const ConstMat W(theta_.data() + layer.weight_offset, static_cast<Eigen::Index>(layer.out),
                     static_cast<Eigen::Index>(layer.in));
    Vec u = W * t;
    if (l + 1 < layers_.size()) {
      const Vec& out = tape.acts[l + 1];
      for (Eigen::Index i = 0; i < u.size(); ++i) u[i] *= activate_grad_from_output(out[i]);
    }
    t = std::move(u);
  }
  return t;
}

DenoiserVjp MlpDenoiser::do_vjp(const Vec& x, double sigma, const Vec& cotangent) const {
  const Tape tape = forward(x, sigma);
  const auto back = backward(tape, cotangent, {});
  return input_vjp(x, sigma, tape, back.input_grad);
}

double MlpDenoiser::accumulate_loss_grad(const Vec& x_noisy, double sigma, const Vec& target,
                                         double weight, std::span<double> grad) const {
  if (grad.size() != theta_.size()) throw ValidationError("gradient buffer has wrong size");
  if (!(sigma > 0.0)) throw ValidationError("denoiser evaluated at non-positive sigma");
  const Tape tape = forward(x_noisy, sigma);
  const Vec resid = tape.acts.back() - target;
  const double loss = weight * resid.squaredNorm();
  if (weight != 0.0) backward(tape, (2.0 * weight) * resid, grad);
  return loss;
}

LossAndGrad MlpDenoiser::forward_backward(const Vec& x_noisy, double sigma, const Vec& target,
                                          double weight) const {
  LossAndGrad out;
  out.grad.assign(theta_.size(), 0.0);
  out.loss = accumulate_loss_grad(x_noisy, sigma, target, weight, out.grad);
  return out;
}

nlohmann::json MlpDenoiser::sidecar_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) {
    layers.push_back({{"in", l.in},
                      {"out", l.out},
                      {"weight_offset", l.weight_offset},
                      {"bias_offset", l.bias_offset},
                      {"weight_layout", "column-major out x in"}});
  }
  return {{"format_version", kSidecarVersion},
          {"dim", dim_},
          {"dtype", "float64-le"},
          {"param_count", theta_.size()},
          {"spec", spec_.to_json()},
          {"layers", layers}};
}

void MlpDenoiser::save(const std::filesystem::path& blob,
                       const std::filesystem::path& sidecar) const {
  static_assert(std::endian::native == std::endian::little, "blob format is little-endian");
  {
    std::ofstream out(blob, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write " + blob.string());
    out.write(reinterpret_cast<const char*>(theta_.data()),
              static_cast<std::streamsize>(theta_.size() * sizeof(double)));
  }
  std::ofstream meta(sidecar);
  if (!meta) throw RuntimeFailure("cannot write " + sidecar.string());
  meta << sidecar_json().dump(2) << '\n';
}

MlpDenoiser MlpDenoiser::load(const std::filesystem::path& blob,
                              const std::filesystem::path& sidecar) {
  std::ifstream meta(sidecar);
  if (!meta) throw ValidationError("cannot open " + sidecar.string());
  nlohmann::json j;
  try {
    meta >> j;
    if (j.at("format_version").get<int>() != kSidecarVersion) {
      throw ValidationError("unsupported mlp sidecar version");
    }
    MlpDenoiser net(j.at("dim").get<std::size_t>(), MlpSpec::from_json(j.at("spec")));
    if (j.at("param_count").get<std::size_t>() != net.param_count()) {
      throw ValidationError("mlp sidecar parameter count disagrees with its architecture");
    }
    std::ifstream in(blob, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + blob.string());
    in.read(reinterpret_cast<char*>(net.theta_.data()),
            static_cast<std::streamsize>(net.theta_.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(net.theta_.size() * sizeof(double))) {
      throw ValidationError("mlp parameter blob is truncated");
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed mlp sidecar: ") + e.what());
  }
}

}  // namespace schedopt
