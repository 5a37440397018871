#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "schedopt/denoiser.hpp"

namespace schedopt {

enum class Activation { tanh, relu };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

/// Architecture of the trainable denoiser.
///
/// Input features are [c_in(sigma) * x, log sigma] with c_in = 1 / sqrt(sigma^2 + data_scale^2)
/// when input_scaling is on (else c_in = 1). The output is D(x, sigma) directly; there is no
/// skip connection or output scaling.
struct MlpSpec {
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::tanh;
  bool input_scaling = true;
  double data_scale = 1.0;
  std::uint64_t init_seed = 0;

  nlohmann::json to_json() const;
  static MlpSpec from_json(const nlohmann::json& j);
};

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;  // w.r.t. the flat parameter vector
};

/// Fully connected network with a flat parameter vector theta.
/// Layer l stores its weight matrix (out x in, column-major) followed by its bias.
class MlpDenoiser final : public Denoiser {
 public:
  MlpDenoiser(std::size_t dim, MlpSpec spec);

  std::size_t dim() const override { return dim_; }
  std::string_view kind() const override { return "trainable-mlp"; }
  const MlpSpec& spec() const { return spec_; }

  std::span<const double> params() const { return theta_; }
  std::span<double> mutable_params() { return theta_; }
  std::size_t param_count() const { return theta_.size(); }

  /// weight * ||D(x_noisy, sigma) - target||^2 and its exact gradient over theta.
  LossAndGrad forward_backward(const Vec& x_noisy, double sigma, const Vec& target,
                               double weight) const;

  /// Accumulates weight * grad ||D - target||^2 into grad, returns the weighted loss.
  double accumulate_loss_grad(const Vec& x_noisy, double sigma, const Vec& target, double weight,
                              std::span<double> grad) const;

  /// Raw little-endian float64 parameter blob plus a JSON sidecar describing shapes.
  void save(const std::filesystem::path& blob, const std::filesystem::path& sidecar) const;
  static MlpDenoiser load(const std::filesystem::path& blob, const std::filesystem::path& sidecar);

 protected:
  Vec do_denoise(const Vec& x, double sigma) const override;
  Vec do_sigma_grad(const Vec& x, double sigma) const override;
  DenoiserVjp do_vjp(const Vec& x, double sigma, const Vec& cotangent) const override;

 private:
  struct Layer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
  };
  struct Tape {
    double c_in = 1.0;
    std::vector<Vec> acts;  // acts[0] = input features, acts[l+1] = output of layer l
  };
  struct Backward {
    Vec input_grad;  // gradient w.r.t. input features
  };

  Tape forward(const Vec& x, double sigma) const;
  // Propagates the output cotangent to the input features; adds parameter gradients
  // into param_grad when non-empty.
  Backward backward(const Tape& tape, const Vec& out_grad, std::span<double> param_grad) const;
  DenoiserVjp input_vjp(const Vec& x, double sigma, const Tape& tape, const Vec& input_grad) const;
  double activate(double z) const;
  double activate_grad_from_output(double a) const;

  nlohmann::json sidecar_json() const;

  std::size_t dim_;
  MlpSpec spec_;
  std::vector<Layer> layers_;
  std::vector<double> theta_;
};

}  // namespace schedopt
