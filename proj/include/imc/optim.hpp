#pragma once

#include <array>
#include <map>

#include "imc/model.hpp"

namespace imc {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::array<double, 3> lr{1e-6, 1e-5, 1e-4};  // encoder, acm+apm, mcm
  double lr_scale = 1.0;

  double group_lr(ParamGroup g) const { return lr[static_cast<std::size_t>(g)] * lr_scale; }
};

/// Adam with one learning rate per parameter group. Moments are keyed by
/// parameter name, so the state survives model re-creation.
class Adam {
 public:
  explicit Adam(const AdamConfig& config) : config_(config) {}

  void step(Imcnet<float>& model);
  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  struct Moments {
    TensorF m, v;
  };
  AdamConfig config_;
  std::map<std::string, Moments> state_;
  std::int64_t t_ = 0;
};

}  // namespace imc
