#include "imc/optim.hpp"

#include <cmath>

namespace imc {

void Adam::step(Imcnet<float>& model) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(config_.beta1), b2 = static_cast<float>(config_.beta2);
  model.visit([&](const std::string& name, TensorF& value, TensorF& grad) {
    Moments& s = state_[name];
    if (s.m.empty()) {
      s.m = TensorF(value.shape());
      s.v = TensorF(value.shape());
    }
    const auto step = static_cast<float>(config_.group_lr(param_group(name)) / bc1);
    const auto inv_bc2 = static_cast<float>(1.0 / bc2);
    const auto eps = static_cast<float>(config_.eps);
    float* w = value.data();
    const float* g = grad.data();
    float* m = s.m.data();
    float* v = s.v.data();
    for (std::int64_t i = 0; i < value.numel(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      w[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
    }
  });
}

}  // namespace imc
