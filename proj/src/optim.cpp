#include "edge/network.hpp"

#include <cmath>

namespace edge {

Adam::Moments& Adam::moments_for(const std::string& name, std::size_t size) {
  for (auto& [key, m] : state_) {
    if (key == name) return m;
  }
  state_.emplace_back(name, Moments{std::vector<float>(size, 0.0f), std::vector<float>(size, 0.0f)});
  return state_.back().second;
}

void Adam::step(const std::vector<NamedParam>& params) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (const auto& [name, tensor] : params) {
    Tensor p = tensor;
    Moments& mo = moments_for(name, p.numel());
    auto theta = p.data();
    auto grad = p.grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = (grad.empty() ? 0.0 : grad[i]) + config_.weight_decay * theta[i];
      const double m = config_.beta1 * mo.m[i] + (1.0 - config_.beta1) * g;
      const double v = config_.beta2 * mo.v[i] + (1.0 - config_.beta2) * g * g;
      mo.m[i] = static_cast<float>(m);
      mo.v[i] = static_cast<float>(v);
      theta[i] -= static_cast<float>(config_.lr * (m / bc1) / (std::sqrt(v / bc2) + config_.eps));
    }
  }
}

}  // namespace edge
