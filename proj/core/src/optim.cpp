#include "lg/optim.hpp"

#include <cmath>

#include "lg/errors.hpp"

namespace lg {

Tensor ParamStore::create_fan_in(const std::string& name, Shape shape, int fan_in, Rng& rng) {
  if (fan_in < 1) throw ConfigError("parameter '" + name + "': fan_in must be >= 1");
  const double bound = std::sqrt(1.0 / fan_in);
  Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  for (double& v : t.raw_data()) v = rng.uniform(-bound, bound);
  return add(name, t);
}

Tensor ParamStore::create_zeros(const std::string& name, Shape shape) {
  return add(name, Tensor::zeros(std::move(shape), /*requires_grad=*/true));
}

Tensor ParamStore::create_constant(const std::string& name, Shape shape, double value) {
  return add(name, Tensor::full(std::move(shape), value, /*requires_grad=*/true));
}

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  items_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::find(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw ConfigError("unknown parameter '" + name + "'");
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return true;
  }
  return false;
}

int64_t ParamStore::total_size() const {
  int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : items_) t.zero_grad();
}

void Adam::step(ParamStore& params) {
  // Validate every gradient before touching any parameter, so a bad step
  // leaves the model untouched.
  for (auto& [name, t] : params.items()) {
    for (double gv : t.grad()) {
      if (!std::isfinite(gv)) {
        throw NumericError("non-finite gradient in parameter '" + name + "'; step aborted");
      }
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto& item : const_cast<std::vector<std::pair<std::string, Tensor>>&>(params.items())) {
    Tensor& t = item.second;
    Moments& mom = state_[item.first];
    const size_t n = static_cast<size_t>(t.size());
    if (mom.m.empty()) {
      mom.m.assign(n, 0.0);
      mom.v.assign(n, 0.0);
    }
    auto grad = t.grad();
    auto data = t.raw_data();
    for (size_t i = 0; i < n; ++i) {
      const double gv = i < grad.size() ? grad[i] : 0.0;
      mom.m[i] = config_.beta1 * mom.m[i] + (1.0 - config_.beta1) * gv;
      mom.v[i] = config_.beta2 * mom.v[i] + (1.0 - config_.beta2) * gv * gv;
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      data[i] -= config_.lr * (mhat / (std::sqrt(vhat) + config_.eps) +
                               config_.weight_decay * data[i]);
    }
  }
}

}  // namespace lg
