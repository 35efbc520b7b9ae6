#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lg/rng.hpp"
#include "lg/tensor.hpp"

namespace lg {

// Named registry of trainable leaves. Registration order is the checkpoint
// and optimizer traversal order, so it must be deterministic.
class ParamStore {
 public:
  // Uniform in +-sqrt(1/fan_in); the usual choice for linear/conv weights.
  Tensor create_fan_in(const std::string& name, Shape shape, int fan_in, Rng& rng);
  Tensor create_zeros(const std::string& name, Shape shape);
  Tensor create_constant(const std::string& name, Shape shape, double value);
  Tensor add(const std::string& name, Tensor t);

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  Tensor find(const std::string& name) const;
  bool contains(const std::string& name) const;
  int64_t total_size() const;
  void zero_grads();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (applied to the parameter, not the moments)
};

// Adam with bias correction; an un-allocated grad buffer counts as a zero
// gradient. A non-finite gradient aborts the step and names the parameter.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}

  void step(ParamStore& params);
  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  int64_t step_count() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamConfig config_;
  std::map<std::string, Moments> state_;
  int64_t t_ = 0;
};

}  // namespace lg
