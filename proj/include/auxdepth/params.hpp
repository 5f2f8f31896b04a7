#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "auxdepth/tensor.hpp"

namespace auxdepth {

/// Named learnable tensors in a stable creation order. The order drives the
/// optimizer walk and the checkpoint layout, so training is reproducible.
template <typename S>
class ParameterStore {
 public:
  /// Uniform init in +-sqrt(1/fan_in) from the store's SplitMix64 stream.
  Tensor<S> create(const std::string& name, Shape shape, Index fan_in, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    return insert(name, Tensor<S>::uniform(std::move(shape), -bound, bound, rng, true));
  }

  Tensor<S> create_zeros(const std::string& name, Shape shape) {
    return insert(name, Tensor<S>::zeros(std::move(shape), true));
  }

  Tensor<S> create_const(const std::string& name, Shape shape, S v) {
    return insert(name, Tensor<S>::filled(std::move(shape), v, true));
  }

  Tensor<S> insert(const std::string& name, Tensor<S> t) {
    if (params_.count(name))
      fail(Error::Kind::Config, "parameter '" + name + "' already exists");
    order_.push_back(name);
    params_.emplace(name, t);
    return t;
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }

  Tensor<S>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) fail(Error::Kind::Config, "unknown parameter '" + name + "'");
    return it->second;
  }

  const Tensor<S>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) fail(Error::Kind::Config, "unknown parameter '" + name + "'");
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }

  Index total_count() const {
    Index n = 0;
    for (const auto& name : order_) n += params_.at(name).numel();
    return n;
  }

  void zero_grads() {
    for (const auto& name : order_) params_.at(name).zero_grad();
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor<S>> params_;
};

}  // namespace auxdepth
