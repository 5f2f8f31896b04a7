#pragma once

// Adaptive-moment optimizer (decay 0.9/0.999, no weight decay) and the
// cosine-annealing schedule.

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "auxdepth/params.hpp"

namespace auxdepth {

/// Cosine annealing from lr0 down to lr_min over total_steps; step is
/// 0-based.
inline double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0,
                        double lr_min) {
  if (total_steps <= 0) return lr0;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(3.14159265358979323846 * t));
}

template <typename S>
class Adam {
 public:
  explicit Adam(ParameterStore<S>& store, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : store_(&store), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& name : store.names()) {
      m_[name].assign(static_cast<std::size_t>(store.at(name).numel()), S(0));
      v_[name].assign(static_cast<std::size_t>(store.at(name).numel()), S(0));
    }
  }

  /// One update from the gradients currently held by the parameters.
  void step(double lr) {
    ++t_;
    const S b1 = static_cast<S>(beta1_);
    const S b2 = static_cast<S>(beta2_);
    const S bc1 = static_cast<S>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
    const S bc2 = static_cast<S>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
    for (const auto& name : store_->names()) {
      Tensor<S>& p = store_->at(name);
      if (!p.requires_grad()) continue;
      // a parameter outside this step's graph has a zero gradient
      const S* g = p.has_grad() ? p.grad().data() : nullptr;
      auto& m = m_.at(name);
      auto& v = v_.at(name);
      S* w = p.data();
      for (std::size_t i = 0; i < m.size(); ++i) {
        const S gi = g ? g[i] : S(0);
        m[i] = b1 * m[i] + (S(1) - b1) * gi;
        v[i] = b2 * v[i] + (S(1) - b2) * gi * gi;
        const S mhat = m[i] / bc1;
        const S vhat = v[i] / bc2;
        w[i] -= static_cast<S>(lr) * mhat / (std::sqrt(vhat) + static_cast<S>(eps_));
      }
    }
  }

  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }

  std::vector<S>& moment1(const std::string& name) { return m_.at(name); }
  std::vector<S>& moment2(const std::string& name) { return v_.at(name); }

 private:
  ParameterStore<S>* store_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::unordered_map<std::string, std::vector<S>> m_, v_;
};

}  // namespace auxdepth
