#pragma once

// Central finite-difference check for any scalar-valued tensor function.
// This is the project's gradient oracle: it must stay independent of the
// backward rules it validates, so it only calls forward evaluation.

#include <functional>

#include "auxdepth/tensor.hpp"

namespace auxdepth {

/// Max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12),
/// with per-coordinate step h = h_scale * (1 + |x_i|).
template <typename S>
double grad_check(const std::function<Tensor<S>(const Tensor<S>&)>& f, const Tensor<S>& x,
                  double h_scale = 1e-5) {
  Tensor<S> leaf = Tensor<S>::from(x.shape(), x.values(), /*requires_grad=*/true);
  std::vector<S> analytic;
  {
    Tape<S> tape;
    Tensor<S> y = f(leaf);
    if (y.numel() != 1)
      fail(Error::Kind::Contract, "grad_check: function must be scalar-valued");
    tape.backward(y);
    analytic = leaf.grad();
  }
  Tensor<S> probe = Tensor<S>::from(x.shape(), x.values());
  double worst = 0.0;
  for (Index i = 0; i < probe.numel(); ++i) {
    const S x0 = probe[i];
    const S h = static_cast<S>(h_scale * (1.0 + std::abs(static_cast<double>(x0))));
    probe[i] = x0 + h;
    const double up = static_cast<double>(f(probe).value());
    probe[i] = x0 - h;
    const double down = static_cast<double>(f(probe).value());
    probe[i] = x0;
    const double numeric = (up - down) / (2.0 * static_cast<double>(h));
    const double an = static_cast<double>(analytic[static_cast<std::size_t>(i)]);
    const double rel = std::abs(an - numeric) / (std::abs(an) + std::abs(numeric) + 1e-12);
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace auxdepth
