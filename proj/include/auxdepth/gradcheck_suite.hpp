#pragma once

// The gradient battery behind `auxdepth gradcheck` and the acceptance
// suite: every differentiable op over randomized shapes, plus the composite
// modules (adf_forward, encoder/decoder layers, the full model on a 32x32
// input, all three losses).

#include <functional>
#include <string>
#include <vector>

#include "auxdepth/adf.hpp"
#include "auxdepth/dft.hpp"
#include "auxdepth/grad_check.hpp"
#include "auxdepth/losses.hpp"
#include "auxdepth/model.hpp"

namespace auxdepth {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 1e-4;
  bool passed() const { return max_rel_error < tolerance; }
};

namespace detail {

template <typename S>
double probe_params(const std::function<Tensor<S>()>& loss_fn, Tensor<S>& param,
                    int probes, Rng& rng) {
  std::vector<S> analytic;
  {
    Tape<S> tape;
    Tensor<S> loss = loss_fn();
    tape.backward(loss);
    analytic = param.grad();
    param.zero_grad();
  }
  // central differences on an O(10) loss cannot resolve derivatives below
  // roughly 1e-9; coordinates where both sides sit under the floor are
  // unresolvable, not wrong (linear attention has genuinely ~0 q-gradients
  // when all keys coincide)
  constexpr double kAbsFloor = 1e-6;
  double worst = 0.0;
  for (int t = 0; t < probes; ++t) {
    const Index i = static_cast<Index>(rng.next_below(static_cast<std::uint64_t>(param.numel())));
    const S x0 = param[i];
    const S h = static_cast<S>(1e-5 * (1.0 + std::abs(static_cast<double>(x0))));
    param[i] = x0 + h;
    const double up = static_cast<double>(loss_fn().value());
    param[i] = x0 - h;
    const double down = static_cast<double>(loss_fn().value());
    param[i] = x0;
    const double numeric = (up - down) / (2.0 * static_cast<double>(h));
    const double an = static_cast<double>(analytic[static_cast<std::size_t>(i)]);
    if (std::abs(an) < kAbsFloor && std::abs(numeric) < kAbsFloor) continue;
    worst = std::max(worst, std::abs(an - numeric) / (std::abs(an) + std::abs(numeric) + 1e-12));
  }
  return worst;
}

}  // namespace detail

/// Runs the whole battery at 64-bit precision; each op appears exactly once.
inline std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed) {
  using T = Tensor<double>;
  std::vector<GradCheckEntry> entries;
  Rng rng(seed);
  auto rt = [&rng](Shape shape, double lo = -1.0, double hi = 1.0) {
    return T::uniform(std::move(shape), lo, hi, rng);
  };
  auto add_entry = [&entries](const std::string& name, double err) {
    entries.push_back({name, err, 1e-4});
  };
  // readout weights turn shape-preserving ops into non-degenerate scalars
  auto check_unary = [&](const std::string& name, auto op, double lo = -1.0,
                         double hi = 1.0) {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const Index n = 1 + static_cast<Index>(rng.next_below(5));
      const Index m = 1 + static_cast<Index>(rng.next_below(5));
      T x = rt({n, m}, lo, hi);
      T readout = rt({n, m});
      worst = std::max(worst, grad_check<double>(
                                  [&](const T& t2) { return sum_all(mul(op(t2), readout)); },
                                  x));
    }
    add_entry(name, worst);
  };

  check_unary("relu", [](const T& x) { return relu(x); });
  check_unary("elu", [](const T& x) { return elu(x); });
  check_unary("elu_plus_one", [](const T& x) { return elu_plus_one(x); });
  check_unary("sigmoid", [](const T& x) { return sigmoid(x); });
  check_unary("log", [](const T& x) { return log_op(x); }, 0.1, 2.0);
  check_unary("reciprocal", [](const T& x) { return reciprocal(x); }, 0.2, 2.0);
  check_unary("clamp", [](const T& x) { return clamp(x, -0.5, 0.5); });
  check_unary("scalar_mul", [](const T& x) { return scalar_mul(x, 1.7); });
  check_unary("scalar_add", [](const T& x) { return scalar_add(x, 0.3); });
  check_unary("softmax", [](const T& x) { return softmax(x, 1); });
  {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      T x = rt({2, 3, 2});
      T readout = rt({12});
      worst = std::max(worst, grad_check<double>(
                                  [&](const T& t2) {
                                    return sum_all(mul(reshape(t2, {Index(12)}), readout));
                                  },
                                  x));
    }
    add_entry("reshape", worst);
  }

  {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const Index m = 1 + static_cast<Index>(rng.next_below(4));
      const Index k = 1 + static_cast<Index>(rng.next_below(4));
      const Index n = 1 + static_cast<Index>(rng.next_below(4));
      T a = rt({m, k});
      T b = rt({k, n});
      T readout = rt({m, n});
      worst = std::max(
          worst, grad_check<double>(
                     [&](const T& x) { return sum_all(mul(matmul(x, b), readout)); }, a));
      worst = std::max(
          worst, grad_check<double>(
                     [&](const T& x) { return sum_all(mul(matmul(a, x), readout)); }, b));
      T ab = rt({2, m, k});
      T bb = rt({2, k, n});
      worst = std::max(worst,
                       grad_check<double>(
                           [&](const T& x) { return sum_all(mul(matmul(x, bb), matmul(x, bb))); },
                           ab));
    }
    add_entry("matmul", worst);
  }
  {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const Index ci = 1 + static_cast<Index>(rng.next_below(3));
      const Index co = 1 + static_cast<Index>(rng.next_below(3));
      const Index hw = 5 + static_cast<Index>(rng.next_below(3));
      const Index dil = 1 + static_cast<Index>(rng.next_below(2));
      T x = rt({ci, hw, hw});
      T w = rt({co, ci, 3, 3});
      const Conv2dOpts opts{.stride = 1, .pad = dil, .dilation = dil, .groups = 1};
      T readout = rt({co, hw, hw});
      worst = std::max(
          worst,
          grad_check<double>(
              [&](const T& t2) { return sum_all(mul(conv2d(t2, w, opts), readout)); }, x));
      worst = std::max(
          worst,
          grad_check<double>(
              [&](const T& t2) { return sum_all(mul(conv2d(x, t2, opts), readout)); }, w));
    }
    // depthwise + grouped variants
    T x = rt({4, 6, 6});
    T wd = rt({4, 1, 3, 3});
    T readout = rt({4, 6, 6});
    worst = std::max(worst, grad_check<double>(
                                [&](const T& t2) {
                                  return sum_all(mul(
                                      conv2d(t2, wd, {.stride = 1, .pad = 1, .dilation = 1, .groups = 4}),
                                      readout));
                                },
                                x));
    add_entry("conv2d", worst);
  }
  {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const Index c = 2 + static_cast<Index>(rng.next_below(5));
      T x = rt({3, c});
      T g = rt({c}, 0.5, 1.5);
      T b = rt({c});
      T readout = rt({3, c});
      worst = std::max(worst, grad_check<double>(
                                  [&](const T& t2) {
                                    return sum_all(mul(layer_norm(t2, g, b, 1e-5), readout));
                                  },
                                  x));
      worst = std::max(worst, grad_check<double>(
                                  [&](const T& t2) {
                                    return sum_all(mul(layer_norm(x, t2, b, 1e-5), readout));
                                  },
                                  g));
    }
    add_entry("layer_norm", worst);
  }
  {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const Index n = 2 + static_cast<Index>(rng.next_below(4));
      T a = rt({n, n});
      T b = rt({n, n});
      T readout = rt({n, n});
      worst = std::max(worst, grad_check<double>(
                                  [&](const T& x) { return sum_all(mul(add(x, b), readout)); }, a));
      worst = std::max(worst, grad_check<double>(
                                  [&](const T& x) { return sum_all(mul(sub(x, b), readout)); }, a));
      worst = std::max(worst, grad_check<double>(
                                  [&](const T& x) { return sum_all(mul(mul(x, b), readout)); }, a));
    }
    add_entry("add_sub_mul", worst);
  }
  {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      T a = rt({2, 3, 3});
      T b = rt({3, 3, 3});
      T readout = rt({5, 3, 3});
      worst = std::max(
          worst, grad_check<double>(
                     [&](const T& x) { return sum_all(mul(concat_channels(x, b), readout)); },
                     a));
    }
    add_entry("concat_channels", worst);
  }
  {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      T x = rt({4, 3});
      worst = std::max(worst, grad_check<double>(
                                  [&](const T& t2) {
                                    T g = gather_rows(t2, {1, 3, 1});
                                    return sum_all(mul(g, g));
                                  },
                                  x));
    }
    add_entry("gather_rows", worst);
  }
  {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      T x = rt({2, 3, 4});
      worst = std::max(worst, grad_check<double>(
                                  [&](const T& t2) {
                                    T p = permute(t2, {2, 0, 1});
                                    return sum_all(mul(p, p));
                                  },
                                  x));
    }
    add_entry("permute", worst);
  }
  {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      T x = rt({3, 4, 2});
      T s = rt({3, 4}, 0.5, 1.5);
      T readout = rt({3, 4, 2});
      worst = std::max(
          worst,
          grad_check<double>(
              [&](const T& t2) { return sum_all(mul(scale_rows(t2, s), readout)); }, x));
      worst = std::max(
          worst,
          grad_check<double>(
              [&](const T& t2) { return sum_all(mul(scale_rows(x, t2), readout)); }, s));
    }
    add_entry("scale_rows", worst);
  }
  {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      T x = rt({3, 5}, 0.2, 1.0);
      worst = std::max(worst, grad_check<double>(
                                  [&](const T& t2) {
                                    T w = row_normalize(t2, 1e-8);
                                    return sum_all(mul(w, w));
                                  },
                                  x));
    }
    add_entry("row_normalize", worst);
  }
  {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      T x = rt({2, 3, 4});
      T readout3 = rt({3, 4});
      worst = std::max(worst, grad_check<double>([&](const T& t2) { return sum_all(t2); }, x));
      worst = std::max(worst, grad_check<double>([&](const T& t2) { return mean_all(mul(t2, t2)); }, x));
      worst = std::max(worst, grad_check<double>(
                                  [&](const T& t2) {
                                    return sum_all(mul(sum_axis(t2, 0), readout3));
                                  },
                                  x));
    }
    add_entry("reductions", worst);
  }
  {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      T x = rt({3, 4, 5});
      T b = rt({3});
      T readout = rt({3, 4, 5});
      worst = std::max(worst, grad_check<double>(
                                  [&](const T& t2) {
                                    return sum_all(mul(add_channel_bias(t2, b), readout));
                                  },
                                  x));
      worst = std::max(worst, grad_check<double>(
                                  [&](const T& t2) {
                                    return sum_all(mul(add_channel_bias(x, t2), readout));
                                  },
                                  b));
    }
    add_entry("add_channel_bias", worst);
  }

  // losses
  {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      T p = rt({5, 2}, 0.1, 0.9);
      std::vector<int> targets(5);
      for (auto& v : targets) v = static_cast<int>(rng.next_below(4)) - 2;
      if (targets[0] < 0) targets[0] = 0;  // keep at least one positive
      worst = std::max(worst, grad_check<double>(
                                  [&](const T& t2) { return focal_loss(t2, targets, 0.25, 2.0); },
                                  p));
    }
    add_entry("focal_loss", worst);
  }
  {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      T pred = rt({3, 11});
      T target = rt({3, 11});
      worst = std::max(
          worst,
          grad_check<double>([&](const T& t2) { return smooth_l1(t2, target, 1.0); }, pred));
    }
    add_entry("smooth_l1", worst);
  }
  {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      T logits = rt({4, 6}, -1.5, 1.5);
      std::vector<int> bins(6);
      for (auto& v : bins) v = static_cast<int>(rng.next_below(5)) - 1;
      bins[0] = 0;
      worst = std::max(
          worst, grad_check<double>(
                     [&](const T& t2) { return depth_loss(t2, bins, 2.0).loss; }, logits));
    }
    add_entry("depth_loss", worst);
  }

  // attention kernels and transformer layers
  {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const Index l = 2 + static_cast<Index>(rng.next_below(3));
      const Index dh = 2 + static_cast<Index>(rng.next_below(3));
      T q = rt({l, dh});
      T k = rt({l, dh});
      T v = rt({l, dh});
      T readout = rt({l, dh});
      worst = std::max(worst, grad_check<double>(
                                  [&](const T& x) {
                                    return sum_all(mul(scaled_dot_attention(x, k, v), readout));
                                  },
                                  q));
      worst = std::max(worst, grad_check<double>(
                                  [&](const T& x) {
                                    return sum_all(mul(linear_attention(q, x, v), readout));
                                  },
                                  k));
    }
    add_entry("attention_kernels", worst);
  }
  {
    ParameterStore<double> store;
    Rng wrng(seed + 1);
    DftConfig cfg;
    cfg.width = 8;
    auto enc = EncoderLayerWeights<double>::create(store, "enc", cfg, wrng);
    T x = rt({1, 5, 8});
    T readout = rt({1, 5, 8});
    double worst = grad_check<double>(
        [&](const T& t2) {
          return sum_all(mul(encoder_layer(t2, enc, 2, AttentionKind::Linear), readout));
        },
        x);
    worst = std::max(worst, grad_check<double>(
                                [&](const T& t2) {
                                  return sum_all(
                                      mul(encoder_layer(t2, enc, 2, AttentionKind::Softmax),
                                          readout));
                                },
                                x));
    add_entry("encoder_layer", worst);
  }
  {
    ParameterStore<double> store;
    Rng wrng(seed + 2);
    DftConfig cfg;
    cfg.width = 8;
    auto dec = DecoderLayerWeights<double>::create(store, "dec", cfg, wrng);
    T q = rt({1, 4, 8});
    T ctx = rt({1, 6, 8});
    T readout = rt({1, 4, 8});
    add_entry("decoder_layer",
              grad_check<double>(
                  [&](const T& t2) {
                    return sum_all(mul(decoder_layer(t2, ctx, dec, 2), readout));
                  },
                  q));
  }
  {
    ParameterStore<double> store;
    Rng wrng(seed + 3);
    auto dpm = DpmWeights<double>::create(store, "dpm", 6, wrng);
    T emb = rt({4, 6});
    T dist = softmax(rt({4, 3, 4}), 0);
    T f = rt({6, 3, 4});
    T readout = rt({1, 12, 6});
    add_entry("depth_position_mapping",
              grad_check<double>(
                  [&](const T& t2) {
                    return sum_all(mul(depth_position_mapping(t2, dist, emb, dpm), readout));
                  },
                  f));
  }
  {
    ParameterStore<double> store;
    Rng wrng(seed + 4);
    AdfConfig cfg;
    cfg.channels = 8;
    cfg.depth_bins = 4;
    auto w = AdfWeights<double>::create(store, "adf", cfg, wrng);
    T f = rt({8, 5, 5});
    T readout = rt({8, 5, 5});
    add_entry("adf_forward",
              grad_check<double>(
                  [&](const T& t2) {
                    const auto out = adf_forward(t2, w, cfg);
                    return add(sum_all(mul(out.features, readout)),
                               mean_all(mul(out.logits, out.logits)));
                  },
                  f));
  }
  {
    // full model on a 32x32 input: gradient of the scalar sum of every output
    ModelConfig cfg;
    cfg.input_w = 32;
    cfg.input_h = 32;
    cfg.backbone_channels = {4, 6, 8, 16};
    cfg.lid = {1.0, 65.0, 4, lid::Formula::Standard};
    cfg.adf.channels = 16;
    cfg.adf.depth_bins = 4;
    cfg.dft.width = 16;
    cfg.dft.heads = 2;
    cfg.dft.enc_layers = 1;
    cfg.dft.dec_layers = 1;
    cfg.head.scales = {16.0};
    cfg.head.ratios = {1.0};
    Model<double> model(cfg, seed + 5);
    T image = rt({3, 32, 32}, 0.0, 1.0);
    auto outputs_sum = [&](const T& img) {
      const auto out = model.forward(img);
      return add(add(sum_all(out.cls_logits), sum_all(out.box_deltas)),
                 sum_all(out.depth_logits));
    };
    // the deep composite needs a larger step: the FD signal 2h*g must stay
    // above the graph's accumulated evaluation roundoff
    double worst = grad_check<double>(outputs_sum, image, 1e-4);
    // parameter probes use a quadratic readout: the plain sum nearly cancels
    // along some attention-weight directions and leaves only FD noise
    Rng probe_rng(seed + 6);
    auto loss_fn = [&]() {
      model.params().zero_grads();  // gradients accumulate across probes
      const auto out = model.forward(image);
      return add(add(mean_all(mul(out.cls_logits, out.cls_logits)),
                     mean_all(mul(out.box_deltas, out.box_deltas))),
                 mean_all(mul(out.depth_logits, out.depth_logits)));
    };
    for (const char* pname : {"adf.fuse.w", "dft.enc0.attn.wq", "dft.dec0.cross.wv",
                              "head.cls.b", "backbone.stage0.w", "dft.bin_embeddings"})
      worst = std::max(worst, detail::probe_params<double>(
                                  loss_fn, model.params().at(pname), 8, probe_rng));
    add_entry("model_forward", worst);
  }
  return entries;
}

}  // namespace auxdepth
