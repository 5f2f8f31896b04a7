#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "auxdepth/adf.hpp"
#include "auxdepth/grad_check.hpp"

using namespace auxdepth;
using T = Tensor<double>;

namespace {

AdfWeights<double> zero_weights(Index c, Index d) {
  AdfWeights<double> w;
  w.refine_w = T::zeros({c, c, 3, 3});
  w.refine_b = T::zeros({c});
  w.aux1_w = T::zeros({c, c, 3, 3});
  w.aux1_b = T::zeros({c});
  w.aux2_w = T::zeros({d, c, 3, 3});
  w.aux2_b = T::zeros({d});
  w.fuse_w = T::zeros({c, 2 * c, 1, 1});
  w.fuse_b = T::zeros({c});
  return w;
}

AdfWeights<double> random_weights(Index c, Index d, std::uint64_t seed) {
  Rng rng(seed);
  ParameterStore<double> store;
  AdfConfig cfg;
  cfg.channels = c;
  cfg.depth_bins = d;
  return AdfWeights<double>::create(store, "adf", cfg, rng);
}

// prototype double-loop reference: P[d] = sum_i dist[d,i]/mass_d * F[:, i]
std::vector<double> prototype_oracle(const T& f, const T& dist) {
  const Index c = f.extent(0), d = dist.extent(0);
  const Index n = f.extent(1) * f.extent(2);
  std::vector<double> out(static_cast<std::size_t>(d * c), 0.0);
  for (Index b = 0; b < d; ++b) {
    double mass = 0.0;
    for (Index i = 0; i < n; ++i) mass += dist[b * n + i];
    for (Index ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      if (mass < 1e-8) {
        for (Index i = 0; i < n; ++i) acc += f[ch * n + i] / static_cast<double>(n);
      } else {
        for (Index i = 0; i < n; ++i) acc += dist[b * n + i] / mass * f[ch * n + i];
      }
      out[static_cast<std::size_t>(b * c + ch)] = acc;
    }
  }
  return out;
}

// enhancement double-loop reference: F_enh[:, i] = sum_d dist[d,i] * P[d]
std::vector<double> enhance_oracle(const T& protos, const T& dist) {
  const Index d = dist.extent(0), c = protos.extent(1);
  const Index n = dist.extent(1) * dist.extent(2);
  std::vector<double> out(static_cast<std::size_t>(c * n), 0.0);
  for (Index i = 0; i < n; ++i)
    for (Index ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (Index b = 0; b < d; ++b) acc += dist[b * n + i] * protos[b * c + ch];
      out[static_cast<std::size_t>(ch * n + i)] = acc;
    }
  return out;
}

T random_dist(Index d, Index h, Index w, std::uint64_t seed) {
  Rng rng(seed);
  T logits = T::uniform({d, h, w}, -2.0, 2.0, rng);
  return softmax(logits, 0);
}

}  // namespace

TEST_CASE("zero auxiliary head predicts the uniform distribution") {
  const Index c = 8, d = 4;
  auto w = zero_weights(c, d);
  Rng rng(3);
  T f = T::uniform({c, 5, 6}, -1.0, 1.0, rng);
  auto [logits, dist] = predict_depth_distribution(f, w);
  CHECK(logits.shape() == Shape{d, 5, 6});
  for (Index i = 0; i < dist.numel(); ++i)
    CHECK(dist[i] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("a +10 bias on one bin saturates its probability") {
  const Index c = 8, d = 4;
  auto w = zero_weights(c, d);
  w.aux2_b[3] = 10.0;
  Rng rng(5);
  T f = T::uniform({c, 3, 3}, -1.0, 1.0, rng);
  auto [logits, dist] = predict_depth_distribution(f, w);
  (void)logits;
  const Index n = 9;
  for (Index i = 0; i < n; ++i) CHECK(dist[3 * n + i] > 0.999);
}

TEST_CASE("predicted distributions sum to one over the bin axis") {
  auto w = random_weights(16, 8, 11);
  Rng rng(7);
  T f = T::uniform({16, 4, 7}, -1.0, 1.0, rng);
  auto [logits, dist] = predict_depth_distribution(f, w);
  (void)logits;
  const Index n = 4 * 7;
  for (Index i = 0; i < n; ++i) {
    double acc = 0.0;
    for (Index b = 0; b < 8; ++b) acc += dist[b * n + i];
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("channel mismatch raises a config error") {
  auto w = random_weights(16, 8, 13);
  T f = T::zeros({12, 4, 4});
  CHECK_THROWS_AS(predict_depth_distribution(f, w), Error);
}

TEST_CASE("prototypes: one-hot and uniform degenerate cases") {
  const Index c = 3, h = 2, w = 3;
  const Index n = h * w;
  Rng rng(17);
  T f = T::uniform({c, h, w}, -1.0, 1.0, rng);
  SUBCASE("bin supported by a single pixel copies that pixel's feature") {
    T dist = T::zeros({2, h, w});
    const Index pix = 4;
    dist[0 * n + pix] = 1.0;               // bin 0 lives only on pixel 4
    for (Index i = 0; i < n; ++i) dist[1 * n + i] = 1.0 / 6.0;
    T p = compute_prototypes(f, dist);
    for (Index ch = 0; ch < c; ++ch)
      CHECK(p[0 * c + ch] == doctest::Approx(f[ch * n + pix]).epsilon(1e-12));
  }
  SUBCASE("uniform support averages all pixel features") {
    T dist = T::filled({2, h, w}, 0.5);
    T p = compute_prototypes(f, dist);
    for (Index ch = 0; ch < c; ++ch) {
      double mean = 0.0;
      for (Index i = 0; i < n; ++i) mean += f[ch * n + i];
      mean /= static_cast<double>(n);
      CHECK(p[0 * c + ch] == doctest::Approx(mean).epsilon(1e-12));
      CHECK(p[1 * c + ch] == doctest::Approx(mean).epsilon(1e-12));
    }
  }
  SUBCASE("an empty bin falls back to the global mean feature") {
    T dist = T::zeros({2, h, w});
    for (Index i = 0; i < n; ++i) dist[1 * n + i] = 1.0;  // bin 0 empty
    T p = compute_prototypes(f, dist);
    for (Index ch = 0; ch < c; ++ch) {
      double mean = 0.0;
      for (Index i = 0; i < n; ++i) mean += f[ch * n + i];
      mean /= static_cast<double>(n);
      CHECK(p[0 * c + ch] == doctest::Approx(mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("prototypes match the double-loop oracle within 1e-10") {
  Rng rng(19);
  T f = T::uniform({2, 3, 3}, -1.0, 1.0, rng);
  T dist = random_dist(4, 3, 3, 21);
  T p = compute_prototypes(f, dist);
  const auto want = prototype_oracle(f, dist);
  for (Index i = 0; i < p.numel(); ++i)
    CHECK(std::abs(p[i] - want[static_cast<std::size_t>(i)]) < 1e-10);
}

TEST_CASE("prototypes live in the convex hull of pixel features") {
  Rng rng(23);
  T f = T::uniform({5, 4, 4}, -2.0, 2.0, rng);
  T dist = random_dist(6, 4, 4, 25);
  T p = compute_prototypes(f, dist);
  const Index n = 16;
  for (Index ch = 0; ch < 5; ++ch) {
    double lo = 1e30, hi = -1e30;
    for (Index i = 0; i < n; ++i) {
      lo = std::min(lo, f[ch * n + i]);
      hi = std::max(hi, f[ch * n + i]);
    }
    for (Index b = 0; b < 6; ++b) {
      CHECK(p[b * 5 + ch] >= lo - 1e-9);
      CHECK(p[b * 5 + ch] <= hi + 1e-9);
    }
  }
}

TEST_CASE("prototypes are invariant under a joint pixel permutation") {
  Rng rng(29);
  const Index c = 3, d = 4, n = 12;
  T f2d = T::uniform({c, n}, -1.0, 1.0, rng);
  T dist2d = softmax(T::uniform({d, n}, -1.0, 1.0, rng), 0);
  // permute pixels of both by the same permutation
  std::vector<Index> perm(n);
  for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  for (Index i = n - 1; i > 0; --i)
    std::swap(perm[static_cast<std::size_t>(i)],
              perm[static_cast<std::size_t>(rng.next_below(static_cast<std::uint64_t>(i + 1)))]);
  T fp = T::zeros({c, n});
  T dp = T::zeros({d, n});
  for (Index i = 0; i < n; ++i) {
    for (Index ch = 0; ch < c; ++ch) fp[ch * n + i] = f2d[ch * n + perm[static_cast<std::size_t>(i)]];
    for (Index b = 0; b < d; ++b) dp[b * n + i] = dist2d[b * n + perm[static_cast<std::size_t>(i)]];
  }
  T p1 = compute_prototypes(reshape(f2d, {c, 3, 4}), reshape(dist2d, {d, 3, 4}));
  T p2 = compute_prototypes(reshape(fp, {c, 3, 4}), reshape(dp, {d, 3, 4}));
  for (Index i = 0; i < p1.numel(); ++i)
    CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-12));
}

TEST_CASE("enhancement: one-hot pixels copy prototype rows") {
  const Index d = 3, c = 4;
  Rng rng(31);
  T protos = T::uniform({d, c}, -1.0, 1.0, rng);
  T dist = T::zeros({d, 1, 2});
  dist[0 * 2 + 0] = 1.0;  // pixel 0 -> bin 0
  dist[2 * 2 + 1] = 1.0;  // pixel 1 -> bin 2
  T enh = enhance_features(protos, dist);
  for (Index ch = 0; ch < c; ++ch) {
    CHECK(enh[ch * 2 + 0] == doctest::Approx(protos[0 * c + ch]).epsilon(1e-12));
    CHECK(enh[ch * 2 + 1] == doctest::Approx(protos[2 * c + ch]).epsilon(1e-12));
  }
}

TEST_CASE("enhancement: equal prototypes produce a constant map") {
  const Index d = 4, c = 3;
  T protos = T::zeros({d, c});
  for (Index b = 0; b < d; ++b)
    for (Index ch = 0; ch < c; ++ch) protos[b * c + ch] = 0.5 * static_cast<double>(ch) - 1.0;
  T dist = random_dist(d, 3, 3, 37);
  T enh = enhance_features(protos, dist);
  for (Index ch = 0; ch < c; ++ch)
    for (Index i = 0; i < 9; ++i)
      CHECK(enh[ch * 9 + i] == doctest::Approx(0.5 * static_cast<double>(ch) - 1.0).epsilon(1e-12));
}

TEST_CASE("enhancement matches the double-loop oracle and stays in the hull") {
  Rng rng(41);
  T protos = T::uniform({5, 4}, -2.0, 2.0, rng);
  T dist = random_dist(5, 2, 3, 43);
  T enh = enhance_features(protos, dist);
  const auto want = enhance_oracle(protos, dist);
  for (Index i = 0; i < enh.numel(); ++i)
    CHECK(std::abs(enh[i] - want[static_cast<std::size_t>(i)]) < 1e-10);
  for (Index ch = 0; ch < 4; ++ch) {
    double lo = 1e30, hi = -1e30;
    for (Index b = 0; b < 5; ++b) {
      lo = std::min(lo, protos[b * 4 + ch]);
      hi = std::max(hi, protos[b * 4 + ch]);
    }
    for (Index i = 0; i < 6; ++i) {
      CHECK(enh[ch * 6 + i] >= lo - 1e-9);
      CHECK(enh[ch * 6 + i] <= hi + 1e-9);
    }
  }
}

TEST_CASE("bin-count mismatch raises a dimension error") {
  T protos = T::zeros({4, 3});
  T dist = T::zeros({5, 2, 2});
  CHECK_THROWS_AS(enhance_features(protos, dist), Error);
}

TEST_CASE("adf_forward preserves spatial extents for every dilation") {
  for (Index dil : {1, 2, 4, 8, 16}) {
    AdfConfig cfg;
    cfg.channels = 32;
    cfg.depth_bins = 8;
    cfg.dilation = dil;
    auto w = random_weights(32, 8, 47);
    Rng rng(49);
    T f = T::uniform({32, 12, 12}, -1.0, 1.0, rng);
    const auto out = adf_forward(f, w, cfg);
    CHECK(out.features.shape() == Shape{32, 12, 12});
    CHECK(out.logits.shape() == Shape{8, 12, 12});
  }
  AdfConfig bad;
  bad.channels = 32;
  bad.depth_bins = 8;
  bad.dilation = 3;
  auto w = random_weights(32, 8, 47);
  CHECK_THROWS_AS(adf_forward(T::zeros({32, 12, 12}), w, bad), Error);
}

TEST_CASE("disabling prototype enhancement fuses [f_init, f_init]") {
  AdfConfig cfg;
  cfg.channels = 8;
  cfg.depth_bins = 4;
  cfg.dilation = 2;
  cfg.enable_prototype_enhancement = false;
  auto w = random_weights(8, 4, 53);
  Rng rng(55);
  T f = T::uniform({8, 5, 5}, -1.0, 1.0, rng);
  const auto out = adf_forward(f, w, cfg);
  // rebuild the expected path from the same weights
  T f_init = relu(add_channel_bias(
      conv2d(f, w.refine_w, {.stride = 1, .pad = 2, .dilation = 2, .groups = 1}),
      w.refine_b));
  T want = add_channel_bias(conv2d(concat_channels(f_init, f_init), w.fuse_w,
                                   {.stride = 1, .pad = 0, .dilation = 1, .groups = 1}),
                            w.fuse_b);
  for (Index i = 0; i < want.numel(); ++i) CHECK(out.features[i] == want[i]);
}

TEST_CASE("similarity-attention variant builds and runs") {
  AdfConfig cfg;
  cfg.channels = 8;
  cfg.depth_bins = 4;
  cfg.attention = AdfAttention::Similarity;
  Rng rng(57);
  ParameterStore<double> store;
  auto w = AdfWeights<double>::create(store, "adf", cfg, rng);
  CHECK(store.has("adf.sim.w"));
  T f = T::uniform({8, 4, 4}, -1.0, 1.0, rng);
  const auto out = adf_forward(f, w, cfg);
  CHECK(out.features.shape() == Shape{8, 4, 4});
}

TEST_CASE("adf_forward is differentiable end to end on a 16x6x6 input") {
  AdfConfig cfg;
  cfg.channels = 16;
  cfg.depth_bins = 6;
  cfg.dilation = 4;
  auto w = random_weights(16, 6, 59);
  Rng rng(61);
  T f = T::uniform({16, 6, 6}, -1.0, 1.0, rng);
  T readout = T::uniform({16, 6, 6}, -1.0, 1.0, rng);
  const double err = grad_check<double>(
      [&](const T& x) {
        const auto out = adf_forward(x, w, cfg);
        return add(sum_all(mul(out.features, readout)),
                   scalar_mul(sum_all(mul(out.logits, out.logits)),
                              1.0 / static_cast<double>(out.logits.numel())));
      },
      f);
  CHECK(err < 1e-4);
}
