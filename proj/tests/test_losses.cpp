#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "auxdepth/grad_check.hpp"
#include "auxdepth/losses.hpp"

using namespace auxdepth;
using T = Tensor<double>;

TEST_CASE("focal loss: perfect positives vanish") {
  T p = T::filled({3, 1}, 1.0 - 1e-7);
  const std::vector<int> targets = {0, 0, 0};
  CHECK(focal_loss(p, targets, 0.25, 2.0).value() <= 1e-12);
}

TEST_CASE("focal loss: single positive closed form") {
  T p = T::filled({1, 1}, 0.5);
  const std::vector<int> targets = {0};
  const double got = focal_loss(p, targets, 0.25, 2.0).value();
  CHECK(got == doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-12));
  CHECK(got == doctest::Approx(0.0433216987849966).epsilon(1e-10));
}

TEST_CASE("focal loss with gamma=0 alpha=1 equals cross-entropy") {
  Rng rng(5);
  T p = T::uniform({12, 2}, 0.1, 0.9, rng);
  std::vector<int> targets(12);
  int n_pos = 0;
  for (int i = 0; i < 12; ++i) {
    const auto r = rng.next_below(3);
    targets[static_cast<std::size_t>(i)] = r == 0 ? kNegativeTarget : static_cast<int>(r) - 1;
    if (targets[static_cast<std::size_t>(i)] >= 0) ++n_pos;
  }
  double ce = 0.0;  // independent cross-entropy accumulation
  for (int i = 0; i < 12; ++i)
    for (int k = 0; k < 2; ++k) {
      const double pi = p[i * 2 + k];
      if (targets[static_cast<std::size_t>(i)] == k)
        ce += -std::log(pi);
      else
        ce += -std::log(1.0 - pi);
    }
  ce /= n_pos > 0 ? n_pos : 1;
  CHECK(focal_loss(p, targets, 1.0, 0.0).value() == doctest::Approx(ce).epsilon(1e-10));
}

TEST_CASE("focal loss: ignored anchors contribute nothing") {
  T p = T::from({2, 1}, {0.5, 0.9});
  const double only_first = focal_loss(p, {0, kIgnoreTarget}, 0.25, 2.0).value();
  T p1 = T::from({1, 1}, {0.5});
  CHECK(only_first == doctest::Approx(focal_loss(p1, {0}, 0.25, 2.0).value()));
}

TEST_CASE("focal loss gradient matches finite differences") {
  Rng rng(7);
  const std::vector<int> targets = {0, kNegativeTarget, 1, kIgnoreTarget, kNegativeTarget};
  T p = T::uniform({5, 2}, 0.15, 0.85, rng);
  const double err = grad_check<double>(
      [&](const T& t) { return focal_loss(t, targets, 0.25, 2.0); }, p);
  CHECK(err < 1e-4);
  const double err0 = grad_check<double>(
      [&](const T& t) { return focal_loss(t, targets, 1.0, 0.0); }, p);
  CHECK(err0 < 1e-4);
}

TEST_CASE("smooth L1 closed forms") {
  SUBCASE("zero at pred == target") {
    T a = T::from({2, 2}, {1.0, -2.0, 0.5, 3.0});
    CHECK(smooth_l1(a, a, 1.0).value() == 0.0);
  }
  SUBCASE("boundary value x = beta") {
    T pred = T::from({1, 1}, {1.0});
    T target = T::from({1, 1}, {0.0});
    CHECK(smooth_l1(pred, target, 1.0).value() == doctest::Approx(0.5));
  }
  SUBCASE("linear branch x = 2, beta = 1") {
    T pred = T::from({1, 1}, {2.0});
    T target = T::from({1, 1}, {0.0});
    CHECK(smooth_l1(pred, target, 1.0).value() == doctest::Approx(1.5));
  }
}

TEST_CASE("smooth L1 is C1 at the branch point") {
  const double beta = 1.0;
  const double eps = 1e-9;
  T target = T::from({1, 1}, {0.0});
  const double below = smooth_l1(T::from({1, 1}, {beta - eps}), target, beta).value();
  const double above = smooth_l1(T::from({1, 1}, {beta + eps}), target, beta).value();
  CHECK(std::abs(above - below) < 1e-8);
  // derivative from both branches at |x| = beta: x/beta = 1 = sign(x)
  T p1 = T::from({1, 1}, {beta - 1e-6}, true);
  T p2 = T::from({1, 1}, {beta + 1e-6}, true);
  double g1, g2;
  {
    Tape<double> tape;
    auto l = smooth_l1(p1, target, beta);
    tape.backward(l);
    g1 = p1.grad()[0];
  }
  {
    Tape<double> tape;
    auto l = smooth_l1(p2, target, beta);
    tape.backward(l);
    g2 = p2.grad()[0];
  }
  CHECK(std::abs(g1 - g2) < 1e-5);
}

TEST_CASE("smooth L1 averages over rows and sums over dims") {
  T pred = T::from({2, 3}, {1.0, 0.0, 0.0, 0.0, 2.0, 0.0});
  T target = T::zeros({2, 3});
  // row sums: 0.5 and 1.5, mean = 1.0
  CHECK(smooth_l1(pred, target, 1.0).value() == doctest::Approx(1.0));
}

TEST_CASE("smooth L1 gradient matches finite differences") {
  Rng rng(11);
  T target = T::uniform({4, 11}, -1.0, 1.0, rng);
  T pred = T::uniform({4, 11}, -1.0, 1.0, rng);
  const double err = grad_check<double>(
      [&](const T& t) { return smooth_l1(t, target, 1.0); }, pred);
  CHECK(err < 1e-4);
}

TEST_CASE("depth loss: confident prediction vanishes") {
  // two bins; logits chosen so softmax gives (1-1e-7, 1e-7)
  const double p = 1.0 - 1e-7;
  T logits = T::from({2, 1}, {std::log(p), std::log(1.0 - p)});
  const auto res = depth_loss(logits, {0}, 2.0);
  CHECK(res.supervised);
  CHECK(res.loss.value() <= 1e-12);
}

TEST_CASE("depth loss: single pixel closed form") {
  T logits = T::zeros({2, 1});  // softmax -> (0.5, 0.5)
  const auto res = depth_loss(logits, {0}, 2.0);
  CHECK(res.loss.value() == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-12));
  CHECK(res.loss.value() == doctest::Approx(0.1732867951399863).epsilon(1e-10));
}

TEST_CASE("depth loss with gamma=0 equals per-pixel cross-entropy") {
  Rng rng(13);
  T logits = T::uniform({4, 6}, -2.0, 2.0, rng);
  std::vector<int> bins = {0, 3, kNoDepthTarget, 1, 2, kNoDepthTarget};
  const auto res = depth_loss(logits, bins, 0.0);
  double ce = 0.0;
  int n = 0;
  for (int i = 0; i < 6; ++i) {
    if (bins[static_cast<std::size_t>(i)] == kNoDepthTarget) continue;
    double mx = -1e30, denom = 0.0;
    for (int d = 0; d < 4; ++d) mx = std::max(mx, logits[d * 6 + i]);
    for (int d = 0; d < 4; ++d) denom += std::exp(logits[d * 6 + i] - mx);
    const double pb = std::exp(logits[bins[static_cast<std::size_t>(i)] * 6 + i] - mx) / denom;
    ce += -std::log(pb);
    ++n;
  }
  CHECK(res.loss.value() == doctest::Approx(ce / n).epsilon(1e-10));
}

TEST_CASE("depth loss decreases monotonically in the gt-bin probability") {
  double prev = 1e30;
  for (double p = 0.05; p < 0.99; p += 0.05) {
    T logits = T::from({2, 1}, {std::log(p), std::log(1.0 - p)});
    const double v = depth_loss(logits, {0}, 2.0).loss.value();
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("depth loss: all-sentinel map returns zero with the unsupervised flag") {
  T logits = T::zeros({3, 4});
  const auto res = depth_loss(logits, {kNoDepthTarget, kNoDepthTarget, kNoDepthTarget,
                                       kNoDepthTarget},
                              2.0);
  CHECK_FALSE(res.supervised);
  CHECK(res.loss.value() == 0.0);
}

TEST_CASE("depth loss gradient matches finite differences") {
  Rng rng(17);
  T logits = T::uniform({5, 8}, -1.5, 1.5, rng);
  std::vector<int> bins = {0, 4, 2, kNoDepthTarget, 1, 3, 2, 0};
  CHECK(grad_check<double>([&](const T& t) { return depth_loss(t, bins, 2.0).loss; },
                           logits) < 1e-4);
  CHECK(grad_check<double>([&](const T& t) { return depth_loss(t, bins, 0.0).loss; },
                           logits) < 1e-4);
}

TEST_CASE("total loss arithmetic") {
  LossWeights w;
  SUBCASE("zero lambdas reduce to the classification term") {
    w.lambda_reg = 0.0;
    w.lambda_depth = 0.0;
    const auto t = total_loss(T::scalar(1.25), T::scalar(9.0), T::scalar(4.0), w);
    CHECK(t.value() == 1.25);
  }
  SUBCASE("components (1,2,3) with unit lambdas give 6") {
    w.lambda_reg = 1.0;
    w.lambda_depth = 1.0;
    const auto t = total_loss(T::scalar(1.0), T::scalar(2.0), T::scalar(3.0), w);
    CHECK(t.value() == doctest::Approx(6.0));
  }
}

TEST_CASE("total loss gradient composes the scaled component gradients") {
  Rng rng(19);
  LossWeights w;
  w.lambda_reg = 0.7;
  w.lambda_depth = 1.3;
  T x = T::uniform({6}, 0.2, 0.8, rng);
  auto f = [&](const T& t) {
    // cls, reg, depth all functions of the same tensor
    T cls = sum_all(mul(t, t));
    T reg = sum_all(t);
    T depth = mean_all(mul(t, mul(t, t)));
    return total_loss(cls, reg, depth, w);
  };
  CHECK(grad_check<double>(f, x) < 1e-4);

  // and the gradient is the lambda-weighted sum of the per-component gradients
  T leaf = T::from({6}, x.values(), true);
  Tape<double> tape;
  T loss = f(leaf);
  tape.backward(loss);
  for (Index i = 0; i < 6; ++i) {
    const double xi = leaf[i];
    const double want = 2.0 * xi + w.lambda_reg * 1.0 + w.lambda_depth * 3.0 * xi * xi / 6.0;
    CHECK(leaf.grad()[static_cast<std::size_t>(i)] == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("component losses are nonnegative on random inputs") {
  Rng rng(23);
  for (int t = 0; t < 20; ++t) {
    T p = T::uniform({6, 2}, 0.01, 0.99, rng);
    std::vector<int> targets(6);
    for (auto& v : targets) v = static_cast<int>(rng.next_below(4)) - 2;
    CHECK(focal_loss(p, targets, 0.25, 2.0).value() >= 0.0);
    T a = T::uniform({3, 4}, -2.0, 2.0, rng);
    T b = T::uniform({3, 4}, -2.0, 2.0, rng);
    CHECK(smooth_l1(a, b, 1.0).value() >= 0.0);
    T logits = T::uniform({4, 5}, -3.0, 3.0, rng);
    std::vector<int> bins(5);
    for (auto& v : bins) v = static_cast<int>(rng.next_below(5)) - 1;
    CHECK(depth_loss(logits, bins, 2.0).loss.value() >= 0.0);
  }
}
