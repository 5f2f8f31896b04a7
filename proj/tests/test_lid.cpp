#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "auxdepth/lid.hpp"

using namespace auxdepth;

TEST_CASE("edges hit the range ends exactly") {
  lid::Config cfg{2.5, 48.0, 17, lid::Formula::Standard};
  const auto edges = lid::bin_edges(cfg);
  CHECK(edges.size() == 18);
  CHECK(edges.front() == 2.5);
  CHECK(edges.back() == 48.0);
}

TEST_CASE("edge_1 for the (1, 65, 64) config") {
  lid::Config cfg{1.0, 65.0, 64, lid::Formula::Standard};
  const auto edges = lid::bin_edges(cfg);
  // 1 + 64 * (1*2) / (64*65)
  CHECK(edges[1] == doctest::Approx(1.0 + 64.0 * 2.0 / 4160.0).epsilon(1e-15));
  CHECK(edges[1] == doctest::Approx(1.0307692307692308).epsilon(1e-12));
}

TEST_CASE("widths grow in arithmetic progression") {
  lid::Config cfg{1.0, 65.0, 64, lid::Formula::Standard};
  const auto edges = lid::bin_edges(cfg);
  const double expect = 2.0 * (65.0 - 1.0) / (64.0 * 65.0);
  for (std::size_t i = 0; i + 2 < edges.size(); ++i) {
    const double w0 = edges[i + 1] - edges[i];
    const double w1 = edges[i + 2] - edges[i + 1];
    CHECK(std::abs((w1 - w0) - expect) / expect < 1e-9);
  }
  // closer is finer
  CHECK(edges[1] - edges[0] < edges[64] - edges[63]);
}

TEST_CASE("strictly increasing edges for random configs") {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    lid::Config cfg;
    cfg.d_min = rng.uniform(0.1, 5.0);
    cfg.d_max = cfg.d_min + rng.uniform(1.0, 100.0);
    cfg.bins = 2 + static_cast<int>(rng.next_below(100));
    const auto edges = lid::bin_edges(cfg);
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) CHECK(edges[i] < edges[i + 1]);
    CHECK(edges[1] - edges[0] < edges[edges.size() - 1] - edges[edges.size() - 2]);
  }
}

TEST_CASE("depth_to_bin boundary and clamp cases") {
  lid::Config cfg{1.0, 65.0, 64, lid::Formula::Standard};
  CHECK(lid::depth_to_bin(cfg.d_min, cfg) == 0);
  CHECK(lid::depth_to_bin(cfg.d_max + 10.0, cfg) == 63);
  CHECK(lid::depth_to_bin(cfg.d_min - 5.0, cfg) == 0);
  CHECK(lid::depth_to_bin(cfg.d_max, cfg) == 63);
}

TEST_CASE("closed-form index equals linear scan on 10k random depths") {
  Rng rng(9);
  lid::Config cfg{1.0, 65.0, 64, lid::Formula::Standard};
  const auto edges = lid::bin_edges(cfg);
  auto scan = [&](double d) {
    if (d < edges.front()) return 0;
    for (int i = 0; i < cfg.bins; ++i)
      if (d >= edges[static_cast<std::size_t>(i)] && d < edges[static_cast<std::size_t>(i) + 1])
        return i;
    return cfg.bins - 1;
  };
  for (int t = 0; t < 10000; ++t) {
    const double d = rng.uniform(-2.0, 70.0);
    CHECK(lid::depth_to_bin(d, cfg) == scan(d));
  }
  // exercise exact edge values too
  for (int i = 0; i <= cfg.bins; ++i) {
    const double e = edges[static_cast<std::size_t>(i)];
    CHECK(lid::depth_to_bin(e, cfg) == scan(e));
  }
}

TEST_CASE("bin_center hand case and round trip") {
  CHECK_THROWS_AS(lid::bin_edges(lid::Config{0.0, 7.0, 2}), Error);
  lid::Config cfg{1.0, 7.0, 2, lid::Formula::Standard};
  // edges {1, 3, 7}: centers 2 and 5
  CHECK(lid::bin_center(0, cfg) == doctest::Approx(2.0));
  CHECK(lid::bin_center(1, cfg) == doctest::Approx(5.0));
  CHECK_THROWS_AS(lid::bin_center(2, cfg), Error);
  CHECK_THROWS_AS(lid::bin_center(-1, cfg), Error);

  Rng rng(13);
  for (int t = 0; t < 20; ++t) {
    lid::Config rc;
    rc.d_min = rng.uniform(0.5, 3.0);
    rc.d_max = rc.d_min + rng.uniform(2.0, 80.0);
    rc.bins = 2 + static_cast<int>(rng.next_below(64));
    double prev = -1e30;
    for (int i = 0; i < rc.bins; ++i) {
      const double c = lid::bin_center(i, rc);
      CHECK(lid::depth_to_bin(c, rc) == i);
      CHECK(c > prev);
      prev = c;
    }
  }
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(lid::bin_edges(lid::Config{5.0, 2.0, 8}), Error);
  CHECK_THROWS_AS(lid::bin_edges(lid::Config{1.0, 65.0, 1}), Error);
  try {
    lid::bin_edges(lid::Config{5.0, 2.0, 8});
  } catch (const Error& e) {
    CHECK(e.kind == Error::Kind::Config);
  }
}

TEST_CASE("printed piecewise formula is preserved behind the config switch") {
  lid::Config cfg{1.0, 65.0, 64, lid::Formula::PaperEq2};
  const auto edges = lid::bin_edges(cfg);
  CHECK(edges[0] == 1.0);
  const double span = 64.0;
  // i < sqrt(D): (i+1)^2 / D
  CHECK(edges[1] == doctest::Approx(1.0 + span * 1.0 / 64.0));
  CHECK(edges[2] == doctest::Approx(1.0 + span * 4.0 / 64.0));
  CHECK(edges[8] == doctest::Approx(1.0 + span * 64.0 / 64.0));
  // i >= sqrt(D): (i+1) / D -- the printed form drops discontinuously here
  CHECK(edges[9] == doctest::Approx(1.0 + span * 9.0 / 64.0));
  CHECK(edges[9] < edges[8]);
  CHECK(lid::bin_center(0, cfg) > 0.0);  // centers stay defined for the curio form
}
