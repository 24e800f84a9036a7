#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "qforest/attention.hpp"
#include "qforest/rng.hpp"

using namespace qforest;

namespace {

const AttentionKind kKinds[] = {AttentionKind::softmax,
                                AttentionKind::sparsemax,
                                AttentionKind::entmax15};

std::vector<double> random_logits(Rng& rng, std::size_t m, double scale) {
  std::vector<double> z(m);
  for (double& v : z) v = scale * rng.normal();
  return z;
}

}  // namespace

TEST_CASE("map_forward: uniform logits give the uniform point") {
  for (AttentionKind kind : kKinds) {
    for (std::size_t m : {1u, 2u, 7u}) {
      std::vector<double> z(m, 0.37);
      SimplexPoint p = map_forward(AttentionMapper{kind}, z);
      for (double w : p.weights)
        CHECK(w == Catch::Approx(1.0 / static_cast<double>(m)).margin(1e-12));
      CHECK(p.support_size == m);
    }
  }
}

TEST_CASE("sparsemax: [1, 0] projects to the vertex [1, 0]") {
  SimplexPoint p = map_forward(AttentionMapper{AttentionKind::sparsemax},
                               {1.0, 0.0});
  CHECK(p.weights[0] == Catch::Approx(1.0).margin(1e-14));
  CHECK(p.weights[1] == 0.0);
  CHECK(p.support_size == 1);
}

TEST_CASE("entmax15 matches the bisection oracle") {
  Rng rng(101);
  for (int rep = 0; rep < 200; ++rep) {
    std::size_t m = 2 + rng.uniform_below(10);
    std::vector<double> z = random_logits(rng, m, rep % 3 == 0 ? 5.0 : 1.0);
    SimplexPoint p = map_forward(AttentionMapper{AttentionKind::entmax15}, z);
    std::vector<double> ref = oracle::entmax15_bisect(z);
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      CHECK(std::fabs(p.weights[i] - ref[i]) < 1e-8);
      sum += p.weights[i];
    }
    CHECK(std::fabs(sum - 1.0) < 1e-10);
  }
}

TEST_CASE("sparsemax matches its bisection oracle") {
  Rng rng(102);
  for (int rep = 0; rep < 200; ++rep) {
    std::size_t m = 2 + rng.uniform_below(10);
    std::vector<double> z = random_logits(rng, m, 2.0);
    SimplexPoint p = map_forward(AttentionMapper{AttentionKind::sparsemax}, z);
    std::vector<double> ref = oracle::sparsemax_bisect(z);
    for (std::size_t i = 0; i < m; ++i)
      CHECK(std::fabs(p.weights[i] - ref[i]) < 1e-8);
  }
}

TEST_CASE("map_forward: simplex membership, shift invariance, permutation "
          "equivariance") {
  Rng rng(103);
  for (AttentionKind kind : kKinds) {
    AttentionMapper mapper{kind};
    for (int rep = 0; rep < 300; ++rep) {
      std::size_t m = 1 + rng.uniform_below(16);
      std::vector<double> z = random_logits(rng, m, 3.0);
      SimplexPoint p = map_forward(mapper, z);

      double sum = 0.0;
      for (double w : p.weights) {
        REQUIRE(w >= 0.0);
        sum += w;
      }
      REQUIRE(std::fabs(sum - 1.0) < 1e-10);
      std::size_t positives = 0;
      for (double w : p.weights)
        if (w > 0.0) ++positives;
      REQUIRE(p.support_size == positives);

      double c = 10.0 * rng.normal();
      std::vector<double> shifted = z;
      for (double& v : shifted) v += c;
      SimplexPoint ps = map_forward(mapper, shifted);
      for (std::size_t i = 0; i < m; ++i)
        REQUIRE(std::fabs(ps.weights[i] - p.weights[i]) < 1e-10);

      std::vector<std::size_t> perm(m);
      for (std::size_t i = 0; i < m; ++i) perm[i] = i;
      rng.shuffle(perm);
      std::vector<double> zp(m);
      for (std::size_t i = 0; i < m; ++i) zp[i] = z[perm[i]];
      SimplexPoint pp = map_forward(mapper, zp);
      for (std::size_t i = 0; i < m; ++i)
        REQUIRE(std::fabs(pp.weights[i] - p.weights[perm[i]]) < 1e-10);
    }
  }
}

TEST_CASE("support nesting: sparsemax support within entmax15 support, "
          "softmax always full") {
  Rng rng(104);
  for (int rep = 0; rep < 1200; ++rep) {
    std::size_t m = 2 + rng.uniform_below(12);
    std::vector<double> z = random_logits(rng, m, 2.5);
    SimplexPoint sp = map_forward(AttentionMapper{AttentionKind::sparsemax}, z);
    SimplexPoint en = map_forward(AttentionMapper{AttentionKind::entmax15}, z);
    SimplexPoint so = map_forward(AttentionMapper{AttentionKind::softmax}, z);
    REQUIRE(so.support_size == m);
    for (std::size_t i = 0; i < m; ++i)
      if (sp.weights[i] > 0.0) REQUIRE(en.weights[i] > 0.0);
  }
}

TEST_CASE("map_backward: constant upstream is annihilated") {
  Rng rng(105);
  for (AttentionKind kind : kKinds) {
    AttentionMapper mapper{kind};
    std::vector<double> z = random_logits(rng, 6, 1.5);
    SimplexPoint p = map_forward(mapper, z);
    std::vector<double> ones(6, 3.7);
    std::vector<double> out = map_backward(mapper, p, ones);
    for (double v : out) CHECK(std::fabs(v) < 1e-12);
  }
}

TEST_CASE("map_backward: softmax at the uniform point, M = 2") {
  AttentionMapper mapper{AttentionKind::softmax};
  SimplexPoint p = map_forward(mapper, {0.0, 0.0});
  std::vector<double> out = map_backward(mapper, p, {1.0, 0.0});
  CHECK(out[0] == Catch::Approx(0.25).margin(1e-14));
  CHECK(out[1] == Catch::Approx(-0.25).margin(1e-14));
}

TEST_CASE("map_backward matches finite differences of map_forward") {
  Rng rng(106);
  for (AttentionKind kind : kKinds) {
    AttentionMapper mapper{kind};
    for (int rep = 0; rep < 40; ++rep) {
      std::size_t m = 2 + rng.uniform_below(8);
      std::vector<double> z = random_logits(rng, m, 1.0);
      std::vector<double> up = random_logits(rng, m, 1.0);
      SimplexPoint p = map_forward(mapper, z);
      std::vector<double> jvp = map_backward(mapper, p, up);
      const double h = 1e-6;
      for (std::size_t k = 0; k < m; ++k) {
        double fd = oracle::central_diff(z[k], h, [&] {
          SimplexPoint q = map_forward(mapper, z);
          double dot = 0.0;
          for (std::size_t i = 0; i < m; ++i) dot += up[i] * q.weights[i];
          return dot;
        });
        REQUIRE(oracle::close_rel(jvp[k], fd, 1e-5, 1e-7));
      }
    }
  }
}

TEST_CASE("map_backward: Jacobian is symmetric and annihilates constants") {
  Rng rng(107);
  for (AttentionKind kind : kKinds) {
    AttentionMapper mapper{kind};
    std::size_t m = 5;
    std::vector<double> z = random_logits(rng, m, 1.2);
    SimplexPoint p = map_forward(mapper, z);
    // Column i of J via basis-vector products.
    std::vector<std::vector<double>> cols(m);
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<double> e(m, 0.0);
      e[i] = 1.0;
      cols[i] = map_backward(mapper, p, e);
    }
    for (std::size_t i = 0; i < m; ++i) {
      double row_sum = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        REQUIRE(std::fabs(cols[i][j] - cols[j][i]) < 1e-12);
        row_sum += cols[j][i];
      }
      REQUIRE(std::fabs(row_sum) < 1e-12);
    }
  }
}

TEST_CASE("sparsity_fraction on one-hot, uniform and mixed sets") {
  std::vector<SimplexPoint> onehots;
  for (int i = 0; i < 4; ++i) {
    SimplexPoint p;
    p.weights.assign(10, 0.0);
    p.weights[i] = 1.0;
    p.support_size = 1;
    onehots.push_back(p);
  }
  CHECK(sparsity_fraction(onehots, 1e-3) == Catch::Approx(0.9));

  std::vector<SimplexPoint> uniforms(3);
  for (auto& p : uniforms) {
    p.weights.assign(10, 0.1);
    p.support_size = 10;
  }
  CHECK(sparsity_fraction(uniforms, 1e-3) == 0.0);

  // Mixed set against a direct count.
  Rng rng(108);
  std::vector<SimplexPoint> mixed;
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> z(8);
    for (double& v : z) v = 2.0 * rng.normal();
    mixed.push_back(map_forward(AttentionMapper{AttentionKind::entmax15}, z));
  }
  double threshold = 0.05;
  std::size_t below = 0, total = 0;
  for (const auto& p : mixed)
    for (double w : p.weights) {
      if (w < threshold) ++below;
      ++total;
    }
  CHECK(sparsity_fraction(mixed, threshold) ==
        Catch::Approx(static_cast<double>(below) / total));
}

TEST_CASE("attention error paths") {
  CHECK_THROWS_AS(map_forward(AttentionMapper{}, {}), DimensionError);
  CHECK_THROWS_AS(
      map_forward(AttentionMapper{}, {1.0, std::nan("")}), NumericError);
  SimplexPoint degenerate;
  degenerate.weights.assign(3, 0.0);
  CHECK_THROWS_AS(map_backward(AttentionMapper{}, degenerate, {1.0, 1.0, 1.0}),
                  InputError);
  SimplexPoint ok = map_forward(AttentionMapper{}, {0.0, 1.0});
  CHECK_THROWS_AS(map_backward(AttentionMapper{}, ok, {1.0}), DimensionError);
  CHECK_THROWS_AS(sparsity_fraction({}, 0.5), InputError);
  CHECK_THROWS_AS(sparsity_fraction({ok}, -0.1), InputError);
}
