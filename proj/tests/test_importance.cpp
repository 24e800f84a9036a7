#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "qforest/importance.hpp"
#include "qforest/trainer.hpp"
#include "synthetic.hpp"

using namespace qforest;

TEST_CASE("estimate_importance: constant target falls back to uniform") {
  Rng rng(501);
  Dataset d = synthetic::gaussian_features(200, 6, rng);
  for (double& y : d.targets.values) y = 3.5;
  ImportanceVector imp = estimate_importance(d.features, d.targets);
  CHECK(imp.uniform_fallback);
  for (double s : imp.scores)
    CHECK(s == Catch::Approx(1.0 / 6.0).margin(1e-15));
}

TEST_CASE("estimate_importance: a single explanatory feature dominates") {
  Dataset d = synthetic::single_feature_task(5000, 20, 77);
  ImportanceVector imp = estimate_importance(d.features, d.targets);
  CHECK_FALSE(imp.uniform_fallback);
  CHECK(imp.scores[3] > 0.9);
  double sum = 0.0;
  for (double s : imp.scores) {
    CHECK(s >= 0.0);
    sum += s;
  }
  CHECK(std::fabs(sum - 1.0) < 1e-12);
}

TEST_CASE("estimate_importance: classification splits on the signal feature") {
  Dataset d = synthetic::sign_classification_task(3000, 8, 78);
  ImportanceVector imp = estimate_importance(d.features, d.targets);
  CHECK(imp.scores[0] > 0.5);
}

TEST_CASE("estimate_importance is deterministic given the seed") {
  Dataset d = synthetic::sparse_nonlinear_task(1500, 10, 79);
  ImportanceConfig cfg;
  cfg.seed = 99;
  ImportanceVector a = estimate_importance(d.features, d.targets, cfg);
  ImportanceVector b = estimate_importance(d.features, d.targets, cfg);
  CHECK(a.scores == b.scores);
}

TEST_CASE("estimate_importance rejects degenerate inputs") {
  Rng rng(502);
  Dataset d = synthetic::gaussian_features(1, 3, rng);
  CHECK_THROWS_AS(estimate_importance(d.features, d.targets), InputError);
}

TEST_CASE("init_attention: uniform importance maps to uniform attention") {
  ForestParams f = make_forest(2, 3, 5, 1, AttentionKind::entmax15);
  ImportanceVector imp;
  imp.scores.assign(5, 0.2);
  InitConfig cfg;
  cfg.mode = InitMode::data_aware;
  cfg.noise_std = 0.0;
  init_attention(f, &imp, cfg);
  for (const auto& tree : f.trees)
    for (const auto& gate : tree.internal_nodes) {
      SimplexPoint p = map_forward(f.mapper(), gate.attention_logits);
      for (double w : p.weights)
        CHECK(w == Catch::Approx(0.2).margin(1e-12));
    }
}

TEST_CASE("init_attention: one-hot importance puts the argmax everywhere") {
  ForestParams f = make_forest(3, 2, 6, 1, AttentionKind::entmax15);
  ImportanceVector imp;
  imp.scores.assign(6, 0.0);
  imp.scores[4] = 1.0;
  InitConfig cfg;
  cfg.mode = InitMode::data_aware;
  cfg.noise_std = 0.0;
  init_attention(f, &imp, cfg);
  for (const auto& tree : f.trees)
    for (const auto& gate : tree.internal_nodes) {
      SimplexPoint p = map_forward(f.mapper(), gate.attention_logits);
      std::size_t arg = 0;
      for (std::size_t i = 1; i < 6; ++i)
        if (p.weights[i] > p.weights[arg]) arg = i;
      CHECK(arg == 4);
    }
}

TEST_CASE("init_attention: argmax alignment and monotonicity at zero noise") {
  Rng rng(503);
  ImportanceVector imp;
  imp.scores = {0.05, 0.3, 0.02, 0.4, 0.08, 0.15};
  ForestParams f = make_forest(2, 3, 6, 1, AttentionKind::entmax15);
  InitConfig cfg;
  cfg.mode = InitMode::data_aware;
  cfg.noise_std = 0.0;
  init_attention(f, &imp, cfg);
  for (const auto& tree : f.trees)
    for (const auto& gate : tree.internal_nodes) {
      SimplexPoint p = map_forward(f.mapper(), gate.attention_logits);
      std::size_t arg = 0;
      for (std::size_t i = 1; i < 6; ++i)
        if (p.weights[i] > p.weights[arg]) arg = i;
      CHECK(arg == 3);  // importance argmax
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j)
          if (imp.scores[i] > imp.scores[j])
            CHECK(p.weights[i] >= p.weights[j]);
    }
}

TEST_CASE("init_attention is bit-reproducible for a fixed seed") {
  ForestParams a = make_forest(2, 3, 5, 1, AttentionKind::entmax15);
  ForestParams b = make_forest(2, 3, 5, 1, AttentionKind::entmax15);
  InitConfig cfg;
  cfg.mode = InitMode::random;
  cfg.seed = 1234;
  init_attention(a, nullptr, cfg);
  init_attention(b, nullptr, cfg);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < a.trees[h].num_internal(); ++i)
      CHECK(a.trees[h].internal_nodes[i].attention_logits ==
            b.trees[h].internal_nodes[i].attention_logits);

  InitConfig other = cfg;
  other.seed = 1235;
  ForestParams c = make_forest(2, 3, 5, 1, AttentionKind::entmax15);
  init_attention(c, nullptr, other);
  CHECK(c.trees[0].internal_nodes[0].attention_logits !=
        a.trees[0].internal_nodes[0].attention_logits);
}

TEST_CASE("init_attention error paths") {
  ForestParams f = make_forest(1, 2, 4, 1, AttentionKind::entmax15);
  InitConfig cfg;
  cfg.mode = InitMode::data_aware;
  CHECK_THROWS_AS(init_attention(f, nullptr, cfg), ConfigError);
  ImportanceVector wrong;
  wrong.scores.assign(3, 1.0 / 3.0);
  CHECK_THROWS_AS(init_attention(f, &wrong, cfg), DimensionError);
}

TEST_CASE("init_thresholds_and_leaves: zero output, centered gates") {
  Rng rng(504);
  ForestParams f = make_forest(4, 3, 5, 2, AttentionKind::entmax15);
  InitConfig cfg;
  cfg.mode = InitMode::random;
  cfg.seed = 9;
  init_attention(f, nullptr, cfg);
  init_thresholds_and_leaves(f);

  Matrix x = oracle::random_matrix(rng, 12, 5);
  Matrix out = forest_forward(f, x, f.mapper());
  for (double v : out.data()) CHECK(v == 0.0);

  // Zero-mean input goes through a zero threshold: the gate sits at 0.5.
  std::vector<double> zero(5, 0.0);
  for (const auto& gate : f.trees[0].internal_nodes)
    CHECK(gate_forward(gate, zero, f.mapper()) == 0.5);
}

TEST_CASE("data-aware init starts sparser than random init") {
  Dataset d = synthetic::single_feature_task(2000, 20, 81);
  ImportanceVector imp = estimate_importance(d.features, d.targets);
  double aware_total = 0.0;
  double random_total = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ForestParams aware = make_forest(8, 3, 20, 1, AttentionKind::entmax15);
    InitConfig ac;
    ac.mode = InitMode::data_aware;
    ac.seed = seed;
    init_attention(aware, &imp, ac);
    aware_total += attention_sparsity(aware);

    ForestParams rnd = make_forest(8, 3, 20, 1, AttentionKind::entmax15);
    InitConfig rc;
    rc.mode = InitMode::random;
    rc.seed = seed;
    init_attention(rnd, nullptr, rc);
    random_total += attention_sparsity(rnd);
  }
  CHECK(aware_total / 5.0 > random_total / 5.0);
}
