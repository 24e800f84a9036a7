#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "qforest/data.hpp"
#include "qforest/errors.hpp"
#include "qforest/forest.hpp"
#include "qforest/rng.hpp"

namespace qforest {

// Normalized per-feature relevance. `uniform_fallback` is set when no split
// produced any gain (constant target) and the scores fell back to uniform.
struct ImportanceVector {
  std::vector<double> scores;
  bool uniform_fallback = false;
};

struct ImportanceConfig {
  std::size_t num_trees = 20;
  int tree_depth = 3;
  std::size_t max_rows = 50000;
  std::size_t num_bins = 64;
  std::size_t min_leaf = 8;
  std::uint64_t seed = 0x109e57;
};

namespace detail {

// Quantile bin edges for one feature over the subsample. Returns the sorted
// distinct cut points; values are binned with upper_bound.
inline std::vector<double> quantile_cuts(std::vector<double> values,
                                         std::size_t num_bins) {
  std::sort(values.begin(), values.end());
  std::vector<double> cuts;
  if (values.empty() || values.front() == values.back()) return cuts;
  for (std::size_t k = 1; k < num_bins; ++k) {
    double q = static_cast<double>(k) / static_cast<double>(num_bins);
    std::size_t pos = static_cast<std::size_t>(
        q * static_cast<double>(values.size() - 1));
    double v = values[pos];
    if (cuts.empty() || v > cuts.back()) cuts.push_back(v);
  }
  return cuts;
}

struct ImportanceProblem {
  std::size_t n_features = 0;
  std::size_t n_rows = 0;
  std::vector<std::vector<std::uint16_t>> bins;  // [feature][row]
  std::vector<std::size_t> bins_per_feature;
  // Regression: y per row. Classification: class index per row.
  std::vector<double> y;
  std::vector<int> cls;
  std::size_t n_classes = 0;
  bool classification = false;
};

// Greedy depth-limited CART growth; adds each chosen split's gain to
// `gain[feature]`. Gain is the impurity decrease: variance reduction for
// regression, Gini reduction for classification, both in the unnormalized
// sum-of-squares form so magnitudes are comparable across nodes.
inline void grow_tree(const ImportanceProblem& prob,
                      std::vector<std::size_t>& rows, int depth,
                      const ImportanceConfig& cfg, std::vector<double>& gain) {
  if (depth >= cfg.tree_depth) return;
  if (rows.size() < 2 * cfg.min_leaf) return;

  double best_gain = 1e-12;
  std::size_t best_feature = prob.n_features;
  std::size_t best_cut = 0;

  if (!prob.classification) {
    double sum_p = 0.0;
    for (std::size_t r : rows) sum_p += prob.y[r];
    double n_p = static_cast<double>(rows.size());
    double parent_score = sum_p * sum_p / n_p;
    std::vector<double> bin_sum;
    std::vector<std::size_t> bin_cnt;
    for (std::size_t f = 0; f < prob.n_features; ++f) {
      std::size_t nb = prob.bins_per_feature[f];
      if (nb < 2) continue;
      bin_sum.assign(nb, 0.0);
      bin_cnt.assign(nb, 0);
      const auto& fb = prob.bins[f];
      for (std::size_t r : rows) {
        bin_sum[fb[r]] += prob.y[r];
        ++bin_cnt[fb[r]];
      }
      double sum_l = 0.0;
      std::size_t cnt_l = 0;
      for (std::size_t b = 0; b + 1 < nb; ++b) {
        sum_l += bin_sum[b];
        cnt_l += bin_cnt[b];
        std::size_t cnt_r = rows.size() - cnt_l;
        if (cnt_l < cfg.min_leaf || cnt_r < cfg.min_leaf) continue;
        double sum_r = sum_p - sum_l;
        double score = sum_l * sum_l / static_cast<double>(cnt_l) +
                       sum_r * sum_r / static_cast<double>(cnt_r) -
                       parent_score;
        if (score > best_gain) {
          best_gain = score;
          best_feature = f;
          best_cut = b;
        }
      }
    }
  } else {
    const std::size_t nc = prob.n_classes;
    std::vector<double> parent_cnt(nc, 0.0);
    for (std::size_t r : rows) parent_cnt[prob.cls[r]] += 1.0;
    double n_p = static_cast<double>(rows.size());
    double parent_score = 0.0;
    for (double v : parent_cnt) parent_score += v * v;
    parent_score /= n_p;
    std::vector<double> bin_cls;
    std::vector<double> left(nc);
    for (std::size_t f = 0; f < prob.n_features; ++f) {
      std::size_t nb = prob.bins_per_feature[f];
      if (nb < 2) continue;
      bin_cls.assign(nb * nc, 0.0);
      const auto& fb = prob.bins[f];
      for (std::size_t r : rows) bin_cls[fb[r] * nc + prob.cls[r]] += 1.0;
      std::fill(left.begin(), left.end(), 0.0);
      double cnt_l = 0.0;
      for (std::size_t b = 0; b + 1 < nb; ++b) {
        for (std::size_t c = 0; c < nc; ++c) {
          left[c] += bin_cls[b * nc + c];
          cnt_l += bin_cls[b * nc + c];
        }
        double cnt_r = n_p - cnt_l;
        if (cnt_l < static_cast<double>(cfg.min_leaf) ||
            cnt_r < static_cast<double>(cfg.min_leaf))
          continue;
        double score_l = 0.0;
        double score_r = 0.0;
        for (std::size_t c = 0; c < nc; ++c) {
          double lc = left[c];
          double rc = parent_cnt[c] - lc;
          score_l += lc * lc;
          score_r += rc * rc;
        }
        double score = score_l / cnt_l + score_r / cnt_r - parent_score;
        if (score > best_gain) {
          best_gain = score;
          best_feature = f;
          best_cut = b;
        }
      }
    }
  }

  if (best_feature == prob.n_features) return;
  gain[best_feature] += best_gain;

  std::vector<std::size_t> left_rows;
  std::vector<std::size_t> right_rows;
  const auto& fb = prob.bins[best_feature];
  for (std::size_t r : rows) {
    if (fb[r] <= best_cut)
      left_rows.push_back(r);
    else
      right_rows.push_back(r);
  }
  grow_tree(prob, left_rows, depth + 1, cfg, gain);
  grow_tree(prob, right_rows, depth + 1, cfg, gain);
}

}  // namespace detail

// Estimates per-feature importance by training a small bagged ensemble of
// greedy depth-limited trees on (a subsample of) the data and accumulating
// each split's gain on the split feature. Scores are normalized to sum 1;
// if no split has positive gain (e.g. a constant target) the result is the
// uniform vector with `uniform_fallback` set.
inline ImportanceVector estimate_importance(const FeatureMatrix& data,
                                            const TargetVector& targets,
                                            ImportanceConfig cfg = {}) {
  const std::size_t n = data.n_rows();
  const std::size_t m = data.n_cols();
  if (n < 2) throw InputError("estimate_importance: need at least 2 rows");
  if (n != targets.size())
    throw DimensionError("estimate_importance: row/target count mismatch");
  if (cfg.num_bins < 2 || cfg.num_bins > 60000)
    throw ConfigError("estimate_importance: num_bins out of range");

  // Subsample rows once; all trees bootstrap from this pool.
  std::vector<std::size_t> pool;
  if (n > cfg.max_rows) {
    Rng rng(derive_seed(cfg.seed, 1));
    pool = rng.sample_without_replacement(n, cfg.max_rows);
  } else {
    pool.resize(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  }
  const std::size_t np = pool.size();

  detail::ImportanceProblem prob;
  prob.n_features = m;
  prob.n_rows = np;
  prob.classification = targets.task == TaskKind::classification;
  prob.bins.resize(m);
  prob.bins_per_feature.resize(m);
  for (std::size_t f = 0; f < m; ++f) {
    std::vector<double> vals(np);
    for (std::size_t i = 0; i < np; ++i) vals[i] = data.values(pool[i], f);
    std::vector<double> cuts = detail::quantile_cuts(vals, cfg.num_bins);
    prob.bins_per_feature[f] = cuts.size() + 1;
    prob.bins[f].resize(np);
    for (std::size_t i = 0; i < np; ++i) {
      auto it = std::upper_bound(cuts.begin(), cuts.end(), vals[i]);
      prob.bins[f][i] = static_cast<std::uint16_t>(it - cuts.begin());
    }
  }
  if (prob.classification) {
    prob.n_classes = std::max<std::size_t>(targets.num_classes, 1);
    prob.cls.resize(np);
    for (std::size_t i = 0; i < np; ++i) prob.cls[i] = targets.labels[pool[i]];
  } else {
    prob.y.resize(np);
    for (std::size_t i = 0; i < np; ++i) prob.y[i] = targets.values[pool[i]];
  }

  std::vector<double> gain(m, 0.0);
  for (std::size_t t = 0; t < cfg.num_trees; ++t) {
    Rng rng(derive_seed(cfg.seed, 100 + t));
    std::vector<std::size_t> rows(np);
    for (std::size_t i = 0; i < np; ++i)
      rows[i] = static_cast<std::size_t>(rng.uniform_below(np));
    detail::grow_tree(prob, rows, 0, cfg, gain);
  }

  ImportanceVector out;
  out.scores.assign(m, 0.0);
  double total = 0.0;
  for (double g : gain) total += g;
  if (total <= 0.0) {
    double u = 1.0 / static_cast<double>(m);
    out.scores.assign(m, u);
    out.uniform_fallback = true;
    return out;
  }
  for (std::size_t f = 0; f < m; ++f) out.scores[f] = gain[f] / total;
  return out;
}

enum class InitMode { random, data_aware };

inline const char* to_string(InitMode m) {
  return m == InitMode::random ? "random" : "data-aware";
}

struct InitConfig {
  InitMode mode = InitMode::data_aware;
  double scale = 1.0;      // multiplier on log-importance logits
  double noise_std = 0.1;  // per-node noise that breaks inter-node symmetry
  std::uint64_t seed = 0;

  void validate() const {
    if (!(scale > 0.0) || !std::isfinite(scale))
      throw ConfigError("init: scale must be positive");
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std))
      throw ConfigError("init: noise_std must be >= 0");
  }
};

// Initializes every node's attention logits. Random mode draws i.i.d.
// Normal(0, 1/sqrt(M)). Data-aware mode sets logit_i = scale *
// log(importance_i + 1e-6/M) plus per-node Gaussian noise, so the mapped
// attention starts concentrated on important features.
inline void init_attention(ForestParams& forest,
                           const ImportanceVector* importance,
                           const InitConfig& cfg) {
  cfg.validate();
  const std::size_t m = forest.num_features;
  if (cfg.mode == InitMode::data_aware) {
    if (importance == nullptr)
      throw ConfigError("init_attention: data-aware mode needs importance");
    if (importance->scores.size() != m)
      throw DimensionError("init_attention: importance length " +
                           std::to_string(importance->scores.size()) +
                           " != num_features " + std::to_string(m));
  }
  Rng rng(derive_seed(cfg.seed, 0xa11e));
  const double sigma = 1.0 / std::sqrt(static_cast<double>(m));
  const double floor = 1e-6 / static_cast<double>(m);
  for (TreeParams& tree : forest.trees) {
    for (GateParams& gate : tree.internal_nodes) {
      for (std::size_t i = 0; i < m; ++i) {
        if (cfg.mode == InitMode::random) {
          gate.attention_logits[i] = sigma * rng.normal();
        } else {
          double base = cfg.scale * std::log(importance->scores[i] + floor);
          double noise = cfg.noise_std > 0.0 ? cfg.noise_std * rng.normal() : 0.0;
          gate.attention_logits[i] = base + noise;
        }
      }
    }
  }
}

// Thresholds and leaf responses start at zero: with standardized inputs the
// initial gates sit near 0.5 and the initial prediction is the zero vector
// (the training-mean predictor once targets are standardized).
inline void init_thresholds_and_leaves(ForestParams& forest) {
  for (TreeParams& tree : forest.trees) {
    for (GateParams& gate : tree.internal_nodes) gate.threshold = 0.0;
    for (auto& q : tree.leaf_responses) std::fill(q.begin(), q.end(), 0.0);
  }
}

}  // namespace qforest
