#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <thread>
#include <vector>

#include "qforest/attention.hpp"
#include "qforest/errors.hpp"
#include "qforest/matrix.hpp"

namespace qforest {

// One soft routing decision: g = sigmoid(<eps(attention_logits), x> - threshold).
// g is the probability of descending to the RIGHT child; the left child
// receives 1 - g. That convention is fixed across the library.
struct GateParams {
  std::vector<double> attention_logits;  // length M, pre-normalization
  double threshold = 0.0;
};

// A complete binary soft tree. Internal nodes are stored in breadth-first
// order (root = 0, children of i at 2i+1 / 2i+2); leaf j sits below the
// conceptual slot (2^depth - 1) + j, ordered left to right.
struct TreeParams {
  int depth = 0;
  std::vector<GateParams> internal_nodes;           // 2^depth - 1
  std::vector<std::vector<double>> leaf_responses;  // 2^depth vectors, length C

  std::size_t num_internal() const { return internal_nodes.size(); }
  std::size_t num_leaves() const { return leaf_responses.size(); }
};

struct ForestParams {
  std::vector<TreeParams> trees;
  std::size_t num_features = 0;  // M
  std::size_t output_dim = 0;    // C
  AttentionKind attention_kind = AttentionKind::entmax15;

  std::size_t num_trees() const { return trees.size(); }
  int depth() const { return trees.empty() ? 0 : trees.front().depth; }
  AttentionMapper mapper() const { return AttentionMapper{attention_kind}; }

  void validate() const;
};

// Soft routing distribution over the leaves of one tree for one input.
struct LeafDistribution {
  std::vector<double> probabilities;  // length 2^depth, sums to 1
};

// Shape mirror of one tree's parameters; holds gradients or optimizer
// moments.
struct TreeTensor {
  std::vector<std::vector<double>> attention_logits;
  std::vector<double> thresholds;
  std::vector<std::vector<double>> leaf_responses;
};

struct ForestTensor {
  std::vector<TreeTensor> trees;

  static ForestTensor zeros_like(const ForestParams& params) {
    ForestTensor t;
    t.trees.resize(params.trees.size());
    for (std::size_t h = 0; h < params.trees.size(); ++h) {
      const TreeParams& tree = params.trees[h];
      TreeTensor& tt = t.trees[h];
      tt.attention_logits.assign(
          tree.num_internal(),
          std::vector<double>(params.num_features, 0.0));
      tt.thresholds.assign(tree.num_internal(), 0.0);
      tt.leaf_responses.assign(tree.num_leaves(),
                               std::vector<double>(params.output_dim, 0.0));
    }
    return t;
  }

  bool all_finite() const {
    for (const TreeTensor& tt : trees) {
      for (const auto& v : tt.attention_logits)
        if (!qforest::all_finite(v)) return false;
      if (!qforest::all_finite(tt.thresholds)) return false;
      for (const auto& v : tt.leaf_responses)
        if (!qforest::all_finite(v)) return false;
    }
    return true;
  }
};

using ForestGradients = ForestTensor;

// Zero-initialized forest of K identical-shape trees.
inline ForestParams make_forest(std::size_t num_trees, int depth,
                                std::size_t num_features,
                                std::size_t output_dim, AttentionKind kind) {
  if (num_trees < 1) throw ConfigError("make_forest: need at least one tree");
  if (depth < 1) throw ConfigError("make_forest: depth must be positive");
  if (num_features < 1) throw ConfigError("make_forest: need features");
  if (output_dim < 1) throw ConfigError("make_forest: need output dim");
  ForestParams f;
  f.num_features = num_features;
  f.output_dim = output_dim;
  f.attention_kind = kind;
  std::size_t n_int = (std::size_t{1} << depth) - 1;
  std::size_t n_leaf = std::size_t{1} << depth;
  f.trees.resize(num_trees);
  for (TreeParams& tree : f.trees) {
    tree.depth = depth;
    tree.internal_nodes.resize(n_int);
    for (GateParams& g : tree.internal_nodes)
      g.attention_logits.assign(num_features, 0.0);
    tree.leaf_responses.assign(n_leaf, std::vector<double>(output_dim, 0.0));
  }
  return f;
}

inline void ForestParams::validate() const {
  if (trees.empty()) throw ConfigError("forest: no trees");
  int d = trees.front().depth;
  for (const TreeParams& tree : trees) {
    if (tree.depth != d)
      throw ConfigError("forest: trees disagree on depth");
    if (tree.num_internal() != (std::size_t{1} << d) - 1)
      throw ConfigError("forest: internal node count does not match depth");
    if (tree.num_leaves() != std::size_t{1} << d)
      throw ConfigError("forest: leaf count does not match depth");
    for (const GateParams& g : tree.internal_nodes) {
      if (g.attention_logits.size() != num_features)
        throw DimensionError("forest: attention logit length != num_features");
      if (!all_finite(g.attention_logits) || !std::isfinite(g.threshold))
        throw NumericError("forest: non-finite gate parameter");
    }
    for (const auto& q : tree.leaf_responses) {
      if (q.size() != output_dim)
        throw DimensionError("forest: leaf response length != output_dim");
      if (!all_finite(q)) throw NumericError("forest: non-finite leaf response");
    }
  }
}

// Numerically stable logistic sigmoid.
inline double sigmoid(double t) {
  if (t >= 0.0) {
    double e = std::exp(-t);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(t);
  return e / (1.0 + e);
}

namespace detail {

// Mapped attention of every internal node of one tree, flattened for the
// batch kernels. Depends on parameters only, so it is computed once per
// forward/backward call and shared across samples.
struct MappedTree {
  std::vector<double> weights;       // num_internal x M, row-major
  std::vector<SimplexPoint> points;  // per node, for the mapper JVP
};

inline MappedTree map_tree_attention(const TreeParams& tree,
                                     AttentionMapper mapper,
                                     std::size_t num_features) {
  MappedTree mt;
  mt.points.reserve(tree.num_internal());
  mt.weights.resize(tree.num_internal() * num_features);
  for (std::size_t i = 0; i < tree.num_internal(); ++i) {
    SimplexPoint p = map_forward(mapper, tree.internal_nodes[i].attention_logits);
    std::copy(p.weights.begin(), p.weights.end(),
              mt.weights.begin() + i * num_features);
    mt.points.push_back(std::move(p));
  }
  return mt;
}

// Gate values for one sample: g[i] = sigmoid(<w_i, x> - b_i).
inline void eval_gates(const TreeParams& tree, const MappedTree& mt,
                       const double* x, std::size_t m, double* gates) {
  for (std::size_t i = 0; i < tree.num_internal(); ++i) {
    const double* w = mt.weights.data() + i * m;
    double dot = 0.0;
    for (std::size_t k = 0; k < m; ++k) dot += w[k] * x[k];
    gates[i] = sigmoid(dot - tree.internal_nodes[i].threshold);
  }
}

// Root-to-node reach probabilities over the full conceptual tree
// (internal slots 0..n_int-1, leaf slots n_int..n_int+n_leaf-1).
inline void eval_reach_probs(std::size_t n_int, const double* gates,
                             double* probs) {
  probs[0] = 1.0;
  for (std::size_t i = 0; i < n_int; ++i) {
    double g = gates[i];
    probs[2 * i + 1] = (1.0 - g) * probs[i];
    probs[2 * i + 2] = g * probs[i];
  }
}

}  // namespace detail

// Probability of the right branch at a single gate.
inline double gate_forward(const GateParams& gate,
                           const std::vector<double>& x,
                           AttentionMapper mapper) {
  if (x.size() != gate.attention_logits.size())
    throw DimensionError("gate_forward: input length " +
                         std::to_string(x.size()) + " != logit length " +
                         std::to_string(gate.attention_logits.size()));
  if (!all_finite(x)) throw NumericError("gate_forward: non-finite input");
  SimplexPoint p = map_forward(mapper, gate.attention_logits);
  double dot = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) dot += p.weights[k] * x[k];
  return sigmoid(dot - gate.threshold);
}

// Soft routing distribution of one input over the leaves: each leaf gets the
// product of g / (1-g) factors along its root-to-leaf path.
inline LeafDistribution leaf_probabilities(const TreeParams& tree,
                                           const std::vector<double>& x,
                                           AttentionMapper mapper) {
  const std::size_t m = x.size();
  for (const GateParams& g : tree.internal_nodes)
    if (g.attention_logits.size() != m)
      throw DimensionError("leaf_probabilities: input/logit length mismatch");
  if (!all_finite(x))
    throw NumericError("leaf_probabilities: non-finite input");
  detail::MappedTree mt = detail::map_tree_attention(tree, mapper, m);
  std::size_t n_int = tree.num_internal();
  std::size_t n_leaf = tree.num_leaves();
  std::vector<double> gates(n_int);
  std::vector<double> probs(n_int + n_leaf);
  detail::eval_gates(tree, mt, x.data(), m, gates.data());
  detail::eval_reach_probs(n_int, gates.data(), probs.data());
  LeafDistribution out;
  out.probabilities.assign(probs.begin() + n_int, probs.end());
  return out;
}

// Tree output: probability-weighted mixture of the leaf responses.
inline std::vector<double> tree_forward(const TreeParams& tree,
                                        const std::vector<double>& x,
                                        AttentionMapper mapper) {
  LeafDistribution dist = leaf_probabilities(tree, x, mapper);
  std::size_t c = tree.leaf_responses.front().size();
  std::vector<double> out(c, 0.0);
  for (std::size_t j = 0; j < tree.num_leaves(); ++j) {
    double p = dist.probabilities[j];
    const std::vector<double>& q = tree.leaf_responses[j];
    for (std::size_t k = 0; k < c; ++k) out[k] += p * q[k];
  }
  return out;
}

namespace detail {

// Batch forward of one tree; writes an nb x C block.
inline void tree_forward_batch(const TreeParams& tree, const MappedTree& mt,
                               const Matrix& batch, Matrix& out) {
  const std::size_t nb = batch.rows();
  const std::size_t m = batch.cols();
  const std::size_t c = tree.leaf_responses.front().size();
  const std::size_t n_int = tree.num_internal();
  const std::size_t n_leaf = tree.num_leaves();
  std::vector<double> gates(n_int);
  std::vector<double> probs(n_int + n_leaf);
  for (std::size_t n = 0; n < nb; ++n) {
    eval_gates(tree, mt, batch.row(n), m, gates.data());
    eval_reach_probs(n_int, gates.data(), probs.data());
    double* row = out.row(n);
    for (std::size_t k = 0; k < c; ++k) row[k] = 0.0;
    for (std::size_t j = 0; j < n_leaf; ++j) {
      double p = probs[n_int + j];
      const std::vector<double>& q = tree.leaf_responses[j];
      for (std::size_t k = 0; k < c; ++k) row[k] += p * q[k];
    }
  }
}

// Accumulates into `grad` the gradient of sum_n <upstream_n, T(x_n)> with
// respect to this tree's parameters. Gate gradients are chained through the
// attention mapper's Jacobian once per node after the sample loop.
inline void tree_backward_batch(const TreeParams& tree, const MappedTree& mt,
                                AttentionMapper mapper, const Matrix& batch,
                                const Matrix& upstream, TreeTensor& grad) {
  const std::size_t nb = batch.rows();
  const std::size_t m = batch.cols();
  const std::size_t c = tree.leaf_responses.front().size();
  const std::size_t n_int = tree.num_internal();
  const std::size_t n_leaf = tree.num_leaves();
  const std::size_t slots = n_int + n_leaf;

  std::vector<double> gates(n_int);
  std::vector<double> probs(slots);
  std::vector<double> values(slots * c);      // subtree response means
  std::vector<double> d_weights(n_int * m, 0.0);  // d objective / d mapped w

  for (std::size_t n = 0; n < nb; ++n) {
    const double* x = batch.row(n);
    const double* u = upstream.row(n);
    eval_gates(tree, mt, x, m, gates.data());
    eval_reach_probs(n_int, gates.data(), probs.data());

    // Upward pass: values[i] = expected response of the subtree below i.
    for (std::size_t j = 0; j < n_leaf; ++j) {
      const std::vector<double>& q = tree.leaf_responses[j];
      double* v = values.data() + (n_int + j) * c;
      for (std::size_t k = 0; k < c; ++k) v[k] = q[k];
    }
    for (std::size_t ii = n_int; ii-- > 0;) {
      double g = gates[ii];
      const double* vl = values.data() + (2 * ii + 1) * c;
      const double* vr = values.data() + (2 * ii + 2) * c;
      double* v = values.data() + ii * c;
      for (std::size_t k = 0; k < c; ++k)
        v[k] = (1.0 - g) * vl[k] + g * vr[k];
    }

    // Leaf response gradient: dQ_j += p_j * u.
    for (std::size_t j = 0; j < n_leaf; ++j) {
      double p = probs[n_int + j];
      std::vector<double>& dq = grad.leaf_responses[j];
      for (std::size_t k = 0; k < c; ++k) dq[k] += p * u[k];
    }

    // Gate gradient: d/dg_i = reach_i * <u, V_right - V_left>, then chain
    // through the sigmoid; s = <w,x> - b gives d/db = -d/ds, d/dw = d/ds * x.
    for (std::size_t i = 0; i < n_int; ++i) {
      const double* vl = values.data() + (2 * i + 1) * c;
      const double* vr = values.data() + (2 * i + 2) * c;
      double dg = 0.0;
      for (std::size_t k = 0; k < c; ++k) dg += u[k] * (vr[k] - vl[k]);
      dg *= probs[i];
      double g = gates[i];
      double ds = dg * g * (1.0 - g);
      grad.thresholds[i] -= ds;
      double* dw = d_weights.data() + i * m;
      for (std::size_t k = 0; k < m; ++k) dw[k] += ds * x[k];
    }
  }

  for (std::size_t i = 0; i < n_int; ++i) {
    std::vector<double> dw(d_weights.begin() + i * m,
                           d_weights.begin() + (i + 1) * m);
    std::vector<double> da = map_backward(mapper, mt.points[i], dw);
    std::vector<double>& dst = grad.attention_logits[i];
    for (std::size_t k = 0; k < m; ++k) dst[k] += da[k];
  }
}

}  // namespace detail

// Ensemble prediction: row n = (1/K) * sum_h T_h(x_n).
inline Matrix forest_forward(const ForestParams& forest, const Matrix& batch,
                             AttentionMapper mapper, int threads = 1) {
  if (batch.cols() != forest.num_features)
    throw DimensionError("forest_forward: batch has " +
                         std::to_string(batch.cols()) + " columns, forest expects " +
                         std::to_string(forest.num_features));
  const std::size_t nb = batch.rows();
  const std::size_t c = forest.output_dim;
  const std::size_t k = forest.num_trees();

  std::vector<Matrix> blocks(k);
  auto run_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t h = lo; h < hi; ++h) {
      detail::MappedTree mt = detail::map_tree_attention(
          forest.trees[h], mapper, forest.num_features);
      blocks[h] = Matrix(nb, c);
      detail::tree_forward_batch(forest.trees[h], mt, batch, blocks[h]);
    }
  };
  int nt = std::max(1, std::min<int>(threads, static_cast<int>(k)));
  if (nt == 1) {
    run_range(0, k);
  } else {
    std::vector<std::thread> pool;
    std::size_t chunk = (k + nt - 1) / nt;
    for (int t = 0; t < nt; ++t) {
      std::size_t lo = std::min<std::size_t>(t * chunk, k);
      std::size_t hi = std::min<std::size_t>(lo + chunk, k);
      if (lo < hi) pool.emplace_back(run_range, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  // Merge in fixed tree order so the result is identical for any thread count.
  Matrix out(nb, c, 0.0);
  for (std::size_t h = 0; h < k; ++h) {
    const std::vector<double>& b = blocks[h].data();
    std::vector<double>& o = out.data();
    for (std::size_t idx = 0; idx < o.size(); ++idx) o[idx] += b[idx];
  }
  double inv_k = 1.0 / static_cast<double>(k);
  for (double& v : out.data()) v *= inv_k;
  return out;
}

// Gradient of sum_n <upstream_n, T(x_n)> for a single tree.
inline TreeTensor tree_backward(const TreeParams& tree, const Matrix& batch,
                                const Matrix& upstream,
                                AttentionMapper mapper) {
  const std::size_t c = tree.leaf_responses.front().size();
  if (upstream.rows() != batch.rows() || upstream.cols() != c)
    throw DimensionError("tree_backward: upstream shape mismatch");
  if (!upstream.all_finite())
    throw NumericError("tree_backward: non-finite upstream");
  const std::size_t m = batch.cols();
  TreeTensor grad;
  grad.attention_logits.assign(tree.num_internal(),
                               std::vector<double>(m, 0.0));
  grad.thresholds.assign(tree.num_internal(), 0.0);
  grad.leaf_responses.assign(tree.num_leaves(), std::vector<double>(c, 0.0));
  detail::MappedTree mt = detail::map_tree_attention(tree, mapper, m);
  detail::tree_backward_batch(tree, mt, mapper, batch, upstream, grad);
  return grad;
}

// Exact gradients of sum_n <upstream_n, yhat_n> (ensemble output, Eq. 1
// averaging included) with respect to every parameter, accumulated over the
// batch.
inline ForestGradients forest_backward(const ForestParams& forest,
                                       const Matrix& batch,
                                       const Matrix& upstream,
                                       AttentionMapper mapper,
                                       int threads = 1) {
  if (batch.cols() != forest.num_features)
    throw DimensionError("forest_backward: batch column count mismatch");
  if (upstream.rows() != batch.rows() || upstream.cols() != forest.output_dim)
    throw DimensionError("forest_backward: upstream shape mismatch");
  if (!upstream.all_finite())
    throw NumericError("forest_backward: non-finite upstream");

  const std::size_t k = forest.num_trees();
  Matrix scaled = upstream;
  double inv_k = 1.0 / static_cast<double>(k);
  for (double& v : scaled.data()) v *= inv_k;

  ForestGradients grads = ForestGradients::zeros_like(forest);
  auto run_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t h = lo; h < hi; ++h) {
      detail::MappedTree mt = detail::map_tree_attention(
          forest.trees[h], mapper, forest.num_features);
      detail::tree_backward_batch(forest.trees[h], mt, mapper, batch, scaled,
                                  grads.trees[h]);
    }
  };
  int nt = std::max(1, std::min<int>(threads, static_cast<int>(k)));
  if (nt == 1) {
    run_range(0, k);
  } else {
    std::vector<std::thread> pool;
    std::size_t chunk = (k + nt - 1) / nt;
    for (int t = 0; t < nt; ++t) {
      std::size_t lo = std::min<std::size_t>(t * chunk, k);
      std::size_t hi = std::min<std::size_t>(lo + chunk, k);
      if (lo < hi) pool.emplace_back(run_range, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  return grads;
}

}  // namespace qforest
