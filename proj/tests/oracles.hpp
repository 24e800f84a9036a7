#pragma once

// Test-side reference implementations. These deliberately avoid the
// library's computation paths: simplex maps are solved by direct formula or
// bisection, routing by explicit path enumeration, and Adam by a separate
// straight-line implementation.

#include <cmath>
#include <cstdint>
#include <vector>

#include "qforest/forest.hpp"
#include "qforest/rng.hpp"

namespace oracle {

// Softmax by the direct formula.
inline std::vector<double> softmax(const std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

// Sparsemax via bisection on tau: sum_i max(z_i - tau, 0) = 1.
inline std::vector<double> sparsemax_bisect(const std::vector<double>& z) {
  double lo = z[0], hi = z[0];
  for (double v : z) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  lo -= 1.0;
  auto mass = [&](double tau) {
    double s = 0.0;
    for (double v : z) s += std::max(v - tau, 0.0);
    return s;
  };
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (mass(mid) >= 1.0)
      lo = mid;
    else
      hi = mid;
  }
  double tau = 0.5 * (lo + hi);
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) p[i] = std::max(z[i] - tau, 0.0);
  return p;
}

// 1.5-entmax via bisection on tau: sum_i max(z_i/2 - tau, 0)^2 = 1.
inline std::vector<double> entmax15_bisect(const std::vector<double>& z) {
  double lo = z[0], hi = z[0];
  for (double v : z) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  lo = lo / 2.0 - 1.0;
  hi = hi / 2.0;
  auto mass = [&](double tau) {
    double s = 0.0;
    for (double v : z) {
      double t = std::max(v / 2.0 - tau, 0.0);
      s += t * t;
    }
    return s;
  };
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (mass(mid) >= 1.0)
      lo = mid;
    else
      hi = mid;
  }
  double tau = 0.5 * (lo + hi);
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    double t = std::max(z[i] / 2.0 - tau, 0.0);
    p[i] = t * t;
  }
  return p;
}

inline std::vector<double> simplex_map(qforest::AttentionKind kind,
                                       const std::vector<double>& z) {
  switch (kind) {
    case qforest::AttentionKind::softmax: return softmax(z);
    case qforest::AttentionKind::sparsemax: return sparsemax_bisect(z);
    case qforest::AttentionKind::entmax15: return entmax15_bisect(z);
  }
  return {};
}

inline double gate(const qforest::GateParams& g, const std::vector<double>& x,
                   qforest::AttentionKind kind) {
  std::vector<double> w = simplex_map(kind, g.attention_logits);
  double dot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) dot += w[i] * x[i];
  return 1.0 / (1.0 + std::exp(-(dot - g.threshold)));
}

// Leaf probabilities by explicit enumeration over all root-to-leaf paths.
// Bit t of the leaf index (from the most significant of `depth` bits) picks
// the branch at level t: 1 goes right with factor g, 0 left with 1 - g.
inline std::vector<double> leaf_probs(const qforest::TreeParams& tree,
                                      const std::vector<double>& x,
                                      qforest::AttentionKind kind) {
  const int d = tree.depth;
  const std::size_t n_leaves = std::size_t{1} << d;
  std::vector<double> out(n_leaves);
  for (std::size_t j = 0; j < n_leaves; ++j) {
    std::size_t node = 0;
    double p = 1.0;
    for (int t = d - 1; t >= 0; --t) {
      int bit = static_cast<int>((j >> t) & 1);
      double g = gate(tree.internal_nodes[node], x, kind);
      p *= bit ? g : (1.0 - g);
      node = 2 * node + 1 + static_cast<std::size_t>(bit);
    }
    out[j] = p;
  }
  return out;
}

inline std::vector<double> tree_output(const qforest::TreeParams& tree,
                                       const std::vector<double>& x,
                                       qforest::AttentionKind kind) {
  std::vector<double> p = leaf_probs(tree, x, kind);
  std::size_t c = tree.leaf_responses.front().size();
  std::vector<double> out(c, 0.0);
  for (std::size_t j = 0; j < p.size(); ++j)
    for (std::size_t k = 0; k < c; ++k)
      out[k] += p[j] * tree.leaf_responses[j][k];
  return out;
}

// Plain Adam with bias correction, kept separate from the library.
struct Adam {
  double lr, beta1, beta2, eps;
  std::vector<double> m, v;
  std::uint64_t t = 0;

  Adam(std::size_t n, double lr_, double b1, double b2, double eps_)
      : lr(lr_), beta1(b1), beta2(b2), eps(eps_), m(n, 0.0), v(n, 0.0) {}

  void step(std::vector<double>& theta, const std::vector<double>& g) {
    ++t;
    double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      double m_hat = m[i] / c1;
      double v_hat = v[i] / c2;
      theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
};

// Pointers to every scalar parameter, in the library's update order
// (trees, then per node logits + threshold, then leaves).
inline std::vector<double*> param_slots(qforest::ForestParams& f) {
  std::vector<double*> out;
  for (auto& tree : f.trees) {
    for (auto& g : tree.internal_nodes) {
      for (auto& v : g.attention_logits) out.push_back(&v);
      out.push_back(&g.threshold);
    }
    for (auto& q : tree.leaf_responses)
      for (auto& v : q) out.push_back(&v);
  }
  return out;
}

inline std::vector<double> grad_values(const qforest::ForestGradients& g) {
  std::vector<double> out;
  for (auto& tree : g.trees) {
    for (std::size_t i = 0; i < tree.thresholds.size(); ++i) {
      for (double v : tree.attention_logits[i]) out.push_back(v);
      out.push_back(tree.thresholds[i]);
    }
    for (auto& q : tree.leaf_responses)
      for (double v : q) out.push_back(v);
  }
  return out;
}

// Central finite difference of f with respect to one slot.
template <typename F>
double central_diff(double& slot, double h, F&& f) {
  const double orig = slot;
  slot = orig + h;
  double fp = f();
  slot = orig - h;
  double fm = f();
  slot = orig;
  return (fp - fm) / (2.0 * h);
}

inline bool close_rel(double a, double b, double rel_tol, double abs_floor) {
  double diff = std::fabs(a - b);
  if (diff <= abs_floor) return true;
  return diff <= rel_tol * std::max(std::fabs(a), std::fabs(b));
}

// Random forest with moderate parameter scales.
inline qforest::ForestParams random_forest(qforest::Rng& rng, std::size_t k,
                                           int depth, std::size_t m,
                                           std::size_t c,
                                           qforest::AttentionKind kind) {
  qforest::ForestParams f = qforest::make_forest(k, depth, m, c, kind);
  for (auto& tree : f.trees) {
    for (auto& g : tree.internal_nodes) {
      for (auto& v : g.attention_logits) v = rng.normal();
      g.threshold = 0.5 * rng.normal();
    }
    for (auto& q : tree.leaf_responses)
      for (auto& v : q) v = rng.normal();
  }
  return f;
}

inline qforest::Matrix random_matrix(qforest::Rng& rng, std::size_t rows,
                                     std::size_t cols, double scale = 1.0) {
  qforest::Matrix x(rows, cols);
  for (auto& v : x.data()) v = scale * rng.normal();
  return x;
}

}  // namespace oracle
