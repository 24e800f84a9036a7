#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "qforest/errors.hpp"
#include "qforest/matrix.hpp"

namespace qforest {

// Normalization family mapping per-node feature logits onto the probability
// simplex. softmax is dense; sparsemax and entmax15 produce exact zeros.
enum class AttentionKind { softmax, sparsemax, entmax15 };

inline const char* to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::softmax: return "softmax";
    case AttentionKind::sparsemax: return "sparsemax";
    case AttentionKind::entmax15: return "entmax15";
  }
  return "?";
}

struct AttentionMapper {
  AttentionKind kind = AttentionKind::entmax15;
};

// A point on the probability simplex together with its support size.
// Entries exactly at the support boundary count as zero (strict inequality).
struct SimplexPoint {
  std::vector<double> weights;
  std::size_t support_size = 0;
};

namespace detail {

inline std::vector<double> shifted_by_max(const std::vector<double>& z) {
  double m = *std::max_element(z.begin(), z.end());
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - m;
  return out;
}

inline SimplexPoint softmax_forward(const std::vector<double>& z) {
  std::vector<double> s = shifted_by_max(z);
  double sum = 0.0;
  for (double& v : s) {
    v = std::exp(v);
    sum += v;
  }
  for (double& v : s) v /= sum;
  return SimplexPoint{std::move(s), z.size()};
}

// Euclidean projection onto the simplex by sorted threshold:
// p_i = max(z_i - tau, 0) with tau = (sum of top-k z - 1) / k.
inline SimplexPoint sparsemax_forward(const std::vector<double>& z) {
  std::vector<double> s = shifted_by_max(z);
  std::vector<double> sorted = s;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumsum = 0.0;
  double tau = 0.0;
  std::size_t k = 0;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    cumsum += sorted[j];
    double candidate = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (sorted[j] > candidate) {
      k = j + 1;
      tau = candidate;
    }
  }
  SimplexPoint p;
  p.weights.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    double w = s[i] - tau;
    if (w > 0.0) {
      p.weights[i] = w;
      ++p.support_size;
    } else {
      p.weights[i] = 0.0;
    }
  }
  (void)k;
  return p;
}

// Exact 1.5-entmax: on the halved logits, find tau such that
// sum_i [max(z_i/2 - tau, 0)]^2 = 1, by scanning sorted prefixes.
inline SimplexPoint entmax15_forward(const std::vector<double>& z) {
  std::vector<double> s = shifted_by_max(z);
  for (double& v : s) v *= 0.5;
  std::vector<double> sorted = s;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());

  double cum = 0.0;
  double cum_sq = 0.0;
  double tau = 0.0;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    cum += sorted[j];
    cum_sq += sorted[j] * sorted[j];
    double k = static_cast<double>(j + 1);
    double mean = cum / k;
    double ss = cum_sq - cum * mean;  // sum of squared deviations from mean
    double delta = (1.0 - ss) / k;
    double tau_k = mean - std::sqrt(std::max(delta, 0.0));
    if (tau_k <= sorted[j]) tau = tau_k;
  }
  SimplexPoint p;
  p.weights.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    double w = s[i] - tau;
    if (w > 0.0) {
      p.weights[i] = w * w;
      ++p.support_size;
    } else {
      p.weights[i] = 0.0;
    }
  }
  return p;
}

}  // namespace detail

// Maps logits z onto the probability simplex. Output entries are >= 0 and
// sum to 1 within rounding; support_size counts the strictly positive ones.
inline SimplexPoint map_forward(AttentionMapper mapper,
                                const std::vector<double>& z) {
  if (z.empty())
    throw DimensionError("map_forward: empty logit vector");
  if (!all_finite(z))
    throw NumericError("map_forward: non-finite logit");
  switch (mapper.kind) {
    case AttentionKind::softmax: return detail::softmax_forward(z);
    case AttentionKind::sparsemax: return detail::sparsemax_forward(z);
    case AttentionKind::entmax15: return detail::entmax15_forward(z);
  }
  throw ConfigError("map_forward: unknown attention kind");
}

// J^T * upstream for the mapper Jacobian at p. With
//   s_i = p_i          (softmax)
//   s_i = 1[p_i > 0]   (sparsemax)
//   s_i = sqrt(p_i)    (entmax15)
// the Jacobian is J = diag(s) - s s^T / sum(s), which is symmetric and
// annihilates constant vectors.
inline std::vector<double> map_backward(AttentionMapper mapper,
                                        const SimplexPoint& p,
                                        const std::vector<double>& upstream) {
  const std::size_t m = p.weights.size();
  if (upstream.size() != m)
    throw DimensionError("map_backward: upstream length " +
                         std::to_string(upstream.size()) + " != " +
                         std::to_string(m));
  std::vector<double> s(m);
  for (std::size_t i = 0; i < m; ++i) {
    double w = p.weights[i];
    switch (mapper.kind) {
      case AttentionKind::softmax: s[i] = w; break;
      case AttentionKind::sparsemax: s[i] = w > 0.0 ? 1.0 : 0.0; break;
      case AttentionKind::entmax15: s[i] = std::sqrt(w); break;
    }
  }
  double s_sum = std::accumulate(s.begin(), s.end(), 0.0);
  if (s_sum <= 0.0)
    throw InputError("map_backward: point has empty support");
  double dot = 0.0;
  for (std::size_t i = 0; i < m; ++i) dot += s[i] * upstream[i];
  double shift = dot / s_sum;
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = s[i] * (upstream[i] - shift);
  return out;
}

// Fraction of all weight entries strictly below `threshold`, pooled over a
// collection of simplex points. Quantifies how sparse a set of attention
// vectors is.
inline double sparsity_fraction(const std::vector<SimplexPoint>& points,
                                double threshold) {
  if (threshold < 0.0)
    throw InputError("sparsity_fraction: negative threshold");
  if (points.empty())
    throw InputError("sparsity_fraction: empty collection");
  std::size_t below = 0;
  std::size_t total = 0;
  for (const SimplexPoint& p : points) {
    for (double w : p.weights) {
      if (w < threshold) ++below;
      ++total;
    }
  }
  if (total == 0)
    throw InputError("sparsity_fraction: points have no entries");
  return static_cast<double>(below) / static_cast<double>(total);
}

}  // namespace qforest
