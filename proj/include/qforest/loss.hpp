#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "qforest/errors.hpp"
#include "qforest/matrix.hpp"

namespace qforest {

enum class LossKind { mse, mae, huber, cross_entropy };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::mse: return "mse";
    case LossKind::mae: return "mae";
    case LossKind::huber: return "huber";
    case LossKind::cross_entropy: return "cross-entropy";
  }
  return "?";
}

struct LossConfig {
  LossKind kind = LossKind::mse;
  double huber_delta = 1.0;

  void validate() const {
    if (kind == LossKind::huber &&
        (!(huber_delta > 0.0) || !std::isfinite(huber_delta)))
      throw ConfigError("loss: huber delta must be positive");
  }
};

// Scalar loss (mean over samples, summed over output dims) and its exact
// gradient with respect to the predictions.
struct LossResult {
  double loss = 0.0;
  Matrix upstream;  // N x C
};

// Regression losses. `targets` must match the prediction shape.
inline LossResult compute_loss(const Matrix& predictions,
                               const Matrix& targets, LossConfig cfg) {
  cfg.validate();
  if (cfg.kind == LossKind::cross_entropy)
    throw ConfigError("compute_loss: cross-entropy needs class labels");
  if (targets.rows() != predictions.rows() ||
      targets.cols() != predictions.cols())
    throw DimensionError("compute_loss: prediction/target shape mismatch");
  const std::size_t n = predictions.rows();
  const std::size_t c = predictions.cols();
  if (n == 0) throw InputError("compute_loss: empty batch");
  LossResult out;
  out.upstream = Matrix(n, c);
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      double r = predictions(i, k) - targets(i, k);
      switch (cfg.kind) {
        case LossKind::mse:
          total += r * r;
          out.upstream(i, k) = 2.0 * r * inv_n;
          break;
        case LossKind::mae:
          total += std::fabs(r);
          out.upstream(i, k) = (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0)) * inv_n;
          break;
        case LossKind::huber: {
          double d = cfg.huber_delta;
          if (std::fabs(r) <= d) {
            total += 0.5 * r * r;
            out.upstream(i, k) = r * inv_n;
          } else {
            total += d * (std::fabs(r) - 0.5 * d);
            out.upstream(i, k) = (r > 0.0 ? d : -d) * inv_n;
          }
          break;
        }
        case LossKind::cross_entropy:
          break;  // unreachable
      }
    }
  }
  out.loss = total * inv_n;
  return out;
}

// Cross-entropy over raw scores; softmax is applied internally through the
// log-sum-exp form, which needs no probability clamping.
inline LossResult compute_loss(const Matrix& scores,
                               const std::vector<int>& labels,
                               LossConfig cfg = {LossKind::cross_entropy}) {
  cfg.validate();
  if (cfg.kind != LossKind::cross_entropy)
    throw ConfigError("compute_loss: label overload is cross-entropy only");
  const std::size_t n = scores.rows();
  const std::size_t c = scores.cols();
  if (n == 0) throw InputError("compute_loss: empty batch");
  if (labels.size() != n)
    throw DimensionError("compute_loss: label count mismatch");
  LossResult out;
  out.upstream = Matrix(n, c);
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  std::vector<double> p(c);
  for (std::size_t i = 0; i < n; ++i) {
    int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw InputError("compute_loss: label " + std::to_string(y) +
                       " out of range [0, " + std::to_string(c) + ")");
    const double* row = scores.row(i);
    double mx = row[0];
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, row[k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      p[k] = std::exp(row[k] - mx);
      sum += p[k];
    }
    total += std::log(sum) + mx - row[y];
    for (std::size_t k = 0; k < c; ++k) {
      double soft = p[k] / sum;
      out.upstream(i, k) =
          (soft - (static_cast<std::size_t>(y) == k ? 1.0 : 0.0)) * inv_n;
    }
  }
  out.loss = total * inv_n;
  return out;
}

}  // namespace qforest
