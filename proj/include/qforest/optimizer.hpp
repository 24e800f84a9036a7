#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "qforest/errors.hpp"
#include "qforest/forest.hpp"

namespace qforest {

enum class OptimizerKind { sgd, adam, qhadam };

inline const char* to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::qhadam: return "qhadam";
  }
  return "?";
}

// Defaults follow the QHAdam recommendation (nu1=0.7, beta1=0.995); with
// nu1=nu2=1 the update reduces exactly to Adam.
struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::qhadam;
  double learning_rate = 1e-3;
  double beta1 = 0.995;
  double beta2 = 0.999;
  double nu1 = 0.7;
  double nu2 = 1.0;
  double epsilon = 1e-8;
  double weight_decay = 0.0;

  void validate() const {
    if (!std::isfinite(learning_rate) || learning_rate < 0.0)
      throw ConfigError("optimizer: learning rate must be finite and >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("optimizer: betas must lie in [0, 1)");
    if (!(nu1 >= 0.0 && nu1 <= 1.0) || !(nu2 >= 0.0 && nu2 <= 1.0))
      throw ConfigError("optimizer: nus must lie in [0, 1]");
    if (!(epsilon > 0.0) || !std::isfinite(epsilon))
      throw ConfigError("optimizer: epsilon must be positive");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
      throw ConfigError("optimizer: weight decay must be >= 0");
  }
};

// Per-parameter moment accumulators plus the global step counter.
struct OptimizerState {
  std::uint64_t step_count = 0;
  ForestTensor first_moment;
  ForestTensor second_moment;
};

inline OptimizerState init_state(const ForestParams& params) {
  OptimizerState s;
  s.first_moment = ForestTensor::zeros_like(params);
  s.second_moment = ForestTensor::zeros_like(params);
  return s;
}

namespace detail {

inline void check_tensor_shape(const ForestParams& params,
                               const ForestTensor& t, const char* what) {
  if (t.trees.size() != params.trees.size())
    throw DimensionError(std::string(what) + ": tree count mismatch");
  for (std::size_t h = 0; h < params.trees.size(); ++h) {
    const TreeParams& tree = params.trees[h];
    const TreeTensor& tt = t.trees[h];
    if (tt.attention_logits.size() != tree.num_internal() ||
        tt.thresholds.size() != tree.num_internal() ||
        tt.leaf_responses.size() != tree.num_leaves())
      throw DimensionError(std::string(what) + ": node count mismatch");
    for (const auto& v : tt.attention_logits)
      if (v.size() != params.num_features)
        throw DimensionError(std::string(what) + ": logit length mismatch");
    for (const auto& v : tt.leaf_responses)
      if (v.size() != params.output_dim)
        throw DimensionError(std::string(what) + ": leaf length mismatch");
  }
}

// Applies f(theta&, grad, m1&, m2&) to every scalar parameter, in a fixed
// order (trees, then nodes, then leaves).
template <typename F>
void zip_params(ForestParams& params, const ForestGradients& grads,
                OptimizerState& state, F&& f) {
  for (std::size_t h = 0; h < params.trees.size(); ++h) {
    TreeParams& tree = params.trees[h];
    const TreeTensor& g = grads.trees[h];
    TreeTensor& m1 = state.first_moment.trees[h];
    TreeTensor& m2 = state.second_moment.trees[h];
    for (std::size_t i = 0; i < tree.num_internal(); ++i) {
      GateParams& gate = tree.internal_nodes[i];
      for (std::size_t k = 0; k < gate.attention_logits.size(); ++k)
        f(gate.attention_logits[k], g.attention_logits[i][k],
          m1.attention_logits[i][k], m2.attention_logits[i][k]);
      f(gate.threshold, g.thresholds[i], m1.thresholds[i], m2.thresholds[i]);
    }
    for (std::size_t j = 0; j < tree.num_leaves(); ++j)
      for (std::size_t k = 0; k < tree.leaf_responses[j].size(); ++k)
        f(tree.leaf_responses[j][k], g.leaf_responses[j][k],
          m1.leaf_responses[j][k], m2.leaf_responses[j][k]);
  }
}

}  // namespace detail

// One parameter update step. SGD applies theta -= lr * grad; Adam and QHAdam
// apply bias-corrected exponential-moment updates, with QHAdam blending the
// raw gradient into the numerator (nu1) and the raw squared gradient into
// the denominator (nu2). Weight decay, when set, is decoupled: theta is
// shrunk by lr * decay before the gradient step. The state's step counter
// advances exactly once.
//
// A non-finite gradient refuses the whole update and leaves params and state
// untouched.
inline void apply_update(ForestParams& params, const ForestGradients& grads,
                         OptimizerState& state, const OptimizerConfig& cfg) {
  cfg.validate();
  detail::check_tensor_shape(params, grads, "apply_update(grads)");
  detail::check_tensor_shape(params, state.first_moment,
                             "apply_update(state)");
  detail::check_tensor_shape(params, state.second_moment,
                             "apply_update(state)");
  if (!grads.all_finite())
    throw NumericError("apply_update: non-finite gradient, update refused");

  const double lr = cfg.learning_rate;
  state.step_count += 1;

  if (cfg.weight_decay > 0.0) {
    double shrink = lr * cfg.weight_decay;
    detail::zip_params(params, grads, state,
                       [&](double& theta, double, double&, double&) {
                         theta -= shrink * theta;
                       });
  }

  switch (cfg.kind) {
    case OptimizerKind::sgd: {
      detail::zip_params(params, grads, state,
                         [&](double& theta, double g, double&, double&) {
                           theta -= lr * g;
                         });
      break;
    }
    case OptimizerKind::adam:
    case OptimizerKind::qhadam: {
      const double nu1 = cfg.kind == OptimizerKind::adam ? 1.0 : cfg.nu1;
      const double nu2 = cfg.kind == OptimizerKind::adam ? 1.0 : cfg.nu2;
      const double t = static_cast<double>(state.step_count);
      const double corr1 = 1.0 - std::pow(cfg.beta1, t);
      const double corr2 = 1.0 - std::pow(cfg.beta2, t);
      detail::zip_params(
          params, grads, state,
          [&](double& theta, double g, double& m, double& v) {
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            double m_hat = m / corr1;
            double v_hat = v / corr2;
            double num = (1.0 - nu1) * g + nu1 * m_hat;
            double den = std::sqrt((1.0 - nu2) * g * g + nu2 * v_hat) +
                         cfg.epsilon;
            theta -= lr * num / den;
          });
      break;
    }
  }
}

}  // namespace qforest
