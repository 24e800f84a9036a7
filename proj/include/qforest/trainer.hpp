#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "qforest/attention.hpp"
#include "qforest/data.hpp"
#include "qforest/errors.hpp"
#include "qforest/forest.hpp"
#include "qforest/importance.hpp"
#include "qforest/loss.hpp"
#include "qforest/model_io.hpp"
#include "qforest/optimizer.hpp"

namespace qforest {

// How the per-tree losses are combined. loss_of_mean applies the loss to the
// ensemble-average prediction (how the model is used at test time);
// mean_of_losses averages per-tree losses. The two coincide for K = 1 and
// for any linear loss.
enum class EnsembleLossMode { loss_of_mean, mean_of_losses };

inline const char* to_string(EnsembleLossMode m) {
  return m == EnsembleLossMode::loss_of_mean ? "loss-of-mean"
                                             : "mean-of-losses";
}

struct TrainConfig {
  TrainConfig() {
    // Desk-scale training runs take a few hundred optimizer steps, so the
    // trainer default step size is larger than the bare QHAdam
    // recommendation (which targets very long schedules).
    optimizer.learning_rate = 0.05;
  }

  std::size_t num_trees = 256;
  int depth = 5;
  std::size_t batch_size = 512;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  AttentionKind attention = AttentionKind::entmax15;
  LossConfig loss{};
  OptimizerConfig optimizer{};
  InitConfig init{};
  EnsembleLossMode ensemble_loss_mode = EnsembleLossMode::loss_of_mean;
  std::uint64_t seed = 0;
  int threads = 1;
  // When set, training starts from these parameters instead of running the
  // initializers (shape must match the data and config).
  std::optional<ForestParams> initial_params;

  void validate() const {
    if (num_trees < 1) throw ConfigError("train: num_trees must be >= 1");
    if (depth < 1 || depth > 16)
      throw ConfigError("train: depth must be in [1, 16]");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
    if (threads < 1) throw ConfigError("train: threads must be >= 1");
    loss.validate();
    optimizer.validate();
    init.validate();
  }
};

struct EpochStats {
  std::size_t epoch = 0;        // 1-based
  double train_loss = 0.0;      // mean per-sample loss over the epoch
  double valid_metric = 0.0;    // MSE (original units) or error rate
  double elapsed_seconds = 0.0; // wall time since training started
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double initial_train_loss = 0.0;
  std::size_t best_epoch = 0;
  double best_valid_metric = std::numeric_limits<double>::quiet_NaN();
  double test_metric = std::numeric_limits<double>::quiet_NaN();
  double wall_time_seconds = 0.0;
  double sparsity_start = 0.0;  // fraction of mapped weights < 1e-3 at init
  double sparsity_end = 0.0;    // same, at the returned parameters
};

struct TrainResult {
  ForestParams params;
  TrainReport report;
};

// Threshold used for the report's attention sparsity summary.
inline constexpr double kSparsityThreshold = 1e-3;

namespace detail {

inline Matrix gather_rows(const Matrix& src,
                          const std::vector<std::size_t>& rows) {
  Matrix out(rows.size(), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* s = src.row(rows[i]);
    double* d = out.row(i);
    for (std::size_t c = 0; c < src.cols(); ++c) d[c] = s[c];
  }
  return out;
}

}  // namespace detail

// Mapped attention of every internal node across the forest.
inline std::vector<SimplexPoint> all_attention_points(
    const ForestParams& forest) {
  std::vector<SimplexPoint> points;
  AttentionMapper mapper = forest.mapper();
  for (const TreeParams& tree : forest.trees)
    for (const GateParams& gate : tree.internal_nodes)
      points.push_back(map_forward(mapper, gate.attention_logits));
  return points;
}

inline double attention_sparsity(const ForestParams& forest,
                                 double threshold = kSparsityThreshold) {
  return sparsity_fraction(all_attention_points(forest), threshold);
}

// Metric on precomputed model outputs (standardized-space predictions for
// regression, raw scores for classification): regression MSE in original
// target units, classification argmax error rate.
inline double evaluate_predictions(const Matrix& outputs,
                                   const TargetVector& targets,
                                   const Standardizer& standardizer) {
  const std::size_t n = outputs.rows();
  if (n != targets.size())
    throw DimensionError("evaluate: prediction/target count mismatch");
  if (n == 0) throw InputError("evaluate: empty data");
  if (targets.task == TaskKind::regression) {
    if (outputs.cols() != 1)
      throw DimensionError("evaluate: regression expects one output");
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double pred = standardizer.unstandardize_prediction(outputs(i, 0));
      double r = pred - targets.values[i];
      sse += r * r;
    }
    return sse / static_cast<double>(n);
  }
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = outputs.row(i);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < outputs.cols(); ++k)
      if (row[k] > row[arg]) arg = k;
    if (static_cast<int>(arg) != targets.labels[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(n);
}

// Evaluates the forest on feature-standardized data against original-unit
// targets.
inline double evaluate(const ForestParams& forest,
                       const FeatureMatrix& features,
                       const TargetVector& targets,
                       const Standardizer& standardizer, int threads = 1) {
  Matrix outputs = forest_forward(forest, features.values, forest.mapper(),
                                  threads);
  return evaluate_predictions(outputs, targets, standardizer);
}

// Inference on raw (un-standardized) features: standardizes a copy with the
// model's statistics, runs the forest, and for regression maps predictions
// back to original target units. Classification rows are raw scores.
inline Matrix predict(const Model& model, const FeatureMatrix& raw,
                      int threads = 1) {
  if (raw.n_cols() != model.forest.num_features)
    throw DimensionError("predict: data has " + std::to_string(raw.n_cols()) +
                         " features, model expects " +
                         std::to_string(model.forest.num_features));
  FeatureMatrix copy = raw;
  model.standardizer.transform_features(copy);
  Matrix out = forest_forward(model.forest, copy.values,
                              model.forest.mapper(), threads);
  if (model.standardizer.task == TaskKind::regression)
    for (double& v : out.data())
      v = model.standardizer.unstandardize_prediction(v);
  return out;
}

namespace detail {

struct BatchTargets {
  Matrix regression;        // nb x 1, standardized
  std::vector<int> labels;  // classification
};

struct StepResult {
  double loss = 0.0;
  ForestGradients grads;
};

// One forward/backward evaluation of the configured ensemble loss.
inline StepResult ensemble_step(const ForestParams& forest, const Matrix& xb,
                                const BatchTargets& yb, const TrainConfig& cfg,
                                AttentionMapper mapper) {
  StepResult out;
  const bool classify = cfg.loss.kind == LossKind::cross_entropy;
  if (cfg.ensemble_loss_mode == EnsembleLossMode::loss_of_mean) {
    Matrix preds = forest_forward(forest, xb, mapper, cfg.threads);
    LossResult lr = classify ? compute_loss(preds, yb.labels, cfg.loss)
                             : compute_loss(preds, yb.regression, cfg.loss);
    out.loss = lr.loss;
    out.grads = forest_backward(forest, xb, lr.upstream, mapper, cfg.threads);
    return out;
  }
  // mean_of_losses: apply the loss to each tree's own output and average.
  const std::size_t k = forest.num_trees();
  const double inv_k = 1.0 / static_cast<double>(k);
  out.grads = ForestGradients::zeros_like(forest);
  Matrix block(xb.rows(), forest.output_dim);
  double total = 0.0;
  for (std::size_t h = 0; h < k; ++h) {
    detail::MappedTree mt =
        detail::map_tree_attention(forest.trees[h], mapper,
                                   forest.num_features);
    detail::tree_forward_batch(forest.trees[h], mt, xb, block);
    LossResult lr = classify ? compute_loss(block, yb.labels, cfg.loss)
                             : compute_loss(block, yb.regression, cfg.loss);
    total += lr.loss;
    for (double& v : lr.upstream.data()) v *= inv_k;
    detail::tree_backward_batch(forest.trees[h], mt, mapper, xb, lr.upstream,
                                out.grads.trees[h]);
  }
  out.loss = total * inv_k;
  return out;
}

// Mean per-sample loss over a whole dataset, evaluated in chunks.
inline double dataset_loss(const ForestParams& forest, const Matrix& x,
                           const BatchTargets& y, const TrainConfig& cfg,
                           AttentionMapper mapper) {
  const std::size_t n = x.rows();
  const bool classify = cfg.loss.kind == LossKind::cross_entropy;
  double total = 0.0;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < n; start += cfg.batch_size) {
    std::size_t end = std::min(start + cfg.batch_size, n);
    rows.resize(end - start);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = start + i;
    Matrix xb = gather_rows(x, rows);
    BatchTargets yb;
    if (classify) {
      yb.labels.resize(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i)
        yb.labels[i] = y.labels[rows[i]];
    } else {
      yb.regression = gather_rows(y.regression, rows);
    }
    Matrix preds = forest_forward(forest, xb, mapper, cfg.threads);
    LossResult lr = classify ? compute_loss(preds, yb.labels, cfg.loss)
                             : compute_loss(preds, yb.regression, cfg.loss);
    total += lr.loss * static_cast<double>(rows.size());
  }
  return total / static_cast<double>(n);
}

}  // namespace detail

// Full training loop: initialize, iterate seeded minibatch epochs with the
// configured optimizer, track the validation metric, and return the
// parameter snapshot from the best validation epoch. Stops after `patience`
// epochs without improvement or at max_epochs. Feature matrices must be
// standardized already; targets stay in original units (regression targets
// are standardized internally for the loss).
//
// When `log` is set, one line per epoch is written, tab-separated:
// epoch, train_loss, valid_metric, elapsed_seconds.
inline TrainResult train(const Dataset& train_data, const Dataset& valid_data,
                         const Dataset* test_data, const Standardizer& stats,
                         const TrainConfig& cfg,
                         const ImportanceVector* external_importance = nullptr,
                         std::ostream* log = nullptr) {
  cfg.validate();
  const TaskKind task = train_data.targets.task;
  const bool classify = task == TaskKind::classification;
  if (classify != (cfg.loss.kind == LossKind::cross_entropy))
    throw ConfigError(std::string("train: loss '") + to_string(cfg.loss.kind) +
                      "' does not match task '" + to_string(task) + "'");
  if (!train_data.features.standardized || !valid_data.features.standardized)
    throw ConfigError("train: features must be standardized first");
  if (test_data && !test_data->features.standardized)
    throw ConfigError("train: test features must be standardized first");
  const std::size_t n = train_data.features.n_rows();
  if (n != train_data.targets.size())
    throw DimensionError("train: feature/target count mismatch");
  const std::size_t m = train_data.features.n_cols();
  std::size_t output_dim = 1;
  if (classify) {
    output_dim = train_data.targets.num_classes;
    if (output_dim < 2)
      throw ConfigError("train: classification needs at least 2 classes");
  }

  // Initialization per the configured mode.
  ForestParams forest;
  if (cfg.initial_params.has_value()) {
    forest = *cfg.initial_params;
    forest.validate();
    if (forest.num_features != m || forest.output_dim != output_dim)
      throw DimensionError("train: initial_params shape mismatch");
  } else {
    forest = make_forest(cfg.num_trees, cfg.depth, m, output_dim,
                         cfg.attention);
    ImportanceVector importance;
    const ImportanceVector* imp_ptr = nullptr;
    if (cfg.init.mode == InitMode::data_aware) {
      if (external_importance) {
        imp_ptr = external_importance;
      } else {
        ImportanceConfig icfg;
        icfg.seed = derive_seed(cfg.seed, 0x19a7);
        importance = estimate_importance(train_data.features,
                                         train_data.targets, icfg);
        imp_ptr = &importance;
      }
    }
    init_attention(forest, imp_ptr, cfg.init);
    init_thresholds_and_leaves(forest);
  }

  AttentionMapper mapper = forest.mapper();
  detail::BatchTargets full_targets;
  if (classify) {
    full_targets.labels = train_data.targets.labels;
  } else {
    std::vector<double> y_std =
        stats.standardize_targets(train_data.targets.values);
    full_targets.regression = Matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) full_targets.regression(i, 0) = y_std[i];
  }

  TrainReport report;
  report.sparsity_start = attention_sparsity(forest);
  report.initial_train_loss = detail::dataset_loss(
      forest, train_data.features.values, full_targets, cfg, mapper);

  OptimizerState state = init_state(forest);
  ForestParams best_params = forest;
  double best_metric = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t epochs_since_best = 0;

  auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto blocks = make_batches(n, cfg.batch_size, cfg.seed, epoch);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      Matrix xb = detail::gather_rows(train_data.features.values, blocks[b]);
      detail::BatchTargets yb;
      if (classify) {
        yb.labels.resize(blocks[b].size());
        for (std::size_t i = 0; i < blocks[b].size(); ++i)
          yb.labels[i] = full_targets.labels[blocks[b][i]];
      } else {
        yb.regression = detail::gather_rows(full_targets.regression, blocks[b]);
      }
      detail::StepResult step = detail::ensemble_step(forest, xb, yb, cfg,
                                                      mapper);
      if (!std::isfinite(step.loss))
        throw NumericError("train: non-finite loss at epoch " +
                           std::to_string(epoch) + " batch " +
                           std::to_string(b + 1));
      apply_update(forest, step.grads, state, cfg.optimizer);
      epoch_loss += step.loss * static_cast<double>(blocks[b].size());
    }
    epoch_loss /= static_cast<double>(n);

    double metric = evaluate(forest, valid_data.features, valid_data.targets,
                             stats, cfg.threads);
    double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    report.epochs.push_back({epoch, epoch_loss, metric, elapsed});
    if (log) {
      char line[160];
      std::snprintf(line, sizeof(line), "%zu\t%.17g\t%.17g\t%.3f\n", epoch,
                    epoch_loss, metric, elapsed);
      (*log) << line;
    }

    if (metric < best_metric) {
      best_metric = metric;
      best_epoch = epoch;
      best_params = forest;
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
    }
    if (epochs_since_best >= cfg.patience) break;
  }

  report.best_epoch = best_epoch;
  report.best_valid_metric = best_metric;
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  report.sparsity_end = attention_sparsity(best_params);
  if (test_data)
    report.test_metric = evaluate(best_params, test_data->features,
                                  test_data->targets, stats, cfg.threads);

  return TrainResult{std::move(best_params), std::move(report)};
}

}  // namespace qforest
