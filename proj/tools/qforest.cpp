// Command-line front end: train, predict, export-attention, importance.
//
// Exit codes: 0 success, 1 usage/config/data error, 2 numeric failure.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qforest/qforest.hpp"

namespace {

using namespace qforest;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;

std::string format_double(double v, const char* fmt = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

struct CommonDataFlags {
  std::string data;
  std::string target;
  bool no_header = false;
  std::string delimiter = ",";

  char delim() const {
    if (delimiter.size() != 1)
      throw ConfigError("delimiter must be a single character");
    return delimiter[0];
  }
};

struct TrainFlags {
  CommonDataFlags io;
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
  std::size_t trees = 256;
  int depth = 5;
  std::size_t batch = 512;
  double lr = 0.05;
  double weight_decay = 0.0;
  OptimizerKind optimizer = OptimizerKind::qhadam;
  AttentionKind attention = AttentionKind::entmax15;
  InitMode init = InitMode::data_aware;
  double init_scale = 1.0;
  double init_noise = 0.1;
  LossKind loss = LossKind::mse;
  double huber_delta = 1.0;
  EnsembleLossMode ensemble_loss = EnsembleLossMode::loss_of_mean;
  std::uint64_t seed = 0;
  std::string out = "model.qf";
  std::string log_path;
  std::string import_importance;
  std::size_t epochs = 100;
  std::size_t patience = 10;
  int threads = 1;
};

ImportanceVector read_importance_csv(const std::string& path,
                                     const std::vector<std::string>& names) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open importance file '" + path + "'");
  std::map<std::string, double> by_name;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos)
      throw ParseError("importance file line " + std::to_string(lineno) +
                       ": expected 'name,score'");
    std::string name = detail::trim(line.substr(0, comma));
    std::string score_str = detail::trim(line.substr(comma + 1));
    double score;
    if (!detail::parse_double(score_str, score)) {
      if (lineno == 1) continue;  // header row
      throw ParseError("importance file line " + std::to_string(lineno) +
                       ": cannot parse score '" + score_str + "'");
    }
    if (score < 0.0)
      throw InputError("importance file: negative score for '" + name + "'");
    by_name[name] = score;
  }
  ImportanceVector imp;
  imp.scores.resize(names.size());
  double total = 0.0;
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto it = by_name.find(names[i]);
    if (it == by_name.end())
      throw ConfigError("importance file: no entry for feature '" + names[i] +
                        "'");
    imp.scores[i] = it->second;
    total += it->second;
  }
  if (total <= 0.0)
    throw InputError("importance file: scores sum to zero");
  for (double& s : imp.scores) s /= total;
  return imp;
}

int cmd_train(const TrainFlags& f) {
  TaskKind task = f.loss == LossKind::cross_entropy
                      ? TaskKind::classification
                      : TaskKind::regression;
  Dataset data = load_csv(f.io.data, f.io.target, !f.io.no_header, task,
                          f.io.delim());

  SplitFractions fractions;
  fractions.valid = f.valid_fraction;
  fractions.test = f.test_fraction;
  fractions.train = 1.0 - f.valid_fraction - f.test_fraction;
  SplitResult splits = split(data, fractions, f.seed);

  Standardizer stats = Standardizer::fit(splits.train.features,
                                         splits.train.targets);
  stats.transform_features(splits.train.features);
  stats.transform_features(splits.valid.features);
  if (splits.has_test) stats.transform_features(splits.test.features);

  TrainConfig cfg;
  cfg.num_trees = f.trees;
  cfg.depth = f.depth;
  cfg.batch_size = f.batch;
  cfg.max_epochs = f.epochs;
  cfg.patience = f.patience;
  cfg.attention = f.attention;
  cfg.loss.kind = f.loss;
  cfg.loss.huber_delta = f.huber_delta;
  cfg.optimizer.kind = f.optimizer;
  cfg.optimizer.learning_rate = f.lr;
  cfg.optimizer.weight_decay = f.weight_decay;
  cfg.init.mode = f.init;
  cfg.init.scale = f.init_scale;
  cfg.init.noise_std = f.init_noise;
  cfg.init.seed = f.seed;
  cfg.ensemble_loss_mode = f.ensemble_loss;
  cfg.seed = f.seed;
  cfg.threads = f.threads;

  ImportanceVector imported;
  const ImportanceVector* imp_ptr = nullptr;
  if (!f.import_importance.empty()) {
    imported = read_importance_csv(f.import_importance,
                                   data.features.feature_names);
    imp_ptr = &imported;
  }

  std::string log_path = f.log_path.empty() ? f.out + ".metrics.tsv"
                                            : f.log_path;
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw FormatError("cannot open metrics log '" + log_path + "'");

  TrainResult result =
      train(splits.train, splits.valid,
            splits.has_test ? &splits.test : nullptr, stats, cfg, imp_ptr,
            &log);

  save_model(Model{result.params, stats}, f.out);

  const TrainReport& r = result.report;
  std::cout << "epochs_run\t" << r.epochs.size() << "\n"
            << "best_epoch\t" << r.best_epoch << "\n"
            << "best_valid_metric\t" << format_double(r.best_valid_metric)
            << "\n";
  if (splits.has_test)
    std::cout << (task == TaskKind::regression ? "test_mse\t"
                                               : "test_error_rate\t")
              << format_double(r.test_metric) << "\n";
  std::cout << "attention_sparsity_start\t" << format_double(r.sparsity_start)
            << "\nattention_sparsity_end\t" << format_double(r.sparsity_end)
            << "\nmodel\t" << f.out << "\nmetrics_log\t" << log_path << "\n";
  return kExitOk;
}

struct PredictFlags {
  std::string model;
  std::string data;
  std::string out;
  std::string target;  // optional; when set, a metric is printed
  bool no_header = false;
  std::string delimiter = ",";
  int threads = 1;
};

int cmd_predict(const PredictFlags& f) {
  Model model = load_model(f.model);
  char delim = f.delimiter.size() == 1 ? f.delimiter[0] : ',';
  if (f.delimiter.size() != 1)
    throw ConfigError("delimiter must be a single character");

  FeatureMatrix features;
  TargetVector targets;
  bool have_targets = !f.target.empty();
  if (have_targets) {
    Dataset d = load_csv(f.data, f.target, !f.no_header,
                         model.standardizer.task, delim);
    features = std::move(d.features);
    targets = std::move(d.targets);
  } else {
    features = load_features_csv(f.data, !f.no_header, delim);
  }

  Matrix preds = predict(model, features, f.threads);

  std::ofstream out(f.out, std::ios::trunc);
  if (!out) throw FormatError("cannot open output '" + f.out + "'");
  if (model.standardizer.task == TaskKind::regression) {
    out << "prediction\n";
    for (std::size_t i = 0; i < preds.rows(); ++i)
      out << format_double(preds(i, 0), "%.17g") << "\n";
  } else {
    const std::size_t c = preds.cols();
    out << "class";
    for (std::size_t k = 0; k < c; ++k) out << ",p" << k;
    out << "\n";
    std::vector<double> p(c);
    for (std::size_t i = 0; i < preds.rows(); ++i) {
      const double* row = preds.row(i);
      double mx = row[0];
      std::size_t arg = 0;
      for (std::size_t k = 1; k < c; ++k)
        if (row[k] > mx) {
          mx = row[k];
          arg = k;
        }
      double sum = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        p[k] = std::exp(row[k] - mx);
        sum += p[k];
      }
      out << arg;
      for (std::size_t k = 0; k < c; ++k)
        out << ',' << format_double(p[k] / sum);
      out << "\n";
    }
  }
  if (!out) throw FormatError("write failed for '" + f.out + "'");

  if (have_targets) {
    if (model.standardizer.task == TaskKind::regression) {
      double sse = 0.0;
      for (std::size_t i = 0; i < preds.rows(); ++i) {
        double r = preds(i, 0) - targets.values[i];
        sse += r * r;
      }
      std::cout << "mse\t"
                << format_double(sse / static_cast<double>(preds.rows()),
                                 "%.17g")
                << "\n";
    } else {
      std::size_t wrong = 0;
      for (std::size_t i = 0; i < preds.rows(); ++i) {
        const double* row = preds.row(i);
        std::size_t arg = 0;
        for (std::size_t k = 1; k < preds.cols(); ++k)
          if (row[k] > row[arg]) arg = k;
        if (static_cast<int>(arg) != targets.labels[i]) ++wrong;
      }
      std::cout << "error_rate\t"
                << format_double(static_cast<double>(wrong) /
                                     static_cast<double>(preds.rows()),
                                 "%.17g")
                << "\n";
    }
  }
  std::cout << "predictions\t" << f.out << "\n";
  return kExitOk;
}

struct ExportFlags {
  std::string model;
  std::size_t count = 120;
  std::uint64_t seed = 0;
  std::string format = "csv";
  std::string out;
};

int cmd_export_attention(const ExportFlags& f) {
  Model model = load_model(f.model);
  HeatmapGrid grid = build_heatmap(model.forest, f.count, f.seed);
  if (grid.clamped)
    std::cerr << "warning: requested " << f.count
              << " columns but the model has only " << grid.n_columns
              << " internal nodes; clamped\n";
  if (f.format == "csv")
    write_heatmap_csv(grid, f.out);
  else if (f.format == "pgm")
    write_heatmap_pgm(grid, f.out);
  else
    throw ConfigError("unknown format '" + f.format + "' (use csv or pgm)");
  std::cout << "heatmap\t" << f.out << "\t" << grid.n_features << "x"
            << grid.n_columns << "\n";
  return kExitOk;
}

struct ImportanceFlags {
  CommonDataFlags io;
  std::string out;
  TaskKind task = TaskKind::regression;
  std::uint64_t seed = 0x109e57;
};

int cmd_importance(const ImportanceFlags& f) {
  Dataset data = load_csv(f.io.data, f.io.target, !f.io.no_header, f.task,
                          f.io.delim());
  ImportanceConfig cfg;
  cfg.seed = f.seed;
  ImportanceVector imp = estimate_importance(data.features, data.targets, cfg);
  if (imp.uniform_fallback)
    std::cerr << "warning: no split gain found (constant target?); "
                 "importance is uniform\n";

  std::vector<std::size_t> order(imp.scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return imp.scores[a] > imp.scores[b];
  });

  std::ofstream out(f.out, std::ios::trunc);
  if (!out) throw FormatError("cannot open output '" + f.out + "'");
  out << "feature,importance\n";
  for (std::size_t i : order)
    out << data.features.feature_names[i] << ','
        << format_double(imp.scores[i], "%.17g") << "\n";
  if (!out) throw FormatError("write failed for '" + f.out + "'");
  std::cout << "importance\t" << f.out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable decision forests with sparse attention"};
  app.require_subcommand(1);

  TrainFlags tf;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a forest on a CSV");
  train_cmd->set_config("--config")->description(
      "key = value file; command-line flags override it");
  train_cmd->add_option("--data", tf.io.data, "Training CSV file")->required();
  train_cmd->add_option("--target", tf.io.target, "Target column name")
      ->required();
  train_cmd->add_option("--valid", tf.valid_fraction,
                        "Validation fraction (default 0.1)");
  train_cmd->add_option("--test", tf.test_fraction,
                        "Test fraction (default 0.1; 0 disables)");
  train_cmd->add_option("--trees", tf.trees, "Number of trees (default 256)");
  train_cmd->add_option("--depth", tf.depth, "Tree depth (default 5)");
  train_cmd->add_option("--batch", tf.batch, "Batch size (default 512)");
  train_cmd->add_option("--lr", tf.lr, "Learning rate (default 0.05)");
  train_cmd->add_option("--weight-decay", tf.weight_decay,
                        "Decoupled weight decay (default 0)");
  train_cmd->add_option("--optimizer", tf.optimizer, "sgd | adam | qhadam")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, OptimizerKind>{
              {"sgd", OptimizerKind::sgd},
              {"adam", OptimizerKind::adam},
              {"qhadam", OptimizerKind::qhadam}}));
  train_cmd->add_option("--attention", tf.attention,
                        "softmax | sparsemax | entmax15")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, AttentionKind>{
              {"softmax", AttentionKind::softmax},
              {"sparsemax", AttentionKind::sparsemax},
              {"entmax15", AttentionKind::entmax15}}));
  train_cmd->add_option("--init", tf.init, "random | data-aware")
      ->transform(CLI::CheckedTransformer(std::map<std::string, InitMode>{
          {"random", InitMode::random}, {"data-aware", InitMode::data_aware}}));
  train_cmd->add_option("--init-scale", tf.init_scale,
                        "Data-aware init logit scale (default 1)");
  train_cmd->add_option("--init-noise", tf.init_noise,
                        "Init noise std (default 0.1)");
  train_cmd->add_option("--loss", tf.loss,
                        "mse | mae | huber | cross-entropy")
      ->transform(CLI::CheckedTransformer(std::map<std::string, LossKind>{
          {"mse", LossKind::mse},
          {"mae", LossKind::mae},
          {"huber", LossKind::huber},
          {"cross-entropy", LossKind::cross_entropy}}));
  train_cmd->add_option("--huber-delta", tf.huber_delta,
                        "Huber transition point (default 1)");
  train_cmd->add_option("--ensemble-loss", tf.ensemble_loss,
                        "loss-of-mean | mean-of-losses")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, EnsembleLossMode>{
              {"loss-of-mean", EnsembleLossMode::loss_of_mean},
              {"mean-of-losses", EnsembleLossMode::mean_of_losses}}));
  train_cmd->add_option("--seed", tf.seed, "Master seed (default 0)");
  train_cmd->add_option("--out", tf.out, "Model output path");
  train_cmd->add_option("--log", tf.log_path,
                        "Metrics TSV path (default <out>.metrics.tsv)");
  train_cmd->add_option("--import-importance", tf.import_importance,
                        "CSV of feature,score to use instead of the built-in "
                        "estimator");
  train_cmd->add_option("--epochs", tf.epochs, "Max epochs (default 100)");
  train_cmd->add_option("--patience", tf.patience,
                        "Early-stop patience (default 10)");
  train_cmd->add_option("--threads", tf.threads, "Worker threads (default 1)");
  train_cmd->add_flag("--no-header", tf.io.no_header,
                      "CSV has no header row");
  train_cmd->add_option("--delimiter", tf.io.delimiter, "CSV delimiter");

  PredictFlags pf;
  CLI::App* predict_cmd =
      app.add_subcommand("predict", "Predict with a trained model");
  predict_cmd->add_option("--model", pf.model, "Model file")->required();
  predict_cmd->add_option("--data", pf.data, "Input CSV")->required();
  predict_cmd->add_option("--out", pf.out, "Predictions CSV")->required();
  predict_cmd->add_option("--target", pf.target,
                          "Target column in the input (dropped from features; "
                          "enables the printed metric)");
  predict_cmd->add_flag("--no-header", pf.no_header, "CSV has no header row");
  predict_cmd->add_option("--delimiter", pf.delimiter, "CSV delimiter");
  predict_cmd->add_option("--threads", pf.threads, "Worker threads");

  ExportFlags ef;
  CLI::App* export_cmd = app.add_subcommand(
      "export-attention", "Sample node attention vectors into a heatmap");
  export_cmd->add_option("--model", ef.model, "Model file")->required();
  export_cmd->add_option("--count", ef.count,
                         "Number of nodes to sample (default 120)");
  export_cmd->add_option("--seed", ef.seed, "Sampling seed");
  export_cmd->add_option("--format", ef.format, "csv | pgm");
  export_cmd->add_option("--out", ef.out, "Output path")->required();

  ImportanceFlags impf;
  CLI::App* imp_cmd = app.add_subcommand(
      "importance", "Estimate per-feature importance from a CSV");
  imp_cmd->add_option("--data", impf.io.data, "Input CSV")->required();
  imp_cmd->add_option("--target", impf.io.target, "Target column")->required();
  imp_cmd->add_option("--out", impf.out, "Output CSV")->required();
  imp_cmd->add_option("--task", impf.task, "regression | classification")
      ->transform(CLI::CheckedTransformer(std::map<std::string, TaskKind>{
          {"regression", TaskKind::regression},
          {"classification", TaskKind::classification}}));
  imp_cmd->add_option("--seed", impf.seed, "Subsampling seed");
  imp_cmd->add_flag("--no-header", impf.io.no_header, "CSV has no header row");
  imp_cmd->add_option("--delimiter", impf.io.delimiter, "CSV delimiter");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(tf);
    if (*predict_cmd) return cmd_predict(pf);
    if (*export_cmd) return cmd_export_attention(ef);
    if (*imp_cmd) return cmd_importance(impf);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
