#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "qforest/attention.hpp"
#include "qforest/errors.hpp"
#include "qforest/forest.hpp"
#include "qforest/rng.hpp"

namespace qforest {

// Attention heatmap: one column per sampled internal node, one row per
// feature; every cell is a mapped attention weight in [0, 1] and each
// column sums to 1.
struct HeatmapGrid {
  std::size_t n_features = 0;
  std::size_t n_columns = 0;
  std::vector<double> cells;  // row-major, n_features x n_columns
  bool clamped = false;       // requested more columns than nodes exist

  double at(std::size_t feature, std::size_t column) const {
    return cells[feature * n_columns + column];
  }
};

// Samples `count` internal nodes uniformly at random (seeded, without
// replacement) across all trees and maps their logits through the forest's
// attention mapper. A count above the total node count is clamped.
inline HeatmapGrid build_heatmap(const ForestParams& forest, std::size_t count,
                                 std::uint64_t seed) {
  if (count < 1) throw ConfigError("build_heatmap: count must be >= 1");
  const std::size_t per_tree = forest.trees.front().num_internal();
  const std::size_t total = forest.num_trees() * per_tree;
  HeatmapGrid grid;
  if (count > total) {
    count = total;
    grid.clamped = true;
  }
  Rng rng(derive_seed(seed, 0x6ea7));
  std::vector<std::size_t> picks = rng.sample_without_replacement(total, count);

  const std::size_t m = forest.num_features;
  grid.n_features = m;
  grid.n_columns = count;
  grid.cells.assign(m * count, 0.0);
  AttentionMapper mapper = forest.mapper();
  for (std::size_t col = 0; col < count; ++col) {
    std::size_t node = picks[col];
    const TreeParams& tree = forest.trees[node / per_tree];
    const GateParams& gate = tree.internal_nodes[node % per_tree];
    SimplexPoint p = map_forward(mapper, gate.attention_logits);
    for (std::size_t f = 0; f < m; ++f)
      grid.cells[f * count + col] = p.weights[f];
  }
  return grid;
}

// Headerless CSV: n_features rows, n_columns values per row.
inline void write_heatmap_csv(const HeatmapGrid& grid,
                              const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("write_heatmap_csv: cannot open '" + path + "'");
  char buf[32];
  for (std::size_t f = 0; f < grid.n_features; ++f) {
    for (std::size_t c = 0; c < grid.n_columns; ++c) {
      std::snprintf(buf, sizeof(buf), "%.10g", grid.at(f, c));
      if (c) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw FormatError("write_heatmap_csv: write failed");
}

// Binary PGM (P5, maxval 255): width = columns, height = features, one byte
// per cell, round(255 * weight).
inline void write_heatmap_pgm(const HeatmapGrid& grid,
                              const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("write_heatmap_pgm: cannot open '" + path + "'");
  out << "P5\n" << grid.n_columns << ' ' << grid.n_features << "\n255\n";
  std::vector<std::uint8_t> row(grid.n_columns);
  for (std::size_t f = 0; f < grid.n_features; ++f) {
    for (std::size_t c = 0; c < grid.n_columns; ++c)
      row[c] = static_cast<std::uint8_t>(
          std::lround(255.0 * grid.at(f, c)));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw FormatError("write_heatmap_pgm: write failed");
}

}  // namespace qforest
