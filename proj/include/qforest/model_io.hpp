#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "qforest/data.hpp"
#include "qforest/errors.hpp"
#include "qforest/forest.hpp"

namespace qforest {

static_assert(std::endian::native == std::endian::little,
              "model files are little-endian; big-endian hosts unsupported");

// A deployable unit: forest parameters plus the standardization statistics
// they were trained with.
struct Model {
  ForestParams forest;
  Standardizer standardizer;
};

// Binary model file, version 1. All multi-byte values little-endian.
//
//   offset 0   magic "QFRS"
//          4   u32 format_version (1)
//          8   u32 M (features)
//         12   u32 K (trees)
//         16   u32 depth
//         20   u32 C (output dim)
//         24   u32 attention kind (0 softmax, 1 sparsemax, 2 entmax15)
//         28   f32 sigmoid temperature (reserved; always 1.0)
//         32   f32 attention logits   K * (2^depth - 1) * M, tree-major,
//                                     breadth-first node order
//              f32 thresholds         K * (2^depth - 1), same order
//              f32 leaf responses     K * 2^depth * C, tree-major, leaf order
//              f32 feature means      M
//              f32 feature stds       M
//              u32 task (0 regression, 1 classification)
//              f32 target mean
//              f32 target std
//
// The total byte length is exactly determined by the header; a file of any
// other length is rejected.
namespace detail {

constexpr std::uint32_t kModelVersion = 1;
constexpr char kMagic[4] = {'Q', 'F', 'R', 'S'};

inline void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::vector<std::uint8_t>& buf, double v) {
  float f = static_cast<float>(v);
  if (std::isfinite(v) && !std::isfinite(f))
    throw NumericError("save_model: parameter exceeds 32-bit float range");
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(buf, bits);
}

struct Cursor {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos = 0;

  void need(std::size_t n, const char* field) {
    if (pos + n > size)
      throw FormatError(std::string("load_model: file truncated in ") + field);
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(data[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  float f32(const char* field) {
    std::uint32_t bits = u32(field);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
};

}  // namespace detail

inline void save_model(const Model& model, const std::string& path) {
  const ForestParams& f = model.forest;
  f.validate();
  if (model.standardizer.feature_mean.size() != f.num_features)
    throw DimensionError("save_model: standardizer width != num_features");

  std::vector<std::uint8_t> buf;
  buf.insert(buf.end(), detail::kMagic, detail::kMagic + 4);
  detail::put_u32(buf, detail::kModelVersion);
  detail::put_u32(buf, static_cast<std::uint32_t>(f.num_features));
  detail::put_u32(buf, static_cast<std::uint32_t>(f.num_trees()));
  detail::put_u32(buf, static_cast<std::uint32_t>(f.depth()));
  detail::put_u32(buf, static_cast<std::uint32_t>(f.output_dim));
  detail::put_u32(buf, static_cast<std::uint32_t>(f.attention_kind));
  detail::put_f32(buf, 1.0);  // sigmoid temperature, reserved

  for (const TreeParams& tree : f.trees)
    for (const GateParams& g : tree.internal_nodes)
      for (double v : g.attention_logits) detail::put_f32(buf, v);
  for (const TreeParams& tree : f.trees)
    for (const GateParams& g : tree.internal_nodes)
      detail::put_f32(buf, g.threshold);
  for (const TreeParams& tree : f.trees)
    for (const auto& q : tree.leaf_responses)
      for (double v : q) detail::put_f32(buf, v);

  for (double v : model.standardizer.feature_mean) detail::put_f32(buf, v);
  for (double v : model.standardizer.feature_std) detail::put_f32(buf, v);
  detail::put_u32(buf, model.standardizer.task == TaskKind::regression ? 0 : 1);
  detail::put_f32(buf, model.standardizer.target_mean);
  detail::put_f32(buf, model.standardizer.target_std);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("save_model: cannot open '" + path + "'");
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError("save_model: write failed for '" + path + "'");
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("load_model: cannot open '" + path + "'");
  std::vector<std::uint8_t> buf(std::istreambuf_iterator<char>(in), {});
  detail::Cursor cur{buf.data(), buf.size()};

  cur.need(4, "magic");
  if (std::memcmp(buf.data(), detail::kMagic, 4) != 0)
    throw FormatError("load_model: bad magic (not a model file)");
  cur.pos = 4;
  std::uint32_t version = cur.u32("format_version");
  if (version != detail::kModelVersion)
    throw FormatError("load_model: unsupported format_version " +
                      std::to_string(version));
  std::uint64_t m = cur.u32("num_features");
  std::uint64_t k = cur.u32("num_trees");
  std::uint64_t depth = cur.u32("depth");
  std::uint64_t c = cur.u32("output_dim");
  std::uint32_t kind = cur.u32("attention_kind");
  float temperature = cur.f32("sigmoid_temperature");
  if (m < 1 || k < 1 || depth < 1 || c < 1 || depth > 24)
    throw FormatError("load_model: header dimensions out of range");
  if (kind > 2)
    throw FormatError("load_model: unknown attention_kind code " +
                      std::to_string(kind));
  if (temperature != 1.0f)
    throw FormatError("load_model: unsupported sigmoid_temperature");

  const std::uint64_t n_int = (std::uint64_t{1} << depth) - 1;
  const std::uint64_t n_leaf = std::uint64_t{1} << depth;
  const std::uint64_t expected =
      32 + 4 * (k * n_int * m + k * n_int + k * n_leaf * c + 2 * m + 3);
  if (buf.size() < expected)
    throw FormatError("load_model: file truncated in parameter payload");
  if (buf.size() > expected)
    throw FormatError("load_model: trailing bytes after payload");

  Model model;
  ForestParams& f = model.forest;
  f.num_features = static_cast<std::size_t>(m);
  f.output_dim = static_cast<std::size_t>(c);
  f.attention_kind = static_cast<AttentionKind>(kind);
  f.trees.resize(static_cast<std::size_t>(k));
  for (TreeParams& tree : f.trees) {
    tree.depth = static_cast<int>(depth);
    tree.internal_nodes.resize(static_cast<std::size_t>(n_int));
    for (GateParams& g : tree.internal_nodes)
      g.attention_logits.resize(static_cast<std::size_t>(m));
    tree.leaf_responses.assign(static_cast<std::size_t>(n_leaf),
                               std::vector<double>(static_cast<std::size_t>(c)));
  }
  for (TreeParams& tree : f.trees)
    for (GateParams& g : tree.internal_nodes)
      for (double& v : g.attention_logits) v = cur.f32("attention logits");
  for (TreeParams& tree : f.trees)
    for (GateParams& g : tree.internal_nodes)
      g.threshold = cur.f32("thresholds");
  for (TreeParams& tree : f.trees)
    for (auto& q : tree.leaf_responses)
      for (double& v : q) v = cur.f32("leaf responses");

  Standardizer& s = model.standardizer;
  s.feature_mean.resize(static_cast<std::size_t>(m));
  s.feature_std.resize(static_cast<std::size_t>(m));
  s.constant_feature.assign(static_cast<std::size_t>(m), false);
  for (double& v : s.feature_mean) v = cur.f32("feature means");
  for (double& v : s.feature_std) v = cur.f32("feature stds");
  for (double v : s.feature_std)
    if (!(v > 0.0) || !std::isfinite(v))
      throw FormatError("load_model: non-positive feature std");
  std::uint32_t task = cur.u32("task");
  if (task > 1) throw FormatError("load_model: unknown task code");
  s.task = task == 0 ? TaskKind::regression : TaskKind::classification;
  s.target_mean = cur.f32("target mean");
  s.target_std = cur.f32("target std");
  if (!(s.target_std > 0.0) || !std::isfinite(s.target_std))
    throw FormatError("load_model: non-positive target std");

  f.validate();
  return model;
}

}  // namespace qforest
