// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file format (all integers little-endian):
//
//   magic      5 bytes   "ADPT1"
//   kind       u8        0 = full (every parameter), 1 = delta (trainable only)
//   backbone   u64       digest of the model architecture config
//   adapters   u64       digest of the adapter config, 0 when the model has none
//   count      u32       number of parameter records
//   count x record:
//     path_len u32, path (UTF-8, no terminator)
//     rank     u32, dims (rank x u32)
//     values   product(dims) x f64
//
// A delta checkpoint is loaded on top of a model that already holds the
// shared base weights.
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "ctcadapt/io.hpp"
#include "ctcadapt/model.hpp"
#include "ctcadapt/transfer.hpp"

namespace ctcadapt {

enum class CheckpointKind : std::uint8_t { full = 0, delta = 1 };

inline constexpr char kCheckpointMagic[5] = {'A', 'D', 'P', 'T', '1'};
inline constexpr std::size_t kCheckpointHeaderBytes = 5 + 1 + 8 + 8 + 4;

namespace detail {

inline std::size_t record_bytes(const ParamInfo& info) {
  return 4 + info.path.size() + 4 + 4 * info.shape.size() + 8 * info.numel();
}

}  // namespace detail

struct CheckpointHeader {
  CheckpointKind kind = CheckpointKind::full;
  std::uint64_t backbone_digest = 0;
  std::uint64_t adapter_digest = 0;
  std::uint32_t count = 0;
};

inline std::vector<char> serialize_checkpoint(const Model& model, CheckpointKind kind) {
  std::vector<const Parameter*> selected;
  for (const auto& p : model.parameters())
    if (kind == CheckpointKind::full || p.trainable) selected.push_back(&p);
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put(static_cast<std::uint8_t>(kind));
  w.put(config_digest(model.config()));
  w.put(config_digest(model.adapter_config()));
  w.put(static_cast<std::uint32_t>(selected.size()));
  for (const Parameter* p : selected) {
    w.put(static_cast<std::uint32_t>(p->path().size()));
    w.put_bytes(p->path().data(), p->path().size());
    w.put(static_cast<std::uint32_t>(p->tensor.rank()));
    for (std::size_t d : p->tensor.shape()) w.put(static_cast<std::uint32_t>(d));
    w.put_doubles(p->tensor.data());
  }
  return w.bytes();
}

inline void save_checkpoint(const Model& model, const std::string& path, CheckpointKind kind) {
  detail::write_file(path, serialize_checkpoint(model, kind));
}

inline CheckpointHeader read_checkpoint_header(detail::ByteReader& r) {
  const std::string magic = r.get_string(sizeof(kCheckpointMagic));
  if (magic != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw FormatError(r.source() + ": not a checkpoint (bad magic)");
  }
  CheckpointHeader h;
  const auto kind = r.get<std::uint8_t>();
  if (kind > 1) throw FormatError(r.source() + ": unknown checkpoint kind");
  h.kind = static_cast<CheckpointKind>(kind);
  h.backbone_digest = r.get<std::uint64_t>();
  h.adapter_digest = r.get<std::uint64_t>();
  h.count = r.get<std::uint32_t>();
  return h;
}

// Loads a checkpoint image into `model`.
//  - backbone digest must match the model's architecture;
//  - full: every non-adapter parameter must be present; a base checkpoint
//    without adapters may be loaded into a model that has them;
//  - delta: adapter digest must match too.
// Returns the header.
inline CheckpointHeader load_checkpoint_bytes(Model& model, std::vector<char> bytes, const std::string& source) {
  detail::ByteReader r(std::move(bytes), source);
  const CheckpointHeader h = read_checkpoint_header(r);
  if (h.backbone_digest != config_digest(model.config())) {
    throw ArtifactMismatchError(source + ": model config digest " + digest_hex(h.backbone_digest) +
                                " does not match " + digest_hex(config_digest(model.config())));
  }
  const std::uint64_t model_adapters = config_digest(model.adapter_config());
  const bool adapters_ok =
      h.adapter_digest == model_adapters || (h.kind == CheckpointKind::full && h.adapter_digest == 0);
  if (!adapters_ok) {
    throw ArtifactMismatchError(source + ": adapter config digest " + digest_hex(h.adapter_digest) +
                                " does not match " + digest_hex(model_adapters));
  }
  // Parse everything first so a bad file leaves the model untouched.
  std::vector<std::pair<Parameter*, std::vector<double>>> staged;
  std::set<std::string> loaded;
  for (std::uint32_t i = 0; i < h.count; ++i) {
    const std::string path = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    Parameter* p = model.find(path);
    if (!p) throw ArtifactMismatchError(source + ": unknown parameter " + path);
    if (p->tensor.shape() != shape) {
      throw ArtifactMismatchError(source + ": " + path + " has shape " + shape_str(shape) + ", model expects " +
                                  shape_str(p->tensor.shape()));
    }
    std::vector<double> values(shape_numel(shape));
    r.get_doubles(values);
    staged.emplace_back(p, std::move(values));
    loaded.insert(path);
  }
  if (!r.at_end()) throw FormatError(source + ": trailing bytes after last record");
  if (h.kind == CheckpointKind::full) {
    for (const auto& p : model.parameters()) {
      const bool optional = h.adapter_digest == 0 && p.info.group == ParamGroup::adapter;
      if (!optional && !loaded.count(p.path())) {
        throw ArtifactMismatchError(source + ": full checkpoint is missing " + p.path());
      }
    }
  }
  for (auto& [p, values] : staged) std::copy(values.begin(), values.end(), p->tensor.data().begin());
  return h;
}

inline CheckpointHeader load_checkpoint(Model& model, const std::string& path) {
  return load_checkpoint_bytes(model, detail::read_file(path), path);
}

inline CheckpointHeader peek_checkpoint_header(const std::string& path) {
  detail::ByteReader r(detail::read_file(path), path);
  return read_checkpoint_header(r);
}

// Bytes of a trainable-only checkpoint under `p`, computed from shapes.
inline std::size_t delta_checkpoint_size(const std::vector<ParamInfo>& layout, const ModelConfig& mc,
                                         const TransferPolicy& p) {
  validate_policy(p, mc, layout);
  std::size_t bytes = kCheckpointHeaderBytes;
  for (const auto& info : layout)
    if (is_trainable(info, p, mc.num_layers)) bytes += detail::record_bytes(info);
  return bytes;
}

inline std::size_t delta_checkpoint_size(const Model& model, const TransferPolicy& p) {
  return delta_checkpoint_size(model.layout(), model.config(), p);
}

inline std::size_t full_checkpoint_size(const std::vector<ParamInfo>& layout) {
  std::size_t bytes = kCheckpointHeaderBytes;
  for (const auto& info : layout) bytes += detail::record_bytes(info);
  return bytes;
}

}  // namespace ctcadapt
