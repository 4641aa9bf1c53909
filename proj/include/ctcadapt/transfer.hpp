// SPDX-License-Identifier: Apache-2.0
//
// Trainable-parameter selection for each transfer regime, and exact
// parameter accounting.
#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ctcadapt/layout.hpp"
#include "ctcadapt/model.hpp"

namespace ctcadapt {

enum class TransferMode { full_finetune, adapter, layernorm_only, topn_finetune, topn_adapter };

inline const char* to_string(TransferMode m) {
  switch (m) {
    case TransferMode::full_finetune: return "full_finetune";
    case TransferMode::adapter: return "adapter";
    case TransferMode::layernorm_only: return "layernorm_only";
    case TransferMode::topn_finetune: return "topn_finetune";
    case TransferMode::topn_adapter: return "topn_adapter";
  }
  return "?";
}

inline TransferMode transfer_mode_from_string(const std::string& s) {
  for (auto m : {TransferMode::full_finetune, TransferMode::adapter, TransferMode::layernorm_only,
                 TransferMode::topn_finetune, TransferMode::topn_adapter}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("transfer.mode", "unknown mode '" + s + "'");
}

struct TransferPolicy {
  TransferMode mode = TransferMode::adapter;
  std::size_t n = 0;  // topn_* only
  std::size_t freeze_transformer_steps = 0;  // fine-tune modes only

  static TransferPolicy full_finetune(std::size_t freeze_steps = 0) {
    return {TransferMode::full_finetune, 0, freeze_steps};
  }
  static TransferPolicy adapter() { return {TransferMode::adapter, 0, 0}; }
  static TransferPolicy layernorm_only() { return {TransferMode::layernorm_only, 0, 0}; }
  static TransferPolicy topn_finetune(std::size_t n, std::size_t freeze_steps = 0) {
    return {TransferMode::topn_finetune, n, freeze_steps};
  }
  static TransferPolicy topn_adapter(std::size_t n) { return {TransferMode::topn_adapter, n, 0}; }

  bool is_finetune() const { return mode == TransferMode::full_finetune || mode == TransferMode::topn_finetune; }
  bool is_topn() const { return mode == TransferMode::topn_finetune || mode == TransferMode::topn_adapter; }
  bool uses_adapters() const { return mode == TransferMode::adapter || mode == TransferMode::topn_adapter; }

  std::string label() const { return is_topn() ? std::string(to_string(mode)) + "(" + std::to_string(n) + ")" : to_string(mode); }
};

// Validates the policy against a parameter layout. Adapter modes need
// adapters at every block they train.
inline void validate_policy(const TransferPolicy& p, const ModelConfig& mc, const std::vector<ParamInfo>& layout) {
  if (p.is_topn() && (p.n < 1 || p.n > mc.num_layers)) {
    throw PolicyError("transfer.n: " + std::to_string(p.n) + " outside [1, " + std::to_string(mc.num_layers) + "]");
  }
  if (!p.is_finetune() && p.freeze_transformer_steps != 0) {
    throw PolicyError("transfer.freeze_transformer_steps applies to fine-tune modes only");
  }
  if (p.uses_adapters()) {
    std::vector<bool> has(mc.num_layers, false);
    for (const auto& info : layout)
      if (info.group == ParamGroup::adapter) has[*info.layer] = true;
    const std::size_t first = p.mode == TransferMode::topn_adapter ? mc.num_layers - p.n : 0;
    bool any = false;
    for (std::size_t l = 0; l < mc.num_layers; ++l) {
      any = any || has[l];
      if (p.mode == TransferMode::topn_adapter && l >= first && !has[l]) {
        throw PolicyError(p.label() + " needs adapters in layer " + std::to_string(l));
      }
    }
    if (!any) throw PolicyError(p.label() + " requires a model with adapters");
  }
}

// Whether a parameter trains under `p` at `step`. With no step, the
// steady-state (post-freeze) answer is returned.
//   full_finetune   blocks (+ learned positions) after the freeze window; classifier always
//   adapter         adapters, every layer norm, classifier
//   layernorm_only  every layer norm, classifier
//   topn_finetune   top-n blocks after the freeze window; classifier always
//   topn_adapter    adapters in the top-n blocks, every layer norm, classifier
// The frontend never trains.
inline bool is_trainable(const ParamInfo& info, const TransferPolicy& p, std::size_t num_layers,
                         std::optional<std::size_t> step = std::nullopt) {
  if (info.group == ParamGroup::classifier) return true;
  if (info.group == ParamGroup::frontend) return false;
  const bool thawed = !step || *step >= p.freeze_transformer_steps;
  const bool in_top = info.layer && *info.layer + p.n >= num_layers;
  switch (p.mode) {
    case TransferMode::full_finetune:
      return thawed;
    case TransferMode::topn_finetune:
      return thawed && in_top;
    case TransferMode::adapter:
      return info.group == ParamGroup::adapter || info.group == ParamGroup::layer_norm;
    case TransferMode::layernorm_only:
      return info.group == ParamGroup::layer_norm;
    case TransferMode::topn_adapter:
      return (info.group == ParamGroup::adapter && in_top) || info.group == ParamGroup::layer_norm;
  }
  return false;
}

// Sets every Parameter::trainable (and the matching requires_grad flag).
inline void apply_policy(Model& model, const TransferPolicy& p, std::size_t step) {
  validate_policy(p, model.config(), model.layout());
  for (auto& param : model.parameters()) {
    param.trainable = is_trainable(param.info, p, model.config().num_layers, step);
    param.tensor.set_requires_grad(param.trainable);
  }
}

struct ParamReportRow {
  std::string prefix;
  std::size_t count = 0;
  bool trainable = false;
};

struct ParamReport {
  std::size_t total = 0;
  std::size_t trainable = 0;
  double fraction = 0.0;
  std::vector<ParamReportRow> breakdown;

  void write_csv(std::ostream& os) const {
    os << "prefix,count,trainable\n";
    for (const auto& r : breakdown) os << r.prefix << ',' << r.count << ',' << (r.trainable ? 1 : 0) << '\n';
  }
};

// Exact counts from shapes. Fine-tune modes report the post-freeze set.
inline ParamReport count_params(const std::vector<ParamInfo>& layout, const ModelConfig& mc, const TransferPolicy& p) {
  validate_policy(p, mc, layout);
  ParamReport r;
  for (const auto& info : layout) {
    const bool t = is_trainable(info, p, mc.num_layers);
    const std::size_t n = info.numel();
    r.total += n;
    if (t) r.trainable += n;
    const std::string prefix = info.module_prefix();
    if (!r.breakdown.empty() && r.breakdown.back().prefix == prefix && r.breakdown.back().trainable == t) {
      r.breakdown.back().count += n;
    } else {
      r.breakdown.push_back({prefix, n, t});
    }
  }
  r.fraction = r.total ? static_cast<double>(r.trainable) / static_cast<double>(r.total) : 0.0;
  return r;
}

inline ParamReport count_params(const Model& model, const TransferPolicy& p) {
  return count_params(model.layout(), model.config(), p);
}

}  // namespace ctcadapt
