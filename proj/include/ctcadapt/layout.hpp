// SPDX-License-Identifier: Apache-2.0
//
// Enumerates every parameter of a configured model (path, shape, role)
// without allocating it. Model construction and parameter accounting both
// derive from this list.
//
// Path scheme:
//   frontend.conv.<i>.weight            [kernel*in_channels x channels]
//   frontend.proj.{weight,bias}
//   pos.embedding                       learned positions only
//   layer.<l>.attn.{q,k,v,o}.{weight,bias}
//   layer.<l>.ln_attn.{gamma,beta}
//   layer.<l>.ffn.{fc1,fc2}.{weight,bias}
//   layer.<l>.ln_ffn.{gamma,beta}
//   layer.<l>.adapter.<slot>.{down,up}.{weight,bias}   slot 0: after attention, 1: after FFN
//   head.{weight,bias}
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ctcadapt/config.hpp"
#include "ctcadapt/tensor.hpp"

namespace ctcadapt {

enum class ParamGroup { frontend, positional, attention, layer_norm, ffn, adapter, classifier };

inline const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::frontend: return "frontend";
    case ParamGroup::positional: return "positional";
    case ParamGroup::attention: return "attention";
    case ParamGroup::layer_norm: return "layer_norm";
    case ParamGroup::ffn: return "ffn";
    case ParamGroup::adapter: return "adapter";
    case ParamGroup::classifier: return "classifier";
  }
  return "?";
}

struct ParamInfo {
  std::string path;
  Shape shape;
  ParamGroup group = ParamGroup::frontend;
  std::optional<std::size_t> layer;  // transformer block index, when inside one

  std::size_t numel() const { return shape_numel(shape); }
  // Path without its final component, e.g. "layer.3.attn.q".
  std::string module_prefix() const { return path.substr(0, path.rfind('.')); }
};

namespace detail {

inline void push_linear(std::vector<ParamInfo>& out, const std::string& prefix, std::size_t in, std::size_t outw,
                        ParamGroup g, std::optional<std::size_t> layer, bool bias = true) {
  out.push_back({prefix + ".weight", {in, outw}, g, layer});
  if (bias) out.push_back({prefix + ".bias", {outw}, g, layer});
}

inline void push_adapter(std::vector<ParamInfo>& out, std::size_t layer, std::size_t slot, std::size_t d,
                         std::size_t bottleneck) {
  const std::string p = "layer." + std::to_string(layer) + ".adapter." + std::to_string(slot);
  push_linear(out, p + ".down", d, bottleneck, ParamGroup::adapter, layer);
  push_linear(out, p + ".up", bottleneck, d, ParamGroup::adapter, layer);
}

}  // namespace detail

inline std::vector<ParamInfo> adapter_layout(const ModelConfig& mc, const AdapterConfig& ac) {
  std::vector<ParamInfo> out;
  for (std::size_t l : ac.placement_layers)
    for (std::size_t slot = 0; slot < kAdapterSlotsPerBlock; ++slot)
      detail::push_adapter(out, l, slot, mc.d_model, ac.bottleneck);
  return out;
}

inline std::vector<ParamInfo> parameter_layout(const ModelConfig& mc, const std::optional<AdapterConfig>& ac) {
  mc.validate();
  if (ac) ac->validate(mc.num_layers);
  std::vector<ParamInfo> out;
  const std::size_t d = mc.d_model;

  if (mc.frontend.kind == FrontendKind::conv_stack) {
    std::size_t in_ch = mc.frontend.input_dim;
    for (std::size_t i = 0; i < mc.frontend.layers.size(); ++i) {
      const auto& l = mc.frontend.layers[i];
      out.push_back({"frontend.conv." + std::to_string(i) + ".weight", {l.kernel * in_ch, l.channels},
                     ParamGroup::frontend, std::nullopt});
      in_ch = l.channels;
    }
    detail::push_linear(out, "frontend.proj", in_ch, d, ParamGroup::frontend, std::nullopt);
  }
  if (mc.positional == Positional::learned) {
    out.push_back({"pos.embedding", {mc.max_seq_len, d}, ParamGroup::positional, std::nullopt});
  }

  for (std::size_t l = 0; l < mc.num_layers; ++l) {
    const std::string p = "layer." + std::to_string(l);
    for (const char* name : {"q", "k", "v", "o"})
      detail::push_linear(out, p + ".attn." + name, d, d, ParamGroup::attention, l);
    out.push_back({p + ".ln_attn.gamma", {d}, ParamGroup::layer_norm, l});
    out.push_back({p + ".ln_attn.beta", {d}, ParamGroup::layer_norm, l});
    detail::push_linear(out, p + ".ffn.fc1", d, mc.d_ffn, ParamGroup::ffn, l);
    detail::push_linear(out, p + ".ffn.fc2", mc.d_ffn, d, ParamGroup::ffn, l);
    out.push_back({p + ".ln_ffn.gamma", {d}, ParamGroup::layer_norm, l});
    out.push_back({p + ".ln_ffn.beta", {d}, ParamGroup::layer_norm, l});
    if (ac && ac->placed(l)) {
      for (std::size_t slot = 0; slot < kAdapterSlotsPerBlock; ++slot)
        detail::push_adapter(out, l, slot, d, ac->bottleneck);
    }
  }

  detail::push_linear(out, "head", d, mc.vocab_size + 1, ParamGroup::classifier, std::nullopt);
  return out;
}

inline std::size_t total_parameters(const std::vector<ParamInfo>& layout) {
  std::size_t n = 0;
  for (const auto& p : layout) n += p.numel();
  return n;
}

}  // namespace ctcadapt
