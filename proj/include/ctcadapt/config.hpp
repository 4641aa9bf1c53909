// SPDX-License-Identifier: Apache-2.0
//
// Architecture configuration for the encoder and its adapters, plus the
// strict JSON reader shared by every config section.
#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <type_traits>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctcadapt/error.hpp"
#include "ctcadapt/rng.hpp"

namespace ctcadapt {

using json = nlohmann::json;

namespace detail {

// Reads keys from one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw ConfigError(section_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    return convert<T>(key);
  }

  template <class T>
  std::optional<T> get_optional(const std::string& key) {
    seen_.insert(key);
    if (!has(key)) return std::nullopt;
    return convert<T>(key);
  }

  template <class T>
  T require(const std::string& key) {
    seen_.insert(key);
    if (!has(key)) throw ConfigError(field(key), "required key missing");
    return convert<T>(key);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string field(const std::string& key) const { return section_.empty() ? key : section_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key), "unknown key");
    }
  }

 private:
  template <class T>
  T convert(const std::string& key) const {
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      const json& v = j_.at(key);
      if (v.is_number_integer() && v.get<long long>() < 0) throw ConfigError(field(key), "must be non-negative");
      if (!v.is_number_integer()) throw ConfigError(field(key), "expected a non-negative integer");
    }
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(field(key), std::string("wrong type (") + e.what() + ")");
    }
  }

  const json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline std::uint64_t json_digest(const json& j) { return fnv1a64(j.dump()); }

inline std::string digest_hex(std::uint64_t d) {
  static const char* kHex = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, d >>= 4) s[static_cast<std::size_t>(i)] = kHex[d & 0xF];
  return s;
}

enum class FrontendKind { identity, conv_stack };
enum class Positional { sinusoidal, learned };
enum class Nonlinearity { gelu, relu };

struct ConvLayerSpec {
  std::size_t channels = 512;
  std::size_t kernel = 3;
  std::size_t stride = 2;
};

struct FrontendConfig {
  FrontendKind kind = FrontendKind::identity;
  std::size_t input_dim = 1;  // conv_stack only; identity frames are d_model wide
  std::vector<ConvLayerSpec> layers;
};

struct ModelConfig {
  std::size_t num_layers = 12;
  std::size_t d_model = 768;
  std::size_t num_heads = 12;
  std::size_t d_ffn = 3072;
  std::size_t vocab_size = 31;  // excludes blank
  FrontendConfig frontend;
  std::size_t max_seq_len = 4096;
  Positional positional = Positional::sinusoidal;
  double layer_norm_eps = 1e-5;

  std::size_t input_dim() const {
    return frontend.kind == FrontendKind::identity ? d_model : frontend.input_dim;
  }
  std::size_t blank() const { return vocab_size; }

  void validate() const {
    if (num_layers < 1) throw ConfigError("model.num_layers", "must be >= 1");
    if (d_model < 1) throw ConfigError("model.d_model", "must be >= 1");
    if (num_heads < 1 || d_model % num_heads != 0)
      throw ConfigError("model.num_heads", "must divide d_model");
    if (d_ffn < 1) throw ConfigError("model.d_ffn", "must be >= 1");
    if (vocab_size < 1) throw ConfigError("model.vocab_size", "must be >= 1");
    if (max_seq_len < 1) throw ConfigError("model.max_seq_len", "must be >= 1");
    if (!(layer_norm_eps >= 0.0)) throw ConfigError("model.layer_norm_eps", "must be >= 0");
    if (frontend.kind == FrontendKind::conv_stack) {
      if (frontend.input_dim < 1) throw ConfigError("model.frontend.input_dim", "must be >= 1");
      if (frontend.layers.empty()) throw ConfigError("model.frontend.layers", "conv_stack needs at least one layer");
      for (const auto& l : frontend.layers) {
        if (l.channels < 1 || l.kernel < 1 || l.stride < 1)
          throw ConfigError("model.frontend.layers", "channels, kernel and stride must be >= 1");
      }
    }
  }

  // Output length of the frontend for t input frames (0 when too short).
  std::size_t frontend_output_length(std::size_t t) const {
    if (frontend.kind == FrontendKind::identity) return t;
    for (const auto& l : frontend.layers) {
      if (t < l.kernel) return 0;
      t = (t - l.kernel) / l.stride + 1;
    }
    return t;
  }
};

// Two adapter slots per block.
enum class AdapterPosition : std::size_t { after_attention = 0, after_ffn = 1 };
inline constexpr std::size_t kAdapterSlotsPerBlock = 2;

struct AdapterConfig {
  std::size_t bottleneck = 256;
  std::vector<std::size_t> placement_layers;  // sorted, unique
  Nonlinearity nonlinearity = Nonlinearity::gelu;

  static AdapterConfig all_layers(std::size_t num_layers, std::size_t bottleneck) {
    return top_layers(num_layers, num_layers, bottleneck);
  }

  // The n highest-indexed blocks.
  static AdapterConfig top_layers(std::size_t num_layers, std::size_t n, std::size_t bottleneck) {
    AdapterConfig ac;
    ac.bottleneck = bottleneck;
    for (std::size_t i = num_layers - std::min(n, num_layers); i < num_layers; ++i) ac.placement_layers.push_back(i);
    return ac;
  }

  bool placed(std::size_t layer) const {
    return std::binary_search(placement_layers.begin(), placement_layers.end(), layer);
  }

  void validate(std::size_t num_layers) const {
    if (bottleneck < 1) throw ConfigError("adapter.bottleneck", "must be >= 1");
    if (!std::is_sorted(placement_layers.begin(), placement_layers.end()) ||
        std::adjacent_find(placement_layers.begin(), placement_layers.end()) != placement_layers.end())
      throw ConfigError("adapter.placement", "layer indices must be sorted and unique");
    for (std::size_t l : placement_layers) {
      if (l >= num_layers) throw ConfigError("adapter.placement", "layer " + std::to_string(l) + " out of range");
    }
  }
};

// ---------------------------------------------------------------------------
// JSON mapping
// ---------------------------------------------------------------------------

inline json to_json(const ModelConfig& c) {
  json fe;
  if (c.frontend.kind == FrontendKind::identity) {
    fe = {{"kind", "identity"}};
  } else {
    json layers = json::array();
    for (const auto& l : c.frontend.layers)
      layers.push_back({{"channels", l.channels}, {"kernel", l.kernel}, {"stride", l.stride}});
    fe = {{"kind", "conv_stack"}, {"input_dim", c.frontend.input_dim}, {"layers", layers}};
  }
  return {{"num_layers", c.num_layers},
          {"d_model", c.d_model},
          {"num_heads", c.num_heads},
          {"d_ffn", c.d_ffn},
          {"vocab_size", c.vocab_size},
          {"max_seq_len", c.max_seq_len},
          {"positional", c.positional == Positional::sinusoidal ? "sinusoidal" : "learned"},
          {"layer_norm_eps", c.layer_norm_eps},
          {"frontend", fe}};
}

inline ModelConfig model_config_from_json(const json& j) {
  detail::ObjectReader r(j, "model");
  ModelConfig c;
  c.num_layers = r.get("num_layers", c.num_layers);
  c.d_model = r.get("d_model", c.d_model);
  c.num_heads = r.get("num_heads", c.num_heads);
  c.d_ffn = r.get("d_ffn", c.d_ffn);
  c.vocab_size = r.get("vocab_size", c.vocab_size);
  c.max_seq_len = r.get("max_seq_len", c.max_seq_len);
  c.layer_norm_eps = r.get("layer_norm_eps", c.layer_norm_eps);
  const auto pos = r.get<std::string>("positional", "sinusoidal");
  if (pos == "sinusoidal") {
    c.positional = Positional::sinusoidal;
  } else if (pos == "learned") {
    c.positional = Positional::learned;
  } else {
    throw ConfigError("model.positional", "expected sinusoidal or learned");
  }
  if (r.has("frontend")) {
    detail::ObjectReader fr(r.raw("frontend"), "model.frontend");
    const auto kind = fr.require<std::string>("kind");
    if (kind == "identity") {
      c.frontend.kind = FrontendKind::identity;
    } else if (kind == "conv_stack") {
      c.frontend.kind = FrontendKind::conv_stack;
      c.frontend.input_dim = fr.get<std::size_t>("input_dim", 1);
      const json layers = fr.require<json>("layers");
      if (!layers.is_array()) throw ConfigError("model.frontend.layers", "expected an array");
      for (std::size_t i = 0; i < layers.size(); ++i) {
        detail::ObjectReader lr(layers[i], "model.frontend.layers[" + std::to_string(i) + "]");
        ConvLayerSpec l;
        l.channels = lr.require<std::size_t>("channels");
        l.kernel = lr.require<std::size_t>("kernel");
        l.stride = lr.require<std::size_t>("stride");
        lr.finish();
        c.frontend.layers.push_back(l);
      }
    } else {
      throw ConfigError("model.frontend.kind", "expected identity or conv_stack");
    }
    fr.finish();
  }
  r.finish();
  c.validate();
  return c;
}

inline json to_json(const AdapterConfig& a) {
  return {{"bottleneck", a.bottleneck},
          {"placement", a.placement_layers},
          {"nonlinearity", a.nonlinearity == Nonlinearity::gelu ? "gelu" : "relu"}};
}

// "placement" accepts "all", "top:N", or an explicit index list.
inline AdapterConfig adapter_config_from_json(const json& j, std::size_t num_layers) {
  detail::ObjectReader r(j, "adapter");
  AdapterConfig a;
  a.bottleneck = r.get<std::size_t>("bottleneck", 256);
  const auto nl = r.get<std::string>("nonlinearity", "gelu");
  if (nl == "gelu") {
    a.nonlinearity = Nonlinearity::gelu;
  } else if (nl == "relu") {
    a.nonlinearity = Nonlinearity::relu;
  } else {
    throw ConfigError("adapter.nonlinearity", "expected gelu or relu");
  }
  const json placement = r.has("placement") ? r.raw("placement") : json("all");
  if (placement.is_string()) {
    const auto s = placement.get<std::string>();
    if (s == "all") {
      a.placement_layers = AdapterConfig::all_layers(num_layers, a.bottleneck).placement_layers;
    } else if (s.rfind("top:", 0) == 0) {
      std::size_t n = 0;
      try {
        n = std::stoul(s.substr(4));
      } catch (const std::exception&) {
        throw ConfigError("adapter.placement", "malformed top:N");
      }
      if (n < 1 || n > num_layers) throw ConfigError("adapter.placement", "top:N needs 1 <= N <= num_layers");
      a.placement_layers = AdapterConfig::top_layers(num_layers, n, a.bottleneck).placement_layers;
    } else {
      throw ConfigError("adapter.placement", "expected \"all\", \"top:N\" or an index list");
    }
  } else if (placement.is_array()) {
    try {
      a.placement_layers = placement.get<std::vector<std::size_t>>();
    } catch (const json::exception&) {
      throw ConfigError("adapter.placement", "index list must hold non-negative integers");
    }
    std::sort(a.placement_layers.begin(), a.placement_layers.end());
  } else {
    throw ConfigError("adapter.placement", "expected a string or an array");
  }
  r.finish();
  a.validate(num_layers);
  return a;
}

inline std::uint64_t config_digest(const ModelConfig& c) { return json_digest(to_json(c)); }

inline std::uint64_t config_digest(const std::optional<AdapterConfig>& a) {
  if (!a || a->placement_layers.empty()) return 0;
  return json_digest(to_json(*a));
}

}  // namespace ctcadapt
