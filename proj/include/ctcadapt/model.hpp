// SPDX-License-Identifier: Apache-2.0
//
// Post-LN transformer encoder with an optional conv frontend, two adapter
// slots per block and a linear CTC classifier head.
#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctcadapt/config.hpp"
#include "ctcadapt/layout.hpp"
#include "ctcadapt/ops.hpp"
#include "ctcadapt/rng.hpp"

namespace ctcadapt {

struct Parameter {
  ParamInfo info;
  Tensor tensor;
  // Written only by apply_policy().
  bool trainable = false;

  const std::string& path() const { return info.path; }
};

struct Linear {
  Tensor weight;
  Tensor bias;  // may be undefined

  Tensor operator()(const Tensor& x) const { return affine(x, weight, bias); }
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

struct Adapter {
  Linear down;
  Linear up;
  Nonlinearity nonlinearity = Nonlinearity::gelu;
};

// h + up(phi(down(h))). The skip path is unconditional.
inline Tensor adapter_forward(const Adapter& a, const Tensor& h) {
  if (h.rank() != 2 || h.cols() != a.down.weight.dim(0)) {
    throw DimensionError("adapter_forward: input " + shape_str(h.shape()) + " does not match adapter width " +
                         std::to_string(a.down.weight.dim(0)));
  }
  Tensor z = a.down(h);
  z = a.nonlinearity == Nonlinearity::gelu ? gelu(z) : relu(z);
  return add(h, a.up(z));
}

struct TransformerBlock {
  Linear q, k, v, o;
  LayerNormParams ln_attn;
  Linear fc1, fc2;
  LayerNormParams ln_ffn;
  std::optional<Adapter> adapter_attn;
  std::optional<Adapter> adapter_ffn;
};

struct ConvLayer {
  Tensor weight;  // [kernel*in_channels x channels], no bias
  std::size_t kernel = 1;
  std::size_t stride = 1;
};

class Model {
 public:
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  const std::optional<AdapterConfig>& adapter_config() const { return adapters_; }

  std::span<Parameter> parameters() { return params_; }
  std::span<const Parameter> parameters() const { return params_; }

  Parameter* find(std::string_view path) {
    auto it = index_.find(std::string(path));
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  const Parameter* find(std::string_view path) const {
    auto it = index_.find(std::string(path));
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  const std::vector<TransformerBlock>& blocks() const { return blocks_; }
  const std::vector<ConvLayer>& conv_layers() const { return convs_; }
  const Linear& frontend_projection() const { return proj_; }
  const Tensor& positional_embedding() const { return pos_; }
  const Linear& head() const { return head_; }

  std::size_t adapter_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += (b.adapter_attn ? 1 : 0) + (b.adapter_ffn ? 1 : 0);
    return n;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  std::vector<ParamInfo> layout() const {
    std::vector<ParamInfo> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.info);
    return out;
  }

  // Deep copy: same values and trainable flags, independent storage.
  Model clone() const {
    Model m(config_, adapters_);
    for (const auto& p : params_) m.add(p.info, p.tensor.clone(), p.trainable);
    m.wire();
    return m;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  friend Model build_model(const ModelConfig&, const std::optional<AdapterConfig>&, std::uint64_t);
  friend void insert_adapters(Model&, const AdapterConfig&, std::uint64_t);

  Model(ModelConfig mc, std::optional<AdapterConfig> ac) : config_(std::move(mc)), adapters_(std::move(ac)) {}

  void add(ParamInfo info, Tensor t, bool trainable) {
    t.set_requires_grad(trainable);
    index_[info.path] = params_.size();
    params_.push_back(Parameter{std::move(info), std::move(t), trainable});
  }

  const Tensor& get(const std::string& path) const {
    auto it = index_.find(path);
    if (it == index_.end()) throw Error("model is missing parameter " + path);
    return params_[it->second].tensor;
  }

  Linear linear(const std::string& prefix) const { return Linear{get(prefix + ".weight"), get(prefix + ".bias")}; }

  std::optional<Adapter> adapter(std::size_t layer, std::size_t slot) const {
    const std::string p = "layer." + std::to_string(layer) + ".adapter." + std::to_string(slot);
    if (!index_.count(p + ".down.weight")) return std::nullopt;
    return Adapter{linear(p + ".down"), linear(p + ".up"),
                   adapters_ ? adapters_->nonlinearity : Nonlinearity::gelu};
  }

  // Points the module structs at the registry tensors.
  void wire() {
    convs_.clear();
    if (config_.frontend.kind == FrontendKind::conv_stack) {
      for (std::size_t i = 0; i < config_.frontend.layers.size(); ++i) {
        const auto& l = config_.frontend.layers[i];
        convs_.push_back({get("frontend.conv." + std::to_string(i) + ".weight"), l.kernel, l.stride});
      }
      proj_ = linear("frontend.proj");
    }
    if (config_.positional == Positional::learned) pos_ = get("pos.embedding");
    blocks_.clear();
    for (std::size_t l = 0; l < config_.num_layers; ++l) {
      const std::string p = "layer." + std::to_string(l);
      TransformerBlock b;
      b.q = linear(p + ".attn.q");
      b.k = linear(p + ".attn.k");
      b.v = linear(p + ".attn.v");
      b.o = linear(p + ".attn.o");
      b.ln_attn = {get(p + ".ln_attn.gamma"), get(p + ".ln_attn.beta")};
      b.fc1 = linear(p + ".ffn.fc1");
      b.fc2 = linear(p + ".ffn.fc2");
      b.ln_ffn = {get(p + ".ln_ffn.gamma"), get(p + ".ln_ffn.beta")};
      b.adapter_attn = adapter(l, static_cast<std::size_t>(AdapterPosition::after_attention));
      b.adapter_ffn = adapter(l, static_cast<std::size_t>(AdapterPosition::after_ffn));
      blocks_.push_back(std::move(b));
    }
    head_ = linear("head");
  }

  ModelConfig config_;
  std::optional<AdapterConfig> adapters_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;

  std::vector<ConvLayer> convs_;
  Linear proj_;
  Tensor pos_;
  std::vector<TransformerBlock> blocks_;
  Linear head_;
};

namespace detail {

inline constexpr double kAdapterDownInitStd = 1e-3;
inline constexpr double kPositionInitStd = 0.02;

// Deterministic per-path initialization: each parameter draws from its own
// stream keyed by (seed, path), so adding adapters never perturbs the rest.
//   weights: normal, std sqrt(2 / (fan_in + fan_out))
//   biases, beta: 0; gamma: 1
//   adapter down weight: normal, std 1e-3; adapter up weight and bias: 0
inline Tensor init_parameter(const ParamInfo& info, std::uint64_t seed) {
  const std::string& path = info.path;
  auto ends_with = [&](std::string_view suffix) {
    return path.size() >= suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  std::vector<double> values(info.numel(), 0.0);
  double std_dev = 0.0;
  if (ends_with(".gamma")) {
    std::fill(values.begin(), values.end(), 1.0);
  } else if (info.group == ParamGroup::adapter) {
    if (ends_with(".down.weight")) std_dev = kAdapterDownInitStd;
  } else if (info.group == ParamGroup::positional) {
    std_dev = kPositionInitStd;
  } else if (ends_with(".weight")) {
    std_dev = std::sqrt(2.0 / static_cast<double>(info.shape[0] + info.shape[1]));
  }
  if (std_dev > 0.0) {
    auto rng = make_rng(seed, path);
    std::normal_distribution<double> dist(0.0, std_dev);
    for (double& v : values) v = dist(rng);
  }
  return Tensor(info.shape, std::move(values));
}

inline Tensor sinusoidal_positions(std::size_t t, std::size_t d) {
  std::vector<double> pe(t * d);
  for (std::size_t pos = 0; pos < t; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pe[pos * d + i] = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < d) pe[pos * d + i + 1] = std::cos(static_cast<double>(pos) * freq);
    }
  }
  return Tensor({t, d}, std::move(pe));
}

inline Tensor self_attention(const TransformerBlock& b, const Tensor& x, std::size_t heads) {
  const std::size_t d = x.cols();
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = b.q(x), k = b.k(x), v = b.v(x);
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = heads == 1 ? q : slice_cols(q, h * dh, dh);
    Tensor kh = heads == 1 ? k : slice_cols(k, h * dh, dh);
    Tensor vh = heads == 1 ? v : slice_cols(v, h * dh, dh);
    Tensor p = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt));
    outs.push_back(matmul(p, vh));
  }
  Tensor cat = heads == 1 ? outs.front() : concat_cols(outs);
  return b.o(cat);
}

}  // namespace detail

// One encoder block:
//   a  = Attn(x);  a' = adapter_attn(a)
//   x1 = LN(x + a')
//   f  = FFN(x1);  f' = adapter_ffn(f)
//   out = LN(x1 + f')
inline Tensor block_forward(const TransformerBlock& b, const Tensor& x, const ModelConfig& mc) {
  Tensor a = detail::self_attention(b, x, mc.num_heads);
  if (b.adapter_attn) a = adapter_forward(*b.adapter_attn, a);
  Tensor x1 = layer_norm(add(x, a), b.ln_attn.gamma, b.ln_attn.beta, mc.layer_norm_eps);
  Tensor f = b.fc2(gelu(b.fc1(x1)));
  if (b.adapter_ffn) f = adapter_forward(*b.adapter_ffn, f);
  return layer_norm(add(x1, f), b.ln_ffn.gamma, b.ln_ffn.beta, mc.layer_norm_eps);
}

// Frontend output (T' x d_model) before positions are added.
inline Tensor frontend_forward(const Model& model, const Tensor& frames) {
  const auto& mc = model.config();
  if (frames.rank() != 2 || frames.cols() != mc.input_dim()) {
    throw DimensionError("forward: frames " + shape_str(frames.shape()) + " do not have " +
                         std::to_string(mc.input_dim()) + " features per frame");
  }
  if (frames.rows() > mc.max_seq_len) {
    throw ContractError("forward: " + std::to_string(frames.rows()) + " frames exceed max_seq_len " +
                        std::to_string(mc.max_seq_len));
  }
  if (mc.frontend_output_length(frames.rows()) < 1) {
    throw SequenceTooShortError("forward: " + std::to_string(frames.rows()) +
                                " frames leave no output after the frontend");
  }
  if (mc.frontend.kind == FrontendKind::identity) return frames;
  Tensor h = frames;
  for (const auto& conv : model.conv_layers()) {
    h = gelu(matmul(unfold_rows(h, conv.kernel, conv.stride), conv.weight));
  }
  return model.frontend_projection()(h);
}

// Frames [T x d_in] -> logits [T' x (vocab + 1)]. No log-softmax here.
inline Tensor forward(const Model& model, const Tensor& frames) {
  const auto& mc = model.config();
  Tensor x = frontend_forward(model, frames);
  const std::size_t t = x.rows();
  if (mc.positional == Positional::sinusoidal) {
    x = add(x, detail::sinusoidal_positions(t, mc.d_model));
  } else {
    x = add(x, slice_rows(model.positional_embedding(), 0, t));
  }
  for (const auto& b : model.blocks()) x = block_forward(b, x, mc);
  return model.head()(x);
}

inline Model build_model(const ModelConfig& mc, const std::optional<AdapterConfig>& ac, std::uint64_t seed) {
  auto layout = parameter_layout(mc, ac);
  std::optional<AdapterConfig> kept = ac;
  if (kept && kept->placement_layers.empty()) kept.reset();
  Model m(mc, kept);
  for (auto& info : layout) {
    Tensor t = detail::init_parameter(info, seed);
    m.add(std::move(info), std::move(t), false);
  }
  m.wire();
  return m;
}

// Adds adapters at the configured blocks. Output is unchanged at insertion
// time because every up-projection starts at zero.
inline void insert_adapters(Model& model, const AdapterConfig& ac, std::uint64_t seed) {
  ac.validate(model.config().num_layers);
  for (std::size_t l : ac.placement_layers) {
    if (model.find("layer." + std::to_string(l) + ".adapter.0.down.weight")) {
      throw ConflictError("insert_adapters: layer " + std::to_string(l) + " already has adapters");
    }
  }
  if (model.adapters_ && model.adapters_->bottleneck != ac.bottleneck) {
    throw ConflictError("insert_adapters: bottleneck differs from adapters already present");
  }
  for (auto& info : adapter_layout(model.config(), ac)) {
    Tensor t = detail::init_parameter(info, seed);
    model.add(std::move(info), std::move(t), false);
  }
  // Re-sort into canonical layout order so enumeration matches build_model.
  AdapterConfig merged = ac;
  if (model.adapters_) {
    merged.placement_layers.insert(merged.placement_layers.end(), model.adapters_->placement_layers.begin(),
                                   model.adapters_->placement_layers.end());
    std::sort(merged.placement_layers.begin(), merged.placement_layers.end());
  }
  model.adapters_ = merged;
  std::vector<Parameter> ordered;
  ordered.reserve(model.params_.size());
  for (const auto& info : parameter_layout(model.config_, model.adapters_)) {
    ordered.push_back(std::move(model.params_[model.index_.at(info.path)]));
  }
  model.params_ = std::move(ordered);
  model.index_.clear();
  for (std::size_t i = 0; i < model.params_.size(); ++i) model.index_[model.params_[i].info.path] = i;
  model.wire();
}

}  // namespace ctcadapt
