// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration and the transfer / ablation / storage drivers
// shared by the command-line tool and the acceptance suite.
//
// Config file (JSON, unknown keys rejected):
//   seed        integer, model init and batch order
//   model       see model_config_from_json
//   adapter     optional; see adapter_config_from_json
//   transfer    mode: pretrain | full_finetune | adapter | layernorm_only |
//                     topn_finetune | topn_adapter
//               n, freeze_transformer_steps, reinit_head
//   train       steps, batch_size, schedule{kind, peak_lr, ...}, grad_clip,
//               eval_every, adam{beta1, beta2, eps}
//   ablation    finetune{steps, schedule, freeze_transformer_steps}: the
//               fine-tune recipe for ablation rows; adapter rows use `train`
//   data        train, eval: dataset paths (command-line flags win)
#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ctcadapt/checkpoint.hpp"
#include "ctcadapt/config.hpp"
#include "ctcadapt/model.hpp"
#include "ctcadapt/schedule.hpp"
#include "ctcadapt/synthdata.hpp"
#include "ctcadapt/train.hpp"
#include "ctcadapt/transfer.hpp"

namespace ctcadapt {

struct DataPaths {
  std::string train;
  std::string eval;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  std::optional<AdapterConfig> adapter;
  std::optional<TransferPolicy> transfer;  // unset: pre-training
  bool reinit_head = false;
  TrainConfig train;
  TrainConfig finetune;  // ablation fine-tune recipe; policy filled per row
  DataPaths data;
  json source;  // effective config, after overrides

  std::uint64_t digest() const { return json_digest(source); }
  std::string digest_string() const { return digest_hex(digest()); }
};

namespace detail {

inline AdamConfig adam_from_json(const json& j) {
  ObjectReader r(j, "train.adam");
  AdamConfig a;
  a.beta1 = r.get("beta1", a.beta1);
  a.beta2 = r.get("beta2", a.beta2);
  a.eps = r.get("eps", a.eps);
  r.finish();
  if (!(a.beta1 >= 0.0 && a.beta1 < 1.0)) throw ConfigError("train.adam.beta1", "must be in [0, 1)");
  if (!(a.beta2 >= 0.0 && a.beta2 < 1.0)) throw ConfigError("train.adam.beta2", "must be in [0, 1)");
  if (!(a.eps > 0.0)) throw ConfigError("train.adam.eps", "must be > 0");
  return a;
}

inline TrainConfig train_from_json(const json& j) {
  ObjectReader r(j, "train");
  TrainConfig t;
  const auto steps = r.require<std::size_t>("steps");
  if (steps < 1) throw ConfigError("train.steps", "must be >= 1");
  t.schedule = schedule_from_json(r.require<json>("schedule"), steps);
  t.batch_size = r.get<std::size_t>("batch_size", t.batch_size);
  t.grad_clip = r.get_optional<double>("grad_clip");
  t.eval_every = r.get<std::size_t>("eval_every", 0);
  if (auto adam = r.get_optional<json>("adam")) t.adam = adam_from_json(*adam);
  r.finish();
  t.validate();
  return t;
}

// Defaults mirror the two recipes: twice the adapter steps, a tri-stage
// schedule at a tenth of the adapter peak, and a 20% freeze window.
inline std::pair<TrainConfig, std::size_t> finetune_recipe_from_json(const json& j, const TrainConfig& adapter) {
  TrainConfig t = adapter;
  const std::size_t default_steps = 2 * adapter.steps();
  if (j.is_null()) {
    t.schedule = Schedule::tri_stage(adapter.schedule.peak_lr / 10.0, default_steps);
    return {t, default_steps / 5};
  }
  ObjectReader r(j, "ablation.finetune");
  const auto steps = r.get<std::size_t>("steps", default_steps);
  if (steps < 1) throw ConfigError("ablation.finetune.steps", "must be >= 1");
  if (auto sched = r.get_optional<json>("schedule")) {
    t.schedule = schedule_from_json(*sched, steps, "ablation.finetune.schedule");
  } else {
    t.schedule = Schedule::tri_stage(adapter.schedule.peak_lr / 10.0, steps);
  }
  const auto freeze = r.get<std::size_t>("freeze_transformer_steps", steps / 5);
  r.finish();
  return {t, freeze};
}

}  // namespace detail

// Parses and validates. `seed_override` replaces the config's seed and is
// folded into the digest.
inline ExperimentConfig experiment_from_json(json j, std::optional<std::uint64_t> seed_override = std::nullopt) {
  if (!j.is_object()) throw ConfigError("", "config must be a JSON object");
  if (seed_override) j["seed"] = *seed_override;
  detail::ObjectReader r(j, "");
  ExperimentConfig c;
  c.source = j;
  c.seed = r.get<std::uint64_t>("seed", 0);
  c.model = model_config_from_json(r.require<json>("model"));
  if (auto a = r.get_optional<json>("adapter")) c.adapter = adapter_config_from_json(*a, c.model.num_layers);

  const json transfer = r.get<json>("transfer", json::object());
  {
    detail::ObjectReader t(transfer, "transfer");
    const auto mode = t.get<std::string>("mode", "pretrain");
    if (mode != "pretrain") {
      TransferPolicy p;
      p.mode = transfer_mode_from_string(mode);
      p.n = t.get<std::size_t>("n", 0);
      p.freeze_transformer_steps = t.get<std::size_t>("freeze_transformer_steps", 0);
      c.transfer = p;
    } else if (t.has("n") || t.has("freeze_transformer_steps")) {
      throw ConfigError("transfer.mode", "pretrain takes no n or freeze_transformer_steps");
    }
    c.reinit_head = t.get("reinit_head", false);
    t.finish();
  }

  c.train = detail::train_from_json(r.require<json>("train"));
  c.train.policy = c.transfer;
  c.train.seed = c.seed;

  const json ablation = r.get<json>("ablation", json::object());
  {
    detail::ObjectReader a(ablation, "ablation");
    auto [ft, freeze] = detail::finetune_recipe_from_json(a.get<json>("finetune", json()), c.train);
    c.finetune = ft;
    c.finetune.policy = TransferPolicy::full_finetune(freeze);
    a.finish();
    if (freeze >= c.finetune.steps()) {
      throw ConfigError("ablation.finetune.freeze_transformer_steps", "must be below the step budget");
    }
  }

  const json data = r.get<json>("data", json::object());
  {
    detail::ObjectReader d(data, "data");
    c.data.train = d.get<std::string>("train", "");
    c.data.eval = d.get<std::string>("eval", "");
    d.finish();
  }
  r.finish();

  if (c.transfer) {
    const auto& p = *c.transfer;
    if (p.uses_adapters() && !c.adapter) throw ConfigError("adapter", p.label() + " needs an adapter section");
    if (p.is_topn() && (p.n < 1 || p.n > c.model.num_layers))
      throw ConfigError("transfer.n", "must be in [1, num_layers]");
    if (!p.is_topn() && p.n != 0) throw ConfigError("transfer.n", "only topn modes take n");
    if (!p.is_finetune() && p.freeze_transformer_steps != 0)
      throw ConfigError("transfer.freeze_transformer_steps", "applies to fine-tune modes only");
    if (p.is_finetune() && p.freeze_transformer_steps >= c.train.steps())
      throw ConfigError("transfer.freeze_transformer_steps", "must be below train.steps");
  }
  return c;
}

inline ExperimentConfig load_experiment(const std::string& path,
                                        std::optional<std::uint64_t> seed_override = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("--config", std::string("malformed JSON (") + e.what() + ")");
  }
  return experiment_from_json(std::move(j), seed_override);
}

// The untrained backbone for a config (no adapters).
inline Model make_base_model(const ExperimentConfig& c) { return build_model(c.model, std::nullopt, c.seed); }

// Adapters a policy needs. topn_adapter places them in the top n blocks only.
inline std::optional<AdapterConfig> adapters_for(const TransferPolicy& p, const std::optional<AdapterConfig>& ac,
                                                 std::size_t num_layers) {
  if (!p.uses_adapters()) return std::nullopt;
  if (!ac) throw ConfigError("adapter", p.label() + " needs an adapter section");
  if (p.mode == TransferMode::topn_adapter) {
    AdapterConfig top = AdapterConfig::top_layers(num_layers, p.n, ac->bottleneck);
    top.nonlinearity = ac->nonlinearity;
    return top;
  }
  return ac;
}

inline void reinit_classifier(Model& m, std::uint64_t seed) {
  const std::uint64_t s = fnv1a64("reinit_head", seed);
  for (auto& p : m.parameters()) {
    if (p.info.group != ParamGroup::classifier) continue;
    const Tensor fresh = detail::init_parameter(p.info, s);
    std::copy(fresh.data().begin(), fresh.data().end(), p.tensor.data().begin());
  }
}

// Copy of `base` ready for transfer under `p`: adapters inserted where the
// policy trains them, classifier optionally re-drawn.
inline Model prepare_transfer(const Model& base, const TransferPolicy& p, const std::optional<AdapterConfig>& ac,
                              bool reinit_head, std::uint64_t seed) {
  Model m = base.clone();
  if (!m.adapter_config()) {
    if (auto placed = adapters_for(p, ac, m.config().num_layers)) insert_adapters(m, *placed, seed);
  }
  if (reinit_head) reinit_classifier(m, seed);
  apply_policy(m, p, 0);
  return m;
}

// Model an experiment trains or evaluates, starting from `base`.
inline Model experiment_model(const ExperimentConfig& c, const Model& base) {
  if (!c.transfer) return base.clone();
  return prepare_transfer(base, *c.transfer, c.adapter, c.reinit_head, c.seed);
}

// Fine-tune and pre-training runs store every parameter; the rest store
// only what they trained.
inline CheckpointKind output_kind(const std::optional<TransferPolicy>& p) {
  return !p || p->is_finetune() ? CheckpointKind::full : CheckpointKind::delta;
}

struct AblationRow {
  TransferPolicy policy;
  std::size_t trainable = 0;
  std::size_t total = 0;
  double fraction = 0.0;
  std::size_t steps = 0;
  double peak_lr = 0.0;
  double wer = 0.0;
};

// Top-n sweep for both methods. Adapter rows use the `train` recipe, fine-tune
// rows the `ablation.finetune` one.
inline std::vector<AblationRow> run_ablation(const ExperimentConfig& c, const Model& base, const Dataset& train_set,
                                             const Dataset& eval_set, const std::vector<std::size_t>& ns) {
  for (std::size_t n : ns) {
    if (n < 1 || n > c.model.num_layers) {
      throw ConfigError("--n", std::to_string(n) + " outside [1, " + std::to_string(c.model.num_layers) + "]");
    }
  }
  if (!c.adapter) throw ConfigError("adapter", "ablation needs an adapter section");
  std::vector<AblationRow> rows;
  for (auto mode : {TransferMode::topn_finetune, TransferMode::topn_adapter}) {
    for (std::size_t n : ns) {
      TrainConfig tc = mode == TransferMode::topn_finetune ? c.finetune : c.train;
      TransferPolicy p = mode == TransferMode::topn_finetune
                             ? TransferPolicy::topn_finetune(n, c.finetune.policy->freeze_transformer_steps)
                             : TransferPolicy::topn_adapter(n);
      tc.policy = p;
      tc.seed = c.seed;
      Model m = prepare_transfer(base, p, c.adapter, c.reinit_head, c.seed);
      const ParamReport rep = count_params(m, p);
      const TrainResult res = train(m, train_set, tc, &eval_set);
      rows.push_back({p, rep.trainable, rep.total, rep.fraction, tc.steps(), tc.schedule.peak_lr,
                      res.final_eval->wer});
    }
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows, const std::string& digest) {
  os << "# config_digest=" << digest << "\nmethod,n,trainable_params,total_params,fraction,steps,peak_lr,wer\n";
  for (const auto& r : rows) {
    os << to_string(r.policy.mode) << ',' << r.policy.n << ',' << r.trainable << ',' << r.total << ','
       << format_double(r.fraction) << ',' << r.steps << ',' << format_double(r.peak_lr) << ','
       << format_double(r.wer) << '\n';
  }
}

// Per-task storage as task count grows. Each task stores its trained
// parameters; `reference_bytes` is one full checkpoint of the backbone.
struct StorageRow {
  std::size_t tasks = 0;
  std::size_t finetune_bytes = 0;
  std::size_t adapter_bytes = 0;
  double finetune_ratio = 0.0;  // vs reference_bytes
  double adapter_ratio = 0.0;
};

struct StorageProjection {
  std::size_t reference_bytes = 0;
  std::size_t finetune_task_bytes = 0;
  std::size_t adapter_task_bytes = 0;
  std::vector<StorageRow> rows;
};

inline StorageProjection storage_projection(const ModelConfig& mc, const AdapterConfig& ac, std::size_t max_tasks) {
  const auto base = parameter_layout(mc, std::nullopt);
  const auto with_adapters = parameter_layout(mc, ac);
  StorageProjection s;
  s.reference_bytes = full_checkpoint_size(base);
  s.finetune_task_bytes = delta_checkpoint_size(base, mc, TransferPolicy::full_finetune());
  s.adapter_task_bytes = delta_checkpoint_size(with_adapters, mc, TransferPolicy::adapter());
  for (std::size_t k = 1; k <= max_tasks; ++k) {
    StorageRow r;
    r.tasks = k;
    r.finetune_bytes = k * s.finetune_task_bytes;
    r.adapter_bytes = k * s.adapter_task_bytes;
    r.finetune_ratio = static_cast<double>(r.finetune_bytes) / static_cast<double>(s.reference_bytes);
    r.adapter_ratio = static_cast<double>(r.adapter_bytes) / static_cast<double>(s.reference_bytes);
    s.rows.push_back(r);
  }
  return s;
}

inline void write_storage_csv(std::ostream& os, const StorageProjection& s, const std::string& digest) {
  os << "# config_digest=" << digest << "\n# reference_bytes=" << s.reference_bytes
     << "\ntasks,finetune_bytes,adapter_bytes,finetune_ratio,adapter_ratio\n";
  for (const auto& r : s.rows) {
    os << r.tasks << ',' << r.finetune_bytes << ',' << r.adapter_bytes << ',' << format_double(r.finetune_ratio)
       << ',' << format_double(r.adapter_ratio) << '\n';
  }
}

}  // namespace ctcadapt
