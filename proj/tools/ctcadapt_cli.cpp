// SPDX-License-Identifier: Apache-2.0
//
// ctcadapt: synth | train | eval | ablate | params
//
// Exit codes: 0 ok, 1 other failure, 2 config validation, 3 artifact
// mismatch, 4 numerical abort.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctcadapt/ctcadapt.hpp"

using namespace ctcadapt;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kArtifact = 3, kNumerical = 4 };

struct Options {
  std::string config;
  std::string data;
  std::string eval;
  std::string out;
  std::string base;
  std::string checkpoint;
  std::string metrics;
  std::string eval_metrics;
  std::optional<std::uint64_t> seed;
  std::vector<std::size_t> ns;
  std::size_t tasks = 5;
};

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  return os;
}

Dataset read_dataset(const std::string& flag, const std::string& path) {
  if (path.empty()) throw ConfigError(flag, "dataset path required");
  return load_dataset(path);
}

std::string pick(const std::string& flag_value, const std::string& config_value) {
  return flag_value.empty() ? config_value : flag_value;
}

// Backbone with --base loaded when given.
Model load_base(const ExperimentConfig& c, const std::string& base_path) {
  Model base = make_base_model(c);
  if (!base_path.empty()) {
    if (peek_checkpoint_header(base_path).kind != CheckpointKind::full) {
      throw ArtifactMismatchError(base_path + ": --base must be a full checkpoint");
    }
    load_checkpoint(base, base_path);
  }
  return base;
}

int cmd_synth(const Options& o) {
  std::ifstream in(o.config);
  if (!in) throw ConfigError("--config", "cannot open " + o.config);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("--config", std::string("malformed JSON (") + e.what() + ")");
  }
  SynthSpec spec = synth_spec_from_json(j);
  if (o.seed) spec.seed = *o.seed;
  if (o.out.empty()) throw ConfigError("--out", "output path required");
  const Dataset ds = generate(spec);
  save_dataset(ds, o.out);
  std::printf("wrote %s: %zu utterances, %zu frames, vocab %zu, language %s\n", o.out.c_str(), ds.size(),
              ds.total_frames(), spec.vocab_size, spec.language_tag.c_str());
  return kOk;
}

int cmd_train(const Options& o) {
  const ExperimentConfig c = load_experiment(o.config, o.seed);
  if (o.out.empty()) throw ConfigError("--out", "checkpoint path required");
  const Dataset train_set = read_dataset("--data", pick(o.data, c.data.train));
  const std::string eval_path = pick(o.eval, c.data.eval);
  std::optional<Dataset> eval_set;
  if (!eval_path.empty()) eval_set = load_dataset(eval_path);

  const Model base = load_base(c, o.base);
  Model model = experiment_model(c, base);

  std::ofstream steps = open_out(o.metrics.empty() ? o.out + ".metrics.csv" : o.metrics);
  std::ofstream evals = open_out(o.eval_metrics.empty() ? o.out + ".eval.csv" : o.eval_metrics);
  MetricsWriter metrics(&steps, &evals, c.digest_string());
  const TrainResult res = train(model, train_set, c.train, eval_set ? &*eval_set : nullptr, &metrics);

  const CheckpointKind kind = output_kind(c.transfer);
  save_checkpoint(model, o.out, kind);
  std::printf("mode %s, %zu steps, final loss %.6g\n", c.transfer ? c.transfer->label().c_str() : "pretrain",
              res.history.size(), res.history.back().loss);
  if (res.final_eval) std::printf("eval wer %.6g, loss %.6g\n", res.final_eval->wer, res.final_eval->mean_loss);
  std::printf("wrote %s checkpoint %s (config_digest=%s)\n", kind == CheckpointKind::full ? "full" : "delta",
              o.out.c_str(), c.digest_string().c_str());
  return kOk;
}

int cmd_eval(const Options& o) {
  const ExperimentConfig c = load_experiment(o.config, o.seed);
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint", "checkpoint path required");
  const Dataset data = read_dataset("--data", pick(o.data, c.data.eval));
  const CheckpointHeader h = peek_checkpoint_header(o.checkpoint);
  if (h.kind == CheckpointKind::delta && o.base.empty()) {
    throw ArtifactMismatchError(o.checkpoint + ": delta checkpoint needs --base");
  }
  const Model base = load_base(c, o.base);
  Model model = experiment_model(c, base);
  load_checkpoint(model, o.checkpoint);
  const EvalResult r = evaluate(model, data);
  std::printf("utterances %zu\nloss %.10g\nwer %.10g (%zu edits / %zu reference tokens)\n", data.size(),
              r.mean_loss, r.wer, r.edits, r.reference_tokens);
  return kOk;
}

int cmd_ablate(const Options& o) {
  const ExperimentConfig c = load_experiment(o.config, o.seed);
  if (o.out.empty()) throw ConfigError("--out", "CSV path required");
  std::vector<std::size_t> ns = o.ns;
  if (ns.empty()) {
    for (std::size_t n = 1; n < c.model.num_layers; n *= 2) ns.push_back(n);
    ns.push_back(c.model.num_layers);
  }
  const Dataset train_set = read_dataset("--data", pick(o.data, c.data.train));
  const Dataset eval_set = read_dataset("--eval", pick(o.eval, c.data.eval));
  const Model base = load_base(c, o.base);
  const auto rows = run_ablation(c, base, train_set, eval_set, ns);
  std::ofstream os = open_out(o.out);
  write_ablation_csv(os, rows, c.digest_string());
  write_ablation_csv(std::cout, rows, c.digest_string());
  return kOk;
}

int cmd_params(const Options& o) {
  const ExperimentConfig c = load_experiment(o.config, o.seed);
  const auto& mc = c.model;
  std::vector<TransferPolicy> policies = {TransferPolicy::full_finetune(), TransferPolicy::layernorm_only()};
  if (c.adapter) policies.insert(policies.begin() + 1, TransferPolicy::adapter());
  if (c.transfer && c.transfer->is_topn()) policies.push_back(*c.transfer);

  std::printf("# config_digest=%s\nmode,trainable,total,fraction,delta_bytes\n", c.digest_string().c_str());
  for (const auto& p : policies) {
    const auto layout = parameter_layout(mc, adapters_for(p, c.adapter, mc.num_layers));
    const ParamReport r = count_params(layout, mc, p);
    std::printf("%s,%zu,%zu,%.6f,%zu\n", p.label().c_str(), r.trainable, r.total, r.fraction,
                delta_checkpoint_size(layout, mc, p));
  }
  if (c.adapter) {
    const StorageProjection s = storage_projection(mc, *c.adapter, o.tasks);
    std::printf("\n");
    write_storage_csv(std::cout, s, c.digest_string());
  }
  if (!o.out.empty()) {
    const TransferPolicy p = c.transfer.value_or(TransferPolicy::full_finetune());
    const auto layout = parameter_layout(mc, adapters_for(p, c.adapter, mc.num_layers));
    std::ofstream os = open_out(o.out);
    os << "# config_digest=" << c.digest_string() << "\n# mode=" << p.label() << "\n";
    count_params(layout, mc, p).write_csv(os);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adapter transfer of a transformer encoder to CTC recognition"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config")->required();
    sub->add_option("--seed", o.seed, "override the config seed");
  };
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset from a spec");
  common(synth);
  synth->add_option("--out", o.out, "dataset file")->required();

  auto* train_cmd = app.add_subcommand("train", "train under the configured transfer mode");
  common(train_cmd);
  train_cmd->add_option("--data", o.data, "training dataset");
  train_cmd->add_option("--eval", o.eval, "evaluation dataset");
  train_cmd->add_option("--base", o.base, "full checkpoint of the pre-trained backbone");
  train_cmd->add_option("--out", o.out, "output checkpoint")->required();
  train_cmd->add_option("--metrics", o.metrics, "step metrics CSV (default <out>.metrics.csv)");
  train_cmd->add_option("--eval-metrics", o.eval_metrics, "eval metrics CSV (default <out>.eval.csv)");

  auto* eval_cmd = app.add_subcommand("eval", "greedy-decode a dataset and report WER");
  common(eval_cmd);
  eval_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate")->required();
  eval_cmd->add_option("--base", o.base, "backbone checkpoint (required for delta checkpoints)");
  eval_cmd->add_option("--data", o.data, "dataset");

  auto* ablate = app.add_subcommand("ablate", "top-n sweep for fine-tuning and adapters");
  common(ablate);
  ablate->add_option("--data", o.data, "training dataset");
  ablate->add_option("--eval", o.eval, "evaluation dataset");
  ablate->add_option("--base", o.base, "full checkpoint of the pre-trained backbone");
  ablate->add_option("--n", o.ns, "layer counts, e.g. 1,2,4")->delimiter(',');
  ablate->add_option("--out", o.out, "CSV output")->required();

  auto* params = app.add_subcommand("params", "parameter accounting and storage projection");
  common(params);
  params->add_option("--tasks", o.tasks, "tasks in the storage projection")->check(CLI::PositiveNumber);
  params->add_option("--out", o.out, "per-module breakdown CSV for the configured mode");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*train_cmd) return cmd_train(o);
    if (*eval_cmd) return cmd_eval(o);
    if (*ablate) return cmd_ablate(o);
    if (*params) return cmd_params(o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const PolicyError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const ArtifactMismatchError& e) {
    std::fprintf(stderr, "artifact mismatch: %s\n", e.what());
    return kArtifact;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "artifact mismatch: %s\n", e.what());
    return kArtifact;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
