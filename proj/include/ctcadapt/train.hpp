// SPDX-License-Identifier: Apache-2.0
//
// Training step, evaluation and the training loop.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ctcadapt/ctc.hpp"
#include "ctcadapt/model.hpp"
#include "ctcadapt/optim.hpp"
#include "ctcadapt/schedule.hpp"
#include "ctcadapt/synthdata.hpp"
#include "ctcadapt/transfer.hpp"

namespace ctcadapt {

struct TrainConfig {
  // Unset: every parameter trains, frontend included (pre-training).
  std::optional<TransferPolicy> policy;
  Schedule schedule;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  AdamConfig adam;
  std::optional<double> grad_clip;
  std::size_t eval_every = 0;  // 0: evaluate only after the last step

  std::size_t steps() const { return schedule.total_steps; }

  void validate() const {
    if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
    if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("train.grad_clip", "must be > 0");
    schedule.validate();
  }
};

struct StepReport {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;       // all trainable parameters, before clipping
  double body_grad_norm = 0.0;  // transformer blocks and positions only
};

inline void set_trainable(Model& model, const std::optional<TransferPolicy>& policy, std::size_t step) {
  if (policy) {
    apply_policy(model, *policy, step);
    return;
  }
  for (auto& p : model.parameters()) {
    p.trainable = true;
    p.tensor.set_requires_grad(true);
  }
}

inline bool is_body(const ParamInfo& info) {
  return info.group != ParamGroup::frontend && info.group != ParamGroup::classifier;
}

// Mean CTC loss over the batch (not frame-normalized).
inline Tensor batch_loss(const Model& model, std::span<const Utterance* const> batch) {
  if (batch.empty()) throw ContractError("batch_loss: empty batch");
  Tensor total;
  for (const Utterance* u : batch) {
    Tensor l = ctc_loss(log_softmax(forward(model, u->frames)), u->labels);
    total = total.defined() ? add(total, l) : l;
  }
  return scale(total, 1.0 / static_cast<double>(batch.size()));
}

// forward -> mean CTC -> backward -> Adam on trainable parameters -> zero grads.
inline StepReport train_step(Model& model, std::span<const Utterance* const> batch, const TrainConfig& cfg,
                             Adam& optimizer, std::size_t step) {
  set_trainable(model, cfg.policy, step);
  StepReport rep;
  rep.step = step;
  rep.lr = lr_at(cfg.schedule, step);

  Tensor loss = batch_loss(model, batch);
  rep.loss = loss.item();

  auto diagnostic = [&](const char* what) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%s at step %zu (loss=%g, lr=%g, grad_norm=%g)", what, step, rep.loss, rep.lr,
                  rep.grad_norm);
    return std::string(buf);
  };
  if (!std::isfinite(rep.loss)) throw NumericalError(diagnostic("non-finite loss"));

  backward(loss);
  double sq = 0.0, body_sq = 0.0;
  for (const auto& p : model.parameters()) {
    if (!p.trainable || !p.tensor.has_grad()) continue;
    double s = 0.0;
    for (double g : p.tensor.grad()) s += g * g;
    sq += s;
    if (is_body(p.info)) body_sq += s;
  }
  rep.grad_norm = std::sqrt(sq);
  rep.body_grad_norm = std::sqrt(body_sq);
  if (!std::isfinite(rep.grad_norm)) throw NumericalError(diagnostic("non-finite gradient"));

  if (cfg.grad_clip && rep.grad_norm > *cfg.grad_clip) {
    const double k = *cfg.grad_clip / rep.grad_norm;
    for (auto& p : model.parameters()) {
      if (!p.trainable || !p.tensor.has_grad()) continue;
      for (double& g : p.tensor.mutable_grad()) g *= k;
    }
  }
  optimizer.step(model, rep.lr);
  model.zero_grad();
  return rep;
}

struct EvalResult {
  double mean_loss = 0.0;
  double wer = 0.0;  // total edits / total reference tokens
  std::size_t edits = 0;
  std::size_t reference_tokens = 0;
};

// Greedy-decodes every utterance. Does not touch parameters.
inline EvalResult evaluate(const Model& model, const Dataset& data) {
  if (data.empty()) throw UndefinedMetricError("evaluate: empty dataset");
  NoGradGuard no_grad;
  EvalResult r;
  double loss_sum = 0.0;
  for (const auto& u : data.utterances) {
    Tensor logits = forward(model, u.frames);
    loss_sum += ctc_loss(log_softmax(logits), u.labels).item();
    const DecodeResult dec = greedy_decode(logits);
    r.edits += edit_distance(std::span<const int>(u.labels), std::span<const int>(dec.tokens));
    r.reference_tokens += u.labels.size();
  }
  r.mean_loss = loss_sum / static_cast<double>(data.size());
  if (r.reference_tokens == 0) throw UndefinedMetricError("evaluate: no reference tokens");
  r.wer = static_cast<double>(r.edits) / static_cast<double>(r.reference_tokens);
  return r;
}

// Reshuffles once per epoch from (seed, epoch).
class BatchSampler {
 public:
  BatchSampler(const Dataset& data, std::size_t batch_size, std::uint64_t seed)
      : data_(data), batch_size_(std::min(batch_size, data.size())), seed_(seed) {
    if (data.empty()) throw ContractError("BatchSampler: empty dataset");
    reshuffle();
  }

  std::vector<const Utterance*> next() {
    std::vector<const Utterance*> batch;
    batch.reserve(batch_size_);
    while (batch.size() < batch_size_) {
      if (pos_ == order_.size()) {
        ++epoch_;
        reshuffle();
      }
      batch.push_back(&data_.utterances[order_[pos_++]]);
    }
    return batch;
  }

 private:
  void reshuffle() {
    order_.resize(data_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    auto rng = make_rng(seed_, "batches/" + std::to_string(epoch_));
    std::shuffle(order_.begin(), order_.end(), rng);
    pos_ = 0;
  }

  const Dataset& data_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::size_t pos_ = 0;
  std::vector<std::size_t> order_;
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// CSV metric streams: per-step rows and evaluation rows.
class MetricsWriter {
 public:
  MetricsWriter(std::ostream* steps, std::ostream* evals, const std::string& digest)
      : steps_(steps), evals_(evals) {
    if (steps_) *steps_ << "# config_digest=" << digest << "\nstep,loss,lr,grad_norm,body_grad_norm\n";
    if (evals_) *evals_ << "# config_digest=" << digest << "\nstep,split,wer\n";
  }

  void step(const StepReport& r) {
    if (!steps_) return;
    *steps_ << r.step << ',' << format_double(r.loss) << ',' << format_double(r.lr) << ','
            << format_double(r.grad_norm) << ',' << format_double(r.body_grad_norm) << '\n';
  }

  void eval(std::size_t step, const std::string& split, double wer) {
    if (!evals_) return;
    *evals_ << step << ',' << split << ',' << format_double(wer) << '\n';
  }

 private:
  std::ostream* steps_;
  std::ostream* evals_;
};

struct TrainResult {
  std::vector<StepReport> history;
  std::optional<EvalResult> final_eval;
};

// Runs cfg.steps() optimizer steps. Evaluates on `eval` (when given) every
// eval_every steps and after the last one.
inline TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg, const Dataset* eval = nullptr,
                         MetricsWriter* metrics = nullptr) {
  cfg.validate();
  Adam optimizer(cfg.adam);
  BatchSampler sampler(data, cfg.batch_size, cfg.seed);
  TrainResult result;
  result.history.reserve(cfg.steps());
  for (std::size_t step = 0; step < cfg.steps(); ++step) {
    const auto batch = sampler.next();
    result.history.push_back(train_step(model, batch, cfg, optimizer, step));
    if (metrics) metrics->step(result.history.back());
    const bool last = step + 1 == cfg.steps();
    if (eval && (last || (cfg.eval_every && (step + 1) % cfg.eval_every == 0))) {
      const EvalResult e = evaluate(model, *eval);
      if (metrics) metrics->eval(step + 1, "eval", e.wer);
      if (last) result.final_eval = e;
    }
  }
  set_trainable(model, cfg.policy, cfg.steps());
  return result;
}

}  // namespace ctcadapt
