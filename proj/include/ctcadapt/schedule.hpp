// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "ctcadapt/config.hpp"
#include "ctcadapt/error.hpp"

namespace ctcadapt {

enum class ScheduleKind { bi_stage, tri_stage };

// bi_stage:  linear 0 -> peak over the warmup, then linear peak -> 0.
// tri_stage: linear 0 -> peak over the warmup, hold at peak, then
//            exponential decay reaching final_scale * peak at total_steps.
struct Schedule {
  ScheduleKind kind = ScheduleKind::bi_stage;
  double peak_lr = 5e-4;
  std::size_t total_steps = 10000;
  double warmup_frac = 0.1;
  double hold_frac = 0.4;      // tri_stage only
  double final_scale = 0.05;   // tri_stage only

  static Schedule bi_stage(double peak, std::size_t total, double warmup = 0.1) {
    return Schedule{ScheduleKind::bi_stage, peak, total, warmup, 0.0, 0.0};
  }
  static Schedule tri_stage(double peak, std::size_t total, double warmup = 0.1, double hold = 0.4,
                            double final_scale = 0.05) {
    return Schedule{ScheduleKind::tri_stage, peak, total, warmup, hold, final_scale};
  }

  void validate() const {
    if (!(peak_lr > 0.0)) throw ConfigError("train.schedule.peak_lr", "must be > 0");
    if (total_steps < 1) throw ConfigError("train.steps", "must be >= 1");
    if (!(warmup_frac > 0.0 && warmup_frac < 1.0)) throw ConfigError("train.schedule.warmup_frac", "must be in (0, 1)");
    if (kind == ScheduleKind::tri_stage) {
      if (!(hold_frac > 0.0 && hold_frac < 1.0)) throw ConfigError("train.schedule.hold_frac", "must be in (0, 1)");
      if (warmup_frac + hold_frac > 1.0) throw ConfigError("train.schedule.hold_frac", "warmup_frac + hold_frac must be <= 1");
      if (!(final_scale > 0.0 && final_scale <= 1.0)) throw ConfigError("train.schedule.final_scale", "must be in (0, 1]");
    }
  }
};

inline double lr_at(const Schedule& s, std::size_t step) {
  if (step > s.total_steps) {
    throw ContractError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(s.total_steps) + "]");
  }
  const double total = static_cast<double>(s.total_steps);
  const double x = static_cast<double>(step);
  const double warmup = s.warmup_frac * total;
  if (x < warmup) return s.peak_lr * x / warmup;
  if (s.kind == ScheduleKind::bi_stage) {
    const double decay = total - warmup;
    return decay > 0.0 ? s.peak_lr * (total - x) / decay : s.peak_lr;
  }
  const double hold_end = warmup + s.hold_frac * total;
  if (x <= hold_end) return s.peak_lr;
  const double decay = total - hold_end;
  return s.peak_lr * std::exp(std::log(s.final_scale) * (x - hold_end) / decay);
}

inline json to_json(const Schedule& s) {
  json j = {{"kind", s.kind == ScheduleKind::bi_stage ? "bi_stage" : "tri_stage"},
            {"peak_lr", s.peak_lr},
            {"warmup_frac", s.warmup_frac}};
  if (s.kind == ScheduleKind::tri_stage) {
    j["hold_frac"] = s.hold_frac;
    j["final_scale"] = s.final_scale;
  }
  return j;
}

inline Schedule schedule_from_json(const json& j, std::size_t total_steps,
                                   const std::string& section = "train.schedule") {
  detail::ObjectReader r(j, section);
  Schedule s;
  const auto kind = r.get<std::string>("kind", "bi_stage");
  if (kind == "bi_stage") {
    s = Schedule::bi_stage(r.require<double>("peak_lr"), total_steps, r.get("warmup_frac", 0.1));
  } else if (kind == "tri_stage") {
    const double peak = r.require<double>("peak_lr");
    s = Schedule::tri_stage(peak, total_steps, r.get("warmup_frac", 0.1), r.get("hold_frac", 0.4),
                            r.get("final_scale", 0.05));
  } else {
    throw ConfigError(r.field("kind"), "expected bi_stage or tri_stage");
  }
  r.finish();
  s.validate();
  return s;
}

}  // namespace ctcadapt
