// SPDX-License-Identifier: Apache-2.0
//
// CTC loss (log-space forward-backward), an exhaustive reference, greedy
// decoding and token error rate. The blank is always the last class.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ctcadapt/ops.hpp"

namespace ctcadapt {

using LabelSeq = std::vector<int>;

namespace detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline void check_labels(const LabelSeq& target, std::size_t vocab) {
  for (int tok : target) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= vocab) {
      throw ContractError("ctc: label " + std::to_string(tok) + " outside [0, " + std::to_string(vocab) + ")");
    }
  }
}

}  // namespace detail

// Fewest frames that can emit `target`: one per label plus a blank between
// each pair of equal neighbours.
inline std::size_t ctc_min_frames(const LabelSeq& target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i) n += target[i] == target[i - 1] ? 1 : 0;
  return n;
}

// -log p(target | log_probs), summed over every alignment. log_probs is
// [T x (V+1)] with blank at index V. Gradient w.r.t. log_probs comes from
// the backward recursion.
inline Tensor ctc_loss(const Tensor& log_probs, const LabelSeq& target) {
  if (log_probs.rank() != 2 || log_probs.cols() < 2) {
    throw DimensionError("ctc_loss: log_probs must be [T x (V+1)] with V >= 1, got " + shape_str(log_probs.shape()));
  }
  const std::size_t T = log_probs.rows();
  const std::size_t C = log_probs.cols();
  const std::size_t blank = C - 1;
  if (target.empty()) throw ContractError("ctc_loss: empty target");
  detail::check_labels(target, blank);
  if (T < ctc_min_frames(target)) {
    throw InfeasibleAlignmentError("ctc_loss: " + std::to_string(T) + " frames cannot align " +
                                   std::to_string(target.size()) + " labels (need " +
                                   std::to_string(ctc_min_frames(target)) + ")");
  }

  const std::size_t S = 2 * target.size() + 1;
  std::vector<std::size_t> ext(S);
  for (std::size_t s = 0; s < S; ++s) ext[s] = s % 2 == 0 ? blank : static_cast<std::size_t>(target[s / 2]);
  // Skip transition s-2 -> s is allowed onto a label that differs from the label two back.
  auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  auto lp = log_probs.data();
  auto y = [&](std::size_t t, std::size_t k) { return lp[t * C + k]; };

  std::vector<double> alpha(T * S, detail::kNegInf);
  alpha[0] = y(0, ext[0]);
  if (S > 1) alpha[1] = y(0, ext[1]);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha[(t - 1) * S + s];
      if (s >= 1) a = detail::log_add(a, alpha[(t - 1) * S + s - 1]);
      if (can_skip(s)) a = detail::log_add(a, alpha[(t - 1) * S + s - 2]);
      alpha[t * S + s] = a == detail::kNegInf ? a : a + y(t, ext[s]);
    }
  }
  const double log_p = detail::log_add(alpha[(T - 1) * S + S - 1], S > 1 ? alpha[(T - 1) * S + S - 2] : detail::kNegInf);

  auto backward_fn = [log_probs, alpha = std::move(alpha), ext, T, S, C, log_p](detail::Node& self) {
    const auto& lp = log_probs.node()->data;
    auto y = [&](std::size_t t, std::size_t k) { return lp[t * C + k]; };
    auto can_skip_fwd = [&](std::size_t s) { return s + 2 < S && ext[s] != ext[s + 2] && ext[s + 2] != C - 1; };
    // beta includes the emission at t, matching alpha.
    std::vector<double> beta(T * S, detail::kNegInf);
    beta[(T - 1) * S + S - 1] = y(T - 1, ext[S - 1]);
    if (S > 1) beta[(T - 1) * S + S - 2] = y(T - 1, ext[S - 2]);
    for (std::size_t t = T - 1; t-- > 0;) {
      for (std::size_t s = 0; s < S; ++s) {
        double b = beta[(t + 1) * S + s];
        if (s + 1 < S) b = detail::log_add(b, beta[(t + 1) * S + s + 1]);
        if (can_skip_fwd(s)) b = detail::log_add(b, beta[(t + 1) * S + s + 2]);
        beta[t * S + s] = b == detail::kNegInf ? b : b + y(t, ext[s]);
      }
    }
    auto& ln = *log_probs.node();
    ln.ensure_grad();
    const double g = self.grad[0];
    std::vector<double> occ(C);
    for (std::size_t t = 0; t < T; ++t) {
      std::fill(occ.begin(), occ.end(), detail::kNegInf);
      for (std::size_t s = 0; s < S; ++s) {
        const double ab = alpha[t * S + s] + beta[t * S + s];
        if (ab != detail::kNegInf) occ[ext[s]] = detail::log_add(occ[ext[s]], ab);
      }
      for (std::size_t k = 0; k < C; ++k) {
        if (occ[k] == detail::kNegInf) continue;
        // d(-log p)/d log y_t(k) = -exp(occ - log y_t(k) - log p)
        ln.grad[t * C + k] -= g * std::exp(occ[k] - y(t, k) - log_p);
      }
    }
  };
  return detail::make_result({1}, {-log_p}, {log_probs}, std::move(backward_fn));
}

inline constexpr std::uint64_t kBruteForceMaxPaths = 1'000'000;

// Reference loss by enumerating all (V+1)^T frame paths.
inline double ctc_loss_bruteforce(const Tensor& log_probs, const LabelSeq& target) {
  const std::size_t T = log_probs.rows();
  const std::size_t C = log_probs.cols();
  const std::size_t blank = C - 1;
  detail::check_labels(target, blank);
  std::uint64_t paths = 1;
  for (std::size_t t = 0; t < T; ++t) {
    paths *= C;
    if (paths > kBruteForceMaxPaths) {
      throw OracleSizeError("ctc_loss_bruteforce: " + std::to_string(C) + "^" + std::to_string(T) +
                            " paths exceed the enumeration limit");
    }
  }
  auto lp = log_probs.data();
  std::vector<std::size_t> path(T, 0);
  LabelSeq collapsed;
  double total = detail::kNegInf;
  for (std::uint64_t idx = 0; idx < paths; ++idx) {
    std::uint64_t r = idx;
    for (std::size_t t = 0; t < T; ++t) {
      path[t] = r % C;
      r /= C;
    }
    collapsed.clear();
    for (std::size_t t = 0; t < T; ++t) {
      if (path[t] == blank) continue;
      if (t > 0 && path[t] == path[t - 1]) continue;
      collapsed.push_back(static_cast<int>(path[t]));
    }
    if (collapsed != target) continue;
    double s = 0.0;
    for (std::size_t t = 0; t < T; ++t) s += lp[t * C + path[t]];
    total = detail::log_add(total, s);
  }
  return -total;
}

struct DecodeResult {
  LabelSeq tokens;
  std::vector<int> frame_argmax;
};

// Collapse adjacent repeats, then drop blanks.
inline LabelSeq ctc_collapse(std::span<const int> frames, int blank) {
  LabelSeq out;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (t > 0 && frames[t] == frames[t - 1]) continue;
    if (frames[t] != blank) out.push_back(frames[t]);
  }
  return out;
}

// Per-frame argmax (ties resolve to the lowest index), collapse, remove blanks.
inline DecodeResult greedy_decode(const Tensor& logits) {
  const std::size_t T = logits.rows();
  const std::size_t C = logits.cols();
  DecodeResult r;
  r.frame_argmax.resize(T);
  auto d = logits.data();
  for (std::size_t t = 0; t < T; ++t) {
    const double* row = d.data() + t * C;
    r.frame_argmax[t] = static_cast<int>(std::max_element(row, row + C) - row);
  }
  r.tokens = ctc_collapse(r.frame_argmax, static_cast<int>(C - 1));
  return r;
}

// Levenshtein distance with unit substitution/insertion/deletion costs.
template <class T>
std::size_t edit_distance(std::span<const T> ref, std::span<const T> hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

// Each token counts as one word, so this is a token error rate.
template <class T>
double wer(std::span<const T> reference, std::span<const T> hypothesis) {
  if (reference.empty()) throw UndefinedMetricError("wer: reference is empty");
  return static_cast<double>(edit_distance(reference, hypothesis)) / static_cast<double>(reference.size());
}

template <class T>
double wer(const std::vector<T>& reference, const std::vector<T>& hypothesis) {
  return wer(std::span<const T>(reference), std::span<const T>(hypothesis));
}

}  // namespace ctcadapt
