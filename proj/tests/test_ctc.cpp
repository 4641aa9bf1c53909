// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace ctcadapt;
using testing_support::random_tensor;
using testing_support::uniform_size;

namespace {

Tensor log_of(const std::vector<std::vector<double>>& probs) {
  std::vector<std::vector<double>> rows = probs;
  for (auto& r : rows)
    for (double& v : r) v = std::log(v);
  return Tensor::matrix(rows);
}

// Random feasible target of length L over `vocab` labels.
LabelSeq random_target(std::mt19937_64& rng, std::size_t len, std::size_t vocab) {
  LabelSeq t(len);
  for (int& x : t) x = static_cast<int>(uniform_size(rng, 0, vocab - 1));
  return t;
}

}  // namespace

TEST(CtcLoss, SingleForcedPath) {
  const Tensor lp = Tensor::matrix({{0.0, -std::numeric_limits<double>::infinity()}});
  EXPECT_EQ(ctc_loss(lp, {0}).item(), 0.0);
}

TEST(CtcLoss, UniformTwoFrames) {
  const Tensor lp = log_of({{0.5, 0.5}, {0.5, 0.5}});
  EXPECT_NEAR(ctc_loss(lp, {0}).item(), -std::log(0.75), 1e-12);
  EXPECT_NEAR(ctc_loss(lp, {0}).item(), 0.287682, 1e-6);
  EXPECT_NEAR(ctc_loss_bruteforce(lp, {0}), -std::log(0.75), 1e-12);
}

TEST(CtcLoss, RepeatsNeedSeparatingBlank) {
  const Tensor lp = log_of({{0.5, 0.5}});
  EXPECT_THROW(ctc_loss(lp, {0, 0}), InfeasibleAlignmentError);
  EXPECT_EQ(ctc_min_frames({0, 0}), 3u);
  EXPECT_EQ(ctc_min_frames({0, 1}), 2u);
}

TEST(CtcLoss, RejectsBlankAndOutOfRangeLabels) {
  const Tensor lp = log_of({{0.3, 0.3, 0.4}, {0.3, 0.3, 0.4}});
  EXPECT_THROW(ctc_loss(lp, {2}), ContractError);
  EXPECT_THROW(ctc_loss(lp, {-1}), ContractError);
  EXPECT_THROW(ctc_loss(lp, {}), ContractError);
}

TEST(CtcLoss, OneHotRowsGiveSinglePath) {
  // Frames: a, blank, b -> exactly one path; its probability is 0.9^3.
  const Tensor lp = log_of({{0.9, 0.05, 0.05}, {0.05, 0.05, 0.9}, {0.05, 0.9, 0.05}});
  const double brute = ctc_loss_bruteforce(lp, {0, 1});
  EXPECT_NEAR(ctc_loss(lp, {0, 1}).item(), brute, 1e-12);
  const Tensor exact = Tensor::matrix({{0.0, -1e300, -1e300}, {-1e300, -1e300, 0.0}, {-1e300, 0.0, -1e300}});
  EXPECT_NEAR(ctc_loss(exact, {0, 1}).item(), 0.0, 1e-12);
}

TEST(CtcBruteForce, SizeLimit) {
  const Tensor lp = log_softmax(Tensor::zeros({20, 5}));
  EXPECT_THROW(ctc_loss_bruteforce(lp, {0}), OracleSizeError);
}

TEST(CtcLoss, OracleEquivalence) {
  std::mt19937_64 rng(2024);
  int checked = 0;
  while (checked < 600) {
    const std::size_t vocab = uniform_size(rng, 1, 4);
    const std::size_t len = uniform_size(rng, 1, 3);
    const std::size_t frames = uniform_size(rng, 1, 6);
    const LabelSeq target = random_target(rng, len, vocab);
    if (frames < ctc_min_frames(target)) continue;
    const Tensor lp = log_softmax(random_tensor(rng, {frames, vocab + 1}, -3, 3));
    const double fast = ctc_loss(lp, target).item();
    const double slow = ctc_loss_bruteforce(lp, target);
    ASSERT_NEAR(fast, slow, 1e-10) << "T=" << frames << " L=" << len << " V=" << vocab;
    EXPECT_GE(fast, 0.0);
    ++checked;
  }
}

TEST(CtcLoss, GradientThroughLogSoftmax) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t vocab = uniform_size(rng, 1, 5);
    const LabelSeq target = random_target(rng, uniform_size(rng, 1, 4), vocab);
    const std::size_t frames = ctc_min_frames(target) + uniform_size(rng, 0, 5);
    Tensor logits = random_tensor(rng, {frames, vocab + 1}, -2, 2);
    const double err = finite_diff_check([&] { return ctc_loss(log_softmax(logits), target); }, {logits}, 1e-5);
    EXPECT_LT(err, 1e-4) << "trial " << trial;
  }
}

TEST(CtcLoss, LongSequenceStaysFinite) {
  std::mt19937_64 rng(1);
  const Tensor lp = log_softmax(random_tensor(rng, {400, 6}, -5, 5));
  const double l = ctc_loss(lp, {0, 1, 2, 3, 4, 0, 1}).item();
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_GT(l, 0.0);
}

TEST(GreedyDecode, CollapseRules) {
  const int blank = 2;
  EXPECT_EQ(ctc_collapse(std::vector<int>{blank, 0, 0, blank, 1}, blank), (LabelSeq{0, 1}));
  EXPECT_EQ(ctc_collapse(std::vector<int>{0, blank, 0}, blank), (LabelSeq{0, 0}));
  EXPECT_TRUE(ctc_collapse(std::vector<int>{blank, blank}, blank).empty());
}

TEST(GreedyDecode, TiesGoToLowestIndex) {
  const DecodeResult r = greedy_decode(Tensor::matrix({{1.0, 1.0, 0.0}, {0.0, 0.0, 0.0}}));
  EXPECT_EQ(r.frame_argmax, (std::vector<int>{0, 0}));
  EXPECT_EQ(r.tokens, (LabelSeq{0}));
}

TEST(GreedyDecode, CollapsesArgmaxAndIsStable) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = uniform_size(rng, 2, 5);
    const Tensor logits = random_tensor(rng, {uniform_size(rng, 1, 12), c});
    const DecodeResult r = greedy_decode(logits);
    const int blank = static_cast<int>(c - 1);
    for (int tok : r.tokens) EXPECT_NE(tok, blank);
    EXPECT_EQ(r.tokens, ctc_collapse(r.frame_argmax, blank));
    // Decoding one-hot logits of the argmax path gives the same tokens.
    Tensor onehot = Tensor::zeros(logits.shape());
    for (std::size_t t = 0; t < r.frame_argmax.size(); ++t) onehot.data()[t * c + r.frame_argmax[t]] = 1.0;
    EXPECT_EQ(greedy_decode(onehot).tokens, r.tokens);
  }
}

TEST(Wer, Examples) {
  EXPECT_EQ(wer(std::vector<int>{1, 2, 3}, std::vector<int>{1, 2, 3}), 0.0);
  EXPECT_DOUBLE_EQ(wer(std::vector<int>{0, 1, 2}, std::vector<int>{0, 2}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(wer(std::vector<int>{0}, std::vector<int>{1, 2}), 2.0);
  EXPECT_THROW(wer(std::vector<int>{}, std::vector<int>{1}), UndefinedMetricError);
}

TEST(Wer, WordTokens) {
  const std::vector<std::string> ref = {"the", "cat", "sat"};
  const std::vector<std::string> hyp = {"the", "sat"};
  EXPECT_DOUBLE_EQ(wer(ref, hyp), 1.0 / 3.0);
}

// Independent full-table Levenshtein used as the oracle.
TEST(Wer, MatchesTableOracleAndRelabeling) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const LabelSeq ref = random_target(rng, uniform_size(rng, 1, 8), 4);
    const LabelSeq hyp = random_target(rng, uniform_size(rng, 0, 8), 4);
    std::vector<std::vector<std::size_t>> d(ref.size() + 1, std::vector<std::size_t>(hyp.size() + 1));
    for (std::size_t i = 0; i <= ref.size(); ++i) d[i][0] = i;
    for (std::size_t j = 0; j <= hyp.size(); ++j) d[0][j] = j;
    for (std::size_t i = 1; i <= ref.size(); ++i)
      for (std::size_t j = 1; j <= hyp.size(); ++j)
        d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1])});
    const double want = static_cast<double>(d[ref.size()][hyp.size()]) / static_cast<double>(ref.size());
    EXPECT_DOUBLE_EQ(wer(ref, hyp), want);

    const std::vector<int> perm = {2, 0, 3, 1};
    LabelSeq r2 = ref, h2 = hyp;
    for (int& x : r2) x = perm[x];
    for (int& x : h2) x = perm[x];
    EXPECT_DOUBLE_EQ(wer(r2, h2), want);
  }
}
