// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <filesystem>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace ctcadapt;
using testing_support::bitwise_equal;

namespace {

SynthSpec spec(std::size_t n = 20) {
  SynthSpec s;
  s.vocab_size = 5;
  s.d_in = 6;
  s.num_utterances = n;
  s.seed = 17;
  return s;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("ctcadapt_synth_" + name)).string();
}

}  // namespace

TEST(Synth, ZeroNoiseFramesAreExactPrototypes) {
  SynthSpec s = spec();
  s.noise_sigma = 0.0;
  const auto protos = token_prototypes(s);
  for (const auto& p : protos) {
    double norm = 0.0;
    for (double v : p) norm += v * v;
    EXPECT_NEAR(norm, 1.0, 1e-12);
  }
  const Dataset ds = generate(s);
  for (const auto& u : ds.utterances) {
    // Walk frames: each run of identical rows is one token.
    std::size_t t = 0;
    for (int label : u.labels) {
      ASSERT_LT(t, u.frames.rows());
      std::size_t run = 0;
      while (t < u.frames.rows() &&
             std::equal(protos[label].begin(), protos[label].end(), u.frames.data().begin() + t * s.d_in)) {
        ++t;
        ++run;
      }
      EXPECT_GE(run, s.frames_min);
      EXPECT_LE(run, s.frames_max);
    }
    EXPECT_EQ(t, u.frames.rows());
  }
}

TEST(Synth, LengthsAndAlphabet) {
  const SynthSpec s = spec(50);
  const Dataset ds = generate(s);
  ASSERT_EQ(ds.size(), 50u);
  for (const auto& u : ds.utterances) {
    EXPECT_GE(u.labels.size(), s.length_min);
    EXPECT_LE(u.labels.size(), s.length_max);
    EXPECT_EQ(u.true_length, u.frames.rows());
    EXPECT_EQ(u.frames.cols(), s.d_in);
    for (std::size_t i = 0; i < u.labels.size(); ++i) {
      EXPECT_GE(u.labels[i], 0);
      EXPECT_LT(u.labels[i], static_cast<int>(s.vocab_size));
      if (i) {
        EXPECT_NE(u.labels[i], u.labels[i - 1]);
      }
    }
    EXPECT_GE(u.true_length, ctc_min_frames(u.labels));
  }
}

TEST(Synth, Deterministic) {
  const Dataset a = generate(spec());
  const Dataset b = generate(spec());
  EXPECT_EQ(serialize_dataset(a), serialize_dataset(b));
  SynthSpec other = spec();
  other.seed = 18;
  EXPECT_NE(serialize_dataset(a), serialize_dataset(generate(other)));
}

TEST(Synth, SplitsSharePrototypesButNotUtterances) {
  SynthSpec train_spec = spec();
  SynthSpec test_spec = spec();
  test_spec.split = "test";
  EXPECT_EQ(token_prototypes(train_spec), token_prototypes(test_spec));
  EXPECT_FALSE(bitwise_equal(generate(train_spec).utterances[0].frames.data(),
                             generate(test_spec).utterances[0].frames.data()));
}

TEST(Synth, LanguagePairDiffers) {
  const auto [a, b] = make_language_pair(spec(), 5);
  EXPECT_EQ(a.spec.language_tag, "A");
  EXPECT_EQ(b.spec.language_tag, "B");
  EXPECT_NE(token_prototypes(a.spec), token_prototypes(b.spec));
  std::vector<int> perm = label_permutation(b.spec);
  std::vector<int> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], static_cast<int>(i));
  const std::vector<int> ident = label_permutation(a.spec);
  for (std::size_t i = 0; i < ident.size(); ++i) EXPECT_EQ(ident[i], static_cast<int>(i));
}

TEST(Synth, ZeroUtterances) {
  const Dataset ds = generate(spec(0));
  EXPECT_TRUE(ds.empty());
  EXPECT_EQ(ds.total_frames(), 0u);
}

TEST(Synth, ValidationErrors) {
  SynthSpec s = spec();
  s.vocab_size = 1;
  EXPECT_THROW(generate(s), ConfigError);
  s = spec();
  s.frames_min = 0;
  EXPECT_THROW(generate(s), ConfigError);
  s = spec();
  s.length_max = 0;
  EXPECT_THROW(generate(s), ConfigError);
  s = spec();
  s.noise_sigma = -1.0;
  EXPECT_THROW(generate(s), ConfigError);
}

TEST(Synth, JsonParsing) {
  const SynthSpec s = synth_spec_from_json(json::parse(
      R"({"vocab_size": 6, "frames_per_token": [1, 2], "utterance_len": [2, 3], "num_utterances": 7,
          "seed": 9, "language_tag": "B", "permute_labels": true})"));
  EXPECT_EQ(s.vocab_size, 6u);
  EXPECT_EQ(s.frames_max, 2u);
  EXPECT_EQ(s.length_min, 2u);
  EXPECT_TRUE(s.permute_labels);
  EXPECT_EQ(to_json(synth_spec_from_json(to_json(s))), to_json(s));

  EXPECT_THROW(synth_spec_from_json(json::parse(R"({"vocab": 6})")), ConfigError);
  EXPECT_THROW(synth_spec_from_json(json::parse(R"({"num_utterances": -1})")), ConfigError);
  EXPECT_THROW(synth_spec_from_json(json::parse(R"({"utterance_len": [3]})")), ConfigError);
  try {
    synth_spec_from_json(json::parse(R"({"vocab_size": 1})"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "vocab_size");
  }
}

TEST(DatasetIo, RoundTrip) {
  const Dataset ds = generate(spec(12));
  const std::string path = temp_path("rt.bin");
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);
  EXPECT_EQ(serialize_dataset(back), serialize_dataset(ds));
  EXPECT_EQ(to_json(back.spec), to_json(ds.spec));
  std::filesystem::remove(path);
}

TEST(DatasetIo, RejectsCorruptFiles) {
  const std::vector<char> bytes = serialize_dataset(generate(spec(3)));
  const std::string path = temp_path("bad.bin");
  std::vector<char> bad = bytes;
  bad[0] = 'Z';
  detail::write_file(path, bad);
  EXPECT_THROW(load_dataset(path), FormatError);
  detail::write_file(path, std::vector<char>(bytes.begin(), bytes.end() - 1));
  EXPECT_THROW(load_dataset(path), FormatError);
  std::vector<char> longer = bytes;
  longer.push_back(1);
  detail::write_file(path, longer);
  EXPECT_THROW(load_dataset(path), FormatError);
  std::filesystem::remove(path);
}
