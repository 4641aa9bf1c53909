// SPDX-License-Identifier: Apache-2.0
//
// Seeded toy "speech" corpora. Each language owns a set of unit-norm token
// prototypes in d_in; an utterance emits every token as r in
// [r_min, r_max] noisy copies of its prototype.
//
// Dataset file format (little-endian):
//   magic      6 bytes "ADSYN1"
//   spec_len   u32, spec as compact JSON (echo of SynthSpec)
//   seed       u64
//   count      u32
//   count x utterance:
//     T u32, d_in u32, T*d_in x f64 frames (row-major)
//     label_count u32, label_count x i32 labels
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ctcadapt/config.hpp"
#include "ctcadapt/ctc.hpp"
#include "ctcadapt/io.hpp"
#include "ctcadapt/rng.hpp"

namespace ctcadapt {

struct SynthSpec {
  std::size_t vocab_size = 8;
  std::size_t d_in = 16;
  std::size_t frames_min = 2;  // frames per token
  std::size_t frames_max = 4;
  double noise_sigma = 0.1;
  std::size_t length_min = 3;  // tokens per utterance
  std::size_t length_max = 8;
  std::size_t num_utterances = 100;
  std::uint64_t seed = 0;
  std::string language_tag = "A";
  // Utterances are drawn per split; prototypes are shared across splits.
  std::string split = "train";
  // Relabel tokens through a seeded permutation of the alphabet.
  bool permute_labels = false;

  void validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size", "must be >= 2");
    if (d_in < 1) throw ConfigError("d_in", "must be >= 1");
    if (frames_min < 1) throw ConfigError("frames_per_token", "minimum must be >= 1");
    if (frames_max < frames_min) throw ConfigError("frames_per_token", "max must be >= min");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma", "must be >= 0");
    if (length_min < 1) throw ConfigError("utterance_len", "minimum must be >= 1");
    if (length_max < length_min) throw ConfigError("utterance_len", "max must be >= min");
    if (language_tag.empty()) throw ConfigError("language_tag", "must not be empty");
  }
};

struct Utterance {
  Tensor frames;  // [T x d_in]
  LabelSeq labels;
  std::size_t true_length = 0;
};

struct Dataset {
  SynthSpec spec;
  std::vector<Utterance> utterances;

  std::size_t size() const { return utterances.size(); }
  bool empty() const { return utterances.empty(); }
  std::size_t total_frames() const {
    std::size_t n = 0;
    for (const auto& u : utterances) n += u.true_length;
    return n;
  }
};

inline json to_json(const SynthSpec& s) {
  return {{"vocab_size", s.vocab_size},
          {"d_in", s.d_in},
          {"frames_per_token", {s.frames_min, s.frames_max}},
          {"noise_sigma", s.noise_sigma},
          {"utterance_len", {s.length_min, s.length_max}},
          {"num_utterances", s.num_utterances},
          {"seed", s.seed},
          {"language_tag", s.language_tag},
          {"split", s.split},
          {"permute_labels", s.permute_labels}};
}

inline SynthSpec synth_spec_from_json(const json& j) {
  detail::ObjectReader r(j, "");
  SynthSpec s;
  auto range = [&](const std::string& key, std::size_t& lo, std::size_t& hi) {
    const json v = r.get<json>(key, json());
    if (v.is_null()) return;
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer() ||
        v[0].get<long long>() < 0 || v[1].get<long long>() < 0)
      throw ConfigError(key, "expected [min, max] non-negative integers");
    lo = v[0].get<std::size_t>();
    hi = v[1].get<std::size_t>();
  };
  s.vocab_size = r.get("vocab_size", s.vocab_size);
  s.d_in = r.get("d_in", s.d_in);
  range("frames_per_token", s.frames_min, s.frames_max);
  s.noise_sigma = r.get("noise_sigma", s.noise_sigma);
  range("utterance_len", s.length_min, s.length_max);
  s.num_utterances = r.get("num_utterances", s.num_utterances);
  s.seed = r.get<std::uint64_t>("seed", s.seed);
  s.language_tag = r.get<std::string>("language_tag", s.language_tag);
  s.split = r.get<std::string>("split", s.split);
  s.permute_labels = r.get("permute_labels", s.permute_labels);
  r.finish();
  s.validate();
  return s;
}

// Unit-norm prototype per label, drawn once per (seed, language).
inline std::vector<std::vector<double>> token_prototypes(const SynthSpec& s) {
  auto rng = make_rng(s.seed, "prototypes/" + s.language_tag);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> protos(s.vocab_size, std::vector<double>(s.d_in));
  for (auto& p : protos) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& v : p) {
        v = normal(rng);
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (double& v : p) v /= norm;
  }
  return protos;
}

// Rank -> label map. Identity unless permute_labels.
inline std::vector<int> label_permutation(const SynthSpec& s) {
  std::vector<int> perm(s.vocab_size);
  std::iota(perm.begin(), perm.end(), 0);
  if (s.permute_labels) {
    auto rng = make_rng(s.seed, "labels/" + s.language_tag);
    std::shuffle(perm.begin(), perm.end(), rng);
  }
  return perm;
}

// Token ranks follow weights 1/sqrt(rank+1). Adjacent tokens never repeat,
// since equal neighbours would have no acoustic boundary.
inline Dataset generate(const SynthSpec& s) {
  s.validate();
  const auto protos = token_prototypes(s);
  const auto perm = label_permutation(s);
  std::vector<double> weights(s.vocab_size);
  for (std::size_t k = 0; k < s.vocab_size; ++k) weights[k] = 1.0 / std::sqrt(static_cast<double>(k + 1));

  auto rng = make_rng(s.seed, "utterances/" + s.language_tag + "/" + s.split);
  std::uniform_int_distribution<std::size_t> length(s.length_min, s.length_max);
  std::uniform_int_distribution<std::size_t> repeats(s.frames_min, s.frames_max);
  std::normal_distribution<double> noise(0.0, 1.0);

  Dataset ds;
  ds.spec = s;
  ds.utterances.reserve(s.num_utterances);
  for (std::size_t u = 0; u < s.num_utterances; ++u) {
    const std::size_t len = length(rng);
    Utterance utt;
    std::vector<double> frames;
    int prev_rank = -1;
    for (std::size_t i = 0; i < len; ++i) {
      std::vector<double> w = weights;
      if (prev_rank >= 0) w[static_cast<std::size_t>(prev_rank)] = 0.0;
      std::discrete_distribution<int> pick(w.begin(), w.end());
      const int rank = pick(rng);
      prev_rank = rank;
      const int label = perm[static_cast<std::size_t>(rank)];
      utt.labels.push_back(label);
      const std::size_t r = repeats(rng);
      for (std::size_t f = 0; f < r; ++f) {
        for (std::size_t j = 0; j < s.d_in; ++j) {
          double v = protos[static_cast<std::size_t>(label)][j];
          if (s.noise_sigma > 0.0) v += s.noise_sigma * noise(rng);
          frames.push_back(v);
        }
      }
    }
    utt.true_length = frames.size() / s.d_in;
    utt.frames = Tensor({utt.true_length, s.d_in}, std::move(frames));
    ds.utterances.push_back(std::move(utt));
  }
  return ds;
}

// Two related synthetic languages: B draws its own prototypes and relabels
// its alphabet through a permutation, so a model trained on A does not
// transfer to B without adaptation.
inline std::pair<Dataset, Dataset> make_language_pair(SynthSpec base, std::uint64_t seed) {
  base.seed = seed;
  SynthSpec a = base;
  a.language_tag = "A";
  a.permute_labels = false;
  SynthSpec b = base;
  b.language_tag = "B";
  b.permute_labels = true;
  return {generate(a), generate(b)};
}

inline constexpr char kDatasetMagic[6] = {'A', 'D', 'S', 'Y', 'N', '1'};

inline std::vector<char> serialize_dataset(const Dataset& ds) {
  detail::ByteWriter w;
  w.put_bytes(kDatasetMagic, sizeof(kDatasetMagic));
  const std::string spec = to_json(ds.spec).dump();
  w.put(static_cast<std::uint32_t>(spec.size()));
  w.put_bytes(spec.data(), spec.size());
  w.put(static_cast<std::uint64_t>(ds.spec.seed));
  w.put(static_cast<std::uint32_t>(ds.utterances.size()));
  for (const auto& u : ds.utterances) {
    w.put(static_cast<std::uint32_t>(u.frames.rows()));
    w.put(static_cast<std::uint32_t>(u.frames.cols()));
    w.put_doubles(u.frames.data());
    w.put(static_cast<std::uint32_t>(u.labels.size()));
    for (int l : u.labels) w.put(static_cast<std::int32_t>(l));
  }
  return w.bytes();
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  detail::write_file(path, serialize_dataset(ds));
}

inline Dataset load_dataset(const std::string& path) {
  detail::ByteReader r(detail::read_file(path), path);
  if (r.get_string(sizeof(kDatasetMagic)) != std::string(kDatasetMagic, sizeof(kDatasetMagic))) {
    throw FormatError(path + ": not a dataset file (bad magic)");
  }
  Dataset ds;
  const std::string spec = r.get_string(r.get<std::uint32_t>());
  try {
    ds.spec = synth_spec_from_json(json::parse(spec));
  } catch (const json::exception& e) {
    throw FormatError(path + ": malformed spec header (" + e.what() + ")");
  }
  ds.spec.seed = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  ds.utterances.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Utterance u;
    const auto t = r.get<std::uint32_t>();
    const auto d = r.get<std::uint32_t>();
    if (t == 0 || d == 0) throw FormatError(path + ": empty utterance");
    std::vector<double> frames(static_cast<std::size_t>(t) * d);
    r.get_doubles(frames);
    u.frames = Tensor({t, d}, std::move(frames));
    u.true_length = t;
    const auto n = r.get<std::uint32_t>();
    u.labels.resize(n);
    for (auto& l : u.labels) l = r.get<std::int32_t>();
    ds.utterances.push_back(std::move(u));
  }
  if (!r.at_end()) throw FormatError(path + ": trailing bytes after last utterance");
  return ds;
}

}  // namespace ctcadapt
