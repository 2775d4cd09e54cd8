#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "seldpo/policy.hpp"

namespace seldpo {

struct Vocab {
  int size = 0;  // token ids are 0..size-1
};

// One preference example. divergent_positions, when present, lists the
// indices of the rejected response that were substituted with known-bad
// tokens during generation (ascending, distinct). The chosen side keeps the
// original token at those same indices, so one index set annotates both.
struct PreferencePair {
  std::vector<int> prompt;
  std::vector<int> chosen;
  std::vector<int> rejected;
  std::optional<std::vector<int>> divergent_positions;

  bool operator==(const PreferencePair&) const = default;
};

struct CorpusSpec {
  int vocab_size = 32;
  int num_pairs = 2048;
  int prompt_len = 4;
  int resp_len = 16;
  int divergent_count = 3;
  int noise_count = 2;
  std::uint64_t seed = 7;

  void validate() const;  // throws ValidationError naming the bad field
};

struct PreferenceDataset {
  Vocab vocab;
  std::vector<PreferencePair> pairs;
  // Generation settings for synthetic corpora, or the string "external".
  nlohmann::ordered_json provenance = "external";
};

// Fraction of each row's tokens that get their logit depressed in the
// generating oracle, and the depression amount. Recorded in provenance.
inline constexpr double kBadLogitOffset = 4.0;
inline constexpr double kOracleLogitScale = 1.0;

// generate_controlled_corpus output. noise_positions and bad_mask expose
// generation-time ground truth (per-pair noise indices; V*V row-major flag
// for depressed oracle entries) for diagnostics and tests; only the dataset
// and oracle are meant to be persisted.
struct GeneratedCorpus {
  PreferenceDataset dataset;
  BigramPolicy oracle;
  std::vector<std::vector<int>> noise_positions;
  std::vector<std::uint8_t> bad_mask;

  bool token_is_bad(int ctx, int tok) const {
    return bad_mask[static_cast<std::size_t>(ctx) *
                        static_cast<std::size_t>(oracle.vocab_size) +
                    static_cast<std::size_t>(tok)] != 0;
  }
};

// Builds a synthetic annotated corpus:
//  1. oracle logits ~ U[-1, 1], then ceil(V/4) "bad" tokens per context row
//     get their logit depressed by 4.0;
//  2. prompts are uniform, chosen responses are sampled from the oracle;
//  3. rejected = chosen with divergent_count positions resampled from the
//     bad set of their (rejected-side) context, always differing from the
//     chosen token there;
//  4. noise_count further positions are redrawn on both sides independently
//     from non-bad tokens, at the same indices, so noise carries no
//     preference signal.
// Deterministic: equal specs give equal datasets and oracles.
GeneratedCorpus generate_controlled_corpus(const CorpusSpec& spec);

// UTF-8 JSONL; line 1 is a header {format_version, vocab_size, provenance},
// each following line is one pair.
void write_dataset(const PreferenceDataset& dataset, const std::string& path);
PreferenceDataset read_dataset(const std::string& path);

// Seeded shuffle, then round(fraction * n) pairs (at least 1) are held out.
// Both splits keep the original dataset order internally.
std::pair<PreferenceDataset, PreferenceDataset> split_dataset(
    const PreferenceDataset& dataset, double heldout_fraction,
    std::uint64_t seed);

}  // namespace seldpo
