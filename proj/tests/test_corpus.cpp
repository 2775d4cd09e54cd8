#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "seldpo/corpus.hpp"
#include "seldpo/errors.hpp"
#include "seldpo/io_util.hpp"
#include "seldpo/policy.hpp"

using namespace seldpo;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

CorpusSpec small_spec() {
  CorpusSpec spec;
  spec.vocab_size = 16;
  spec.num_pairs = 64;
  spec.prompt_len = 3;
  spec.resp_len = 8;
  spec.divergent_count = 2;
  spec.noise_count = 1;
  spec.seed = 11;
  return spec;
}

// Context of response position i on the given side (the sequences only
// share a context where all earlier tokens agree, so each side uses its own).
int context_at(const std::vector<int>& prompt, const std::vector<int>& resp,
               std::size_t i) {
  return i == 0 ? prompt.back() : resp[i - 1];
}

}  // namespace

TEST_CASE("spec validation names the offending field") {
  CorpusSpec spec = small_spec();
  spec.vocab_size = 1;
  CHECK_THROWS_WITH_AS((void)generate_controlled_corpus(spec),
                       doctest::Contains("vocab_size"), ValidationError);

  spec = small_spec();
  spec.num_pairs = 0;
  CHECK_THROWS_WITH_AS((void)generate_controlled_corpus(spec),
                       doctest::Contains("num_pairs"), ValidationError);

  spec = small_spec();
  spec.prompt_len = 0;
  CHECK_THROWS_WITH_AS((void)generate_controlled_corpus(spec),
                       doctest::Contains("prompt_len"), ValidationError);

  spec = small_spec();
  spec.divergent_count = 0;
  CHECK_THROWS_WITH_AS((void)generate_controlled_corpus(spec),
                       doctest::Contains("divergent_count"), ValidationError);

  spec = small_spec();
  spec.noise_count = -1;
  CHECK_THROWS_WITH_AS((void)generate_controlled_corpus(spec),
                       doctest::Contains("noise_count"), ValidationError);

  spec = small_spec();
  spec.divergent_count = 5;
  spec.noise_count = 4;  // 9 > resp_len
  CHECK_THROWS_AS((void)generate_controlled_corpus(spec), ValidationError);
}

TEST_CASE("generation is deterministic in the spec") {
  const GeneratedCorpus a = generate_controlled_corpus(small_spec());
  const GeneratedCorpus b = generate_controlled_corpus(small_spec());
  CHECK(a.dataset.pairs == b.dataset.pairs);
  CHECK(a.oracle.logits == b.oracle.logits);
  CHECK(a.bad_mask == b.bad_mask);
  CHECK(a.noise_positions == b.noise_positions);

  CorpusSpec other = small_spec();
  other.seed = 12;
  const GeneratedCorpus c = generate_controlled_corpus(other);
  CHECK(a.dataset.pairs != c.dataset.pairs);
}

TEST_CASE("generated shapes and token ranges match the spec") {
  const CorpusSpec spec = small_spec();
  const GeneratedCorpus corpus = generate_controlled_corpus(spec);
  CHECK(corpus.dataset.vocab.size == spec.vocab_size);
  REQUIRE(corpus.dataset.pairs.size() ==
          static_cast<std::size_t>(spec.num_pairs));
  REQUIRE(corpus.noise_positions.size() ==
          static_cast<std::size_t>(spec.num_pairs));

  for (const PreferencePair& pair : corpus.dataset.pairs) {
    CHECK(pair.prompt.size() == static_cast<std::size_t>(spec.prompt_len));
    CHECK(pair.chosen.size() == static_cast<std::size_t>(spec.resp_len));
    CHECK(pair.rejected.size() == static_cast<std::size_t>(spec.resp_len));
    for (int t : pair.prompt) {
      CHECK(t >= 0);
      CHECK(t < spec.vocab_size);
    }
    for (int t : pair.chosen) {
      CHECK(t >= 0);
      CHECK(t < spec.vocab_size);
    }
    for (int t : pair.rejected) {
      CHECK(t >= 0);
      CHECK(t < spec.vocab_size);
    }
  }
}

TEST_CASE("bad mask marks ceil(V/4) depressed tokens per context row") {
  const CorpusSpec spec = small_spec();  // V = 16 -> 4 bad tokens per row
  const GeneratedCorpus corpus = generate_controlled_corpus(spec);
  for (int ctx = 0; ctx < spec.vocab_size; ++ctx) {
    int bad = 0;
    for (int tok = 0; tok < spec.vocab_size; ++tok) {
      if (corpus.token_is_bad(ctx, tok)) ++bad;
    }
    CHECK(bad == 4);
  }
}

TEST_CASE("annotations are sound: divergent positions carry bad tokens") {
  const CorpusSpec spec = small_spec();
  const GeneratedCorpus corpus = generate_controlled_corpus(spec);

  for (std::size_t p = 0; p < corpus.dataset.pairs.size(); ++p) {
    const PreferencePair& pair = corpus.dataset.pairs[p];
    REQUIRE(pair.divergent_positions.has_value());
    const std::vector<int>& div = *pair.divergent_positions;
    REQUIRE(div.size() == static_cast<std::size_t>(spec.divergent_count));

    // Ascending, distinct, in range, disjoint from noise positions.
    const std::vector<int>& noise = corpus.noise_positions[p];
    for (std::size_t i = 0; i < div.size(); ++i) {
      CHECK(div[i] >= 0);
      CHECK(div[i] < spec.resp_len);
      if (i > 0) CHECK(div[i] > div[i - 1]);
      CHECK(std::find(noise.begin(), noise.end(), div[i]) == noise.end());
    }

    std::set<int> divergent(div.begin(), div.end());
    for (std::size_t i = 0; i < pair.rejected.size(); ++i) {
      const int ctx = context_at(pair.prompt, pair.rejected, i);
      if (divergent.count(static_cast<int>(i))) {
        // The substituted token is bad in its own context and really differs.
        CHECK(corpus.token_is_bad(ctx, pair.rejected[i]));
        CHECK(pair.rejected[i] != pair.chosen[i]);
      } else if (std::find(noise.begin(), noise.end(), static_cast<int>(i)) !=
                 noise.end()) {
        // Noise positions draw from non-bad tokens on both sides.
        CHECK_FALSE(corpus.token_is_bad(ctx, pair.rejected[i]));
        CHECK_FALSE(corpus.token_is_bad(
            context_at(pair.prompt, pair.chosen, i), pair.chosen[i]));
      } else {
        // Everything else is copied verbatim.
        CHECK(pair.rejected[i] == pair.chosen[i]);
      }
    }
  }
}

TEST_CASE("the oracle prefers chosen responses by a wide statistical margin") {
  // Each substitution costs the rejected side about 4 logits, but noise and
  // context shifts at substituted positions can eat into that, so the
  // guarantee is statistical rather than per pair (on this corpus: 63/64).
  const GeneratedCorpus corpus = generate_controlled_corpus(small_spec());
  int strict = 0;
  double mean_gap = 0.0;
  for (const PreferencePair& pair : corpus.dataset.pairs) {
    double gap = 0.0;
    for (double lp : log_prob_tokens(corpus.oracle, pair.prompt, pair.chosen)) {
      gap += lp;
    }
    for (double lp :
         log_prob_tokens(corpus.oracle, pair.prompt, pair.rejected)) {
      gap -= lp;
    }
    strict += (gap > 0.0);
    mean_gap += gap;
  }
  mean_gap /= static_cast<double>(corpus.dataset.pairs.size());
  CHECK(strict >= 61);  // >= 95% of 64
  CHECK(mean_gap > 2.0);
}

TEST_CASE("provenance records the generation settings and rng id") {
  const CorpusSpec spec = small_spec();
  const GeneratedCorpus corpus = generate_controlled_corpus(spec);
  const nlohmann::ordered_json& prov = corpus.dataset.provenance;
  CHECK(prov.at("generator") == "controlled_corpus");
  CHECK(prov.at("rng") == kRngId);
  CHECK(prov.at("vocab_size") == spec.vocab_size);
  CHECK(prov.at("num_pairs") == spec.num_pairs);
  CHECK(prov.at("seed") == spec.seed);
  CHECK(prov.at("bad_subset_size") == 4);
  CHECK(prov.at("bad_logit_offset") == kBadLogitOffset);
}

TEST_CASE("tiny vocabularies still generate (one bad token per row)") {
  CorpusSpec spec;
  spec.vocab_size = 4;
  spec.num_pairs = 8;
  spec.prompt_len = 2;
  spec.resp_len = 3;
  spec.divergent_count = 1;
  spec.noise_count = 0;
  spec.seed = 1;
  const GeneratedCorpus corpus = generate_controlled_corpus(spec);
  CHECK(corpus.dataset.pairs.size() == 8);
  for (const PreferencePair& pair : corpus.dataset.pairs) {
    REQUIRE(pair.divergent_positions->size() == 1);
    const int i = (*pair.divergent_positions)[0];
    CHECK(pair.chosen[static_cast<std::size_t>(i)] !=
          pair.rejected[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("dataset file round-trip preserves pairs and provenance") {
  const GeneratedCorpus corpus = generate_controlled_corpus(small_spec());
  const std::string path = temp_path("seldpo_test_corpus.jsonl");
  write_dataset(corpus.dataset, path);
  const PreferenceDataset loaded = read_dataset(path);
  CHECK(loaded.vocab.size == corpus.dataset.vocab.size);
  CHECK(loaded.pairs == corpus.dataset.pairs);
  CHECK(loaded.provenance == corpus.dataset.provenance);

  // Second write of the loaded dataset is byte-identical to the first file.
  const std::string path2 = temp_path("seldpo_test_corpus2.jsonl");
  write_dataset(loaded, path2);
  CHECK(read_file(path) == read_file(path2));
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("unannotated pairs survive the round trip without annotations") {
  PreferenceDataset ds;
  ds.vocab.size = 4;
  PreferencePair pair;
  pair.prompt = {0};
  pair.chosen = {1, 2};
  pair.rejected = {3, 2};
  ds.pairs.push_back(pair);
  const std::string path = temp_path("seldpo_test_plain.jsonl");
  write_dataset(ds, path);
  const PreferenceDataset loaded = read_dataset(path);
  REQUIRE(loaded.pairs.size() == 1);
  CHECK_FALSE(loaded.pairs[0].divergent_positions.has_value());
  CHECK(loaded.provenance == "external");
  std::filesystem::remove(path);
}

TEST_CASE("read_dataset reports malformed input with line numbers") {
  const std::string path = temp_path("seldpo_test_badfile.jsonl");

  auto write_lines = [&](const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::trunc);
    for (const std::string& l : lines) out << l << "\n";
  };

  write_lines({});
  CHECK_THROWS_AS((void)read_dataset(path), ValidationError);

  write_lines({R"({"format_version":2,"vocab_size":4,"provenance":"external"})"});
  CHECK_THROWS_WITH_AS((void)read_dataset(path),
                       doctest::Contains("format_version"), ValidationError);

  write_lines({R"({"format_version":1,"vocab_size":4,"provenance":"external"})",
               R"({"prompt":[0],"chosen":[1]})"});
  CHECK_THROWS_WITH_AS((void)read_dataset(path), doctest::Contains("line 2"),
                       ValidationError);

  write_lines({R"({"format_version":1,"vocab_size":4,"provenance":"external"})",
               R"({"prompt":[0],"chosen":[1],"rejected":[9]})"});
  CHECK_THROWS_WITH_AS((void)read_dataset(path), doctest::Contains("pair 0"),
                       ValidationError);

  write_lines({R"({"format_version":1,"vocab_size":4,"provenance":"external"})",
               R"(not json)"});
  CHECK_THROWS_WITH_AS((void)read_dataset(path), doctest::Contains("line 2"),
                       ValidationError);

  write_lines(
      {R"({"format_version":1,"vocab_size":4,"provenance":"external"})",
       R"({"prompt":[0],"chosen":[1,2],"rejected":[3,2],"divergent_positions":[0,0]})"});
  CHECK_THROWS_AS((void)read_dataset(path), ValidationError);

  write_lines(
      {R"({"format_version":1,"vocab_size":4,"provenance":"external"})",
       R"({"prompt":[0],"chosen":[1,2],"rejected":[3,2],"divergent_positions":[5]})"});
  CHECK_THROWS_AS((void)read_dataset(path), ValidationError);

  std::filesystem::remove(path);
}

TEST_CASE("read_dataset rejects missing files with IoError") {
  CHECK_THROWS_AS((void)read_dataset(temp_path("seldpo_no_such_file.jsonl")),
                  IoError);
}

TEST_CASE("split_dataset partitions deterministically") {
  const GeneratedCorpus corpus = generate_controlled_corpus(small_spec());
  const auto [train_a, heldout_a] = split_dataset(corpus.dataset, 0.25, 1);
  const auto [train_b, heldout_b] = split_dataset(corpus.dataset, 0.25, 1);
  CHECK(train_a.pairs == train_b.pairs);
  CHECK(heldout_a.pairs == heldout_b.pairs);

  // round(0.25 * 64) = 16 held out.
  CHECK(heldout_a.pairs.size() == 16);
  CHECK(train_a.pairs.size() == 48);
  CHECK(train_a.vocab.size == corpus.dataset.vocab.size);
  CHECK(train_a.provenance == corpus.dataset.provenance);

  // Disjoint, and together they are a permutation of the original.
  std::vector<PreferencePair> all = train_a.pairs;
  all.insert(all.end(), heldout_a.pairs.begin(), heldout_a.pairs.end());
  CHECK(all.size() == corpus.dataset.pairs.size());
  std::size_t found = 0;
  for (const PreferencePair& pair : corpus.dataset.pairs) {
    found += static_cast<std::size_t>(
        std::count(all.begin(), all.end(), pair));
  }
  CHECK(found == corpus.dataset.pairs.size());

  const auto [train_c, heldout_c] = split_dataset(corpus.dataset, 0.25, 2);
  CHECK(heldout_c.pairs != heldout_a.pairs);
}

TEST_CASE("split_dataset keeps original relative order within each side") {
  const GeneratedCorpus corpus = generate_controlled_corpus(small_spec());
  const auto [train, heldout] = split_dataset(corpus.dataset, 0.1, 3);

  auto index_of = [&](const PreferencePair& pair) {
    for (std::size_t i = 0; i < corpus.dataset.pairs.size(); ++i) {
      if (corpus.dataset.pairs[i] == pair) return i;
    }
    return corpus.dataset.pairs.size();
  };
  for (std::size_t i = 1; i < train.pairs.size(); ++i) {
    CHECK(index_of(train.pairs[i - 1]) < index_of(train.pairs[i]));
  }
  for (std::size_t i = 1; i < heldout.pairs.size(); ++i) {
    CHECK(index_of(heldout.pairs[i - 1]) < index_of(heldout.pairs[i]));
  }
}

TEST_CASE("split_dataset validates its fraction and dataset size") {
  const GeneratedCorpus corpus = generate_controlled_corpus(small_spec());
  CHECK_THROWS_AS((void)split_dataset(corpus.dataset, 0.0, 1), ValidationError);
  CHECK_THROWS_AS((void)split_dataset(corpus.dataset, 1.0, 1), ValidationError);
  CHECK_THROWS_AS((void)split_dataset(corpus.dataset, -0.5, 1),
                  ValidationError);

  PreferenceDataset tiny;
  tiny.vocab.size = 4;
  tiny.pairs.push_back(corpus.dataset.pairs.front());
  // One pair cannot fund a non-empty train split.
  CHECK_THROWS_AS((void)split_dataset(tiny, 0.5, 1), ValidationError);
}
