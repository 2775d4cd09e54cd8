#include "seldpo/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "seldpo/errors.hpp"
#include "seldpo/io_util.hpp"

namespace seldpo {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

// Uniform draw from a sorted candidate list, optionally skipping one value.
int draw_from(DetRng& rng, const std::vector<int>& candidates, int excluded) {
  bool has_excluded =
      std::binary_search(candidates.begin(), candidates.end(), excluded);
  const std::size_t n = candidates.size() - (has_excluded ? 1u : 0u);
  if (n == 0) return -1;
  std::size_t idx = static_cast<std::size_t>(rng.bounded(n));
  for (std::size_t i = 0, kept = 0; i < candidates.size(); ++i) {
    if (candidates[i] == excluded) continue;
    if (kept == idx) return candidates[i];
    ++kept;
  }
  return -1;  // unreachable
}

nlohmann::ordered_json spec_provenance(const CorpusSpec& spec, int bad_count) {
  nlohmann::ordered_json p;
  p["generator"] = "controlled_corpus";
  p["rng"] = kRngId;
  p["vocab_size"] = spec.vocab_size;
  p["num_pairs"] = spec.num_pairs;
  p["prompt_len"] = spec.prompt_len;
  p["resp_len"] = spec.resp_len;
  p["divergent_count"] = spec.divergent_count;
  p["noise_count"] = spec.noise_count;
  p["seed"] = spec.seed;
  p["bad_subset_size"] = bad_count;
  p["bad_logit_offset"] = kBadLogitOffset;
  return p;
}

std::vector<int> parse_token_array(const nlohmann::ordered_json& j,
                                   const std::string& field, int line_no) {
  require(j.contains(field), "line " + std::to_string(line_no) +
                                 ": missing field \"" + field + "\"");
  const auto& arr = j[field];
  require(arr.is_array(), "line " + std::to_string(line_no) + ": field \"" +
                              field + "\" must be an array");
  std::vector<int> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    require(v.is_number_integer(), "line " + std::to_string(line_no) +
                                       ": field \"" + field +
                                       "\" must contain integers");
    out.push_back(v.get<int>());
  }
  return out;
}

}  // namespace

void CorpusSpec::validate() const {
  require(vocab_size >= 2, "vocab_size must be >= 2");
  require(num_pairs >= 1, "num_pairs must be >= 1");
  require(prompt_len >= 1, "prompt_len must be >= 1");
  require(resp_len >= 1, "resp_len must be >= 1");
  require(divergent_count >= 1, "divergent_count must be >= 1");
  require(noise_count >= 0, "noise_count must be >= 0");
  require(divergent_count + noise_count <= resp_len,
          "divergent_count + noise_count must be <= resp_len");
}

GeneratedCorpus generate_controlled_corpus(const CorpusSpec& spec) {
  spec.validate();
  const int V = spec.vocab_size;
  const int bad_count = (V + 3) / 4;  // ceil(V/4)

  DetRng rng(spec.seed);
  GeneratedCorpus out;

  // Oracle: uniform logits, then one depressed "bad" subset per context row.
  out.oracle = make_uniform_policy(V);
  for (double& v : out.oracle.logits) {
    v = rng.uniform_real(-kOracleLogitScale, kOracleLogitScale);
  }
  out.bad_mask.assign(static_cast<std::size_t>(V) * static_cast<std::size_t>(V),
                      0);
  std::vector<std::vector<int>> bad_tokens(static_cast<std::size_t>(V));
  std::vector<std::vector<int>> nonbad_tokens(static_cast<std::size_t>(V));
  for (int c = 0; c < V; ++c) {
    bad_tokens[static_cast<std::size_t>(c)] = rng.sample_distinct(V, bad_count);
    for (int t : bad_tokens[static_cast<std::size_t>(c)]) {
      out.oracle.at(c, t) -= kBadLogitOffset;
      out.bad_mask[static_cast<std::size_t>(c) * static_cast<std::size_t>(V) +
                   static_cast<std::size_t>(t)] = 1;
    }
    for (int t = 0; t < V; ++t) {
      if (!out.token_is_bad(c, t)) {
        nonbad_tokens[static_cast<std::size_t>(c)].push_back(t);
      }
    }
  }

  out.dataset.vocab = Vocab{V};
  out.dataset.provenance = spec_provenance(spec, bad_count);
  out.dataset.pairs.reserve(static_cast<std::size_t>(spec.num_pairs));
  out.noise_positions.reserve(static_cast<std::size_t>(spec.num_pairs));

  for (int pi = 0; pi < spec.num_pairs; ++pi) {
    PreferencePair pair;
    pair.prompt.reserve(static_cast<std::size_t>(spec.prompt_len));
    for (int i = 0; i < spec.prompt_len; ++i) {
      pair.prompt.push_back(static_cast<int>(rng.bounded(static_cast<std::uint64_t>(V))));
    }
    pair.chosen = sample_response(out.oracle, pair.prompt, spec.resp_len, rng);

    std::vector<int> divergent = rng.sample_distinct(spec.resp_len, spec.divergent_count);
    std::vector<int> rest;
    rest.reserve(static_cast<std::size_t>(spec.resp_len - spec.divergent_count));
    for (int i = 0; i < spec.resp_len; ++i) {
      if (!std::binary_search(divergent.begin(), divergent.end(), i)) {
        rest.push_back(i);
      }
    }
    std::vector<int> noise;
    for (int idx : rng.sample_distinct(static_cast<int>(rest.size()), spec.noise_count)) {
      noise.push_back(rest[static_cast<std::size_t>(idx)]);
    }

    // Noise on the chosen side first, ascending, so later contexts are final.
    for (int i : noise) {
      const int ctx = (i == 0) ? pair.prompt.back() : pair.chosen[static_cast<std::size_t>(i - 1)];
      pair.chosen[static_cast<std::size_t>(i)] =
          draw_from(rng, nonbad_tokens[static_cast<std::size_t>(ctx)], -1);
    }

    // Rejected: bad substitutions and independent noise redraws, in one
    // ascending pass so every draw sees its final context.
    pair.rejected = pair.chosen;
    std::vector<int> touched = divergent;
    touched.insert(touched.end(), noise.begin(), noise.end());
    std::sort(touched.begin(), touched.end());
    for (int i : touched) {
      const int ctx = (i == 0) ? pair.prompt.back() : pair.rejected[static_cast<std::size_t>(i - 1)];
      const bool is_div = std::binary_search(divergent.begin(), divergent.end(), i);
      if (is_div) {
        const int tok = draw_from(rng, bad_tokens[static_cast<std::size_t>(ctx)],
                                  pair.chosen[static_cast<std::size_t>(i)]);
        if (tok < 0) {
          throw ValidationError(
              "pair " + std::to_string(pi) + ": no bad token differs from the "
              "chosen token at position " + std::to_string(i) +
              "; use a larger vocab_size or another seed");
        }
        pair.rejected[static_cast<std::size_t>(i)] = tok;
      } else {
        pair.rejected[static_cast<std::size_t>(i)] =
            draw_from(rng, nonbad_tokens[static_cast<std::size_t>(ctx)], -1);
      }
    }

    pair.divergent_positions = divergent;
    out.dataset.pairs.push_back(std::move(pair));
    out.noise_positions.push_back(std::move(noise));
  }
  return out;
}

void write_dataset(const PreferenceDataset& dataset, const std::string& path) {
  if (dataset.pairs.empty()) throw ValidationError("dataset has no pairs");
  std::ostringstream out;
  nlohmann::ordered_json header;
  header["format_version"] = 1;
  header["vocab_size"] = dataset.vocab.size;
  header["provenance"] = dataset.provenance;
  out << header.dump() << "\n";
  for (const PreferencePair& pair : dataset.pairs) {
    nlohmann::ordered_json j;
    j["prompt"] = pair.prompt;
    j["chosen"] = pair.chosen;
    j["rejected"] = pair.rejected;
    if (pair.divergent_positions) {
      j["divergent_positions"] = *pair.divergent_positions;
    }
    out << j.dump() << "\n";
  }
  write_file_atomic(path, out.str());
}

PreferenceDataset read_dataset(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  int line_no = 0;
  PreferenceDataset ds;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    // ordered parse so provenance keeps its key order through a round trip
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(path + " line " + std::to_string(line_no) + ": " +
                            e.what());
    }
    require(j.is_object(),
            path + " line " + std::to_string(line_no) + ": not a JSON object");
    if (!have_header) {
      require(j.contains("format_version") && j["format_version"].is_number_integer(),
              path + " line 1: missing format_version");
      const int version = j["format_version"].get<int>();
      require(version == 1, path + ": unsupported format_version " +
                                std::to_string(version) + " (expected 1)");
      require(j.contains("vocab_size") && j["vocab_size"].is_number_integer(),
              path + " line 1: missing vocab_size");
      ds.vocab.size = j["vocab_size"].get<int>();
      require(ds.vocab.size >= 2, path + ": vocab_size must be >= 2");
      ds.provenance = j.contains("provenance")
                          ? nlohmann::ordered_json(j["provenance"])
                          : nlohmann::ordered_json("external");
      have_header = true;
      continue;
    }

    PreferencePair pair;
    pair.prompt = parse_token_array(j, "prompt", line_no);
    pair.chosen = parse_token_array(j, "chosen", line_no);
    pair.rejected = parse_token_array(j, "rejected", line_no);
    const int pair_index = static_cast<int>(ds.pairs.size());
    const std::string where =
        "pair " + std::to_string(pair_index) + " (line " + std::to_string(line_no) + ")";
    require(!pair.prompt.empty(), where + ": empty prompt");
    require(!pair.chosen.empty(), where + ": empty chosen response");
    require(!pair.rejected.empty(), where + ": empty rejected response");
    try {
      validate_tokens(pair.prompt, ds.vocab.size, "prompt");
      validate_tokens(pair.chosen, ds.vocab.size, "chosen");
      validate_tokens(pair.rejected, ds.vocab.size, "rejected");
    } catch (const ValidationError& e) {
      throw ValidationError(path + " " + where + ": " + e.what());
    }
    if (j.contains("divergent_positions")) {
      std::vector<int> div = parse_token_array(j, "divergent_positions", line_no);
      std::sort(div.begin(), div.end());
      require(std::adjacent_find(div.begin(), div.end()) == div.end(),
              where + ": divergent_positions must be distinct");
      for (int p : div) {
        require(p >= 0 && p < static_cast<int>(pair.rejected.size()),
                where + ": divergent position " + std::to_string(p) +
                    " outside rejected response");
      }
      pair.divergent_positions = std::move(div);
    }
    ds.pairs.push_back(std::move(pair));
  }
  require(have_header, path + ": empty file (missing header line)");
  require(!ds.pairs.empty(), path + ": dataset has no pairs");
  return ds;
}

std::pair<PreferenceDataset, PreferenceDataset> split_dataset(
    const PreferenceDataset& dataset, double heldout_fraction,
    std::uint64_t seed) {
  require(heldout_fraction > 0.0 && heldout_fraction < 1.0,
          "heldout_fraction must lie in (0, 1)");
  const std::size_t n = dataset.pairs.size();
  require(n >= 2, "need at least 2 pairs to split");
  std::size_t h = static_cast<std::size_t>(
      std::floor(heldout_fraction * static_cast<double>(n) + 0.5));
  h = std::max<std::size_t>(1, h);
  require(h < n, "heldout split would consume every pair");

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  DetRng rng(seed);
  rng.shuffle(idx);
  std::vector<std::size_t> held(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(h));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(h), idx.end());
  std::sort(held.begin(), held.end());
  std::sort(train.begin(), train.end());

  PreferenceDataset train_ds, held_ds;
  train_ds.vocab = held_ds.vocab = dataset.vocab;
  train_ds.provenance = held_ds.provenance = dataset.provenance;
  for (std::size_t i : train) train_ds.pairs.push_back(dataset.pairs[i]);
  for (std::size_t i : held) held_ds.pairs.push_back(dataset.pairs[i]);
  return {std::move(train_ds), std::move(held_ds)};
}

}  // namespace seldpo
