#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seldpo/rng.hpp"

namespace seldpo {

// Tabular autoregressive policy over token ids 0..vocab_size-1. Row c of the
// logit table parameterizes p(token | previous token = c) via softmax; the
// context for the first response token is the last prompt token.
struct BigramPolicy {
  int vocab_size = 0;
  std::vector<double> logits;  // row-major, vocab_size * vocab_size

  double& at(int ctx, int tok) {
    return logits[static_cast<std::size_t>(ctx) *
                      static_cast<std::size_t>(vocab_size) +
                  static_cast<std::size_t>(tok)];
  }
  double at(int ctx, int tok) const {
    return logits[static_cast<std::size_t>(ctx) *
                      static_cast<std::size_t>(vocab_size) +
                  static_cast<std::size_t>(tok)];
  }
  std::span<const double> row(int ctx) const {
    return {logits.data() + static_cast<std::size_t>(ctx) *
                                static_cast<std::size_t>(vocab_size),
            static_cast<std::size_t>(vocab_size)};
  }
};

// All-zero logits: every conditional is uniform.
BigramPolicy make_uniform_policy(int vocab_size);

// I.i.d. uniform logits on [-scale, scale], deterministic in the seed.
BigramPolicy make_random_policy(int vocab_size, double scale,
                                std::uint64_t seed);

// Log-softmax of one row (max-subtracted for stability).
std::vector<double> log_softmax_row(const BigramPolicy& policy, int ctx);

// log p(tok | ctx).
double token_log_prob(const BigramPolicy& policy, int ctx, int tok);

// Per-token conditional log-probabilities of `response` after `prompt`.
// result[i] = log p(response[i] | context_i), context_0 = prompt.back().
std::vector<double> log_prob_tokens(const BigramPolicy& policy,
                                    std::span<const int> prompt,
                                    std::span<const int> response);

// d log p(tok | ctx) / d logits[ctx][j] = 1[j == tok] - p(j | ctx).
// Only row `ctx` has nonzero entries; the returned vector is that row.
std::vector<double> grad_log_prob_token(const BigramPolicy& policy, int ctx,
                                        int tok);

// Ancestral sampling by inverse CDF over each conditional; deterministic in
// the seed.
std::vector<int> sample_response(const BigramPolicy& policy,
                                 std::span<const int> prompt, int length,
                                 std::uint64_t seed);
std::vector<int> sample_response(const BigramPolicy& policy,
                                 std::span<const int> prompt, int length,
                                 DetRng& rng);

// Checkpoint file: JSON object {format_version, backend, vocab_size, logits,
// meta}. Doubles are serialized with round-trip-exact formatting, so a
// save/load cycle reproduces every logit bit for bit.
void save_checkpoint(const BigramPolicy& policy, const std::string& path,
                     const nlohmann::ordered_json& meta = nlohmann::ordered_json::object());
BigramPolicy load_checkpoint(const std::string& path);

// Throws ValidationError if ids fall outside [0, vocab_size).
void validate_tokens(std::span<const int> tokens, int vocab_size,
                     const std::string& what);

}  // namespace seldpo
