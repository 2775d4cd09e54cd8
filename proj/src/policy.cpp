#include "seldpo/policy.hpp"

#include <cmath>
#include <limits>

#include "seldpo/errors.hpp"
#include "seldpo/io_util.hpp"

namespace seldpo {

namespace {

void check_vocab_size(int vocab_size) {
  if (vocab_size < 2) {
    throw ValidationError("vocab_size must be >= 2, got " +
                          std::to_string(vocab_size));
  }
}

void check_ctx(const BigramPolicy& policy, int ctx) {
  if (ctx < 0 || ctx >= policy.vocab_size) {
    throw ValidationError("context token " + std::to_string(ctx) +
                          " out of range for vocab_size " +
                          std::to_string(policy.vocab_size));
  }
}

}  // namespace

BigramPolicy make_uniform_policy(int vocab_size) {
  check_vocab_size(vocab_size);
  BigramPolicy p;
  p.vocab_size = vocab_size;
  p.logits.assign(static_cast<std::size_t>(vocab_size) *
                      static_cast<std::size_t>(vocab_size),
                  0.0);
  return p;
}

BigramPolicy make_random_policy(int vocab_size, double scale,
                                std::uint64_t seed) {
  check_vocab_size(vocab_size);
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw ValidationError("logit scale must be positive and finite");
  }
  BigramPolicy p = make_uniform_policy(vocab_size);
  DetRng rng(seed);
  for (double& v : p.logits) v = rng.uniform_real(-scale, scale);
  return p;
}

std::vector<double> log_softmax_row(const BigramPolicy& policy, int ctx) {
  check_ctx(policy, ctx);
  const auto row = policy.row(ctx);
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : row) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = row[j] - lse;
  return out;
}

double token_log_prob(const BigramPolicy& policy, int ctx, int tok) {
  check_ctx(policy, ctx);
  if (tok < 0 || tok >= policy.vocab_size) {
    throw ValidationError("token " + std::to_string(tok) +
                          " out of range for vocab_size " +
                          std::to_string(policy.vocab_size));
  }
  const auto row = policy.row(ctx);
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : row) sum += std::exp(v - mx);
  return row[static_cast<std::size_t>(tok)] - (mx + std::log(sum));
}

std::vector<double> log_prob_tokens(const BigramPolicy& policy,
                                    std::span<const int> prompt,
                                    std::span<const int> response) {
  if (prompt.empty()) {
    throw ValidationError("prompt must be non-empty (first response context)");
  }
  if (response.empty()) throw ValidationError("response must be non-empty");
  validate_tokens(prompt, policy.vocab_size, "prompt");
  validate_tokens(response, policy.vocab_size, "response");
  std::vector<double> out(response.size());
  int ctx = prompt.back();
  for (std::size_t i = 0; i < response.size(); ++i) {
    out[i] = token_log_prob(policy, ctx, response[i]);
    ctx = response[i];
  }
  return out;
}

std::vector<double> grad_log_prob_token(const BigramPolicy& policy, int ctx,
                                        int tok) {
  std::vector<double> lp = log_softmax_row(policy, ctx);
  if (tok < 0 || tok >= policy.vocab_size) {
    throw ValidationError("token " + std::to_string(tok) +
                          " out of range for vocab_size " +
                          std::to_string(policy.vocab_size));
  }
  std::vector<double> g(lp.size());
  for (std::size_t j = 0; j < lp.size(); ++j) g[j] = -std::exp(lp[j]);
  g[static_cast<std::size_t>(tok)] += 1.0;
  return g;
}

std::vector<int> sample_response(const BigramPolicy& policy,
                                 std::span<const int> prompt, int length,
                                 DetRng& rng) {
  if (prompt.empty()) throw ValidationError("prompt must be non-empty");
  if (length < 1) throw ValidationError("response length must be >= 1");
  validate_tokens(prompt, policy.vocab_size, "prompt");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(length));
  int ctx = prompt.back();
  for (int i = 0; i < length; ++i) {
    const std::vector<double> lp = log_softmax_row(policy, ctx);
    const double u = rng.uniform_double();
    double cum = 0.0;
    int picked = -1;
    int last_nonzero = 0;
    for (int j = 0; j < policy.vocab_size; ++j) {
      const double p = std::exp(lp[static_cast<std::size_t>(j)]);
      if (p > 0.0) last_nonzero = j;
      cum += p;
      if (u < cum) {
        picked = j;
        break;
      }
    }
    // cum can fall a few ulps short of 1; attribute the sliver to the last
    // token with any mass.
    if (picked < 0) picked = last_nonzero;
    out.push_back(picked);
    ctx = picked;
  }
  return out;
}

std::vector<int> sample_response(const BigramPolicy& policy,
                                 std::span<const int> prompt, int length,
                                 std::uint64_t seed) {
  DetRng rng(seed);
  return sample_response(policy, prompt, length, rng);
}

void save_checkpoint(const BigramPolicy& policy, const std::string& path,
                     const nlohmann::ordered_json& meta) {
  for (double v : policy.logits) {
    if (!std::isfinite(v)) {
      throw NumericError("refusing to save checkpoint with non-finite logit");
    }
  }
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["backend"] = "bigram";
  j["vocab_size"] = policy.vocab_size;
  j["logits"] = policy.logits;
  j["meta"] = meta;
  write_file_atomic(path, j.dump() + "\n");
}

BigramPolicy load_checkpoint(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("checkpoint " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("checkpoint " + path + ": not a JSON object");
  if (!j.contains("format_version") || !j["format_version"].is_number_integer()) {
    throw ValidationError("checkpoint " + path + ": missing format_version");
  }
  const int version = j["format_version"].get<int>();
  if (version != 1) {
    throw ValidationError("checkpoint " + path + ": unsupported format_version " +
                          std::to_string(version) + " (expected 1)");
  }
  if (!j.contains("backend") || j["backend"] != "bigram") {
    throw ValidationError("checkpoint " + path + ": unsupported backend (expected \"bigram\")");
  }
  if (!j.contains("vocab_size") || !j["vocab_size"].is_number_integer()) {
    throw ValidationError("checkpoint " + path + ": missing vocab_size");
  }
  BigramPolicy p;
  p.vocab_size = j["vocab_size"].get<int>();
  check_vocab_size(p.vocab_size);
  if (!j.contains("logits") || !j["logits"].is_array()) {
    throw ValidationError("checkpoint " + path + ": missing logits array");
  }
  const std::size_t expected = static_cast<std::size_t>(p.vocab_size) *
                               static_cast<std::size_t>(p.vocab_size);
  if (j["logits"].size() != expected) {
    throw ValidationError("checkpoint " + path + ": expected " +
                          std::to_string(expected) + " logits, found " +
                          std::to_string(j["logits"].size()));
  }
  p.logits.reserve(expected);
  for (const auto& v : j["logits"]) {
    if (!v.is_number()) {
      throw ValidationError("checkpoint " + path + ": non-numeric logit entry");
    }
    const double d = v.get<double>();
    if (!std::isfinite(d)) {
      throw ValidationError("checkpoint " + path + ": non-finite logit entry");
    }
    p.logits.push_back(d);
  }
  return p;
}

void validate_tokens(std::span<const int> tokens, int vocab_size,
                     const std::string& what) {
  for (int t : tokens) {
    if (t < 0 || t >= vocab_size) {
      throw ValidationError(what + ": token id " + std::to_string(t) +
                            " out of range for vocab_size " +
                            std::to_string(vocab_size));
    }
  }
}

}  // namespace seldpo
