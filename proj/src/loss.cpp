#include "seldpo/loss.hpp"

#include <cmath>

#include "seldpo/errors.hpp"

namespace seldpo {

namespace {

void check_finite_input(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw ValidationError(std::string(what) + " must be finite");
  }
}

double sum(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace

Objective parse_objective(const std::string& name) {
  if (name == "sft") return Objective::sft;
  if (name == "dpo") return Objective::dpo;
  if (name == "selective_dpo") return Objective::selective_dpo;
  throw ValidationError("unknown objective \"" + name +
                        "\" (expected sft|dpo|selective_dpo)");
}

std::string objective_name(Objective o) {
  switch (o) {
    case Objective::sft: return "sft";
    case Objective::dpo: return "dpo";
    case Objective::selective_dpo: return "selective_dpo";
  }
  return "?";
}

void LossConfig::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw ValidationError("beta must be positive and finite");
  }
  if (!(top_k_percent > 0.0) || top_k_percent > 100.0 ||
      !std::isfinite(top_k_percent)) {
    throw ValidationError("top-k percentage must lie in (0, 100]");
  }
}

double stable_sigmoid(double x) {
  check_finite_input(x, "sigmoid input");
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) {
  check_finite_input(x, "log-sigmoid input");
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

double bradley_terry_prob(double reward_win, double reward_lose) {
  check_finite_input(reward_win, "reward");
  check_finite_input(reward_lose, "reward");
  return stable_sigmoid(reward_win - reward_lose);
}

double selective_reward(std::span<const double> pol_lp,
                        std::span<const double> ref_lp,
                        std::span<const std::uint8_t> mask) {
  if (pol_lp.size() != ref_lp.size() || pol_lp.size() != mask.size()) {
    throw ValidationError("selective_reward: length mismatch");
  }
  double r = 0.0;
  for (std::size_t i = 0; i < pol_lp.size(); ++i) {
    if (mask[i]) r += pol_lp[i] - ref_lp[i];
  }
  return r;
}

PairLogProbs compute_pair_log_probs(const BigramPolicy& policy,
                                    const PreferencePair& pair) {
  PairLogProbs lp;
  lp.win = log_prob_tokens(policy, pair.prompt, pair.chosen);
  lp.lose = log_prob_tokens(policy, pair.prompt, pair.rejected);
  return lp;
}

PairLossBreakdown dpo_loss(const PairLogProbs& pol, const PairLogProbs& ref,
                           double beta) {
  LossConfig cfg;
  cfg.beta = beta;
  cfg.validate();
  if (pol.win.size() != ref.win.size() || pol.lose.size() != ref.lose.size()) {
    throw ValidationError("dpo_loss: log-prob lengths disagree");
  }
  PairLossBreakdown b;
  b.reward_win = sum(pol.win) - sum(ref.win);
  b.reward_lose = sum(pol.lose) - sum(ref.lose);
  b.margin = beta * (b.reward_win - b.reward_lose);
  b.loss = -log_sigmoid(b.margin);
  b.mask = full_mask(static_cast<int>(pol.win.size()),
                     static_cast<int>(pol.lose.size()));
  return b;
}

PairLossBreakdown selective_dpo_loss(const PreferencePair& pair,
                                     const PairLogProbs& pol,
                                     const PairLogProbs& ref,
                                     const LossConfig& config) {
  config.validate();
  if (pol.win.size() != pair.chosen.size() ||
      pol.lose.size() != pair.rejected.size() ||
      ref.win.size() != pair.chosen.size() ||
      ref.lose.size() != pair.rejected.size()) {
    throw ValidationError("selective_dpo_loss: log-probs do not match pair");
  }
  const AlignmentScores scores =
      alignment_scores(ref.win, pol.win, ref.lose, pol.lose);
  const SelectionMask mask = select_top_k(scores, config.top_k_percent);

  PairLossBreakdown b;
  b.reward_win = selective_reward(pol.win, ref.win, mask.win_mask);
  b.reward_lose = selective_reward(pol.lose, ref.lose, mask.lose_mask);
  b.margin = config.beta * (b.reward_win - b.reward_lose);
  b.loss = -log_sigmoid(b.margin);
  b.mask = mask;
  return b;
}

double sft_loss(std::span<const double> pol_win_lp) {
  if (pol_win_lp.empty()) throw ValidationError("sft_loss: empty response");
  return -sum(pol_win_lp) / static_cast<double>(pol_win_lp.size());
}

double pair_loss_with_mask(const PairLogProbs& pol, const PairLogProbs& ref,
                           const SelectionMask& mask, double beta) {
  const double rw = selective_reward(pol.win, ref.win, mask.win_mask);
  const double rl = selective_reward(pol.lose, ref.lose, mask.lose_mask);
  return -log_sigmoid(beta * (rw - rl));
}

namespace {

// Caches softmax rows of the current policy across one batch evaluation.
class RowProbCache {
 public:
  explicit RowProbCache(const BigramPolicy& policy)
      : policy_(policy), rows_(static_cast<std::size_t>(policy.vocab_size)) {}

  const std::vector<double>& probs(int ctx) {
    auto& row = rows_[static_cast<std::size_t>(ctx)];
    if (row.empty()) {
      const std::vector<double> lp = log_softmax_row(policy_, ctx);
      row.resize(lp.size());
      for (std::size_t j = 0; j < lp.size(); ++j) row[j] = std::exp(lp[j]);
    }
    return row;
  }

 private:
  const BigramPolicy& policy_;
  std::vector<std::vector<double>> rows_;
};

// grad_row[ctx][:] += weight * (onehot(tok) - p(. | ctx))
void add_token_grad(std::vector<double>& grad, RowProbCache& cache, int V,
                    int ctx, int tok, double weight) {
  const std::vector<double>& p = cache.probs(ctx);
  double* row = grad.data() + static_cast<std::size_t>(ctx) * static_cast<std::size_t>(V);
  for (int j = 0; j < V; ++j) row[static_cast<std::size_t>(j)] -= weight * p[static_cast<std::size_t>(j)];
  row[static_cast<std::size_t>(tok)] += weight;
}

int context_at(const PreferencePair& pair, const std::vector<int>& response,
               std::size_t i) {
  return i == 0 ? pair.prompt.back() : response[i - 1];
}

}  // namespace

BatchResult batch_loss_and_grad(const BigramPolicy& policy,
                                std::span<const PreferencePair> batch,
                                std::span<const PairLogProbs> ref_lps,
                                const LossConfig& config, Objective objective) {
  config.validate();
  if (batch.empty()) throw ValidationError("batch_loss_and_grad: empty batch");
  if (objective != Objective::sft && ref_lps.size() != batch.size()) {
    throw ValidationError(
        "batch_loss_and_grad: reference log-probs required for " +
        objective_name(objective));
  }
  const int V = policy.vocab_size;
  BatchResult out;
  out.grad.assign(static_cast<std::size_t>(V) * static_cast<std::size_t>(V), 0.0);
  RowProbCache cache(policy);
  double loss_sum = 0.0;
  double fraction_sum = 0.0;

  for (std::size_t pi = 0; pi < batch.size(); ++pi) {
    const PreferencePair& pair = batch[pi];
    const std::string where = "pair " + std::to_string(pi);
    const PairLogProbs pol = compute_pair_log_probs(policy, pair);
    if (!all_finite(pol.win) || !all_finite(pol.lose)) {
      throw NumericError(where + ": non-finite policy log-prob");
    }

    if (objective == Objective::sft) {
      const double l = sft_loss(pol.win);
      if (!std::isfinite(l)) throw NumericError(where + ": non-finite loss");
      loss_sum += l;
      const double w = -1.0 / static_cast<double>(pair.chosen.size());
      for (std::size_t i = 0; i < pair.chosen.size(); ++i) {
        add_token_grad(out.grad, cache, V, context_at(pair, pair.chosen, i),
                       pair.chosen[i], w);
      }
      fraction_sum += static_cast<double>(pair.chosen.size()) /
                      static_cast<double>(pair.chosen.size() + pair.rejected.size());
      continue;
    }

    const PairLogProbs& ref = ref_lps[pi];
    if (!all_finite(ref.win) || !all_finite(ref.lose)) {
      throw NumericError(where + ": non-finite reference log-prob");
    }
    PairLossBreakdown b;
    if (objective == Objective::dpo) {
      b = dpo_loss(pol, ref, config.beta);
    } else {
      b = selective_dpo_loss(pair, pol, ref, config);
    }
    if (!std::isfinite(b.loss)) throw NumericError(where + ": non-finite loss");
    loss_sum += b.loss;
    fraction_sum += static_cast<double>(b.mask.selected_count) /
                    static_cast<double>(b.mask.total_tokens());

    // d loss / d margin = -sigma(-margin); the mask is a constant here.
    const double coef = stable_sigmoid(-b.margin) * config.beta;
    for (std::size_t i = 0; i < pair.chosen.size(); ++i) {
      if (!b.mask.win_mask[i]) continue;
      add_token_grad(out.grad, cache, V, context_at(pair, pair.chosen, i),
                     pair.chosen[i], -coef);
    }
    for (std::size_t i = 0; i < pair.rejected.size(); ++i) {
      if (!b.mask.lose_mask[i]) continue;
      add_token_grad(out.grad, cache, V, context_at(pair, pair.rejected, i),
                     pair.rejected[i], coef);
    }
  }

  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss = loss_sum * inv;
  out.selected_fraction = fraction_sum * inv;
  for (double& g : out.grad) g *= inv;
  if (!std::isfinite(out.loss)) throw NumericError("non-finite batch loss");
  for (double g : out.grad) {
    if (!std::isfinite(g)) throw NumericError("non-finite batch gradient");
  }
  return out;
}

BatchResult batch_loss_and_grad(const BigramPolicy& policy,
                                const BigramPolicy* reference,
                                std::span<const PreferencePair> batch,
                                const LossConfig& config, Objective objective) {
  std::vector<PairLogProbs> ref_lps;
  if (objective != Objective::sft) {
    if (reference == nullptr) {
      throw ValidationError("objective " + objective_name(objective) +
                            " requires a reference policy");
    }
    ref_lps.reserve(batch.size());
    for (const PreferencePair& pair : batch) {
      ref_lps.push_back(compute_pair_log_probs(*reference, pair));
    }
  }
  return batch_loss_and_grad(policy, batch, ref_lps, config, objective);
}

}  // namespace seldpo
