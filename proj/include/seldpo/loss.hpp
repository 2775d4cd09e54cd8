#pragma once

#include <span>
#include <string>
#include <vector>

#include "seldpo/align.hpp"
#include "seldpo/corpus.hpp"
#include "seldpo/policy.hpp"

namespace seldpo {

enum class Objective { sft, dpo, selective_dpo };

Objective parse_objective(const std::string& name);  // sft|dpo|selective_dpo
std::string objective_name(Objective o);

struct LossConfig {
  double beta = 0.01;
  double top_k_percent = 40.0;

  void validate() const;
};

// Numerically stable sigmoid / log-sigmoid; both branch on the sign so no
// exp() ever overflows for |x| up to DBL_MAX.
double stable_sigmoid(double x);
double log_sigmoid(double x);

// Probability the higher-reward response wins under the pairwise comparison
// model: sigma(reward_win - reward_lose).
double bradley_terry_prob(double reward_win, double reward_lose);

// Masked implicit reward: sum over selected tokens of (pol_lp - ref_lp).
double selective_reward(std::span<const double> pol_lp,
                        std::span<const double> ref_lp,
                        std::span<const std::uint8_t> mask);

struct PairLogProbs {
  std::vector<double> win;
  std::vector<double> lose;
};

PairLogProbs compute_pair_log_probs(const BigramPolicy& policy,
                                    const PreferencePair& pair);

struct PairLossBreakdown {
  double loss = 0.0;
  double margin = 0.0;       // beta * (reward_win - reward_lose)
  double reward_win = 0.0;   // unscaled masked reward of the chosen response
  double reward_lose = 0.0;  // unscaled masked reward of the rejected response
  SelectionMask mask;
};

// Sequence-level preference loss over all tokens:
//   -log sigma(beta * [(sum pol_w - sum ref_w) - (sum pol_l - sum ref_l)]).
PairLossBreakdown dpo_loss(const PairLogProbs& pol, const PairLogProbs& ref,
                           double beta);

// Same loss restricted to the top-k% alignment-scored tokens. The mask is
// recomputed from the provided log-probs and treated as a constant of the
// objective (no gradient flows through the selection).
PairLossBreakdown selective_dpo_loss(const PreferencePair& pair,
                                     const PairLogProbs& pol,
                                     const PairLogProbs& ref,
                                     const LossConfig& config);

// Mean negative log-likelihood of the chosen response.
double sft_loss(std::span<const double> pol_win_lp);

// Loss of one pair under a fixed, caller-supplied mask (used by the
// finite-difference checker, which must freeze the mask across probes).
double pair_loss_with_mask(const PairLogProbs& pol, const PairLogProbs& ref,
                           const SelectionMask& mask, double beta);

struct BatchResult {
  double loss = 0.0;                 // mean over pairs
  std::vector<double> grad;          // d loss / d logits, row-major V*V
  double selected_fraction = 0.0;    // mean selected_count / total tokens
};

// Mean loss and analytic gradient over a batch. Selection masks come from
// the current policy, pair by pair, and are constants within this single
// evaluation. Accumulation runs in pair-index order; results are exactly
// reproducible. `ref_lps` must align with `batch` (ignored for sft).
BatchResult batch_loss_and_grad(const BigramPolicy& policy,
                                std::span<const PreferencePair> batch,
                                std::span<const PairLogProbs> ref_lps,
                                const LossConfig& config, Objective objective);

// Convenience overload that evaluates the reference on the spot.
BatchResult batch_loss_and_grad(const BigramPolicy& policy,
                                const BigramPolicy* reference,
                                std::span<const PreferencePair> batch,
                                const LossConfig& config, Objective objective);

}  // namespace seldpo
