#pragma once

#include <cstdint>
#include <vector>

#include "seldpo/corpus.hpp"

namespace seldpo {

// Per-token alignment scores for one preference pair. High scores flag
// tokens the reference model rates very differently from the policy:
//   win side:  score[i] = ref_lp[i] - pol_lp[i]   (under-aligned good token)
//   lose side: score[i] = pol_lp[i] - ref_lp[i]   (over-weighted bad token)
struct AlignmentScores {
  std::vector<double> win_scores;
  std::vector<double> lose_scores;
};

// Token subset picked for the selective loss. Masks are 0/1 flags parallel
// to the two responses; selected_count = max(1, round(k/100 * total tokens)).
struct SelectionMask {
  std::vector<std::uint8_t> win_mask;
  std::vector<std::uint8_t> lose_mask;
  double k_percent = 100.0;
  int selected_count = 0;

  int total_tokens() const {
    return static_cast<int>(win_mask.size() + lose_mask.size());
  }
};

AlignmentScores alignment_scores(const std::vector<double>& ref_win_lp,
                                 const std::vector<double>& pol_win_lp,
                                 const std::vector<double>& ref_lose_lp,
                                 const std::vector<double>& pol_lose_lp);

// Pools both sides, ranks by score descending with a stable tie-break in
// canonical order (win tokens by ascending position, then lose tokens by
// ascending position), and keeps the top selected_count tokens. k in (0,100].
SelectionMask select_top_k(const AlignmentScores& scores, double k_percent);

// Full-coverage mask (everything selected) — what the plain objective uses.
SelectionMask full_mask(int win_len, int lose_len);

struct SelectionStats {
  double precision = 0.0;
  double recall = 0.0;
};

// Compares a mask against generation ground truth. Positives are the
// divergent positions on the lose side plus the same indices on the win side.
// Requires the pair to carry divergent_positions annotations.
SelectionStats selection_stats(const SelectionMask& mask,
                               const PreferencePair& pair);

}  // namespace seldpo
