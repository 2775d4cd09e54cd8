#include "seldpo/align.hpp"

#include <algorithm>
#include <cmath>

#include "seldpo/errors.hpp"

namespace seldpo {

AlignmentScores alignment_scores(const std::vector<double>& ref_win_lp,
                                 const std::vector<double>& pol_win_lp,
                                 const std::vector<double>& ref_lose_lp,
                                 const std::vector<double>& pol_lose_lp) {
  if (ref_win_lp.size() != pol_win_lp.size() ||
      ref_lose_lp.size() != pol_lose_lp.size()) {
    throw ValidationError("alignment_scores: log-prob lengths disagree");
  }
  if (ref_win_lp.empty() || ref_lose_lp.empty()) {
    throw ValidationError("alignment_scores: responses must be non-empty");
  }
  AlignmentScores s;
  s.win_scores.resize(ref_win_lp.size());
  s.lose_scores.resize(ref_lose_lp.size());
  for (std::size_t i = 0; i < ref_win_lp.size(); ++i) {
    s.win_scores[i] = ref_win_lp[i] - pol_win_lp[i];
  }
  for (std::size_t i = 0; i < ref_lose_lp.size(); ++i) {
    s.lose_scores[i] = pol_lose_lp[i] - ref_lose_lp[i];
  }
  return s;
}

SelectionMask select_top_k(const AlignmentScores& scores, double k_percent) {
  if (!(k_percent > 0.0) || k_percent > 100.0 || !std::isfinite(k_percent)) {
    throw ValidationError("top-k percentage must lie in (0, 100]");
  }
  const std::size_t win_n = scores.win_scores.size();
  const std::size_t lose_n = scores.lose_scores.size();
  const std::size_t total = win_n + lose_n;
  if (total == 0) throw ValidationError("select_top_k: no tokens to rank");

  const int budget = std::max(
      1, static_cast<int>(std::floor(k_percent / 100.0 *
                                         static_cast<double>(total) +
                                     0.5)));

  // Canonical pooled order: win tokens ascending, then lose tokens ascending.
  // stable_sort keeps that order among equal scores.
  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = i;
  auto score_of = [&](std::size_t pooled) {
    return pooled < win_n ? scores.win_scores[pooled]
                          : scores.lose_scores[pooled - win_n];
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return score_of(a) > score_of(b);
                   });

  SelectionMask mask;
  mask.win_mask.assign(win_n, 0);
  mask.lose_mask.assign(lose_n, 0);
  mask.k_percent = k_percent;
  mask.selected_count = budget;
  for (int r = 0; r < budget; ++r) {
    const std::size_t pooled = order[static_cast<std::size_t>(r)];
    if (pooled < win_n) {
      mask.win_mask[pooled] = 1;
    } else {
      mask.lose_mask[pooled - win_n] = 1;
    }
  }
  return mask;
}

SelectionMask full_mask(int win_len, int lose_len) {
  SelectionMask mask;
  mask.win_mask.assign(static_cast<std::size_t>(win_len), 1);
  mask.lose_mask.assign(static_cast<std::size_t>(lose_len), 1);
  mask.k_percent = 100.0;
  mask.selected_count = win_len + lose_len;
  return mask;
}

SelectionStats selection_stats(const SelectionMask& mask,
                               const PreferencePair& pair) {
  if (!pair.divergent_positions) {
    throw ValidationError(
        "pair carries no divergent_positions; selection stats need an "
        "annotated corpus (see gen-data)");
  }
  if (mask.win_mask.size() != pair.chosen.size() ||
      mask.lose_mask.size() != pair.rejected.size()) {
    throw ValidationError("selection_stats: mask does not match pair shape");
  }
  const std::vector<int>& div = *pair.divergent_positions;
  int hits = 0;
  for (int p : div) {
    if (p < static_cast<int>(mask.win_mask.size()) &&
        mask.win_mask[static_cast<std::size_t>(p)]) {
      ++hits;
    }
    if (mask.lose_mask[static_cast<std::size_t>(p)]) ++hits;
  }
  // Each divergent index is a positive on both sides.
  const int positives = 2 * static_cast<int>(div.size());
  SelectionStats st;
  st.precision = mask.selected_count > 0
                     ? static_cast<double>(hits) / mask.selected_count
                     : 0.0;
  st.recall = positives > 0 ? static_cast<double>(hits) / positives : 0.0;
  return st;
}

}  // namespace seldpo
