#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <vector>

#include "seldpo/align.hpp"
#include "seldpo/errors.hpp"

using namespace seldpo;

namespace {

int count_set(const std::vector<std::uint8_t>& mask) {
  int n = 0;
  for (std::uint8_t b : mask) n += (b != 0);
  return n;
}

}  // namespace

TEST_CASE("alignment scores: reference-minus-policy on wins, flipped on losses") {
  const std::vector<double> ref_w = {-1.0, -2.0};
  const std::vector<double> pol_w = {-1.5, -1.5};
  const std::vector<double> ref_l = {-2.5, -1.0};
  const std::vector<double> pol_l = {-1.5, -2.0};
  const AlignmentScores s = alignment_scores(ref_w, pol_w, ref_l, pol_l);
  REQUIRE(s.win_scores.size() == 2);
  REQUIRE(s.lose_scores.size() == 2);
  CHECK(s.win_scores[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s.win_scores[1] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(s.lose_scores[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.lose_scores[1] == doctest::Approx(-1.0).epsilon(1e-15));
}

TEST_CASE("alignment_scores validates lengths") {
  const std::vector<double> two = {0.0, 0.0};
  const std::vector<double> three = {0.0, 0.0, 0.0};
  const std::vector<double> empty;
  CHECK_THROWS_AS((void)alignment_scores(two, three, two, two),
                  ValidationError);
  CHECK_THROWS_AS((void)alignment_scores(two, two, three, two),
                  ValidationError);
  CHECK_THROWS_AS((void)alignment_scores(empty, empty, two, two),
                  ValidationError);
}

TEST_CASE("top-k selection pools both sides and ranks by score") {
  AlignmentScores s;
  s.win_scores = {0.5, -0.5};
  s.lose_scores = {1.0, -1.0};
  const SelectionMask mask = select_top_k(s, 50.0);
  // budget = max(1, floor(0.5 * 4 + 0.5)) = 2: lose[0] (1.0) and win[0] (0.5).
  CHECK(mask.selected_count == 2);
  CHECK(mask.win_mask == std::vector<std::uint8_t>{1, 0});
  CHECK(mask.lose_mask == std::vector<std::uint8_t>{1, 0});
  CHECK(mask.k_percent == 50.0);
  CHECK(mask.total_tokens() == 4);
}

TEST_CASE("selection crosses sides freely") {
  AlignmentScores s;
  s.win_scores = {-3.0, -4.0, -5.0};
  s.lose_scores = {2.0, 1.0, 0.0};
  const SelectionMask mask = select_top_k(s, 50.0);  // budget 3
  CHECK(mask.selected_count == 3);
  CHECK(mask.win_mask == std::vector<std::uint8_t>{0, 0, 0});
  CHECK(mask.lose_mask == std::vector<std::uint8_t>{1, 1, 1});
}

TEST_CASE("budget is max(1, round(k% of pooled tokens))") {
  AlignmentScores s;
  s.win_scores = std::vector<double>(16, 0.0);
  s.lose_scores = std::vector<double>(16, 0.0);
  CHECK(select_top_k(s, 100.0).selected_count == 32);
  CHECK(select_top_k(s, 40.0).selected_count == 13);  // floor(12.8 + 0.5)
  CHECK(select_top_k(s, 9.375).selected_count == 3);
  CHECK(select_top_k(s, 0.001).selected_count == 1);  // floor clamps up to 1

  AlignmentScores six;
  six.win_scores = std::vector<double>(3, 0.0);
  six.lose_scores = std::vector<double>(3, 0.0);
  CHECK(select_top_k(six, 25.0).selected_count == 2);  // floor(1.5 + 0.5) = 2
}

TEST_CASE("ties break in canonical order: win positions first, ascending") {
  AlignmentScores s;
  s.win_scores = {1.0, 1.0};
  s.lose_scores = {1.0, 1.0};
  const SelectionMask mask = select_top_k(s, 75.0);  // budget 3
  CHECK(mask.win_mask == std::vector<std::uint8_t>{1, 1});
  CHECK(mask.lose_mask == std::vector<std::uint8_t>{1, 0});
}

TEST_CASE("equal scores inside one side keep ascending positions") {
  AlignmentScores s;
  s.win_scores = {0.0, 2.0, 2.0, 2.0};
  s.lose_scores = {2.0, 0.0};
  const SelectionMask mask = select_top_k(s, 50.0);  // budget 3
  // Four tokens tie at 2.0; canonical order keeps win[1], win[2], win[3].
  CHECK(mask.win_mask == std::vector<std::uint8_t>{0, 1, 1, 1});
  CHECK(mask.lose_mask == std::vector<std::uint8_t>{0, 0});
}

TEST_CASE("k must lie in (0, 100]") {
  AlignmentScores s;
  s.win_scores = {1.0};
  s.lose_scores = {0.0};
  CHECK_THROWS_AS((void)select_top_k(s, 0.0), ValidationError);
  CHECK_THROWS_AS((void)select_top_k(s, -5.0), ValidationError);
  CHECK_THROWS_AS((void)select_top_k(s, 100.5), ValidationError);
  CHECK_NOTHROW((void)select_top_k(s, 100.0));
}

TEST_CASE("full_mask selects everything") {
  const SelectionMask mask = full_mask(3, 2);
  CHECK(mask.selected_count == 5);
  CHECK(count_set(mask.win_mask) == 3);
  CHECK(count_set(mask.lose_mask) == 2);
  CHECK(mask.k_percent == 100.0);
}

TEST_CASE("selection stats count hits on both sides of divergent positions") {
  PreferencePair pair;
  pair.prompt = {0};
  pair.chosen = {1, 2, 3, 1};
  pair.rejected = {1, 0, 3, 2};
  pair.divergent_positions = std::vector<int>{1, 3};

  SelectionMask mask;
  mask.win_mask = {0, 1, 0, 0};   // hit (win side of divergent position 1)
  mask.lose_mask = {1, 0, 0, 1};  // miss at 0, hit at 3
  mask.selected_count = 3;

  const SelectionStats stats = selection_stats(mask, pair);
  // positives = 2 sides * 2 divergent positions = 4; hits = 2 of 3 selected.
  CHECK(stats.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(stats.recall == doctest::Approx(2.0 / 4.0).epsilon(1e-12));
}

TEST_CASE("perfect selection scores precision and recall 1") {
  PreferencePair pair;
  pair.prompt = {0};
  pair.chosen = {1, 2};
  pair.rejected = {1, 3};
  pair.divergent_positions = std::vector<int>{1};

  SelectionMask mask;
  mask.win_mask = {0, 1};
  mask.lose_mask = {0, 1};
  mask.selected_count = 2;
  const SelectionStats stats = selection_stats(mask, pair);
  CHECK(stats.precision == doctest::Approx(1.0));
  CHECK(stats.recall == doctest::Approx(1.0));
}

TEST_CASE("selection stats demand an annotated pair") {
  PreferencePair pair;
  pair.prompt = {0};
  pair.chosen = {1};
  pair.rejected = {2};

  SelectionMask mask = full_mask(1, 1);
  CHECK_THROWS_WITH_AS((void)selection_stats(mask, pair),
                       doctest::Contains("divergent_positions"),
                       ValidationError);
}

TEST_CASE("selection stats validate mask shape against the pair") {
  PreferencePair pair;
  pair.prompt = {0};
  pair.chosen = {1, 2};
  pair.rejected = {1, 3};
  pair.divergent_positions = std::vector<int>{1};
  SelectionMask mask = full_mask(3, 2);  // wrong win length
  CHECK_THROWS_AS((void)selection_stats(mask, pair), ValidationError);
}
