#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seldpo/corpus.hpp"
#include "seldpo/policy.hpp"
#include "seldpo/train.hpp"

namespace seldpo {

struct EvalReport {
  double preference_accuracy = 0.0;  // wins + half of ties, over pairs
  double mean_margin = 0.0;          // mean implicit-reward margin
  int pair_count = 0;
  double k_percent = 0.0;
  std::optional<double> selection_precision;  // annotated datasets only
  std::optional<double> selection_recall;
};

// Fraction of pairs whose implicit-reward margin
//   beta * [(sum pol_w - sum ref_w) - (sum pol_l - sum ref_l)]
// is positive; exact zeros count one half. Identity policy == reference
// scores exactly 0.5.
EvalReport preference_accuracy(const BigramPolicy& policy,
                               const BigramPolicy& reference,
                               const PreferenceDataset& dataset, double beta);

struct SelectionQuality {
  double mean_precision = 0.0;
  double mean_recall = 0.0;
};

// Mean selection precision/recall over an annotated dataset, with masks
// freshly computed from (policy, reference) at the given k.
SelectionQuality selection_quality_report(const BigramPolicy& policy,
                                          const BigramPolicy& reference,
                                          const PreferenceDataset& dataset,
                                          double k_percent);

// Combined report; selection stats filled in when the dataset is annotated.
EvalReport evaluate(const BigramPolicy& policy, const BigramPolicy& reference,
                    const PreferenceDataset& dataset, double beta,
                    double k_percent);

struct SweepRow {
  double value = 0.0;
  double preference_accuracy = 0.0;
  double selection_precision = 0.0;
};

struct SweepTable {
  std::string axis;  // "top_k_percent" or "beta"
  std::vector<SweepRow> rows;
  nlohmann::ordered_json config_echo;
};

struct SweepSettings {
  TrainConfig base;
  double heldout_fraction = 0.1;
  std::uint64_t split_seed = 1;
};

struct SweepResult {
  std::vector<SweepTable> tables;
  std::vector<std::string> cell_errors;  // labeled failures; others still ran
};

// One table per axis. Every cell trains from the same zero initialization on
// the same seeded train split, then evaluates on the held-out split:
// accuracy against the initial (uniform) policy, selection precision against
// the training reference at the cell's k. Values must be distinct; rows come
// out in ascending order.
SweepResult sweep(const PreferenceDataset& dataset,
                  const SweepSettings& settings,
                  const std::vector<double>& k_values,
                  const std::vector<double>& beta_values);

// Human-readable aligned table(s).
std::string render_report_text(std::span<const SweepTable> tables);

// Machine-readable JSONL mirror: one header line per table, then its rows.
void write_report_jsonl(std::span<const SweepTable> tables,
                        const std::string& path);
std::vector<SweepTable> read_report_jsonl(const std::string& path);

}  // namespace seldpo
