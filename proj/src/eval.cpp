#include "seldpo/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "seldpo/align.hpp"
#include "seldpo/errors.hpp"
#include "seldpo/io_util.hpp"
#include "seldpo/loss.hpp"

namespace seldpo {

namespace {

double checked_fraction(double num, double den) { return den > 0 ? num / den : 0.0; }

std::vector<double> parse_axis_values(const std::vector<double>& values,
                                      const std::string& axis) {
  if (values.empty()) return values;
  std::vector<double> v = values;
  std::sort(v.begin(), v.end());
  if (std::adjacent_find(v.begin(), v.end()) != v.end()) {
    throw ValidationError(axis + " sweep values must be distinct");
  }
  return v;
}

}  // namespace

EvalReport preference_accuracy(const BigramPolicy& policy,
                               const BigramPolicy& reference,
                               const PreferenceDataset& dataset, double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw ValidationError("beta must be positive and finite");
  }
  if (dataset.pairs.empty()) throw ValidationError("dataset has no pairs");
  double wins = 0.0;
  double margin_sum = 0.0;
  for (const PreferencePair& pair : dataset.pairs) {
    const PairLogProbs pol = compute_pair_log_probs(policy, pair);
    const PairLogProbs ref = compute_pair_log_probs(reference, pair);
    const PairLossBreakdown b = dpo_loss(pol, ref, beta);
    margin_sum += b.margin;
    if (b.margin > 0.0) {
      wins += 1.0;
    } else if (b.margin == 0.0) {
      wins += 0.5;
    }
  }
  EvalReport rep;
  rep.pair_count = static_cast<int>(dataset.pairs.size());
  rep.preference_accuracy = wins / static_cast<double>(rep.pair_count);
  rep.mean_margin = margin_sum / static_cast<double>(rep.pair_count);
  return rep;
}

SelectionQuality selection_quality_report(const BigramPolicy& policy,
                                          const BigramPolicy& reference,
                                          const PreferenceDataset& dataset,
                                          double k_percent) {
  if (dataset.pairs.empty()) throw ValidationError("dataset has no pairs");
  double prec = 0.0, rec = 0.0;
  for (const PreferencePair& pair : dataset.pairs) {
    const PairLogProbs pol = compute_pair_log_probs(policy, pair);
    const PairLogProbs ref = compute_pair_log_probs(reference, pair);
    const AlignmentScores scores =
        alignment_scores(ref.win, pol.win, ref.lose, pol.lose);
    const SelectionMask mask = select_top_k(scores, k_percent);
    const SelectionStats st = selection_stats(mask, pair);
    prec += st.precision;
    rec += st.recall;
  }
  SelectionQuality q;
  q.mean_precision = prec / static_cast<double>(dataset.pairs.size());
  q.mean_recall = rec / static_cast<double>(dataset.pairs.size());
  return q;
}

EvalReport evaluate(const BigramPolicy& policy, const BigramPolicy& reference,
                    const PreferenceDataset& dataset, double beta,
                    double k_percent) {
  EvalReport rep = preference_accuracy(policy, reference, dataset, beta);
  rep.k_percent = k_percent;
  const bool annotated =
      std::all_of(dataset.pairs.begin(), dataset.pairs.end(),
                  [](const PreferencePair& p) {
                    return p.divergent_positions.has_value();
                  });
  if (annotated) {
    const SelectionQuality q =
        selection_quality_report(policy, reference, dataset, k_percent);
    rep.selection_precision = q.mean_precision;
    rep.selection_recall = q.mean_recall;
  }
  return rep;
}

SweepResult sweep(const PreferenceDataset& dataset,
                  const SweepSettings& settings,
                  const std::vector<double>& k_values,
                  const std::vector<double>& beta_values) {
  settings.base.validate();
  const std::vector<double> ks = parse_axis_values(k_values, "top_k_percent");
  const std::vector<double> betas = parse_axis_values(beta_values, "beta");
  if (ks.empty() && betas.empty()) {
    throw ValidationError("sweep needs at least one axis value");
  }

  auto [train_split, heldout] =
      split_dataset(dataset, settings.heldout_fraction, settings.split_seed);
  const BigramPolicy initial = make_uniform_policy(dataset.vocab.size);

  SweepResult result;
  auto run_axis = [&](const std::string& axis, const std::vector<double>& values) {
    if (values.empty()) return;
    SweepTable table;
    table.axis = axis;
    for (double value : values) {
      TrainConfig cfg = settings.base;
      cfg.metrics_path.clear();
      cfg.checkpoint_path.clear();
      if (axis == "top_k_percent") {
        cfg.top_k_percent = value;
      } else {
        cfg.beta = value;
      }
      const std::string label = axis + "=" + std::to_string(value);
      try {
        const TrainReport rep = train(train_split, cfg);
        const BigramPolicy train_ref = resolve_reference(cfg.reference, initial);
        SweepRow row;
        row.value = value;
        row.preference_accuracy =
            preference_accuracy(rep.policy, initial, heldout, cfg.beta)
                .preference_accuracy;
        row.selection_precision =
            selection_quality_report(rep.policy, train_ref, heldout,
                                     cfg.top_k_percent)
                .mean_precision;
        table.rows.push_back(row);
      } catch (const std::exception& e) {
        result.cell_errors.push_back(label + ": " + e.what());
      }
    }
    table.config_echo = train_config_echo(settings.base);
    table.config_echo["heldout_fraction"] = settings.heldout_fraction;
    table.config_echo["split_seed"] = settings.split_seed;
    result.tables.push_back(std::move(table));
  };
  run_axis("top_k_percent", ks);
  run_axis("beta", betas);
  return result;
}

std::string render_report_text(std::span<const SweepTable> tables) {
  std::ostringstream out;
  char buf[64];
  for (const SweepTable& table : tables) {
    out << "axis: " << table.axis << "\n";
    std::snprintf(buf, sizeof(buf), "%12s %21s %21s\n", "value",
                  "preference_accuracy", "selection_precision");
    out << buf;
    for (const SweepRow& row : table.rows) {
      std::snprintf(buf, sizeof(buf), "%12.6g %21.6f %21.6f\n", row.value,
                    row.preference_accuracy, row.selection_precision);
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

void write_report_jsonl(std::span<const SweepTable> tables,
                        const std::string& path) {
  std::ostringstream out;
  for (const SweepTable& table : tables) {
    nlohmann::ordered_json header;
    header["type"] = "table";
    header["axis"] = table.axis;
    header["config"] = table.config_echo;
    out << header.dump() << "\n";
    for (const SweepRow& row : table.rows) {
      nlohmann::ordered_json j;
      j["type"] = "row";
      j["axis"] = table.axis;
      j["value"] = row.value;
      j["preference_accuracy"] = row.preference_accuracy;
      j["selection_precision"] = row.selection_precision;
      out << j.dump() << "\n";
    }
  }
  write_file_atomic(path, out.str());
}

std::vector<SweepTable> read_report_jsonl(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  int line_no = 0;
  std::vector<SweepTable> tables;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    // ordered parse so the echoed config round-trips with its key order
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(path + " line " + std::to_string(line_no) + ": " +
                            e.what());
    }
    const std::string where = path + " line " + std::to_string(line_no);
    if (!j.is_object() || !j.contains("type")) {
      throw ValidationError(where + ": missing type");
    }
    if (j["type"] == "table") {
      SweepTable table;
      table.axis = j.at("axis").get<std::string>();
      table.config_echo = j.at("config");
      tables.push_back(std::move(table));
    } else if (j["type"] == "row") {
      if (tables.empty()) {
        throw ValidationError(where + ": row before any table header");
      }
      SweepRow row;
      row.value = j.at("value").get<double>();
      row.preference_accuracy = j.at("preference_accuracy").get<double>();
      row.selection_precision = j.at("selection_precision").get<double>();
      if (j.at("axis").get<std::string>() != tables.back().axis) {
        throw ValidationError(where + ": row axis does not match table");
      }
      tables.back().rows.push_back(row);
    } else {
      throw ValidationError(where + ": unknown record type");
    }
  }
  if (tables.empty()) throw ValidationError(path + ": empty report");
  return tables;
}

}  // namespace seldpo
