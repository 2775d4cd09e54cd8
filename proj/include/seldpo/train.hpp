#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "seldpo/corpus.hpp"
#include "seldpo/loss.hpp"
#include "seldpo/policy.hpp"

namespace seldpo {

// Where the frozen reference model comes from:
//   init             — deep copy of the policy at training start
//   oracle:PATH      — the corpus-generating oracle checkpoint
//   checkpoint:PATH  — any saved policy checkpoint
struct ReferenceSpec {
  enum class Kind { initial_snapshot, oracle, checkpoint };
  Kind kind = Kind::initial_snapshot;
  std::string path;

  static ReferenceSpec parse(const std::string& text);
  std::string to_string() const;
};

BigramPolicy resolve_reference(const ReferenceSpec& spec,
                               const BigramPolicy& initial_policy);

struct SgdConfig {
  double lr = 0.1;
};

struct AdamConfig {
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

using OptimizerConfig = std::variant<SgdConfig, AdamConfig>;

struct OptimizerState {
  long long t = 0;        // adam step counter
  std::vector<double> m;  // first-moment estimate
  std::vector<double> v;  // second-moment estimate
};

// In-place parameter update. sgd: p -= lr * g. adam: standard bias-corrected
// moments, p -= lr * m_hat / (sqrt(v_hat) + eps).
void optimizer_update(const OptimizerConfig& config, OptimizerState& state,
                      std::span<const double> grad, std::vector<double>& params);

struct TrainConfig {
  Objective objective = Objective::selective_dpo;
  double beta = 0.01;
  double top_k_percent = 40.0;
  OptimizerConfig optimizer = SgdConfig{0.1};
  std::optional<int> epochs;  // default: 2 epochs when neither field is set
  std::optional<int> steps;
  int batch_size = 64;
  std::uint64_t seed = 0;
  ReferenceSpec reference;
  std::string metrics_path;     // empty: no metrics file
  std::string checkpoint_path;  // empty: no checkpoint file

  void validate() const;
  int effective_epochs() const;  // 2 unless steps or epochs is set
  LossConfig loss_config() const { return LossConfig{beta, top_k_percent}; }
};

struct StepRecord {
  int step = 0;   // 0-based global step; the loss is measured before update
  int epoch = 0;  // 0-based epoch
  double loss = 0.0;
  double grad_norm = 0.0;  // Frobenius norm of the batch gradient
  double selected_fraction = 0.0;
};

struct TrainReport {
  BigramPolicy policy;
  std::vector<StepRecord> records;
  double wall_seconds = 0.0;
};

// One optimization step on one batch; masks come from the current policy.
StepRecord train_step(BigramPolicy& policy,
                      std::span<const PreferencePair> batch,
                      std::span<const PairLogProbs> ref_lps,
                      const TrainConfig& config, OptimizerState& state,
                      int step_index, int epoch_index);

// Full loop: zero-initialized policy, per-epoch seeded shuffle, contiguous
// batches (the final short batch is kept), reference log-probs cached by
// pair index. Writes metrics JSONL and a final checkpoint when paths are
// configured; both byte-identical across reruns with equal inputs.
TrainReport train(const PreferenceDataset& dataset, const TrainConfig& config);

// Central-difference audit of the analytic gradient on one pair. Probes every
// entry of every logit row the pair touches with the selection mask frozen,
// and returns max |analytic - numeric| over those entries divided by the
// largest gradient magnitude seen (floored at 1e-12 so an all-zero gradient
// cannot divide by zero).
double finite_diff_check(const BigramPolicy& policy,
                         const BigramPolicy& reference,
                         const PreferencePair& pair, Objective objective,
                         const LossConfig& config, double epsilon = 1e-6);

// Serialized TrainConfig (echoed into checkpoint meta, reports, etc.).
nlohmann::ordered_json train_config_echo(const TrainConfig& config);

}  // namespace seldpo
