#include "seldpo/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "seldpo/errors.hpp"
#include "seldpo/io_util.hpp"

namespace seldpo {

namespace {

constexpr int kDefaultEpochs = 2;

// Streams JSONL records straight to the target path with a flush per line,
// so even a killed run leaves every completed step behind.
class MetricsWriter {
 public:
  explicit MetricsWriter(std::string path) : path_(std::move(path)) {
    if (path_.empty()) return;
    out_.open(path_, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError("cannot open for writing: " + path_);
  }

  void write_line(const std::string& line) {
    if (path_.empty()) return;
    out_ << line << '\n';
    out_.flush();
    if (!out_) throw IoError("write failed: " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

std::string metrics_line(const StepRecord& rec) {
  nlohmann::ordered_json j;
  j["step"] = rec.step;
  j["epoch"] = rec.epoch;
  j["loss"] = rec.loss;
  j["grad_norm"] = rec.grad_norm;
  j["selected_fraction"] = rec.selected_fraction;
  return j.dump();
}

}  // namespace

ReferenceSpec ReferenceSpec::parse(const std::string& text) {
  ReferenceSpec spec;
  if (text == "init") {
    spec.kind = Kind::initial_snapshot;
    return spec;
  }
  if (text.rfind("oracle:", 0) == 0) {
    spec.kind = Kind::oracle;
    spec.path = text.substr(7);
  } else if (text.rfind("checkpoint:", 0) == 0) {
    spec.kind = Kind::checkpoint;
    spec.path = text.substr(11);
  } else {
    throw ValidationError("bad reference \"" + text +
                          "\" (expected init | oracle:PATH | checkpoint:PATH)");
  }
  if (spec.path.empty()) {
    throw ValidationError("reference \"" + text + "\" has an empty path");
  }
  return spec;
}

std::string ReferenceSpec::to_string() const {
  switch (kind) {
    case Kind::initial_snapshot: return "init";
    case Kind::oracle: return "oracle:" + path;
    case Kind::checkpoint: return "checkpoint:" + path;
  }
  return "?";
}

BigramPolicy resolve_reference(const ReferenceSpec& spec,
                               const BigramPolicy& initial_policy) {
  if (spec.kind == ReferenceSpec::Kind::initial_snapshot) {
    return initial_policy;  // deep copy: the reference stays frozen
  }
  BigramPolicy ref = load_checkpoint(spec.path);
  if (ref.vocab_size != initial_policy.vocab_size) {
    throw ValidationError("reference vocab_size " +
                          std::to_string(ref.vocab_size) +
                          " does not match policy vocab_size " +
                          std::to_string(initial_policy.vocab_size));
  }
  return ref;
}

void optimizer_update(const OptimizerConfig& config, OptimizerState& state,
                      std::span<const double> grad,
                      std::vector<double>& params) {
  if (grad.size() != params.size()) {
    throw ValidationError("optimizer_update: gradient/parameter size mismatch");
  }
  if (const SgdConfig* sgd = std::get_if<SgdConfig>(&config)) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i] -= sgd->lr * grad[i];
    }
    return;
  }
  const AdamConfig& adam = std::get<AdamConfig>(config);
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) {
    throw ValidationError("optimizer_update: stale adam state size");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = adam.beta1 * state.m[i] + (1.0 - adam.beta1) * grad[i];
    state.v[i] = adam.beta2 * state.v[i] + (1.0 - adam.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= adam.lr * m_hat / (std::sqrt(v_hat) + adam.eps);
  }
}

void TrainConfig::validate() const {
  loss_config().validate();
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (steps && epochs) {
    throw ValidationError("set steps or epochs, not both");
  }
  if (steps && *steps < 1) throw ValidationError("steps must be >= 1");
  if (epochs && *epochs < 1) throw ValidationError("epochs must be >= 1");
  if (const SgdConfig* sgd = std::get_if<SgdConfig>(&optimizer)) {
    if (!(sgd->lr > 0.0) || !std::isfinite(sgd->lr)) {
      throw ValidationError("learning rate must be positive and finite");
    }
  } else {
    const AdamConfig& adam = std::get<AdamConfig>(optimizer);
    if (!(adam.lr > 0.0) || !std::isfinite(adam.lr)) {
      throw ValidationError("learning rate must be positive and finite");
    }
    if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 ||
        adam.beta2 >= 1.0) {
      throw ValidationError("adam betas must lie in [0, 1)");
    }
    if (!(adam.eps > 0.0)) throw ValidationError("adam eps must be positive");
  }
}

int TrainConfig::effective_epochs() const {
  return epochs.value_or(kDefaultEpochs);
}

StepRecord train_step(BigramPolicy& policy,
                      std::span<const PreferencePair> batch,
                      std::span<const PairLogProbs> ref_lps,
                      const TrainConfig& config, OptimizerState& state,
                      int step_index, int epoch_index) {
  const BatchResult res = batch_loss_and_grad(policy, batch, ref_lps,
                                              config.loss_config(),
                                              config.objective);
  double sq = 0.0;
  for (double g : res.grad) sq += g * g;

  StepRecord rec;
  rec.step = step_index;
  rec.epoch = epoch_index;
  rec.loss = res.loss;
  rec.grad_norm = std::sqrt(sq);
  rec.selected_fraction = res.selected_fraction;
  optimizer_update(config.optimizer, state, res.grad, policy.logits);
  return rec;
}

TrainReport train(const PreferenceDataset& dataset, const TrainConfig& config) {
  config.validate();
  if (dataset.pairs.empty()) throw ValidationError("dataset has no pairs");
  const auto t0 = std::chrono::steady_clock::now();

  BigramPolicy policy = make_uniform_policy(dataset.vocab.size);
  const BigramPolicy reference = resolve_reference(config.reference, policy);

  // Reference log-probs never change during training; cache them by pair
  // index up front (unused by sft).
  std::vector<PairLogProbs> ref_cache;
  if (config.objective != Objective::sft) {
    ref_cache.reserve(dataset.pairs.size());
    for (const PreferencePair& pair : dataset.pairs) {
      ref_cache.push_back(compute_pair_log_probs(reference, pair));
    }
  }

  const std::size_t n = dataset.pairs.size();
  const std::size_t batch_size = static_cast<std::size_t>(config.batch_size);
  const std::size_t batches_per_epoch = (n + batch_size - 1) / batch_size;
  const long long total_steps =
      config.steps ? *config.steps
                   : static_cast<long long>(config.effective_epochs()) *
                         static_cast<long long>(batches_per_epoch);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  DetRng shuffle_rng(config.seed);

  TrainReport report;
  MetricsWriter metrics(config.metrics_path);
  OptimizerState state;
  long long step = 0;
  int epoch = 0;
  while (step < total_steps) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < n && step < total_steps;
         start += batch_size) {
      const std::size_t m = std::min(batch_size, n - start);
      std::vector<PreferencePair> batch;
      std::vector<PairLogProbs> batch_ref;
      batch.reserve(m);
      batch_ref.reserve(m);
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t idx = order[start + i];
        batch.push_back(dataset.pairs[idx]);
        if (!ref_cache.empty()) batch_ref.push_back(ref_cache[idx]);
      }
      const StepRecord rec =
          train_step(policy, batch, batch_ref, config, state,
                     static_cast<int>(step), epoch);
      metrics.write_line(metrics_line(rec));
      report.records.push_back(rec);
      ++step;
    }
    ++epoch;
  }

  if (!config.checkpoint_path.empty()) {
    nlohmann::ordered_json meta;
    meta["config"] = train_config_echo(config);
    meta["steps_run"] = step;
    save_checkpoint(policy, config.checkpoint_path, meta);
  }

  report.policy = std::move(policy);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return report;
}

double finite_diff_check(const BigramPolicy& policy,
                         const BigramPolicy& reference,
                         const PreferencePair& pair, Objective objective,
                         const LossConfig& config, double epsilon) {
  config.validate();
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  const PairLogProbs ref = compute_pair_log_probs(reference, pair);

  // Freeze the mask at the unperturbed policy; both the analytic gradient
  // and every probe below use this same token subset.
  const PairLogProbs pol0 = compute_pair_log_probs(policy, pair);
  SelectionMask mask;
  switch (objective) {
    case Objective::sft:
    case Objective::dpo:
      mask = full_mask(static_cast<int>(pair.chosen.size()),
                       static_cast<int>(pair.rejected.size()));
      break;
    case Objective::selective_dpo:
      mask = selective_dpo_loss(pair, pol0, ref, config).mask;
      break;
  }

  auto loss_at = [&](const BigramPolicy& p) {
    const PairLogProbs pol = compute_pair_log_probs(p, pair);
    if (objective == Objective::sft) return sft_loss(pol.win);
    return pair_loss_with_mask(pol, ref, mask, config.beta);
  };

  const PreferencePair one_pair[] = {pair};
  const PairLogProbs one_ref[] = {ref};
  const BatchResult analytic = batch_loss_and_grad(
      policy, one_pair, one_ref, config, objective);

  // Rows the pair can influence: contexts of every win (and lose) token.
  std::vector<std::uint8_t> touched(static_cast<std::size_t>(policy.vocab_size), 0);
  auto mark = [&](const std::vector<int>& response) {
    int ctx = pair.prompt.back();
    for (int tok : response) {
      touched[static_cast<std::size_t>(ctx)] = 1;
      ctx = tok;
    }
  };
  mark(pair.chosen);
  if (objective != Objective::sft) mark(pair.rejected);

  BigramPolicy probe = policy;
  double max_abs_diff = 0.0;
  double scale = 0.0;
  const int V = policy.vocab_size;
  for (int c = 0; c < V; ++c) {
    if (!touched[static_cast<std::size_t>(c)]) continue;
    for (int j = 0; j < V; ++j) {
      const double saved = probe.at(c, j);
      probe.at(c, j) = saved + epsilon;
      const double lp = loss_at(probe);
      probe.at(c, j) = saved - epsilon;
      const double lm = loss_at(probe);
      probe.at(c, j) = saved;
      const double numeric = (lp - lm) / (2.0 * epsilon);
      const double a = analytic.grad[static_cast<std::size_t>(c) *
                                         static_cast<std::size_t>(V) +
                                     static_cast<std::size_t>(j)];
      max_abs_diff = std::max(max_abs_diff, std::fabs(a - numeric));
      scale = std::max({scale, std::fabs(a), std::fabs(numeric)});
    }
  }
  return max_abs_diff / std::max(scale, 1e-12);
}

nlohmann::ordered_json train_config_echo(const TrainConfig& config) {
  nlohmann::ordered_json j;
  j["objective"] = objective_name(config.objective);
  j["beta"] = config.beta;
  j["top_k_percent"] = config.top_k_percent;
  if (const SgdConfig* sgd = std::get_if<SgdConfig>(&config.optimizer)) {
    j["optimizer"] = "sgd";
    j["lr"] = sgd->lr;
  } else {
    const AdamConfig& adam = std::get<AdamConfig>(config.optimizer);
    j["optimizer"] = "adam";
    j["lr"] = adam.lr;
    j["adam_beta1"] = adam.beta1;
    j["adam_beta2"] = adam.beta2;
    j["adam_eps"] = adam.eps;
  }
  if (config.steps) {
    j["steps"] = *config.steps;
  } else {
    j["epochs"] = config.effective_epochs();
  }
  j["batch_size"] = config.batch_size;
  j["seed"] = config.seed;
  j["reference"] = config.reference.to_string();
  return j;
}

}  // namespace seldpo
