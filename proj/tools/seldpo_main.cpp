#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "seldpo/align.hpp"
#include "seldpo/corpus.hpp"
#include "seldpo/errors.hpp"
#include "seldpo/eval.hpp"
#include "seldpo/io_util.hpp"
#include "seldpo/loss.hpp"
#include "seldpo/policy.hpp"
#include "seldpo/rng.hpp"
#include "seldpo/train.hpp"

namespace {

using namespace seldpo;

// "zeros" or a checkpoint path; vocab must match the dataset.
BigramPolicy load_policy_arg(const std::string& arg, int vocab_size) {
  if (arg == "zeros") return make_uniform_policy(vocab_size);
  BigramPolicy p = load_checkpoint(arg);
  if (p.vocab_size != vocab_size) {
    throw ValidationError("policy vocab_size " + std::to_string(p.vocab_size) +
                          " does not match dataset vocab_size " +
                          std::to_string(vocab_size));
  }
  return p;
}

struct GenDataArgs {
  CorpusSpec spec;
  std::string out;
  std::string oracle_out;
};

int run_gen_data(const GenDataArgs& args) {
  const GeneratedCorpus corpus = generate_controlled_corpus(args.spec);
  write_dataset(corpus.dataset, args.out);
  if (!args.oracle_out.empty()) {
    nlohmann::ordered_json meta;
    meta["role"] = "corpus_oracle";
    meta["corpus"] = corpus.dataset.provenance;
    save_checkpoint(corpus.oracle, args.oracle_out, meta);
  }
  std::cout << "wrote " << corpus.dataset.pairs.size() << " pairs to "
            << args.out;
  if (!args.oracle_out.empty()) std::cout << ", oracle to " << args.oracle_out;
  std::cout << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string config_path;
  std::string objective = "selective_dpo";
  double beta = 0.01;
  double top_k = 40.0;
  std::string optimizer = "sgd";
  double lr = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::optional<int> epochs;
  std::optional<int> steps;
  int batch_size = 64;
  std::uint64_t seed = 0;
  std::string ref = "init";
  std::string out;
  std::string metrics;
};

// Keys accepted in --config files; flags given on the command line win.
void apply_config_file(TrainArgs& args, const CLI::App* cmd) {
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(read_file(args.config_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(args.config_path + ": " + e.what());
  }
  if (!cfg.is_object()) {
    throw ValidationError(args.config_path + ": config must be a JSON object");
  }
  std::string ref_kind, ref_path;
  for (const auto& [key, value] : cfg.items()) {
    try {
      if (key == "objective") {
        if (!cmd->count("--objective")) args.objective = value.get<std::string>();
      } else if (key == "beta") {
        if (!cmd->count("--beta")) args.beta = value.get<double>();
      } else if (key == "top_k_percent") {
        if (!cmd->count("--top-k")) args.top_k = value.get<double>();
      } else if (key == "optimizer") {
        if (!cmd->count("--optimizer")) args.optimizer = value.get<std::string>();
      } else if (key == "lr") {
        if (!cmd->count("--lr")) args.lr = value.get<double>();
      } else if (key == "epochs") {
        if (!cmd->count("--epochs") && !cmd->count("--steps")) {
          args.epochs = value.get<int>();
        }
      } else if (key == "steps") {
        if (!cmd->count("--steps") && !cmd->count("--epochs")) {
          args.steps = value.get<int>();
        }
      } else if (key == "batch_size") {
        if (!cmd->count("--batch-size")) args.batch_size = value.get<int>();
      } else if (key == "seed") {
        if (!cmd->count("--seed")) args.seed = value.get<std::uint64_t>();
      } else if (key == "reference.kind") {
        ref_kind = value.get<std::string>();
      } else if (key == "reference.path") {
        ref_path = value.get<std::string>();
      } else if (key == "data") {
        if (!cmd->count("--data")) args.data = value.get<std::string>();
      } else if (key == "out") {
        if (!cmd->count("--out")) args.out = value.get<std::string>();
      } else if (key == "metrics") {
        if (!cmd->count("--metrics")) args.metrics = value.get<std::string>();
      } else {
        throw ValidationError(args.config_path + ": unknown config key \"" +
                              key + "\"");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(args.config_path + ": bad value for \"" + key +
                            "\": " + e.what());
    }
  }
  if (!ref_kind.empty() && !cmd->count("--ref")) {
    if (ref_kind == "init") {
      args.ref = "init";
    } else if (ref_kind == "oracle" || ref_kind == "checkpoint") {
      if (ref_path.empty()) {
        throw ValidationError(args.config_path +
                              ": reference.kind needs reference.path");
      }
      args.ref = ref_kind + ":" + ref_path;
    } else {
      throw ValidationError(args.config_path + ": bad reference.kind \"" +
                            ref_kind + "\"");
    }
  } else if (!ref_path.empty() && ref_kind.empty()) {
    throw ValidationError(args.config_path +
                          ": reference.path needs reference.kind");
  }
}

TrainConfig build_train_config(const TrainArgs& args) {
  TrainConfig cfg;
  cfg.objective = parse_objective(args.objective);
  cfg.beta = args.beta;
  cfg.top_k_percent = args.top_k;
  if (args.optimizer == "sgd") {
    cfg.optimizer = SgdConfig{args.lr};
  } else if (args.optimizer == "adam") {
    cfg.optimizer = AdamConfig{args.lr, args.adam_beta1, args.adam_beta2,
                               args.adam_eps};
  } else {
    throw ValidationError("unknown optimizer \"" + args.optimizer +
                          "\" (expected sgd|adam)");
  }
  cfg.epochs = args.epochs;
  cfg.steps = args.steps;
  cfg.batch_size = args.batch_size;
  cfg.seed = args.seed;
  cfg.reference = ReferenceSpec::parse(args.ref);
  cfg.checkpoint_path = args.out;
  cfg.metrics_path = args.metrics;
  return cfg;
}

int run_train(TrainArgs& args, const CLI::App* cmd) {
  if (!args.config_path.empty()) apply_config_file(args, cmd);
  if (args.data.empty()) {
    throw ValidationError("train needs --data (flag or config file)");
  }
  const PreferenceDataset dataset = read_dataset(args.data);
  const TrainConfig cfg = build_train_config(args);
  const TrainReport report = train(dataset, cfg);
  const StepRecord& last = report.records.back();
  std::printf("trained %s for %zu steps; final loss %.6f, grad norm %.3e\n",
              objective_name(cfg.objective).c_str(), report.records.size(),
              last.loss, last.grad_norm);
  if (!args.out.empty()) std::printf("checkpoint: %s\n", args.out.c_str());
  if (!args.metrics.empty()) std::printf("metrics: %s\n", args.metrics.c_str());
  return 0;
}

struct EvalArgs {
  std::string data;
  std::string policy;
  std::string ref = "init";
  double beta = 0.01;
  double top_k = 40.0;
  std::string out;
};

int run_eval(const EvalArgs& args) {
  const PreferenceDataset dataset = read_dataset(args.data);
  const BigramPolicy policy = load_policy_arg(args.policy, dataset.vocab.size);
  const BigramPolicy reference = resolve_reference(
      ReferenceSpec::parse(args.ref), make_uniform_policy(dataset.vocab.size));
  const EvalReport rep = evaluate(policy, reference, dataset, args.beta, args.top_k);
  std::printf("pairs:               %d\n", rep.pair_count);
  std::printf("preference_accuracy: %.6f\n", rep.preference_accuracy);
  std::printf("mean_margin:         %.6e\n", rep.mean_margin);
  if (rep.selection_precision) {
    std::printf("selection_precision: %.6f (k=%g)\n", *rep.selection_precision,
                rep.k_percent);
    std::printf("selection_recall:    %.6f\n", *rep.selection_recall);
  }
  if (!args.out.empty()) {
    nlohmann::ordered_json j;
    j["pairs"] = rep.pair_count;
    j["preference_accuracy"] = rep.preference_accuracy;
    j["mean_margin"] = rep.mean_margin;
    if (rep.selection_precision) {
      j["k_percent"] = rep.k_percent;
      j["selection_precision"] = *rep.selection_precision;
      j["selection_recall"] = *rep.selection_recall;
    }
    write_file_atomic(args.out, j.dump() + "\n");
  }
  return 0;
}

struct ScoreArgs {
  std::string data;
  std::string policy;
  std::string ref = "init";
  int pair = 0;
  double top_k = 40.0;
  std::string out;
};

int run_score(const ScoreArgs& args) {
  const PreferenceDataset dataset = read_dataset(args.data);
  if (args.pair < 0 || args.pair >= static_cast<int>(dataset.pairs.size())) {
    throw ValidationError("pair index " + std::to_string(args.pair) +
                          " out of range (dataset has " +
                          std::to_string(dataset.pairs.size()) + " pairs)");
  }
  const PreferencePair& pair = dataset.pairs[static_cast<std::size_t>(args.pair)];
  const BigramPolicy policy = load_policy_arg(args.policy, dataset.vocab.size);
  const BigramPolicy reference = resolve_reference(
      ReferenceSpec::parse(args.ref), make_uniform_policy(dataset.vocab.size));
  const PairLogProbs pol = compute_pair_log_probs(policy, pair);
  const PairLogProbs ref = compute_pair_log_probs(reference, pair);
  const AlignmentScores scores =
      alignment_scores(ref.win, pol.win, ref.lose, pol.lose);
  const SelectionMask mask = select_top_k(scores, args.top_k);

  std::ostringstream lines;
  auto emit = [&](const char* side, std::size_t i, double ref_lp, double pol_lp,
                  double score, bool selected) {
    nlohmann::ordered_json j;
    j["pair"] = args.pair;
    j["side"] = side;
    j["pos"] = i;
    j["ref_lp"] = ref_lp;
    j["pol_lp"] = pol_lp;
    j["score"] = score;
    j["selected"] = selected;
    lines << j.dump() << "\n";
  };
  for (std::size_t i = 0; i < pair.chosen.size(); ++i) {
    emit("win", i, ref.win[i], pol.win[i], scores.win_scores[i],
         mask.win_mask[i] != 0);
  }
  for (std::size_t i = 0; i < pair.rejected.size(); ++i) {
    emit("lose", i, ref.lose[i], pol.lose[i], scores.lose_scores[i],
         mask.lose_mask[i] != 0);
  }
  if (args.out.empty()) {
    std::cout << lines.str();
  } else {
    write_file_atomic(args.out, lines.str());
  }
  return 0;
}

struct SweepArgs {
  std::string data;
  std::vector<double> k_values;
  std::vector<double> beta_values;
  std::string objective = "selective_dpo";
  double base_beta = 0.01;
  double base_top_k = 40.0;
  double lr = 0.1;
  std::optional<int> epochs;
  int batch_size = 64;
  std::uint64_t seed = 0;
  std::string ref = "init";
  double heldout = 0.1;
  std::uint64_t split_seed = 1;
  std::string out;
};

int run_sweep(const SweepArgs& args) {
  const PreferenceDataset dataset = read_dataset(args.data);
  SweepSettings settings;
  settings.base.objective = parse_objective(args.objective);
  settings.base.beta = args.base_beta;
  settings.base.top_k_percent = args.base_top_k;
  settings.base.optimizer = SgdConfig{args.lr};
  settings.base.epochs = args.epochs;
  settings.base.batch_size = args.batch_size;
  settings.base.seed = args.seed;
  settings.base.reference = ReferenceSpec::parse(args.ref);
  settings.heldout_fraction = args.heldout;
  settings.split_seed = args.split_seed;

  const SweepResult result =
      sweep(dataset, settings, args.k_values, args.beta_values);
  std::cout << render_report_text(result.tables);
  if (!args.out.empty()) write_report_jsonl(result.tables, args.out);
  if (!result.cell_errors.empty()) {
    for (const std::string& err : result.cell_errors) {
      std::cerr << "sweep cell failed: " << err << "\n";
    }
    throw NumericError(std::to_string(result.cell_errors.size()) +
                       " sweep cell(s) failed");
  }
  return 0;
}

struct GradCheckArgs {
  int instances = 100;
  std::uint64_t seed = 0;
  int vocab = 8;
  double epsilon = 1e-6;
  double tolerance = 1e-6;
};

int run_grad_check(const GradCheckArgs& args) {
  if (args.instances < 1) throw ValidationError("instances must be >= 1");
  double worst = 0.0;
  for (Objective objective : {Objective::dpo, Objective::selective_dpo}) {
    double max_err = 0.0;
    DetRng rng(derive_seed(args.seed, objective == Objective::dpo ? 1 : 2));
    for (int i = 0; i < args.instances; ++i) {
      const BigramPolicy policy =
          make_random_policy(args.vocab, 1.0, rng.next_u64());
      const BigramPolicy reference =
          make_random_policy(args.vocab, 1.0, rng.next_u64());
      PreferencePair pair;
      const int prompt_len = 1 + static_cast<int>(rng.bounded(3));
      const int resp_len = 2 + static_cast<int>(rng.bounded(9));
      for (int t = 0; t < prompt_len; ++t) {
        pair.prompt.push_back(static_cast<int>(rng.bounded(static_cast<std::uint64_t>(args.vocab))));
      }
      pair.chosen = sample_response(policy, pair.prompt, resp_len, rng);
      pair.rejected = sample_response(reference, pair.prompt, resp_len, rng);
      LossConfig cfg;
      cfg.beta = 0.001 * std::pow(100.0, rng.uniform_double());  // [0.001, 0.1]
      cfg.top_k_percent = 10.0 + 90.0 * rng.uniform_double();
      max_err = std::max(max_err, finite_diff_check(policy, reference, pair,
                                                    objective, cfg, args.epsilon));
    }
    std::printf("%-14s max relative gradient error over %d instances: %.3e\n",
                objective_name(objective).c_str(), args.instances, max_err);
    worst = std::max(worst, max_err);
  }
  if (worst > args.tolerance) {
    throw NumericError("gradient check failed: max relative error " +
                       std::to_string(worst) + " exceeds tolerance");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale preference-optimization lab for tabular bigram policies"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand(
      "gen-data", "Generate a synthetic annotated preference corpus");
  gen->add_option("--vocab", gen_args.spec.vocab_size, "Vocabulary size")
      ->capture_default_str();
  gen->add_option("--pairs", gen_args.spec.num_pairs, "Number of preference pairs")
      ->capture_default_str();
  gen->add_option("--prompt-len", gen_args.spec.prompt_len, "Prompt length")
      ->capture_default_str();
  gen->add_option("--resp-len", gen_args.spec.resp_len, "Response length")
      ->capture_default_str();
  gen->add_option("--divergent", gen_args.spec.divergent_count,
                  "Bad-token substitutions per pair")
      ->capture_default_str();
  gen->add_option("--noise", gen_args.spec.noise_count,
                  "Preference-neutral substitutions per pair")
      ->capture_default_str();
  gen->add_option("--seed", gen_args.spec.seed, "Generation seed")
      ->capture_default_str();
  gen->add_option("--out", gen_args.out, "Dataset output path (JSONL)")
      ->required();
  gen->add_option("--oracle-out", gen_args.oracle_out,
                  "Oracle checkpoint output path");

  TrainArgs train_args;
  CLI::App* tr = app.add_subcommand("train", "Train a policy on a preference corpus");
  tr->add_option("--data", train_args.data, "Dataset path (JSONL)");
  tr->add_option("--config", train_args.config_path,
                 "JSON config file; command-line flags override it");
  tr->add_option("--objective", train_args.objective, "sft | dpo | selective_dpo")
      ->capture_default_str();
  tr->add_option("--beta", train_args.beta, "Preference loss temperature")
      ->capture_default_str();
  tr->add_option("--top-k", train_args.top_k,
                 "Percent of pooled tokens kept by selection, in (0, 100]")
      ->capture_default_str();
  tr->add_option("--optimizer", train_args.optimizer, "sgd | adam")
      ->capture_default_str();
  tr->add_option("--lr", train_args.lr, "Learning rate")->capture_default_str();
  tr->add_option("--adam-beta1", train_args.adam_beta1, "Adam first-moment decay")
      ->capture_default_str();
  tr->add_option("--adam-beta2", train_args.adam_beta2, "Adam second-moment decay")
      ->capture_default_str();
  tr->add_option("--adam-eps", train_args.adam_eps, "Adam denominator floor")
      ->capture_default_str();
  tr->add_option("--epochs", train_args.epochs,
                 "Training epochs (default 2; exclusive with --steps)");
  tr->add_option("--steps", train_args.steps,
                 "Training steps (exclusive with --epochs)");
  tr->add_option("--batch-size", train_args.batch_size, "Pairs per step")
      ->capture_default_str();
  tr->add_option("--seed", train_args.seed, "Shuffle seed")->capture_default_str();
  tr->add_option("--ref", train_args.ref,
                 "Reference: init | oracle:PATH | checkpoint:PATH")
      ->capture_default_str();
  tr->add_option("--out", train_args.out, "Checkpoint output path");
  tr->add_option("--metrics", train_args.metrics, "Metrics output path (JSONL)");

  EvalArgs eval_args;
  CLI::App* ev = app.add_subcommand("eval", "Evaluate a policy on a corpus");
  ev->add_option("--data", eval_args.data, "Dataset path (JSONL)")->required();
  ev->add_option("--policy", eval_args.policy, "Checkpoint path, or \"zeros\"")
      ->required();
  ev->add_option("--ref", eval_args.ref,
                 "Reference: init | oracle:PATH | checkpoint:PATH")
      ->capture_default_str();
  ev->add_option("--beta", eval_args.beta, "Margin temperature")
      ->capture_default_str();
  ev->add_option("--top-k", eval_args.top_k, "Selection percent for quality stats")
      ->capture_default_str();
  ev->add_option("--out", eval_args.out, "Optional JSON report path");

  ScoreArgs score_args;
  CLI::App* sc = app.add_subcommand("score", "Dump per-token scores for one pair");
  sc->add_option("--data", score_args.data, "Dataset path (JSONL)")->required();
  sc->add_option("--policy", score_args.policy, "Checkpoint path, or \"zeros\"")
      ->required();
  sc->add_option("--ref", score_args.ref,
                 "Reference: init | oracle:PATH | checkpoint:PATH")
      ->capture_default_str();
  sc->add_option("--pair", score_args.pair, "Pair index")->capture_default_str();
  sc->add_option("--top-k", score_args.top_k, "Selection percent")
      ->capture_default_str();
  sc->add_option("--out", score_args.out, "Output path (default stdout)");

  SweepArgs sweep_args;
  CLI::App* sw = app.add_subcommand(
      "sweep", "Train/evaluate across top-k and beta grids");
  sw->add_option("--data", sweep_args.data, "Dataset path (JSONL)")->required();
  sw->add_option("--k", sweep_args.k_values, "Top-k percent values")
      ->delimiter(',');
  sw->add_option("--beta", sweep_args.beta_values, "Beta values")->delimiter(',');
  sw->add_option("--objective", sweep_args.objective, "sft | dpo | selective_dpo")
      ->capture_default_str();
  sw->add_option("--base-beta", sweep_args.base_beta,
                 "Beta used on the top-k axis")
      ->capture_default_str();
  sw->add_option("--base-top-k", sweep_args.base_top_k,
                 "Top-k percent used on the beta axis")
      ->capture_default_str();
  sw->add_option("--lr", sweep_args.lr, "Learning rate")->capture_default_str();
  sw->add_option("--epochs", sweep_args.epochs, "Training epochs (default 2)");
  sw->add_option("--batch-size", sweep_args.batch_size, "Pairs per step")
      ->capture_default_str();
  sw->add_option("--seed", sweep_args.seed, "Shuffle seed")->capture_default_str();
  sw->add_option("--ref", sweep_args.ref,
                 "Reference: init | oracle:PATH | checkpoint:PATH")
      ->capture_default_str();
  sw->add_option("--heldout", sweep_args.heldout, "Held-out fraction")
      ->capture_default_str();
  sw->add_option("--split-seed", sweep_args.split_seed, "Split shuffle seed")
      ->capture_default_str();
  sw->add_option("--out", sweep_args.out, "Machine-readable report path (JSONL)");

  GradCheckArgs grad_args;
  CLI::App* gc = app.add_subcommand(
      "grad-check", "Finite-difference audit of analytic gradients");
  gc->add_option("--instances", grad_args.instances, "Random instances per objective")
      ->capture_default_str();
  gc->add_option("--seed", grad_args.seed, "Instance seed")->capture_default_str();
  gc->add_option("--vocab", grad_args.vocab, "Vocabulary size")
      ->capture_default_str();
  gc->add_option("--epsilon", grad_args.epsilon, "Central-difference step")
      ->capture_default_str();
  gc->add_option("--tolerance", grad_args.tolerance, "Max relative error allowed")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_args);
    if (tr->parsed()) return run_train(train_args, tr);
    if (ev->parsed()) return run_eval(eval_args);
    if (sc->parsed()) return run_score(score_args);
    if (sw->parsed()) return run_sweep(sweep_args);
    if (gc->parsed()) return run_grad_check(grad_args);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
