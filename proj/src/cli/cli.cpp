#include "soat/cli/cli.hpp"

#include <chrono>
#include <optional>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "soat/agent/checkpoint.hpp"
#include "soat/env/env.hpp"
#include "soat/metrics/evaluate.hpp"
#include "soat/train/train.hpp"
#include "soat/util/errors.hpp"
#include "soat/util/text.hpp"

namespace soat::cli {

namespace fs = std::filesystem;
using util::ConfigError;
using util::DataError;

void write_config_echo(const std::string& out_dir, const util::KvConfig& kv) {
  fs::create_directories(out_dir);
  util::write_text_file((fs::path(out_dir) / "config_echo.txt").string(), kv.echo());
}

// run.* keys in echoed configs are informational; commands accept them back
// silently so an echo file can be replayed as --config.
void consume_run_keys(util::KvConfig& kv) {
  for (const char* key : {"run.command", "run.dataset", "run.out", "run.checkpoint", "run.policy",
                          "run.split", "run.pattern", "run.precision", "run.resume"}) {
    kv.get_string(key, "");
  }
}

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<KeyedOption> options;
};

util::KvConfig resolve_config(const CommonArgs& common, CLI::App& app) {
  util::KvConfig kv = common.config_path.empty() ? util::KvConfig()
                                                 : util::KvConfig::from_file(common.config_path);
  for (const KeyedOption& opt : common.options) {
    auto* o = static_cast<CLI::Option*>(opt.handle);
    if (o && o->count() > 0) kv.set(opt.key, opt.value);
  }
  (void)app;
  return kv;
}

void add_keyed(CLI::App& app, CommonArgs& common, const std::string& flag, const std::string& key,
               const std::string& help) {
  common.options.push_back({flag, key, "", nullptr});
  KeyedOption& opt = common.options.back();
  opt.handle = app.add_option(flag, opt.value, help);
}

// Reserve the vector before handing out handles; CLI11 keeps pointers into it.
constexpr size_t kMaxKeyedOptions = 64;

// CLI11's vector interface expects reversed args. Returns an exit code when
// parsing ended the command (help or error), nothing when parsing succeeded.
std::optional<int> parse_args(CLI::App& app, const std::vector<std::string>& args) {
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return util::kExitConfig;
  }
  return std::nullopt;
}

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void write_timing(const std::string& out_dir, double seconds) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "wall_seconds %.3f\n", seconds);
  util::write_text_file((fs::path(out_dir) / "timing.txt").string(), buf);
}

// ---------------------------------------------------------------------------
// gen-env
// ---------------------------------------------------------------------------

int gen_env_impl(const std::vector<std::string>& args) {
  CLI::App app{"generate a synthetic navigation dataset"};
  CommonArgs common;
  common.options.reserve(kMaxKeyedOptions);
  std::string out_dir;
  bool force = false;
  app.add_option("--config", common.config_path, "key = value config file");
  app.add_option("--out", out_dir, "output dataset directory")->required();
  app.add_flag("--force", force, "overwrite an existing dataset");
  add_keyed(app, common, "--seed", "data.seed", "generation seed");
  add_keyed(app, common, "--train-worlds", "data.train_worlds", "training world count");
  add_keyed(app, common, "--unseen-worlds", "data.unseen_worlds", "held-out world count");
  add_keyed(app, common, "--nodes-min", "data.nodes_min", "min nodes per world");
  add_keyed(app, common, "--nodes-max", "data.nodes_max", "max nodes per world");
  add_keyed(app, common, "--scene-classes", "data.scene_classes", "scene class count");
  add_keyed(app, common, "--object-classes", "data.object_classes", "object class count");
  add_keyed(app, common, "--objects-per-node-min", "data.objects_per_node_min", "");
  add_keyed(app, common, "--objects-per-node-max", "data.objects_per_node_max", "");
  add_keyed(app, common, "--min-path-len", "data.min_path_len", "min episode hops");
  add_keyed(app, common, "--max-path-len", "data.max_path_len", "max episode hops");
  add_keyed(app, common, "--episodes-per-train-world", "data.episodes_per_train_world", "");
  add_keyed(app, common, "--episodes-val-seen-per-world", "data.episodes_val_seen_per_world", "");
  add_keyed(app, common, "--episodes-per-unseen-world", "data.episodes_per_unseen_world", "");
  add_keyed(app, common, "--noise-sigma", "data.noise_sigma", "feature noise scale");
  add_keyed(app, common, "--object-word-probability", "data.object_word_probability", "");

  if (auto code = parse_args(app, args)) return *code;

  util::KvConfig kv = resolve_config(common, app);
  consume_run_keys(kv);
  env::DatasetParams params;
  params.apply_kv(kv);
  kv.reject_unknown_keys();

  env::Dataset dataset = env::generate_dataset(params);
  env::save_dataset(dataset, out_dir, force);

  util::KvConfig echo = params.to_kv();
  echo.set("run.command", "gen-env");
  echo.set("run.out", out_dir);
  write_config_echo(out_dir, echo);

  std::cout << "dataset written to " << out_dir << "\n"
            << "  worlds: " << dataset.train_worlds.size() << " train, "
            << dataset.unseen_worlds.size() << " unseen\n"
            << "  episodes: " << dataset.train_episodes.size() << " train, "
            << dataset.val_seen_episodes.size() << " val-seen-layout, "
            << dataset.val_unseen_episodes.size() << " val-unseen-layout\n"
            << "  vocab size: " << dataset.vocab.vocab_size() << "\n";
  return util::kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

template <class T>
int train_impl_typed(const env::Dataset& dataset, agent::ModelConfig model_cfg,
                     const train::TrainConfig& train_cfg, const std::string& out_dir,
                     const std::string& resume_path) {
  const auto start = std::chrono::steady_clock::now();
  agent::Model<T> model = agent::Model<T>::make(model_cfg, train_cfg.seed);
  train::TrainResult result;
  if (!resume_path.empty()) {
    agent::TrainerBlob<T> blob;
    model = agent::load_checkpoint<T>(resume_path, &blob);
    if (model.cfg.vocab_size != dataset.vocab.vocab_size()) {
      throw DataError("checkpoint vocabulary does not match the dataset");
    }
    result = train::train_loop(model, dataset, train_cfg, out_dir, &blob);
  } else {
    result = train::train_loop(model, dataset, train_cfg, out_dir);
  }
  write_timing(out_dir, elapsed_seconds(start));
  std::cout << "trained " << result.iterations_run << " iterations; last eval: val-seen sr "
            << util::format_metric(result.last_val_seen_sr) << ", val-unseen sr "
            << util::format_metric(result.last_val_unseen_sr) << "\n";
  return util::kExitOk;
}

int train_impl(const std::vector<std::string>& args) {
  CLI::App app{"train the navigation agent"};
  CommonArgs common;
  common.options.reserve(kMaxKeyedOptions);
  std::string dataset_dir, out_dir, pattern_name, precision = "f64", resume_path;
  bool force = false;
  app.add_option("--config", common.config_path, "key = value config file");
  app.add_option("--dataset", dataset_dir, "dataset directory")->required();
  app.add_option("--out", out_dir, "run output directory")->required();
  app.add_option("--pattern", pattern_name,
                 "attention pattern: baseline|all|selective-object|selective-scene|object-only");
  app.add_option("--precision", precision, "f64 (default) or f32");
  app.add_option("--resume", resume_path, "trainer checkpoint to resume from");
  app.add_flag("--force", force, "allow writing into a non-empty run directory");
  add_keyed(app, common, "--seed", "train.seed", "run seed");
  add_keyed(app, common, "--iterations", "train.iterations", "");
  add_keyed(app, common, "--batch-size", "train.batch_size", "");
  add_keyed(app, common, "--bc-fraction", "train.bc_fraction", "");
  add_keyed(app, common, "--lr", "train.lr", "");
  add_keyed(app, common, "--beta1", "train.beta1", "");
  add_keyed(app, common, "--beta2", "train.beta2", "");
  add_keyed(app, common, "--adam-eps", "train.adam_eps", "");
  add_keyed(app, common, "--weight-decay", "train.weight_decay", "");
  add_keyed(app, common, "--grad-clip", "train.grad_clip", "");
  add_keyed(app, common, "--baseline-decay", "train.baseline_decay", "");
  add_keyed(app, common, "--success-reward", "train.success_reward", "");
  add_keyed(app, common, "--failure-reward", "train.failure_reward", "");
  add_keyed(app, common, "--step-penalty", "train.step_penalty", "");
  add_keyed(app, common, "--entropy-weight", "train.entropy_weight", "");
  add_keyed(app, common, "--pretrain", "train.pretrain", "true/false");
  add_keyed(app, common, "--pretrain-iterations", "train.pretrain_iterations", "");
  add_keyed(app, common, "--pretrain-batch", "train.pretrain_batch", "");
  add_keyed(app, common, "--pretrain-lr", "train.pretrain_lr", "");
  add_keyed(app, common, "--eval-every", "train.eval_every", "");
  add_keyed(app, common, "--eval-episodes", "train.eval_episodes", "");
  add_keyed(app, common, "--checkpoint-every", "train.checkpoint_every", "");
  add_keyed(app, common, "--log-every", "train.log_every", "");
  add_keyed(app, common, "--workers", "train.workers", "");

  if (auto code = parse_args(app, args)) return *code;

  util::KvConfig kv = resolve_config(common, app);
  consume_run_keys(kv);
  train::TrainConfig train_cfg;
  train_cfg.apply_kv(kv);
  agent::ModelConfig model_cfg = agent::ModelConfig::from_kv(kv);
  kv.reject_unknown_keys();

  env::Dataset dataset = env::load_dataset(dataset_dir);
  if (kv.has("model.vocab_size") && model_cfg.vocab_size != dataset.vocab.vocab_size()) {
    throw ConfigError("model.vocab_size conflicts with the dataset vocabulary");
  }
  model_cfg.vocab_size = dataset.vocab.vocab_size();
  model_cfg.d_scene = dataset.params.feature_dim_scene;
  model_cfg.d_object = dataset.params.feature_dim_object;
  if (!pattern_name.empty()) {
    model_cfg = agent::config_for_pattern(model_cfg, masks::pattern_from_name(pattern_name));
  }
  model_cfg.validate();

  const fs::path log_path = fs::path(out_dir) / "train_log.txt";
  if (resume_path.empty() && !force && fs::exists(log_path)) {
    throw DataError("run directory already contains train_log.txt (use --force or --resume)");
  }

  util::KvConfig echo = train_cfg.to_kv();
  echo.merge(model_cfg.to_kv());
  echo.set("run.command", "train");
  echo.set("run.dataset", dataset_dir);
  echo.set("run.out", out_dir);
  echo.set("run.precision", precision);
  if (!resume_path.empty()) echo.set("run.resume", resume_path);
  write_config_echo(out_dir, echo);

  if (precision == "f64") {
    return train_impl_typed<double>(dataset, model_cfg, train_cfg, out_dir, resume_path);
  }
  if (precision == "f32") {
    return train_impl_typed<float>(dataset, model_cfg, train_cfg, out_dir, resume_path);
  }
  throw ConfigError("unknown precision: " + precision + " (expected f64 or f32)");
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

template <class T>
int eval_impl_typed(const env::Dataset& dataset, const std::string& checkpoint,
                    agent::Policy policy, const std::vector<std::string>& splits, uint64_t seed,
                    int episodes, int workers, const std::string& out_dir) {
  std::unique_ptr<agent::Model<T>> model;
  if (policy == agent::Policy::kModel) {
    model = std::make_unique<agent::Model<T>>(agent::load_checkpoint<T>(checkpoint));
    if (model->cfg.vocab_size != dataset.vocab.vocab_size()) {
      throw DataError("checkpoint vocabulary does not match the dataset");
    }
  }
  for (const std::string& split : splits) {
    auto report = metrics::evaluate_split<T>(model.get(), policy, dataset, split, seed, episodes,
                                             workers);
    const std::string path = (fs::path(out_dir) / ("report_" + split + ".txt")).string();
    metrics::save_report(report, path);
    std::cout << "split " << split << " n " << report.overall.n << " sr "
              << util::format_metric(report.overall.sr) << " spl "
              << util::format_metric(report.overall.spl) << " ndtw "
              << util::format_metric(report.overall.ndtw) << " sdtw "
              << util::format_metric(report.overall.sdtw) << " ne "
              << util::format_metric(report.overall.ne) << " tl "
              << util::format_metric(report.overall.tl) << "\n";
  }
  return util::kExitOk;
}

int eval_impl(const std::vector<std::string>& args) {
  CLI::App app{"evaluate a policy and write metric reports"};
  std::string dataset_dir, out_dir, checkpoint, policy_name = "model", split = "all";
  std::string precision = "f64", config_path;
  uint64_t seed = 1;
  int episodes = 0;
  int workers = 1;
  app.add_option("--config", config_path, "key = value config file");
  app.add_option("--dataset", dataset_dir, "dataset directory")->required();
  app.add_option("--out", out_dir, "report output directory")->required();
  app.add_option("--checkpoint", checkpoint, "model checkpoint (required for --policy model)");
  app.add_option("--policy", policy_name, "model|teacher|random");
  app.add_option("--split", split, "train|val-seen-layout|val-unseen-layout|all");
  app.add_option("--seed", seed, "evaluation seed");
  app.add_option("--episodes", episodes, "cap per split (0 = all)");
  app.add_option("--workers", workers, "parallel rollout workers");
  app.add_option("--precision", precision, "f64 (default) or f32");
  if (auto code = parse_args(app, args)) return *code;

  if (!config_path.empty()) {
    util::KvConfig kv = util::KvConfig::from_file(config_path);
    consume_run_keys(kv);
    seed = kv.get_u64("eval.seed", seed);
    episodes = kv.get_int("eval.episodes", episodes);
    workers = kv.get_int("eval.workers", workers);
    kv.reject_unknown_keys();
  }

  agent::Policy policy = agent::policy_from_name(policy_name);
  if (policy == agent::Policy::kModel && checkpoint.empty()) {
    throw ConfigError("--policy model requires --checkpoint");
  }
  std::vector<std::string> splits;
  if (split == "all") {
    splits = {env::kSplitTrain, env::kSplitValSeen, env::kSplitValUnseen};
  } else {
    splits = {split};
  }

  env::Dataset dataset = env::load_dataset(dataset_dir);
  for (const std::string& s : splits) (void)dataset.split(s);  // validate names early

  util::KvConfig echo;
  echo.set("run.command", "eval");
  echo.set("run.dataset", dataset_dir);
  echo.set("run.out", out_dir);
  echo.set("run.checkpoint", checkpoint);
  echo.set("run.policy", policy_name);
  echo.set("run.split", split);
  echo.set("run.precision", precision);
  echo.set("eval.seed", std::to_string(seed));
  echo.set("eval.episodes", std::to_string(episodes));
  echo.set("eval.workers", std::to_string(workers));
  write_config_echo(out_dir, echo);

  if (precision == "f64") {
    return eval_impl_typed<double>(dataset, checkpoint, policy, splits, seed, episodes, workers,
                                   out_dir);
  }
  if (precision == "f32") {
    return eval_impl_typed<float>(dataset, checkpoint, policy, splits, seed, episodes, workers,
                                  out_dir);
  }
  throw ConfigError("unknown precision: " + precision + " (expected f64 or f32)");
}

}  // namespace

int cmd_gen_env(const std::vector<std::string>& args) { return gen_env_impl(args); }
int cmd_train(const std::vector<std::string>& args) { return train_impl(args); }
int cmd_eval(const std::vector<std::string>& args) { return eval_impl(args); }

int run(const std::vector<std::string>& args) {
  try {
    if (args.empty()) {
      std::cerr << "usage: soat <gen-env|train|eval|ablate|verify> [options]\n"
                << "       soat <command> --help\n";
      return util::kExitConfig;
    }
    const std::string& command = args[0];
    std::vector<std::string> rest(args.begin() + 1, args.end());
    if (command == "gen-env") return cmd_gen_env(rest);
    if (command == "train") return cmd_train(rest);
    if (command == "eval") return cmd_eval(rest);
    if (command == "ablate") return cmd_ablate(rest);
    if (command == "verify") return cmd_verify(rest);
    std::cerr << "unknown command: " << command << "\n";
    return util::kExitConfig;
  } catch (const util::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return util::kExitConfig;
  } catch (const util::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return util::kExitData;
  } catch (const util::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return util::kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return util::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return util::kExitInternal;
  }
}

}  // namespace soat::cli
