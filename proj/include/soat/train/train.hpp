#pragma once

#include <filesystem>
#include <fstream>
#include <thread>

#include "soat/agent/checkpoint.hpp"
#include "soat/metrics/evaluate.hpp"
#include "soat/train/losses.hpp"
#include "soat/train/pretrain.hpp"
#include "soat/util/kvconfig.hpp"

namespace soat::train {

struct TrainConfig {
  uint64_t seed = 1;
  int iterations = 20000;
  int batch_size = 16;
  double bc_fraction = 0.5;  // behaviour-cloning share; the rest is policy gradient
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 5.0;
  double baseline_decay = 0.95;
  double success_reward = 1.0;
  double failure_reward = -1.0;
  double step_penalty = -0.01;
  double entropy_weight = 0.0;
  bool pretrain = true;
  int pretrain_iterations = 1500;
  int pretrain_batch = 32;
  double pretrain_lr = 2e-3;
  int eval_every = 500;
  int eval_episodes = 120;  // per split; 0 evaluates the whole split
  int checkpoint_every = 0; // 0 = final checkpoint only
  int log_every = 10;
  int workers = 1;

  void apply_kv(util::KvConfig& kv);
  util::KvConfig to_kv() const;
};

struct TrainResult {
  int iterations_run = 0;
  double last_val_seen_sr = 0.0;
  double last_val_unseen_sr = 0.0;
};

namespace detail {

inline void log_eval_line(std::ostream& log, int iter, const metrics::MetricReport& rep) {
  log << "eval iter " << iter << " split " << rep.split << " n " << rep.overall.n << " sr "
      << util::format_metric(rep.overall.sr) << " spl " << util::format_metric(rep.overall.spl)
      << " ndtw " << util::format_metric(rep.overall.ndtw) << " sdtw "
      << util::format_metric(rep.overall.sdtw) << " ne " << util::format_metric(rep.overall.ne)
      << " tl " << util::format_metric(rep.overall.tl) << "\n";
}

}  // namespace detail

// Mixed behaviour-cloning / policy-gradient optimization. Writes
// `train_log.txt` (deterministic content for a fixed seed in single-worker
// mode) and checkpoints under `out_dir`. `resume` continues from a trainer
// checkpoint; the log is then appended to.
template <class T>
TrainResult train_loop(agent::Model<T>& model, const env::Dataset& data, const TrainConfig& cfg,
                       const std::string& out_dir, agent::TrainerBlob<T>* resume = nullptr) {
  namespace fs = std::filesystem;
  if (cfg.batch_size < 1) throw util::ConfigError("train: batch size must be positive");
  if (cfg.bc_fraction < 0.0 || cfg.bc_fraction > 1.0) {
    throw util::ConfigError("train: bc_fraction must be in [0, 1]");
  }
  if (data.train_episodes.empty()) throw util::ConfigError("train: empty training split");
  fs::create_directories(out_dir);

  auto params = model.parameters();
  const auto index = model.parameter_index();
  AdamWOptions adam_opts;
  adam_opts.lr = cfg.lr;
  adam_opts.beta1 = cfg.beta1;
  adam_opts.beta2 = cfg.beta2;
  adam_opts.eps = cfg.adam_eps;
  adam_opts.weight_decay = cfg.weight_decay;
  AdamW<T> optimizer(params, adam_opts);

  int start_iter = 0;
  double baseline = 0.0;
  bool baseline_init = false;
  bool pretrain_done = false;
  if (resume) {
    optimizer.restore(resume->adam_step, std::move(resume->first_moments),
                      std::move(resume->second_moments));
    start_iter = static_cast<int>(resume->iteration);
    baseline = resume->pg_baseline;
    baseline_init = resume->pg_baseline_initialized != 0;
    pretrain_done = resume->pretrain_done != 0;
  }

  const std::string log_path = (fs::path(out_dir) / "train_log.txt").string();
  std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw util::DataError("train: cannot open log " + log_path);

  if (cfg.pretrain && !pretrain_done) {
    PretrainConfig pc;
    pc.iterations = cfg.pretrain_iterations;
    pc.batch_size = cfg.pretrain_batch;
    pc.lr = cfg.pretrain_lr;
    pc.seed = util::derive_seed(cfg.seed, 0x9127);
    pretrain_alignment(model, data, pc, &log);
    pretrain_done = true;
  }

  RewardConfig reward;
  reward.success_reward = cfg.success_reward;
  reward.failure_reward = cfg.failure_reward;
  reward.step_penalty = cfg.step_penalty;
  reward.entropy_weight = cfg.entropy_weight;

  const int bc_count = static_cast<int>(std::lround(cfg.bc_fraction * cfg.batch_size));
  const int nworkers = std::max(1, cfg.workers);
  std::vector<std::vector<nn::Tensor<T>>> sinks;
  for (int w = 0; w < nworkers; ++w) sinks.push_back(make_grad_sink(model));

  auto save_ckpt = [&](const std::string& name, int iter) {
    agent::TrainerBlob<T> blob;
    blob.iteration = static_cast<uint64_t>(iter);
    blob.adam_step = optimizer.step_count();
    blob.pg_baseline = baseline;
    blob.pg_baseline_initialized = baseline_init ? 1 : 0;
    blob.pretrain_done = pretrain_done ? 1 : 0;
    blob.first_moments = optimizer.first_moments();
    blob.second_moments = optimizer.second_moments();
    agent::save_checkpoint((fs::path(out_dir) / name).string(), model, &blob);
  };

  TrainResult result;
  const T grad_scale = static_cast<T>(1.0 / cfg.batch_size);
  const int num_train = static_cast<int>(data.train_episodes.size());

  for (int iter = start_iter + 1; iter <= cfg.iterations; ++iter) {
    // Episode picks and per-slot seeds are pure functions of (seed, iter).
    util::Rng pick_rng(util::derive_seed(cfg.seed, 0x17e4, static_cast<uint64_t>(iter)));
    struct Slot {
      const env::Episode* episode;
      bool bc;
      uint64_t noise_seed;
      uint64_t action_seed;
      EpisodeLossStats stats;
    };
    std::vector<Slot> slots(static_cast<size_t>(cfg.batch_size));
    for (int s = 0; s < cfg.batch_size; ++s) {
      Slot& slot = slots[static_cast<size_t>(s)];
      slot.episode = &data.train_episodes[static_cast<size_t>(pick_rng.uniform_int(num_train))];
      slot.bc = s < bc_count;
      slot.noise_seed = util::derive_seed(cfg.seed, static_cast<uint64_t>(iter),
                                          static_cast<uint64_t>(s), 1);
      slot.action_seed = util::derive_seed(cfg.seed, static_cast<uint64_t>(iter),
                                           static_cast<uint64_t>(s), 2);
    }

    auto run_slot = [&](int s, int worker) {
      Slot& slot = slots[static_cast<size_t>(s)];
      const env::NavGraph& graph = data.world_for(env::kSplitTrain, *slot.episode).graph;
      if (slot.bc) {
        slot.stats = bc_episode_loss(model, graph, *slot.episode, data.synth, slot.noise_seed,
                                     index, sinks[static_cast<size_t>(worker)], grad_scale);
      } else {
        slot.stats = pg_episode_loss(model, graph, *slot.episode, data.synth, slot.noise_seed,
                                     slot.action_seed, baseline_init ? baseline : 0.0, reward,
                                     index, sinks[static_cast<size_t>(worker)], grad_scale);
      }
    };
    if (nworkers == 1) {
      for (int s = 0; s < cfg.batch_size; ++s) run_slot(s, 0);
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < nworkers; ++w) {
        pool.emplace_back([&, w]() {
          for (int s = w; s < cfg.batch_size; s += nworkers) run_slot(s, w);
        });
      }
      for (auto& th : pool) th.join();
    }

    // Worker-order reduction into the shared grad buffers.
    for (int w = 0; w < nworkers; ++w) {
      for (size_t k = 0; k < params.size(); ++k) {
        nn::Tensor<T>& src = sinks[static_cast<size_t>(w)][k];
        nn::Tensor<T>& dst = params[k]->grad;
        for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
        src.fill(T(0));
      }
    }

    const double grad_norm = clip_global_norm(params, cfg.grad_clip);
    optimizer.step();
    optimizer.zero_grad();

    double bc_loss = 0.0, pg_loss = 0.0, ret_sum = 0.0, loss_sum = 0.0;
    int bc_n = 0, pg_n = 0;
    for (const Slot& slot : slots) {
      loss_sum += slot.stats.loss;
      if (slot.bc) {
        bc_loss += slot.stats.loss;
        ++bc_n;
      } else {
        pg_loss += slot.stats.loss;
        ret_sum += slot.stats.pg_return;
        ++pg_n;
      }
    }
    if (pg_n > 0) {
      const double mean_ret = ret_sum / pg_n;
      if (!baseline_init) {
        baseline = mean_ret;
        baseline_init = true;
      } else {
        baseline = cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * mean_ret;
      }
    }

    if (cfg.log_every > 0 && (iter % cfg.log_every == 0 || iter == cfg.iterations)) {
      log << "iter " << iter << " loss " << util::format_metric(loss_sum / cfg.batch_size)
          << " bc " << util::format_metric(bc_n ? bc_loss / bc_n : 0.0) << " pg "
          << util::format_metric(pg_n ? pg_loss / pg_n : 0.0) << " return "
          << util::format_metric(pg_n ? ret_sum / pg_n : 0.0) << " grad_norm "
          << util::format_metric(grad_norm) << "\n";
    }

    if (cfg.eval_every > 0 && (iter % cfg.eval_every == 0 || iter == cfg.iterations)) {
      const uint64_t eval_seed = util::derive_seed(cfg.seed, 0xe7a1, static_cast<uint64_t>(iter));
      auto seen = metrics::evaluate_split(&model, agent::Policy::kModel, data, env::kSplitValSeen,
                                          eval_seed, cfg.eval_episodes, nworkers);
      auto unseen = metrics::evaluate_split(&model, agent::Policy::kModel, data,
                                            env::kSplitValUnseen, eval_seed, cfg.eval_episodes,
                                            nworkers);
      detail::log_eval_line(log, iter, seen);
      detail::log_eval_line(log, iter, unseen);
      result.last_val_seen_sr = seen.overall.sr;
      result.last_val_unseen_sr = unseen.overall.sr;
    }

    if (cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0) {
      save_ckpt("checkpoint_latest.ckpt", iter);
    }
    result.iterations_run = iter;
  }

  save_ckpt("checkpoint_final.ckpt", cfg.iterations);
  log.flush();
  return result;
}

}  // namespace soat::train
