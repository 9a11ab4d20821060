#pragma once

#include <atomic>
#include <thread>

#include "soat/agent/rollout.hpp"
#include "soat/metrics/metrics.hpp"

namespace soat::metrics {

// Greedy (or scripted) rollouts over a split. Per-episode work depends only on
// (seed, episode id), so results are identical for any worker count; rows are
// assembled in episode order.
template <class T>
MetricReport evaluate_split(agent::Model<T>* model, agent::Policy policy, const env::Dataset& data,
                            const std::string& split_name, uint64_t seed, int max_episodes,
                            int workers) {
  if (policy == agent::Policy::kModel && model == nullptr) {
    throw util::ConfigError("evaluate_split: model policy requires a model");
  }
  const std::vector<env::Episode>& all = data.split(split_name);
  const size_t count = (max_episodes > 0 && static_cast<size_t>(max_episodes) < all.size())
                           ? static_cast<size_t>(max_episodes)
                           : all.size();

  MetricReport report;
  report.split = split_name;
  report.policy = agent::policy_name(policy);
  report.seed = seed;
  report.rows.resize(count);

  const int max_steps = model ? model->cfg.max_episode_steps : 15;
  auto score_one = [&](size_t idx) {
    const env::Episode& episode = all[idx];
    const env::NavGraph& graph = data.world_for(split_name, episode).graph;
    Trajectory traj;
    if (policy == agent::Policy::kModel) {
      agent::EpisodeContext<T> ctx;
      util::Rng noise(util::derive_seed(seed, episode.id, 1));
      agent::RolloutOptions opts;
      opts.select = agent::ActionSelect::kGreedy;
      auto rollout = agent::run_model_episode(ctx, *model, graph, episode, data.synth, noise,
                                              nullptr, opts);
      traj = std::move(rollout.trajectory);
    } else {
      util::Rng action(util::derive_seed(seed, episode.id, 2));
      traj = agent::run_scripted_episode(graph, episode, policy, max_steps, &action);
    }
    report.rows[idx] = score_episode(graph, episode, traj);
  };

  const int nworkers = std::max(1, workers);
  if (nworkers == 1) {
    for (size_t i = 0; i < count; ++i) score_one(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(nworkers));
    for (int w = 0; w < nworkers; ++w) {
      pool.emplace_back([&]() {
        for (size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) score_one(i);
      });
    }
    for (auto& th : pool) th.join();
  }

  finalize_report(report);
  return report;
}

}  // namespace soat::metrics
