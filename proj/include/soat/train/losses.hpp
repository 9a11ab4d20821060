#pragma once

#include <unordered_map>

#include "soat/agent/rollout.hpp"
#include "soat/metrics/metrics.hpp"

namespace soat::train {

template <class T>
using ParamIndex = std::unordered_map<const nn::Parameter<T>*, int>;

template <class T>
std::vector<nn::Tensor<T>> make_grad_sink(agent::Model<T>& model) {
  std::vector<nn::Tensor<T>> sink;
  for (nn::Parameter<T>* p : model.parameters()) sink.emplace_back(p->value.rows, p->value.cols);
  return sink;
}

struct RewardConfig {
  double success_reward = 1.0;
  double failure_reward = -1.0;
  double step_penalty = -0.01;
  double entropy_weight = 0.0;
};

struct EpisodeLossStats {
  double loss = 0.0;
  int steps = 0;
  double pg_return = 0.0;
  int success = 0;
};

// Teacher-forced rollout; loss is the mean per-step negative log probability
// of the teacher action. Gradients are accumulated into `sink` scaled by
// `grad_scale`.
template <class T>
EpisodeLossStats bc_episode_loss(agent::Model<T>& model, const env::NavGraph& graph,
                                 const env::Episode& episode, const env::FeatureSynth& synth,
                                 uint64_t noise_seed, const ParamIndex<T>& index,
                                 std::vector<nn::Tensor<T>>& sink, T grad_scale) {
  agent::EpisodeContext<T> ctx;
  util::Rng noise(noise_seed);
  agent::RolloutOptions opts;
  opts.select = agent::ActionSelect::kTeacherForced;
  opts.record_bc_loss = true;
  auto rollout = agent::run_model_episode(ctx, model, graph, episode, synth, noise, nullptr, opts);
  if (rollout.step_losses.empty()) throw util::ConfigError("bc_episode_loss: empty rollout");

  nn::Var loss = nn::scale(ctx.tape, nn::add_n(ctx.tape, rollout.step_losses),
                           static_cast<T>(1.0 / rollout.step_losses.size()));
  const double loss_value = static_cast<double>(ctx.tape.val(loss).data[0]);
  if (!std::isfinite(loss_value)) throw util::NumericError("bc_episode_loss: non-finite loss");
  ctx.tape.backward(loss);
  ctx.bind.flush_grads_to(index, sink, grad_scale);

  EpisodeLossStats stats;
  stats.loss = loss_value;
  stats.steps = rollout.steps;
  return stats;
}

// REINFORCE with a scalar baseline: loss = -sum_t log pi(a_t) * (R - b), with
// R the terminal success reward plus per-step shaping, all steps sharing the
// episode return.
template <class T>
EpisodeLossStats pg_episode_loss(agent::Model<T>& model, const env::NavGraph& graph,
                                 const env::Episode& episode, const env::FeatureSynth& synth,
                                 uint64_t noise_seed, uint64_t action_seed, double baseline,
                                 const RewardConfig& reward, const ParamIndex<T>& index,
                                 std::vector<nn::Tensor<T>>& sink, T grad_scale) {
  agent::EpisodeContext<T> ctx;
  util::Rng noise(noise_seed);
  util::Rng actions(action_seed);
  agent::RolloutOptions opts;
  opts.select = agent::ActionSelect::kSample;
  opts.record_log_probs = true;
  auto rollout = agent::run_model_episode(ctx, model, graph, episode, synth, noise, &actions, opts);
  if (rollout.log_probs.empty()) throw util::ConfigError("pg_episode_loss: empty rollout");

  const double ne = metrics::navigation_error(graph, rollout.trajectory.nodes.back(), episode.goal);
  const int success = metrics::success(ne);
  const double ret = (success ? reward.success_reward : reward.failure_reward) +
                     reward.step_penalty * rollout.steps;
  const double advantage = ret - baseline;

  std::vector<nn::Var> terms;
  terms.reserve(rollout.log_probs.size());
  for (nn::Var lp : rollout.log_probs) {
    terms.push_back(nn::scale(ctx.tape, lp, static_cast<T>(-advantage)));
  }
  nn::Var loss = nn::add_n(ctx.tape, terms);
  if (reward.entropy_weight > 0.0) {
    std::vector<nn::Var> entropies;
    for (nn::Var scores : rollout.score_rows) {
      nn::Var p = nn::softmax(ctx.tape, scores);
      nn::Var lp = nn::log_softmax(ctx.tape, scores);
      entropies.push_back(nn::scale(ctx.tape, nn::sum_all(ctx.tape, nn::mul(ctx.tape, p, lp)), T(-1)));
    }
    // Bonus: subtract weighted entropy from the loss.
    loss = nn::sub(ctx.tape, loss,
                   nn::scale(ctx.tape, nn::add_n(ctx.tape, entropies),
                             static_cast<T>(reward.entropy_weight)));
  }
  const double loss_value = static_cast<double>(ctx.tape.val(loss).data[0]);
  if (!std::isfinite(loss_value)) throw util::NumericError("pg_episode_loss: non-finite loss");
  ctx.tape.backward(loss);
  ctx.bind.flush_grads_to(index, sink, grad_scale);

  EpisodeLossStats stats;
  stats.loss = loss_value;
  stats.steps = rollout.steps;
  stats.pg_return = ret;
  stats.success = success;
  return stats;
}

}  // namespace soat::train
