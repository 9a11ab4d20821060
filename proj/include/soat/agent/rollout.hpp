#pragma once

#include <string>
#include <vector>

#include "soat/agent/agent.hpp"
#include "soat/metrics/metrics.hpp"

namespace soat::agent {

enum class Policy { kModel, kTeacher, kRandom };

Policy policy_from_name(const std::string& name);
std::string policy_name(Policy policy);

enum class ActionSelect { kGreedy, kSample, kTeacherForced };

struct RolloutOptions {
  ActionSelect select = ActionSelect::kGreedy;
  bool use_cache = true;
  bool record_bc_loss = false;    // per-step CE against the teacher action
  bool record_log_probs = false;  // chosen-action log-probabilities
};

template <class T>
struct RolloutResult {
  metrics::Trajectory trajectory;
  int steps = 0;
  bool stopped = false;  // chose stop rather than hitting the step cap
  std::vector<nn::Var> step_losses;
  std::vector<nn::Var> log_probs;
  std::vector<nn::Var> score_rows;
};

template <class T>
RolloutResult<T> run_model_episode(EpisodeContext<T>& ctx, Model<T>& model,
                                   const env::NavGraph& graph, const env::Episode& episode,
                                   const env::FeatureSynth& synth, util::Rng& noise_rng,
                                   util::Rng* action_rng, const RolloutOptions& opts) {
  RolloutResult<T> out;
  AgentState<T> state = init_state(ctx, model, episode.instruction);
  int node = episode.start;
  int came_from = -1;
  out.trajectory.nodes.push_back(node);

  for (int t = 0; t < model.cfg.max_episode_steps; ++t) {
    auto views = env::render_observation(graph, node, came_from, synth, noise_rng);
    StepResult<T> result = step(ctx, model, state, views, opts.use_cache);
    const int stop_index = static_cast<int>(views.size()) - 1;

    int teacher = -1;
    if (opts.record_bc_loss || opts.select == ActionSelect::kTeacherForced) {
      teacher = env::teacher_action(graph, node, episode.goal);
    }
    int action = -1;
    switch (opts.select) {
      case ActionSelect::kGreedy: action = result.distribution.argmax(); break;
      case ActionSelect::kSample:
        if (!action_rng) throw util::ConfigError("rollout: sampling requires an action rng");
        action = result.distribution.sample(*action_rng);
        break;
      case ActionSelect::kTeacherForced: action = teacher; break;
    }

    if (opts.record_bc_loss) {
      out.step_losses.push_back(nn::cross_entropy_with_logits(ctx.tape, result.view_scores, teacher));
    }
    if (opts.record_log_probs) {
      out.log_probs.push_back(
          nn::pick(ctx.tape, nn::log_softmax(ctx.tape, result.view_scores), 0, action));
      out.score_rows.push_back(result.view_scores);
    }

    ++out.steps;
    if (action == stop_index) {
      out.stopped = true;
      break;
    }
    const env::CandidateView& chosen = views[static_cast<size_t>(action)];
    state = advance_state(ctx, model, state, result, chosen);
    came_from = node;
    node = chosen.target_node;
    out.trajectory.nodes.push_back(node);
  }
  return out;
}

// Teacher and random reference policies; no model involved.
metrics::Trajectory run_scripted_episode(const env::NavGraph& graph, const env::Episode& episode,
                                         Policy policy, int max_steps, util::Rng* action_rng);

}  // namespace soat::agent
