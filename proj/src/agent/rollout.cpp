#include "soat/agent/rollout.hpp"

#include "soat/util/errors.hpp"

namespace soat::agent {

Policy policy_from_name(const std::string& name) {
  if (name == "model") return Policy::kModel;
  if (name == "teacher") return Policy::kTeacher;
  if (name == "random") return Policy::kRandom;
  throw util::ConfigError("unknown policy: " + name + " (expected model|teacher|random)");
}

std::string policy_name(Policy policy) {
  switch (policy) {
    case Policy::kModel: return "model";
    case Policy::kTeacher: return "teacher";
    case Policy::kRandom: return "random";
  }
  throw util::ConfigError("invalid policy value");
}

metrics::Trajectory run_scripted_episode(const env::NavGraph& graph, const env::Episode& episode,
                                         Policy policy, int max_steps, util::Rng* action_rng) {
  metrics::Trajectory traj;
  int node = episode.start;
  traj.nodes.push_back(node);
  for (int t = 0; t < max_steps; ++t) {
    if (policy == Policy::kTeacher) {
      const int next = env::teacher_next_node(graph, node, episode.goal);
      if (next < 0) break;  // stop at the goal
      node = next;
      traj.nodes.push_back(node);
    } else if (policy == Policy::kRandom) {
      if (!action_rng) throw util::ConfigError("random policy requires an rng");
      const auto& nbrs = graph.adjacency[static_cast<size_t>(node)];
      const int action = action_rng->uniform_int(static_cast<int>(nbrs.size()) + 1);
      if (action == static_cast<int>(nbrs.size())) break;  // stop
      node = nbrs[static_cast<size_t>(action)];
      traj.nodes.push_back(node);
    } else {
      throw util::ConfigError("run_scripted_episode: model policy is not scripted");
    }
  }
  return traj;
}

}  // namespace soat::agent
