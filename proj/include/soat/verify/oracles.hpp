#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "soat/agent/agent.hpp"
#include "soat/env/env.hpp"

namespace soat::verify {

// Independent second implementations used to cross-check the main code paths.
// These deliberately use different algorithms from the primary implementations
// and must stay that way.

// Bellman-Ford shortest distances over Euclidean edge lengths (the main path
// uses Dijkstra).
inline std::vector<double> bellman_ford_from(const env::NavGraph& graph, int source) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(graph.nodes.size(), inf);
  dist[static_cast<size_t>(source)] = 0.0;
  for (int pass = 0; pass + 1 < graph.num_nodes(); ++pass) {
    bool changed = false;
    for (const auto& [a, b] : graph.edges) {
      const double w = graph.distance(a, b);
      if (dist[static_cast<size_t>(a)] + w < dist[static_cast<size_t>(b)]) {
        dist[static_cast<size_t>(b)] = dist[static_cast<size_t>(a)] + w;
        changed = true;
      }
      if (dist[static_cast<size_t>(b)] + w < dist[static_cast<size_t>(a)]) {
        dist[static_cast<size_t>(a)] = dist[static_cast<size_t>(b)] + w;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return dist;
}

// DTW cost by exhaustive enumeration of all monotone alignments (the main
// path uses the dynamic program). Exponential; for short paths only.
inline double brute_force_dtw(const env::NavGraph& graph, const std::vector<int>& p,
                              const std::vector<int>& r, size_t i = 0, size_t j = 0) {
  const double cost = graph.distance(p[i], r[j]);
  if (i + 1 == p.size() && j + 1 == r.size()) return cost;
  double best = std::numeric_limits<double>::infinity();
  if (i + 1 < p.size()) best = std::min(best, brute_force_dtw(graph, p, r, i + 1, j));
  if (j + 1 < r.size()) best = std::min(best, brute_force_dtw(graph, p, r, i, j + 1));
  if (i + 1 < p.size() && j + 1 < r.size()) {
    best = std::min(best, brute_force_dtw(graph, p, r, i + 1, j + 1));
  }
  return cost + best;
}

struct BruteAggregation {
  std::vector<double> view_scores;
  std::vector<agent::ScoreProvenance> provenance;
  int argmax = 0;
};

// Enumerates every scene/object score per view and takes the max, mirroring
// the tie-break contract (scene first, then lowest object index); argmax over
// views breaks ties toward the lowest view.
inline BruteAggregation brute_force_aggregation(const std::vector<double>& scene_scores,
                                                const std::vector<double>& object_scores,
                                                const std::vector<int>& object_owner,
                                                int num_views) {
  BruteAggregation out;
  for (int v = 0; v < num_views; ++v) {
    double best = scene_scores[static_cast<size_t>(v)];
    agent::ScoreProvenance prov{agent::ScoreProvenance::Source::kScene, -1};
    for (size_t o = 0; o < object_scores.size(); ++o) {
      if (object_owner[o] != v) continue;
      if (object_scores[o] > best) {
        best = object_scores[o];
        prov = {agent::ScoreProvenance::Source::kObject, static_cast<int>(o)};
      }
    }
    out.view_scores.push_back(best);
    out.provenance.push_back(prov);
  }
  out.argmax = 0;
  for (size_t v = 1; v < out.view_scores.size(); ++v) {
    if (out.view_scores[v] > out.view_scores[static_cast<size_t>(out.argmax)]) {
      out.argmax = static_cast<int>(v);
    }
  }
  return out;
}

}  // namespace soat::verify
