#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "soat/env/env.hpp"

namespace soat::metrics {

// Success threshold in meters; strict `<` at the boundary. Also the nDTW
// distance scale.
inline constexpr double kSuccessRadius = 3.0;
inline constexpr int kObjectHeavyThreshold = 6;

// Visited node sequence, start included. Consecutive nodes must be adjacent
// in the owning graph.
struct Trajectory {
  std::vector<int> nodes;
};

double trajectory_length(const env::NavGraph& graph, const Trajectory& traj);

// Geodesic distance from the trajectory's final node to the goal. Infinite
// (flagged by the caller) when unreachable.
double navigation_error(const env::NavGraph& graph, int final_node, int goal);

int success(double navigation_error_m);

// S * l / max(p, l); when start == goal (l = 0) defined as S.
double spl(int success_flag, double shortest_path_length, double agent_path_length);

// exp(-DTW(P, R) / (|R| * kSuccessRadius)) with straight-line point costs over
// node positions and the standard O(|P||R|) dynamic program.
double ndtw(const env::NavGraph& graph, const std::vector<int>& path,
            const std::vector<int>& reference);

double sdtw(int success_flag, double ndtw_value);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EpisodeMetrics {
  uint64_t episode_id = 0;
  int steps = 0;
  int object_ref_count = 0;
  bool object_heavy = false;
  double tl = 0.0;
  double ne = 0.0;
  int sr = 0;
  double spl = 0.0;
  double ndtw = 0.0;
  double sdtw = 0.0;
};

struct Aggregate {
  int n = 0;
  double tl = 0.0, ne = 0.0, sr = 0.0, spl = 0.0, ndtw = 0.0, sdtw = 0.0;
};

struct MetricReport {
  std::string split;
  std::string policy;
  uint64_t seed = 0;
  std::vector<EpisodeMetrics> rows;  // ordered by episode id
  Aggregate overall;
  Aggregate object_heavy;
  Aggregate not_object_heavy;
};

EpisodeMetrics score_episode(const env::NavGraph& graph, const env::Episode& episode,
                             const Trajectory& traj);

Aggregate aggregate_rows(const std::vector<EpisodeMetrics>& rows,
                         int heavy_filter /* -1 all, 0 light, 1 heavy */);

// Fills the three aggregates from `rows` and sorts rows by episode id.
void finalize_report(MetricReport& report);

std::string serialize_report(const MetricReport& report);
MetricReport parse_report(const std::string& text);
void save_report(const MetricReport& report, const std::string& path);
MetricReport load_report(const std::string& path);

// Partition by object reference count (>= threshold is heavy).
std::pair<std::vector<const env::Episode*>, std::vector<const env::Episode*>> stratify_by_object_refs(
    const std::vector<env::Episode>& episodes, int threshold = kObjectHeavyThreshold);

}  // namespace soat::metrics
