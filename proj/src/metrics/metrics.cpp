#include "soat/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "soat/util/errors.hpp"
#include "soat/util/text.hpp"

namespace soat::metrics {

using util::DataError;

double trajectory_length(const env::NavGraph& graph, const Trajectory& traj) {
  if (traj.nodes.empty()) throw util::ConfigError("trajectory_length: empty trajectory");
  double total = 0.0;
  for (size_t i = 0; i + 1 < traj.nodes.size(); ++i) {
    total += graph.distance(traj.nodes[i], traj.nodes[i + 1]);
  }
  return total;
}

double navigation_error(const env::NavGraph& graph, int final_node, int goal) {
  const std::vector<double> dist = graph.geodesic_from(goal);
  return dist[static_cast<size_t>(final_node)];
}

int success(double navigation_error_m) { return navigation_error_m < kSuccessRadius ? 1 : 0; }

double spl(int success_flag, double shortest_path_length, double agent_path_length) {
  if (shortest_path_length == 0.0) return static_cast<double>(success_flag);
  return success_flag * shortest_path_length / std::max(agent_path_length, shortest_path_length);
}

double ndtw(const env::NavGraph& graph, const std::vector<int>& path,
            const std::vector<int>& reference) {
  if (path.empty() || reference.empty()) throw util::ConfigError("ndtw: empty path");
  const size_t np = path.size(), nr = reference.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(nr, inf), cur(nr, inf);
  for (size_t i = 0; i < np; ++i) {
    for (size_t j = 0; j < nr; ++j) {
      const double cost = graph.distance(path[i], reference[j]);
      double best;
      if (i == 0 && j == 0) {
        best = 0.0;
      } else if (i == 0) {
        best = cur[j - 1];
      } else if (j == 0) {
        best = prev[j];
      } else {
        best = std::min({prev[j], cur[j - 1], prev[j - 1]});
      }
      cur[j] = cost + best;
    }
    std::swap(prev, cur);
  }
  const double dtw = prev[nr - 1];
  return std::exp(-dtw / (static_cast<double>(nr) * kSuccessRadius));
}

double sdtw(int success_flag, double ndtw_value) { return success_flag * ndtw_value; }

EpisodeMetrics score_episode(const env::NavGraph& graph, const env::Episode& episode,
                             const Trajectory& traj) {
  EpisodeMetrics m;
  m.episode_id = episode.id;
  m.steps = static_cast<int>(traj.nodes.size()) - 1;
  m.object_ref_count = episode.object_ref_count;
  m.object_heavy = episode.object_ref_count >= kObjectHeavyThreshold;
  m.tl = trajectory_length(graph, traj);
  m.ne = navigation_error(graph, traj.nodes.back(), episode.goal);
  if (!std::isfinite(m.ne)) {
    throw DataError("navigation error is infinite: goal unreachable (episode " +
                    std::to_string(episode.id) + ")");
  }
  m.sr = success(m.ne);
  const double shortest = graph.geodesic_from(episode.start)[static_cast<size_t>(episode.goal)];
  m.spl = spl(m.sr, shortest, m.tl);
  m.ndtw = ndtw(graph, traj.nodes, episode.path);
  m.sdtw = sdtw(m.sr, m.ndtw);
  return m;
}

Aggregate aggregate_rows(const std::vector<EpisodeMetrics>& rows, int heavy_filter) {
  Aggregate a;
  for (const EpisodeMetrics& r : rows) {
    if (heavy_filter == 0 && r.object_heavy) continue;
    if (heavy_filter == 1 && !r.object_heavy) continue;
    ++a.n;
    a.tl += r.tl;
    a.ne += r.ne;
    a.sr += r.sr;
    a.spl += r.spl;
    a.ndtw += r.ndtw;
    a.sdtw += r.sdtw;
  }
  if (a.n > 0) {
    a.tl /= a.n;
    a.ne /= a.n;
    a.sr /= a.n;
    a.spl /= a.n;
    a.ndtw /= a.n;
    a.sdtw /= a.n;
  }
  return a;
}

void finalize_report(MetricReport& report) {
  std::sort(report.rows.begin(), report.rows.end(),
            [](const EpisodeMetrics& a, const EpisodeMetrics& b) { return a.episode_id < b.episode_id; });
  report.overall = aggregate_rows(report.rows, -1);
  report.object_heavy = aggregate_rows(report.rows, 1);
  report.not_object_heavy = aggregate_rows(report.rows, 0);
}

namespace {

constexpr const char* kReportMagic = "soat-report";
constexpr const char* kReportVersion = "v1";

void append_aggregate(std::ostringstream& out, const char* label, const Aggregate& a) {
  out << "aggregate " << label << " n " << a.n << " tl " << util::format_double(a.tl) << " ne "
      << util::format_double(a.ne) << " sr " << util::format_double(a.sr) << " spl "
      << util::format_double(a.spl) << " ndtw " << util::format_double(a.ndtw) << " sdtw "
      << util::format_double(a.sdtw) << "\n";
}

Aggregate parse_aggregate(const std::vector<std::string>& toks) {
  Aggregate a;
  a.n = std::stoi(toks[3]);
  a.tl = std::stod(toks[5]);
  a.ne = std::stod(toks[7]);
  a.sr = std::stod(toks[9]);
  a.spl = std::stod(toks[11]);
  a.ndtw = std::stod(toks[13]);
  a.sdtw = std::stod(toks[15]);
  return a;
}

}  // namespace

std::string serialize_report(const MetricReport& report) {
  std::ostringstream out;
  out << kReportMagic << " " << kReportVersion << "\n";
  out << "split " << report.split << "\n";
  out << "policy " << report.policy << "\n";
  out << "seed " << report.seed << "\n";
  out << "episodes " << report.rows.size() << "\n";
  for (const EpisodeMetrics& r : report.rows) {
    out << "episode " << r.episode_id << " steps " << r.steps << " object_refs " << r.object_ref_count
        << " stratum " << (r.object_heavy ? "object-heavy" : "not-object-heavy") << " tl "
        << util::format_double(r.tl) << " ne " << util::format_double(r.ne) << " sr " << r.sr
        << " spl " << util::format_double(r.spl) << " ndtw " << util::format_double(r.ndtw)
        << " sdtw " << util::format_double(r.sdtw) << "\n";
  }
  append_aggregate(out, "overall", report.overall);
  append_aggregate(out, "object-heavy", report.object_heavy);
  append_aggregate(out, "not-object-heavy", report.not_object_heavy);
  out << "end\n";
  return out.str();
}

MetricReport parse_report(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("report: empty");
  {
    auto toks = util::split_ws(line);
    if (toks.size() != 2 || toks[0] != kReportMagic) throw DataError("report: bad header");
    if (toks[1] != kReportVersion) throw DataError("report: unsupported version " + toks[1]);
  }
  MetricReport rep;
  bool saw_end = false;
  while (std::getline(in, line)) {
    auto toks = util::split_ws(line);
    if (toks.empty()) continue;
    if (toks[0] == "split") {
      rep.split = toks[1];
    } else if (toks[0] == "policy") {
      rep.policy = toks[1];
    } else if (toks[0] == "seed") {
      rep.seed = std::stoull(toks[1]);
    } else if (toks[0] == "episodes") {
      // row count; validated below
    } else if (toks[0] == "episode") {
      EpisodeMetrics r;
      r.episode_id = std::stoull(toks[1]);
      r.steps = std::stoi(toks[3]);
      r.object_ref_count = std::stoi(toks[5]);
      r.object_heavy = toks[7] == "object-heavy";
      r.tl = std::stod(toks[9]);
      r.ne = std::stod(toks[11]);
      r.sr = std::stoi(toks[13]);
      r.spl = std::stod(toks[15]);
      r.ndtw = std::stod(toks[17]);
      r.sdtw = std::stod(toks[19]);
      rep.rows.push_back(r);
    } else if (toks[0] == "aggregate") {
      if (toks[1] == "overall") rep.overall = parse_aggregate(toks);
      else if (toks[1] == "object-heavy") rep.object_heavy = parse_aggregate(toks);
      else if (toks[1] == "not-object-heavy") rep.not_object_heavy = parse_aggregate(toks);
      else throw DataError("report: unknown aggregate " + toks[1]);
    } else if (toks[0] == "end") {
      saw_end = true;
    } else {
      throw DataError("report: unrecognized line: " + line);
    }
  }
  if (!saw_end) throw DataError("report: missing end marker");
  return rep;
}

void save_report(const MetricReport& report, const std::string& path) {
  util::write_text_file(path, serialize_report(report));
}

MetricReport load_report(const std::string& path) {
  return parse_report(util::read_text_file(path));
}

std::pair<std::vector<const env::Episode*>, std::vector<const env::Episode*>> stratify_by_object_refs(
    const std::vector<env::Episode>& episodes, int threshold) {
  std::vector<const env::Episode*> heavy, light;
  for (const env::Episode& e : episodes) {
    (e.object_ref_count >= threshold ? heavy : light).push_back(&e);
  }
  return {heavy, light};
}

}  // namespace soat::metrics
