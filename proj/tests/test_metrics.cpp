#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "soat/metrics/metrics.hpp"
#include "soat/util/rng.hpp"
#include "soat/util/text.hpp"
#include "soat/verify/oracles.hpp"

using namespace soat;
using metrics::Trajectory;

namespace {

env::NavGraph line_graph(std::vector<double> xs) {
  env::NavGraph g;
  for (double x : xs) {
    env::GraphNode n;
    n.x = x;
    g.nodes.push_back(n);
  }
  for (size_t i = 0; i + 1 < xs.size(); ++i) g.edges.push_back({(int)i, (int)(i + 1)});
  g.rebuild_adjacency();
  return g;
}

}  // namespace

TEST_CASE("trajectory length: degenerate, two nodes, re-summation oracle") {
  env::NavGraph g = env::generate_world(3, 15, 4, 8, {0, 2});
  CHECK(metrics::trajectory_length(g, {{0}}) == 0.0);

  env::NavGraph two = line_graph({0.0, 3.0});
  CHECK(metrics::trajectory_length(two, {{0, 1}}) == 3.0);

  util::Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Trajectory t;
    t.nodes.push_back(rng.uniform_int(g.num_nodes()));
    for (int s = 0; s < 6; ++s) {
      const auto& nbrs = g.adjacency[static_cast<size_t>(t.nodes.back())];
      t.nodes.push_back(nbrs[static_cast<size_t>(rng.uniform_int((int)nbrs.size()))]);
    }
    double expected = 0.0;
    for (size_t i = 0; i + 1 < t.nodes.size(); ++i) {
      const auto& a = g.nodes[static_cast<size_t>(t.nodes[i])];
      const auto& b = g.nodes[static_cast<size_t>(t.nodes[i + 1])];
      expected += std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) +
                            (a.z - b.z) * (a.z - b.z));
    }
    CHECK(metrics::trajectory_length(g, t) == doctest::Approx(expected).epsilon(1e-14));
  }
}

TEST_CASE("navigation error: zero at goal, hand geodesic, Bellman-Ford oracle") {
  env::NavGraph abc = line_graph({0.0, 2.0, 4.0});
  CHECK(metrics::navigation_error(abc, 2, 2) == 0.0);
  CHECK(metrics::navigation_error(abc, 0, 2) == 4.0);  // A-B-C, 2 m edges

  util::Rng rng(5);
  for (uint64_t seed = 0; seed < 15; ++seed) {
    env::NavGraph g = env::generate_world(seed + 50, 18, 4, 8, {0, 2});
    const int goal = rng.uniform_int(g.num_nodes());
    const auto oracle = verify::bellman_ford_from(g, goal);
    for (int node = 0; node < g.num_nodes(); ++node) {
      CHECK(metrics::navigation_error(g, node, goal) == oracle[static_cast<size_t>(node)]);
    }
  }
}

TEST_CASE("success is strict at the 3 m boundary") {
  CHECK(metrics::success(0.0) == 1);
  CHECK(metrics::success(2.999999) == 1);
  CHECK(metrics::success(3.0) == 0);
  CHECK(metrics::success(7.5) == 0);

  util::Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const double ne = rng.uniform(0.0, 6.0);
    CHECK(metrics::success(ne) == (ne < 3.0 ? 1 : 0));
  }
}

TEST_CASE("spl formula and edge cases") {
  CHECK(metrics::spl(1, 10.0, 10.0) == 1.0);
  CHECK(metrics::spl(0, 10.0, 10.0) == 0.0);
  CHECK(metrics::spl(1, 10.0, 20.0) == 0.5);
  CHECK(metrics::spl(1, 10.0, 5.0) == 1.0);  // shorter-than-shortest cannot exceed 1
  CHECK(metrics::spl(1, 0.0, 0.0) == 1.0);   // start == goal: defined as S
  CHECK(metrics::spl(0, 0.0, 4.0) == 0.0);
}

TEST_CASE("ndtw: identity, singletons, displaced-node hand value, enumeration oracle") {
  env::NavGraph g;
  for (auto [x, y] : std::vector<std::pair<double, double>>{
           {0, 0}, {5, 0}, {10, 0}, {15, 0}, {5, 3}}) {
    env::GraphNode n;
    n.x = x;
    n.y = y;
    g.nodes.push_back(n);
  }
  g.rebuild_adjacency();

  CHECK(metrics::ndtw(g, {0, 1, 2, 3}, {0, 1, 2, 3}) == 1.0);
  CHECK(metrics::ndtw(g, {2}, {2}) == 1.0);

  // One node displaced by 3 m: DTW = 3, nDTW = exp(-3 / (4 * 3)).
  const double hand = metrics::ndtw(g, {0, 4, 2, 3}, {0, 1, 2, 3});
  CHECK(hand == doctest::Approx(std::exp(-0.25)).epsilon(1e-12));
  CHECK(hand == doctest::Approx(0.7788).epsilon(1e-4));
  const double oracle =
      std::exp(-verify::brute_force_dtw(g, {0, 4, 2, 3}, {0, 1, 2, 3}) / (4 * 3.0));
  CHECK(hand == doctest::Approx(oracle).epsilon(1e-12));

  // 200 random instances against the exhaustive alignment enumeration.
  env::NavGraph world = env::generate_world(9, 16, 4, 8, {0, 2});
  util::Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> p, r;
    const int np = 1 + rng.uniform_int(6), nr = 1 + rng.uniform_int(6);
    for (int i = 0; i < np; ++i) p.push_back(rng.uniform_int(world.num_nodes()));
    for (int i = 0; i < nr; ++i) r.push_back(rng.uniform_int(world.num_nodes()));
    const double expected =
        std::exp(-verify::brute_force_dtw(world, p, r) / (static_cast<double>(nr) * 3.0));
    CHECK(std::abs(metrics::ndtw(world, p, r) - expected) < 1e-9);
  }
}

// Appending an arbitrary node to P can legitimately RAISE nDTW (the new node
// can release an expensive forced match of the old final node), so the
// monotone property that actually holds is about stalling: repeating the
// final node never improves the score.
TEST_CASE("ndtw: stalling at the final node never improves the score") {
  env::NavGraph world = env::generate_world(10, 16, 4, 8, {0, 2});
  util::Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> p, r;
    for (int i = 0; i < 1 + rng.uniform_int(5); ++i) p.push_back(rng.uniform_int(world.num_nodes()));
    for (int i = 0; i < 1 + rng.uniform_int(5); ++i) r.push_back(rng.uniform_int(world.num_nodes()));
    const double base = metrics::ndtw(world, p, r);
    std::vector<int> stalled = p;
    stalled.push_back(p.back());
    CHECK(metrics::ndtw(world, stalled, r) <= base + 1e-15);
    // And the loosest legitimate drop is bounded by the new node's cost to
    // the reference end.
    const double bound = base * std::exp(-world.distance(p.back(), r.back()) /
                                         (static_cast<double>(r.size()) * 3.0));
    CHECK(metrics::ndtw(world, stalled, r) >= bound - 1e-15);
  }
}

TEST_CASE("sdtw gates ndtw by success") {
  CHECK(metrics::sdtw(0, 0.9) == 0.0);
  CHECK(metrics::sdtw(1, 1.0) == 1.0);
  util::Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const double nd = rng.uniform();
    const int s = rng.uniform_int(2);
    CHECK(metrics::sdtw(s, nd) == s * nd);
  }
}

TEST_CASE("per-episode metric invariants hold on random rollouts") {
  env::DatasetParams params;
  params.seed = 404;
  params.train_worlds = 2;
  params.unseen_worlds = 1;
  params.nodes_min = 12;
  params.nodes_max = 16;
  params.episodes_per_train_world = 10;
  params.feature_dim_scene = 8;
  params.feature_dim_object = 8;
  env::Dataset data = env::generate_dataset(params);

  util::Rng rng(10);
  for (const env::Episode& e : data.train_episodes) {
    const env::NavGraph& g = data.world_for(env::kSplitTrain, e).graph;
    // random-walk trajectory
    Trajectory t;
    t.nodes.push_back(e.start);
    for (int s = 0; s < rng.uniform_int(8); ++s) {
      const auto& nbrs = g.adjacency[static_cast<size_t>(t.nodes.back())];
      t.nodes.push_back(nbrs[static_cast<size_t>(rng.uniform_int((int)nbrs.size()))]);
    }
    auto m = metrics::score_episode(g, e, t);
    CHECK(m.spl <= m.sr);
    CHECK(m.sdtw <= m.ndtw);
    CHECK(m.spl >= 0.0);
    CHECK(m.spl <= 1.0);
    CHECK(m.ndtw > 0.0);
    CHECK(m.ndtw <= 1.0);
    CHECK(m.sdtw >= 0.0);
    CHECK(m.ne >= 0.0);
    CHECK(m.tl >= 0.0);
    CHECK(m.object_heavy == (e.object_ref_count >= 6));
  }
}

TEST_CASE("report round-trip: aggregates equal means recomputed from parsed rows") {
  env::DatasetParams params;
  params.seed = 405;
  params.train_worlds = 2;
  params.unseen_worlds = 1;
  params.nodes_min = 12;
  params.nodes_max = 14;
  params.episodes_per_train_world = 8;
  params.feature_dim_scene = 8;
  params.feature_dim_object = 8;
  env::Dataset data = env::generate_dataset(params);

  metrics::MetricReport report;
  report.split = env::kSplitTrain;
  report.policy = "random";
  report.seed = 42;
  util::Rng rng(11);
  for (const env::Episode& e : data.train_episodes) {
    const env::NavGraph& g = data.world_for(env::kSplitTrain, e).graph;
    Trajectory t;
    t.nodes.push_back(e.start);
    for (int s = 0; s < 2 + rng.uniform_int(5); ++s) {
      const auto& nbrs = g.adjacency[static_cast<size_t>(t.nodes.back())];
      t.nodes.push_back(nbrs[static_cast<size_t>(rng.uniform_int((int)nbrs.size()))]);
    }
    report.rows.push_back(metrics::score_episode(g, e, t));
  }
  metrics::finalize_report(report);

  const std::string text = metrics::serialize_report(report);
  metrics::MetricReport parsed = metrics::parse_report(text);
  REQUIRE(parsed.rows.size() == report.rows.size());
  CHECK(parsed.split == report.split);
  CHECK(parsed.seed == report.seed);

  // Aggregates in the file equal means recomputed from the parsed rows.
  metrics::Aggregate recomputed = metrics::aggregate_rows(parsed.rows, -1);
  CHECK(parsed.overall.n == recomputed.n);
  CHECK(parsed.overall.sr == doctest::Approx(recomputed.sr).epsilon(1e-12));
  CHECK(parsed.overall.spl == doctest::Approx(recomputed.spl).epsilon(1e-12));
  CHECK(parsed.overall.ndtw == doctest::Approx(recomputed.ndtw).epsilon(1e-12));
  CHECK(parsed.overall.tl == doctest::Approx(recomputed.tl).epsilon(1e-12));
  const int heavy_n = metrics::aggregate_rows(parsed.rows, 1).n;
  const int light_n = metrics::aggregate_rows(parsed.rows, 0).n;
  CHECK(parsed.object_heavy.n == heavy_n);
  CHECK(parsed.not_object_heavy.n == light_n);
  CHECK(heavy_n + light_n == parsed.overall.n);

  // Serialization is deterministic.
  CHECK(metrics::serialize_report(report) == text);
}

TEST_CASE("stratify_by_object_refs partitions per the threshold") {
  std::vector<env::Episode> eps(7);
  for (size_t i = 0; i < eps.size(); ++i) eps[i].object_ref_count = static_cast<int>(i);

  auto [heavy0, light0] = metrics::stratify_by_object_refs(eps);  // default threshold 6
  CHECK(heavy0.size() == 1);
  CHECK(light0.size() == 6);

  std::vector<env::Episode> none(4);
  auto [h1, l1] = metrics::stratify_by_object_refs(none);
  CHECK(h1.empty());
  CHECK(l1.size() == 4);

  auto [h2, l2] = metrics::stratify_by_object_refs(none, 0);
  CHECK(h2.size() == 4);
  CHECK(l2.empty());

  // Manual scan agreement on a mixed synthetic set.
  util::Rng rng(12);
  std::vector<env::Episode> mixed(50);
  int expect_heavy = 0;
  for (auto& e : mixed) {
    e.object_ref_count = rng.uniform_int(12);
    if (e.object_ref_count >= 6) ++expect_heavy;
  }
  auto [h3, l3] = metrics::stratify_by_object_refs(mixed);
  CHECK((int)h3.size() == expect_heavy);
  CHECK((int)l3.size() == 50 - expect_heavy);
}
