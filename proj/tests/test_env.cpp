#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <queue>
#include <set>

#include "soat/env/env.hpp"
#include "soat/util/text.hpp"

using namespace soat;

namespace {

// BFS connectivity oracle, independent of NavGraph::connected().
bool bfs_connected(const env::NavGraph& g) {
  if (g.nodes.empty()) return false;
  std::set<int> seen{0};
  std::queue<int> q;
  q.push(0);
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (const auto& [a, b] : g.edges) {
      int other = -1;
      if (a == u) other = b;
      if (b == u) other = a;
      if (other >= 0 && !seen.count(other)) {
        seen.insert(other);
        q.push(other);
      }
    }
  }
  return static_cast<int>(seen.size()) == g.num_nodes();
}

env::DatasetParams small_params(uint64_t seed) {
  env::DatasetParams p;
  p.seed = seed;
  p.train_worlds = 3;
  p.unseen_worlds = 2;
  p.nodes_min = 10;
  p.nodes_max = 16;
  p.scene_classes = 4;
  p.object_classes = 10;
  p.episodes_per_train_world = 4;
  p.episodes_val_seen_per_world = 2;
  p.episodes_per_unseen_world = 3;
  p.feature_dim_scene = 8;
  p.feature_dim_object = 8;
  return p;
}

}  // namespace

TEST_CASE("generate_world: determinism, degenerate size, argument errors") {
  env::NavGraph a = env::generate_world(42, 20, 4, 8, {0, 3});
  env::NavGraph b = env::generate_world(42, 20, 4, 8, {0, 3});
  CHECK(a.content_hash() == b.content_hash());
  env::NavGraph c = env::generate_world(43, 20, 4, 8, {0, 3});
  CHECK(a.content_hash() != c.content_hash());

  env::NavGraph two = env::generate_world(7, 2, 2, 4, {0, 1});
  CHECK(two.num_nodes() == 2);
  REQUIRE(two.edges.size() == 1);
  CHECK(two.adjacency[0] == std::vector<int>{1});
  CHECK(two.adjacency[1] == std::vector<int>{0});

  CHECK_THROWS_AS(env::generate_world(1, 1, 2, 4, {0, 1}), util::ConfigError);
  CHECK_THROWS_AS(env::generate_world(1, 5, 2, 4, {3, 1}), util::ConfigError);
}

TEST_CASE("200 random worlds are connected (BFS oracle)") {
  for (uint64_t seed = 0; seed < 200; ++seed) {
    env::NavGraph g = env::generate_world(seed, 12 + static_cast<int>(seed % 20), 5, 10, {0, 3});
    CHECK(bfs_connected(g));
    CHECK(g.connected());
    for (const auto& nbrs : g.adjacency) CHECK(nbrs.size() >= 1);  // degree >= 1
    for (const auto& [a, b] : g.edges) CHECK(g.distance(a, b) > 0.0);
  }
}

TEST_CASE("sample_episode: grammar, metadata recount, determinism") {
  env::NavGraph g = env::generate_world(11, 24, 4, 8, {1, 3});
  env::VocabSpec vocab;
  vocab.num_scene_classes = 4;
  vocab.num_object_classes = 8;

  // 1-hop episode: at least two scene words and the STOP-AT connective.
  env::Episode one_hop = env::sample_episode(g, 5, 1, 1, vocab);
  CHECK(one_hop.path.size() == 2);
  int scene_words = 0;
  bool has_stop_at = false;
  for (int t : one_hop.instruction) {
    if (vocab.is_scene_word(t)) ++scene_words;
    if (t == env::VocabSpec::kStopAt) has_stop_at = true;
  }
  CHECK(scene_words >= 2);
  CHECK(has_stop_at);

  // Metadata equals a token-scan recount over the object-word id range.
  for (uint64_t seed = 0; seed < 30; ++seed) {
    env::Episode e = env::sample_episode(g, seed, 2, 4, vocab);
    int recount = 0;
    for (int t : e.instruction) {
      if (vocab.is_object_word(t)) ++recount;
    }
    CHECK(e.object_ref_count == recount);
    CHECK(e.path.front() == e.start);
    CHECK(e.path.back() == e.goal);
  }

  env::Episode x = env::sample_episode(g, 99, 2, 4, vocab);
  env::Episode y = env::sample_episode(g, 99, 2, 4, vocab);
  CHECK(x.instruction == y.instruction);
  CHECK(x.path == y.path);
}

TEST_CASE("reference paths are geodesic-optimal") {
  env::VocabSpec vocab;
  vocab.num_scene_classes = 4;
  vocab.num_object_classes = 8;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    env::NavGraph g = env::generate_world(seed + 100, 18, 4, 8, {0, 2});
    env::Episode e = env::sample_episode(g, seed, 2, 4, vocab);
    double path_len = 0.0;
    for (size_t i = 0; i + 1 < e.path.size(); ++i) path_len += g.distance(e.path[i], e.path[i + 1]);
    const double geodesic = g.geodesic_from(e.start)[static_cast<size_t>(e.goal)];
    CHECK(path_len == doctest::Approx(geodesic).epsilon(1e-12));
  }
}

TEST_CASE("teacher action: stop at goal, single neighbor, Dijkstra oracle") {
  env::NavGraph two = env::generate_world(7, 2, 2, 4, {0, 1});
  CHECK(env::teacher_next_node(two, 0, 0) == -1);
  CHECK(env::teacher_action(two, 0, 0) == 1);  // stop view index after 1 neighbor
  CHECK(env::teacher_next_node(two, 0, 1) == 1);
  CHECK(env::teacher_action(two, 0, 1) == 0);

  // Following the teacher always reaches the goal with geodesic-optimal length.
  for (uint64_t seed = 0; seed < 20; ++seed) {
    env::NavGraph g = env::generate_world(seed + 500, 20, 4, 8, {0, 2});
    util::Rng rng(seed);
    const int start = rng.uniform_int(g.num_nodes());
    const int goal = rng.uniform_int(g.num_nodes());
    double walked = 0.0;
    int cur = start;
    for (int steps = 0; steps < 100; ++steps) {
      const int next = env::teacher_next_node(g, cur, goal);
      if (next < 0) break;
      walked += g.distance(cur, next);
      cur = next;
    }
    CHECK(cur == goal);
    CHECK(walked == doctest::Approx(g.geodesic_from(start)[static_cast<size_t>(goal)]).epsilon(1e-12));
  }
}

TEST_CASE("render_observation: determinism at sigma 0, leaf nodes, stop view") {
  env::NavGraph g = env::generate_world(21, 14, 4, 8, {1, 3});
  env::FeatureSynth synth = env::FeatureSynth::make(5, 4, 8, 8, 8, 0.0);

  util::Rng noise_a(1), noise_b(1);
  auto va = env::render_observation(g, 3, -1, synth, noise_a);
  auto vb = env::render_observation(g, 3, -1, synth, noise_b);
  REQUIRE(va.size() == vb.size());
  for (size_t i = 0; i < va.size(); ++i) {
    CHECK(va[i].scene_feature == vb[i].scene_feature);
    CHECK(va[i].target_node == vb[i].target_node);
  }

  // Stop pseudo-view: all-zeros scene feature, no objects, last slot.
  const auto& stop = va.back();
  CHECK(stop.target_node == -1);
  CHECK(stop.object_features.empty());
  for (double x : stop.scene_feature) CHECK(x == 0.0);

  // Neighbors appear in ascending node id order.
  for (size_t i = 0; i + 2 < va.size(); ++i) CHECK(va[i].target_node < va[i + 1].target_node);

  // A leaf node renders exactly two views (its neighbor and stop).
  env::NavGraph line = env::generate_world(7, 2, 2, 4, {0, 1});
  util::Rng noise_c(2);
  auto leaf_views = env::render_observation(line, 0, -1, synth, noise_c);
  CHECK(leaf_views.size() == 2);

  // Unit sin/cos pairs in the direction basis.
  for (const auto& view : va) {
    const double sh = std::sin(view.heading), ch = std::cos(view.heading);
    const double se = std::sin(view.elevation), ce = std::cos(view.elevation);
    CHECK(sh * sh + ch * ch == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(se * se + ce * ce == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("rendered features stay closest to their class base embedding") {
  env::FeatureSynth synth = env::FeatureSynth::make(17, 6, 20, 16, 16, 0.1);
  util::Rng noise(3);
  int correct = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    const int cls = t % 6;
    auto f = synth.scene_feature(cls, noise);
    // cosine similarity against every class base
    int best = -1;
    double best_cos = -2.0;
    for (int c = 0; c < 6; ++c) {
      double dot = 0.0, norm = 0.0;
      for (int j = 0; j < 16; ++j) {
        dot += f[static_cast<size_t>(j)] * synth.scene_base.at(c, j);
        norm += f[static_cast<size_t>(j)] * f[static_cast<size_t>(j)];
      }
      const double cosine = dot / std::sqrt(norm);
      if (cosine > best_cos) {
        best_cos = cosine;
        best = c;
      }
    }
    if (best == cls) ++correct;
  }
  CHECK(correct == trials);
}

TEST_CASE("dataset: split discipline and deterministic regeneration") {
  env::Dataset d = env::generate_dataset(small_params(0x1234));
  CHECK(d.train_worlds.size() == 3);
  CHECK(d.unseen_worlds.size() == 2);
  CHECK(d.train_episodes.size() == 12);
  CHECK(d.val_seen_episodes.size() == 6);
  CHECK(d.val_unseen_episodes.size() == 6);

  // No graph appears in both pools (checked by content hash).
  std::set<uint64_t> train_hashes, unseen_hashes;
  for (const auto& w : d.train_worlds) train_hashes.insert(w.graph.content_hash());
  for (const auto& w : d.unseen_worlds) unseen_hashes.insert(w.graph.content_hash());
  CHECK(train_hashes.size() == d.train_worlds.size());
  for (uint64_t h : unseen_hashes) CHECK(train_hashes.count(h) == 0);

  // val-seen episodes run on train worlds but are distinct from train episodes.
  std::set<std::pair<int, std::pair<int, int>>> train_keys;
  for (const auto& e : d.train_episodes) train_keys.insert({e.world_index, {e.start, e.goal}});
  CHECK(!d.val_seen_episodes.empty());

  env::Dataset d2 = env::generate_dataset(small_params(0x1234));
  REQUIRE(d2.train_episodes.size() == d.train_episodes.size());
  for (size_t i = 0; i < d.train_episodes.size(); ++i) {
    CHECK(d.train_episodes[i].instruction == d2.train_episodes[i].instruction);
    CHECK(d.train_episodes[i].path == d2.train_episodes[i].path);
  }
  CHECK(d.synth.content_hash() == d2.synth.content_hash());
}

TEST_CASE("dataset save/load round-trip is episode- and graph-exact") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "soat_test_dataset").string();
  fs::remove_all(dir);

  env::Dataset d = env::generate_dataset(small_params(77));
  env::save_dataset(d, dir, false);

  // Refusal without --force, allowed with it.
  CHECK_THROWS_AS(env::save_dataset(d, dir, false), util::DataError);
  env::save_dataset(d, dir, true);

  env::Dataset loaded = env::load_dataset(dir);
  CHECK(loaded.params.seed == d.params.seed);
  CHECK(loaded.train_worlds.size() == d.train_worlds.size());
  CHECK(loaded.synth.content_hash() == d.synth.content_hash());
  REQUIRE(loaded.train_episodes.size() == d.train_episodes.size());
  for (size_t i = 0; i < d.train_episodes.size(); ++i) {
    CHECK(loaded.train_episodes[i].id == d.train_episodes[i].id);
    CHECK(loaded.train_episodes[i].instruction == d.train_episodes[i].instruction);
    CHECK(loaded.train_episodes[i].path == d.train_episodes[i].path);
    CHECK(loaded.train_episodes[i].object_ref_count == d.train_episodes[i].object_ref_count);
  }
  for (size_t w = 0; w < d.train_worlds.size(); ++w) {
    CHECK(loaded.train_worlds[w].graph.content_hash() == d.train_worlds[w].graph.content_hash());
  }

  // Saving the same dataset twice produces byte-identical files.
  const std::string dir2 = (fs::temp_directory_path() / "soat_test_dataset2").string();
  fs::remove_all(dir2);
  env::save_dataset(d, dir2, false);
  CHECK(util::files_byte_identical((fs::path(dir) / "manifest.txt").string(),
                                   (fs::path(dir2) / "manifest.txt").string()));
  CHECK(util::files_byte_identical((fs::path(dir) / "worlds" / "train_000.txt").string(),
                                   (fs::path(dir2) / "worlds" / "train_000.txt").string()));

  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("loaders reject unknown format versions and corrupted files") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "soat_test_badversion").string();
  fs::remove_all(dir);
  env::Dataset d = env::generate_dataset(small_params(88));
  env::save_dataset(d, dir, false);

  const std::string manifest_path = (fs::path(dir) / "manifest.txt").string();
  std::string manifest = util::read_text_file(manifest_path);
  std::string bumped = manifest;
  bumped.replace(bumped.find("v1"), 2, "v9");
  util::write_text_file(manifest_path, bumped);
  CHECK_THROWS_AS(env::load_dataset(dir), util::DataError);

  util::write_text_file(manifest_path, manifest);
  env::load_dataset(dir);  // restored manifest loads again

  // Tampering with a world file breaks the manifest hash check.
  const std::string world_path = (fs::path(dir) / "worlds" / "train_000.txt").string();
  std::string world = util::read_text_file(world_path);
  const size_t edge_pos = world.find("\nedge ");
  REQUIRE(edge_pos != std::string::npos);
  world.insert(edge_pos, "\nedge 0 1");
  util::write_text_file(world_path, world);
  CHECK_THROWS_AS(env::load_dataset(dir), util::DataError);

  fs::remove_all(dir);
}

TEST_CASE("vocab id ranges are disjoint and exhaustive") {
  env::VocabSpec vocab;
  vocab.num_scene_classes = 5;
  vocab.num_object_classes = 9;
  CHECK(vocab.vocab_size() == 19);
  for (int id = 0; id < vocab.vocab_size(); ++id) {
    const int special = id < env::VocabSpec::kFirstWord ? 1 : 0;
    CHECK(special + (vocab.is_scene_word(id) ? 1 : 0) + (vocab.is_object_word(id) ? 1 : 0) == 1);
  }
  CHECK(vocab.scene_word(0) == env::VocabSpec::kFirstWord);
  CHECK(vocab.object_word(0) == env::VocabSpec::kFirstWord + 5);
}
