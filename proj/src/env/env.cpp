#include "soat/env/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <queue>

#include "soat/util/errors.hpp"
#include "soat/util/text.hpp"

namespace soat::env {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

uint64_t fnv1a(uint64_t h, uint64_t x) {
  for (int i = 0; i < 8; ++i) {
    h ^= (x >> (8 * i)) & 0xffULL;
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t hash_double(uint64_t h, double v) {
  uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, sizeof(bits));
  return fnv1a(h, bits);
}

}  // namespace

void NavGraph::rebuild_adjacency() {
  adjacency.assign(nodes.size(), {});
  for (const auto& [a, b] : edges) {
    adjacency[static_cast<size_t>(a)].push_back(b);
    adjacency[static_cast<size_t>(b)].push_back(a);
  }
  for (auto& nbrs : adjacency) std::sort(nbrs.begin(), nbrs.end());
}

double NavGraph::distance(int a, int b) const {
  const GraphNode& na = nodes[static_cast<size_t>(a)];
  const GraphNode& nb = nodes[static_cast<size_t>(b)];
  const double dx = na.x - nb.x, dy = na.y - nb.y, dz = na.z - nb.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

bool NavGraph::connected() const {
  if (nodes.empty()) return false;
  std::vector<uint8_t> seen(nodes.size(), 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  int count = 1;
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int v : adjacency[static_cast<size_t>(u)]) {
      if (!seen[static_cast<size_t>(v)]) {
        seen[static_cast<size_t>(v)] = 1;
        ++count;
        q.push(v);
      }
    }
  }
  return count == num_nodes();
}

uint64_t NavGraph::content_hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const GraphNode& n : nodes) {
    h = hash_double(h, n.x);
    h = hash_double(h, n.y);
    h = hash_double(h, n.z);
    h = fnv1a(h, static_cast<uint64_t>(n.scene_class));
    for (const GraphObject& o : n.objects) {
      h = fnv1a(h, static_cast<uint64_t>(o.object_class));
      h = hash_double(h, o.size);
    }
  }
  for (const auto& [a, b] : edges) {
    h = fnv1a(h, static_cast<uint64_t>(a));
    h = fnv1a(h, static_cast<uint64_t>(b));
  }
  return h;
}

std::vector<double> NavGraph::geodesic_from(int source) const {
  std::vector<double> dist(nodes.size(), kInf);
  dist[static_cast<size_t>(source)] = 0.0;
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  pq.push({0.0, source});
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[static_cast<size_t>(u)]) continue;
    for (int v : adjacency[static_cast<size_t>(u)]) {
      const double nd = d + distance(u, v);
      if (nd < dist[static_cast<size_t>(v)]) {
        dist[static_cast<size_t>(v)] = nd;
        pq.push({nd, v});
      }
    }
  }
  return dist;
}

NavGraph generate_world(uint64_t seed, int num_nodes, int num_scene_classes,
                        int num_object_classes, std::pair<int, int> objects_per_node_range) {
  if (num_nodes < 2) throw util::ConfigError("generate_world: need at least 2 nodes");
  if (num_scene_classes < 1 || num_object_classes < 1) {
    throw util::ConfigError("generate_world: class counts must be positive");
  }
  auto [obj_min, obj_max] = objects_per_node_range;
  if (obj_min < 0 || obj_max < obj_min) {
    throw util::ConfigError("generate_world: bad objects-per-node range");
  }

  util::Rng rng(seed);
  NavGraph g;
  g.nodes.resize(static_cast<size_t>(num_nodes));

  // Random geometric graph: density tuned for mean degree ~4 with a 4.2 m
  // connection radius, which makes typical edges 2-4 m long.
  const double radius = 4.2;
  const double side = std::sqrt(num_nodes * 3.14159265358979 * radius * radius / 4.0);
  for (GraphNode& n : g.nodes) {
    n.x = rng.uniform(0.0, side);
    n.y = rng.uniform(0.0, side);
    n.z = rng.uniform(0.0, 1.0);
    n.scene_class = rng.uniform_int(num_scene_classes);
    const int num_objects = obj_min + rng.uniform_int(obj_max - obj_min + 1);
    for (int k = 0; k < num_objects; ++k) {
      GraphObject o;
      o.object_class = rng.uniform_int(num_object_classes);
      o.size = rng.uniform(0.8, 1.2);
      n.objects.push_back(o);
    }
  }

  for (int a = 0; a < num_nodes; ++a) {
    for (int b = a + 1; b < num_nodes; ++b) {
      const GraphNode& na = g.nodes[static_cast<size_t>(a)];
      const GraphNode& nb = g.nodes[static_cast<size_t>(b)];
      const double dx = na.x - nb.x, dy = na.y - nb.y, dz = na.z - nb.z;
      if (std::sqrt(dx * dx + dy * dy + dz * dz) <= radius) g.edges.push_back({a, b});
    }
  }

  // Join components with their mutually closest node pairs until connected.
  std::vector<int> comp(static_cast<size_t>(num_nodes));
  auto recompute_components = [&]() {
    std::fill(comp.begin(), comp.end(), -1);
    g.rebuild_adjacency();
    int c = 0;
    for (int s = 0; s < num_nodes; ++s) {
      if (comp[static_cast<size_t>(s)] >= 0) continue;
      std::queue<int> q;
      q.push(s);
      comp[static_cast<size_t>(s)] = c;
      while (!q.empty()) {
        int u = q.front();
        q.pop();
        for (int v : g.adjacency[static_cast<size_t>(u)]) {
          if (comp[static_cast<size_t>(v)] < 0) {
            comp[static_cast<size_t>(v)] = c;
            q.push(v);
          }
        }
      }
      ++c;
    }
    return c;
  };
  while (recompute_components() > 1) {
    double best = kInf;
    std::pair<int, int> best_pair{-1, -1};
    for (int a = 0; a < num_nodes; ++a) {
      for (int b = a + 1; b < num_nodes; ++b) {
        if (comp[static_cast<size_t>(a)] == comp[static_cast<size_t>(b)]) continue;
        const double d = g.distance(a, b);
        if (d < best) {
          best = d;
          best_pair = {a, b};
        }
      }
    }
    g.edges.push_back(best_pair);
  }
  g.rebuild_adjacency();
  std::sort(g.edges.begin(), g.edges.end());
  return g;
}

// ---------------------------------------------------------------------------

FeatureSynth FeatureSynth::make(uint64_t seed, int num_scene_classes, int num_object_classes,
                                int dim_scene, int dim_object, double noise_sigma) {
  if (noise_sigma < 0.0) throw util::ConfigError("FeatureSynth: noise sigma must be >= 0");
  FeatureSynth s;
  s.dim_scene = dim_scene;
  s.dim_object = dim_object;
  s.noise_sigma = noise_sigma;
  s.seed = seed;
  util::Rng rng(util::derive_seed(seed, 0xfea7));
  auto unit_rows = [&rng](int rows, int cols) {
    nn::Tensor64 t = nn::Tensor64::randn(rows, cols, rng, 1.0);
    for (int i = 0; i < rows; ++i) {
      double norm = 0.0;
      for (int j = 0; j < cols; ++j) norm += t.at(i, j) * t.at(i, j);
      norm = std::sqrt(norm);
      for (int j = 0; j < cols; ++j) t.at(i, j) /= norm;
    }
    return t;
  };
  s.scene_base = unit_rows(num_scene_classes, dim_scene);
  s.object_base = unit_rows(num_object_classes, dim_object);
  return s;
}

std::vector<double> FeatureSynth::scene_feature(int scene_class, util::Rng& noise) const {
  std::vector<double> out(static_cast<size_t>(dim_scene));
  for (int j = 0; j < dim_scene; ++j) {
    out[static_cast<size_t>(j)] = scene_base.at(scene_class, j) + noise_sigma * noise.normal();
  }
  return out;
}

std::vector<double> FeatureSynth::object_feature(int object_class, double size,
                                                 util::Rng& noise) const {
  std::vector<double> out(static_cast<size_t>(dim_object));
  for (int j = 0; j < dim_object; ++j) {
    out[static_cast<size_t>(j)] = size * object_base.at(object_class, j) + noise_sigma * noise.normal();
  }
  return out;
}

uint64_t FeatureSynth::content_hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv1a(h, seed);
  for (double v : scene_base.data) h = hash_double(h, v);
  for (double v : object_base.data) h = hash_double(h, v);
  h = hash_double(h, noise_sigma);
  return h;
}

// ---------------------------------------------------------------------------

int teacher_next_node(const NavGraph& graph, int current, int goal) {
  if (current == goal) return -1;
  const std::vector<double> dist = graph.geodesic_from(goal);
  if (!std::isfinite(dist[static_cast<size_t>(current)])) {
    throw util::DataError("teacher: goal unreachable from node " + std::to_string(current));
  }
  int best = -1;
  double best_total = kInf;
  for (int nbr : graph.adjacency[static_cast<size_t>(current)]) {
    const double total = graph.distance(current, nbr) + dist[static_cast<size_t>(nbr)];
    // Strict < keeps the lowest node id on ties (neighbors are sorted).
    if (total < best_total - 1e-12) {
      best_total = total;
      best = nbr;
    }
  }
  return best;
}

int teacher_action(const NavGraph& graph, int current, int goal) {
  const int next = teacher_next_node(graph, current, goal);
  const auto& nbrs = graph.adjacency[static_cast<size_t>(current)];
  if (next < 0) return static_cast<int>(nbrs.size());  // stop pseudo-view index
  auto it = std::lower_bound(nbrs.begin(), nbrs.end(), next);
  return static_cast<int>(it - nbrs.begin());
}

Episode sample_episode(const NavGraph& graph, uint64_t seed, int min_path_len, int max_path_len,
                       const VocabSpec& vocab, const InstructionStyle& style) {
  if (min_path_len < 1 || max_path_len < min_path_len) {
    throw util::ConfigError("sample_episode: bad path length range");
  }
  util::Rng rng(seed);

  // Pick a start/goal pair at the requested hop distance.
  int start = -1, goal = -1;
  for (int attempt = 0; attempt < 64 && goal < 0; ++attempt) {
    const int hops = min_path_len + rng.uniform_int(max_path_len - min_path_len + 1);
    const int s = rng.uniform_int(graph.num_nodes());
    std::vector<int> hop_dist(static_cast<size_t>(graph.num_nodes()), -1);
    std::queue<int> q;
    q.push(s);
    hop_dist[static_cast<size_t>(s)] = 0;
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (int v : graph.adjacency[static_cast<size_t>(u)]) {
        if (hop_dist[static_cast<size_t>(v)] < 0) {
          hop_dist[static_cast<size_t>(v)] = hop_dist[static_cast<size_t>(u)] + 1;
          q.push(v);
        }
      }
    }
    std::vector<int> candidates;
    for (int v = 0; v < graph.num_nodes(); ++v) {
      if (hop_dist[static_cast<size_t>(v)] == hops) candidates.push_back(v);
    }
    if (!candidates.empty()) {
      start = s;
      goal = candidates[static_cast<size_t>(rng.uniform_int(static_cast<int>(candidates.size())))];
    }
  }
  if (goal < 0) {
    throw util::DataError("sample_episode: no node pair at the requested hop distance");
  }

  // Reference path = the teacher's own walk, so a teacher rollout reproduces
  // it node for node.
  Episode e;
  e.start = start;
  e.goal = goal;
  e.path.push_back(start);
  int cur = start;
  while (cur != goal) {
    cur = teacher_next_node(graph, cur, goal);
    e.path.push_back(cur);
  }

  // Instruction: scene word plus a random subset of object words per visited
  // node, THEN-separated; goal described after STOP-AT.
  auto emit_node = [&](int node) {
    const GraphNode& n = graph.nodes[static_cast<size_t>(node)];
    e.instruction.push_back(vocab.scene_word(n.scene_class));
    for (const GraphObject& o : n.objects) {
      if (rng.bernoulli(style.object_word_probability)) {
        e.instruction.push_back(vocab.object_word(o.object_class));
        ++e.object_ref_count;
      }
    }
  };
  for (size_t i = 0; i + 1 < e.path.size(); ++i) {
    if (i > 0) e.instruction.push_back(VocabSpec::kThen);
    emit_node(e.path[i]);
  }
  e.instruction.push_back(VocabSpec::kStopAt);
  emit_node(e.path.back());
  return e;
}

std::vector<CandidateView> render_observation(const NavGraph& graph, int node, int came_from,
                                              const FeatureSynth& synth, util::Rng& noise) {
  const GraphNode& here = graph.nodes[static_cast<size_t>(node)];
  double frame_heading = 0.0;
  if (came_from >= 0) {
    const GraphNode& prev = graph.nodes[static_cast<size_t>(came_from)];
    frame_heading = std::atan2(here.y - prev.y, here.x - prev.x);
  }

  std::vector<CandidateView> views;
  const auto& nbrs = graph.adjacency[static_cast<size_t>(node)];
  views.reserve(nbrs.size() + 1);
  for (size_t i = 0; i < nbrs.size(); ++i) {
    const GraphNode& target = graph.nodes[static_cast<size_t>(nbrs[i])];
    CandidateView v;
    v.view_id = static_cast<int>(i);
    v.target_node = nbrs[i];
    const double dx = target.x - here.x;
    const double dy = target.y - here.y;
    const double dz = target.z - here.z;
    double heading = std::atan2(dy, dx) - frame_heading;
    constexpr double pi = 3.14159265358979323846;
    while (heading > pi) heading -= 2.0 * pi;
    while (heading < -pi) heading += 2.0 * pi;
    v.heading = heading;
    v.elevation = std::atan2(dz, std::sqrt(dx * dx + dy * dy));
    v.scene_feature = synth.scene_feature(target.scene_class, noise);
    for (const GraphObject& o : target.objects) {
      v.object_features.push_back(synth.object_feature(o.object_class, o.size, noise));
    }
    views.push_back(std::move(v));
  }

  CandidateView stop;
  stop.view_id = static_cast<int>(nbrs.size());
  stop.target_node = -1;
  stop.scene_feature.assign(static_cast<size_t>(synth.dim_scene), 0.0);  // exact zeros, no noise
  views.push_back(std::move(stop));
  return views;
}

// ---------------------------------------------------------------------------

void DatasetParams::apply_kv(util::KvConfig& kv) {
  seed = kv.get_u64("data.seed", seed);
  train_worlds = kv.get_int("data.train_worlds", train_worlds);
  unseen_worlds = kv.get_int("data.unseen_worlds", unseen_worlds);
  nodes_min = kv.get_int("data.nodes_min", nodes_min);
  nodes_max = kv.get_int("data.nodes_max", nodes_max);
  scene_classes = kv.get_int("data.scene_classes", scene_classes);
  object_classes = kv.get_int("data.object_classes", object_classes);
  objects_per_node_min = kv.get_int("data.objects_per_node_min", objects_per_node_min);
  objects_per_node_max = kv.get_int("data.objects_per_node_max", objects_per_node_max);
  min_path_len = kv.get_int("data.min_path_len", min_path_len);
  max_path_len = kv.get_int("data.max_path_len", max_path_len);
  episodes_per_train_world = kv.get_int("data.episodes_per_train_world", episodes_per_train_world);
  episodes_val_seen_per_world =
      kv.get_int("data.episodes_val_seen_per_world", episodes_val_seen_per_world);
  episodes_per_unseen_world = kv.get_int("data.episodes_per_unseen_world", episodes_per_unseen_world);
  feature_dim_scene = kv.get_int("data.feature_dim_scene", feature_dim_scene);
  feature_dim_object = kv.get_int("data.feature_dim_object", feature_dim_object);
  noise_sigma = kv.get_double("data.noise_sigma", noise_sigma);
  object_word_probability = kv.get_double("data.object_word_probability", object_word_probability);
}

util::KvConfig DatasetParams::to_kv() const {
  util::KvConfig kv;
  kv.set("data.seed", std::to_string(seed));
  kv.set("data.train_worlds", std::to_string(train_worlds));
  kv.set("data.unseen_worlds", std::to_string(unseen_worlds));
  kv.set("data.nodes_min", std::to_string(nodes_min));
  kv.set("data.nodes_max", std::to_string(nodes_max));
  kv.set("data.scene_classes", std::to_string(scene_classes));
  kv.set("data.object_classes", std::to_string(object_classes));
  kv.set("data.objects_per_node_min", std::to_string(objects_per_node_min));
  kv.set("data.objects_per_node_max", std::to_string(objects_per_node_max));
  kv.set("data.min_path_len", std::to_string(min_path_len));
  kv.set("data.max_path_len", std::to_string(max_path_len));
  kv.set("data.episodes_per_train_world", std::to_string(episodes_per_train_world));
  kv.set("data.episodes_val_seen_per_world", std::to_string(episodes_val_seen_per_world));
  kv.set("data.episodes_per_unseen_world", std::to_string(episodes_per_unseen_world));
  kv.set("data.feature_dim_scene", std::to_string(feature_dim_scene));
  kv.set("data.feature_dim_object", std::to_string(feature_dim_object));
  kv.set("data.noise_sigma", util::format_double(noise_sigma));
  kv.set("data.object_word_probability", util::format_double(object_word_probability));
  return kv;
}

const std::vector<Episode>& Dataset::split(const std::string& name) const {
  if (name == kSplitTrain) return train_episodes;
  if (name == kSplitValSeen) return val_seen_episodes;
  if (name == kSplitValUnseen) return val_unseen_episodes;
  throw util::ConfigError("unknown split: " + name);
}

const World& Dataset::world_for(const std::string& split_name, const Episode& e) const {
  const auto& pool = (split_name == kSplitValUnseen) ? unseen_worlds : train_worlds;
  if (e.world_index < 0 || e.world_index >= static_cast<int>(pool.size())) {
    throw util::DataError("episode references world " + std::to_string(e.world_index) +
                          " outside its split's world pool");
  }
  return pool[static_cast<size_t>(e.world_index)];
}

Dataset generate_dataset(const DatasetParams& p) {
  if (p.train_worlds < 1 || p.unseen_worlds < 1) {
    throw util::ConfigError("generate_dataset: need at least one world per pool");
  }
  Dataset d;
  d.params = p;
  d.vocab.num_scene_classes = p.scene_classes;
  d.vocab.num_object_classes = p.object_classes;
  d.synth = FeatureSynth::make(util::derive_seed(p.seed, 0x5f), p.scene_classes, p.object_classes,
                               p.feature_dim_scene, p.feature_dim_object, p.noise_sigma);
  InstructionStyle style{p.object_word_probability};

  // Worlds are partitioned by seed tag; unseen worlds share the feature
  // synthesizer but never a graph.
  auto make_world = [&](const char* pool, int index, uint64_t tag) {
    World w;
    w.id = index;
    w.split = pool;
    util::Rng size_rng(util::derive_seed(p.seed, tag, static_cast<uint64_t>(index), 0x51));
    const int nodes = p.nodes_min + size_rng.uniform_int(p.nodes_max - p.nodes_min + 1);
    w.graph = generate_world(util::derive_seed(p.seed, tag, static_cast<uint64_t>(index), 0x90),
                             nodes, p.scene_classes, p.object_classes,
                             {p.objects_per_node_min, p.objects_per_node_max});
    return w;
  };
  for (int i = 0; i < p.train_worlds; ++i) d.train_worlds.push_back(make_world("train", i, 0x7a11));
  for (int i = 0; i < p.unseen_worlds; ++i) d.unseen_worlds.push_back(make_world("unseen", i, 0xdead));

  uint64_t next_id = 100000;
  auto sample_split = [&](std::vector<Episode>& out, const std::vector<World>& worlds,
                          int per_world, uint64_t tag) {
    for (const World& w : worlds) {
      for (int k = 0; k < per_world; ++k) {
        Episode e = sample_episode(
            w.graph, util::derive_seed(p.seed, tag, static_cast<uint64_t>(w.id), static_cast<uint64_t>(k)),
            p.min_path_len, p.max_path_len, d.vocab, style);
        e.world_index = w.id;
        e.id = next_id++;
        out.push_back(std::move(e));
      }
    }
  };
  sample_split(d.train_episodes, d.train_worlds, p.episodes_per_train_world, 0x7e50);
  next_id = 200000;
  sample_split(d.val_seen_episodes, d.train_worlds, p.episodes_val_seen_per_world, 0xbee5);
  next_id = 300000;
  sample_split(d.val_unseen_episodes, d.unseen_worlds, p.episodes_per_unseen_world, 0xcafe);
  return d;
}

}  // namespace soat::env
