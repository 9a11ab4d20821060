#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "soat/nn/tensor.hpp"
#include "soat/util/kvconfig.hpp"
#include "soat/util/rng.hpp"

namespace soat::env {

// ---------------------------------------------------------------------------
// World geometry
// ---------------------------------------------------------------------------

struct GraphObject {
  int object_class = 0;
  double size = 1.0;
};

struct GraphNode {
  double x = 0.0, y = 0.0, z = 0.0;
  int scene_class = 0;
  std::vector<GraphObject> objects;
};

struct NavGraph {
  std::vector<GraphNode> nodes;
  std::vector<std::pair<int, int>> edges;     // a < b, unique
  std::vector<std::vector<int>> adjacency;    // sorted neighbor ids

  int num_nodes() const { return static_cast<int>(nodes.size()); }
  void rebuild_adjacency();
  double distance(int a, int b) const;        // straight-line between node positions
  bool connected() const;
  uint64_t content_hash() const;

  // Dijkstra over Euclidean edge lengths.
  std::vector<double> geodesic_from(int source) const;
};

NavGraph generate_world(uint64_t seed, int num_nodes, int num_scene_classes,
                        int num_object_classes, std::pair<int, int> objects_per_node_range);

// ---------------------------------------------------------------------------
// Synthetic instruction language and visual features
// ---------------------------------------------------------------------------

// Token id layout: specials, connectives, then one word per scene class and
// one per object class. Fixed for a generated dataset.
struct VocabSpec {
  int num_scene_classes = 0;
  int num_object_classes = 0;

  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kSep = 2;
  static constexpr int kThen = 3;
  static constexpr int kStopAt = 4;
  static constexpr int kFirstWord = 5;

  int scene_word(int scene_class) const { return kFirstWord + scene_class; }
  int object_word(int object_class) const { return kFirstWord + num_scene_classes + object_class; }
  bool is_scene_word(int id) const {
    return id >= kFirstWord && id < kFirstWord + num_scene_classes;
  }
  bool is_object_word(int id) const {
    return id >= kFirstWord + num_scene_classes && id < vocab_size();
  }
  int vocab_size() const { return kFirstWord + num_scene_classes + num_object_classes; }
};

// Planted class embeddings standing in for the scene-classification and
// object-detection encoders: unit-norm base vector per class, plus Gaussian
// observation noise at render time.
struct FeatureSynth {
  int dim_scene = 32;
  int dim_object = 32;
  double noise_sigma = 0.1;
  uint64_t seed = 0;
  nn::Tensor64 scene_base;   // num_scene_classes x dim_scene
  nn::Tensor64 object_base;  // num_object_classes x dim_object

  static FeatureSynth make(uint64_t seed, int num_scene_classes, int num_object_classes,
                           int dim_scene, int dim_object, double noise_sigma);

  std::vector<double> scene_feature(int scene_class, util::Rng& noise) const;
  std::vector<double> object_feature(int object_class, double size, util::Rng& noise) const;
  uint64_t content_hash() const;
};

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

struct Episode {
  uint64_t id = 0;
  int world_index = 0;        // index into the owning split's world list
  int start = 0;
  int goal = 0;
  std::vector<int> path;      // reference walk, start .. goal inclusive
  std::vector<int> instruction;  // word/connective token ids, no CLS/SEP framing
  int object_ref_count = 0;
};

// Grammar knobs for instruction synthesis.
struct InstructionStyle {
  double object_word_probability = 0.6;
};

Episode sample_episode(const NavGraph& graph, uint64_t seed, int min_path_len, int max_path_len,
                       const VocabSpec& vocab, const InstructionStyle& style = {});

// Next node on a geodesic-shortest path to goal (ties toward the lowest node
// id), or -1 when current == goal (stop).
int teacher_next_node(const NavGraph& graph, int current, int goal);

// Same decision expressed as an index into render_observation's view list
// (neighbors in ascending id order, stop pseudo-view last).
int teacher_action(const NavGraph& graph, int current, int goal);

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------

struct CandidateView {
  int view_id = -1;
  int target_node = -1;   // -1 for the stop pseudo-view
  double heading = 0.0;   // radians; egocentric when came_from is given
  double elevation = 0.0;
  std::vector<double> scene_feature;                // all-zeros for stop
  std::vector<std::vector<double>> object_features; // empty for stop
};

// One view per neighbor (ascending node id) plus the trailing stop
// pseudo-view. Headings are rotated into the frame of arrival when
// came_from >= 0.
std::vector<CandidateView> render_observation(const NavGraph& graph, int node, int came_from,
                                              const FeatureSynth& synth, util::Rng& noise);

// ---------------------------------------------------------------------------
// Datasets: worlds plus episode splits, with on-disk format
// ---------------------------------------------------------------------------

inline constexpr const char* kSplitTrain = "train";
inline constexpr const char* kSplitValSeen = "val-seen-layout";
inline constexpr const char* kSplitValUnseen = "val-unseen-layout";

struct DatasetParams {
  uint64_t seed = 1;
  int train_worlds = 60;
  int unseen_worlds = 12;
  int nodes_min = 30;
  int nodes_max = 60;
  int scene_classes = 6;
  int object_classes = 24;
  int objects_per_node_min = 0;
  int objects_per_node_max = 4;
  int min_path_len = 2;
  int max_path_len = 4;
  int episodes_per_train_world = 30;
  int episodes_val_seen_per_world = 2;
  int episodes_per_unseen_world = 10;
  int feature_dim_scene = 32;
  int feature_dim_object = 32;
  double noise_sigma = 0.1;
  double object_word_probability = 0.6;

  void apply_kv(util::KvConfig& kv);
  util::KvConfig to_kv() const;
};

struct World {
  int id = 0;
  std::string split;  // "train" or "unseen" world pool
  NavGraph graph;
};

struct Dataset {
  DatasetParams params;
  VocabSpec vocab;
  FeatureSynth synth;
  std::vector<World> train_worlds;
  std::vector<World> unseen_worlds;
  std::vector<Episode> train_episodes;      // on train worlds
  std::vector<Episode> val_seen_episodes;   // on train worlds, fresh seeds
  std::vector<Episode> val_unseen_episodes; // on unseen worlds

  const std::vector<Episode>& split(const std::string& name) const;
  const World& world_for(const std::string& split_name, const Episode& e) const;
};

Dataset generate_dataset(const DatasetParams& params);

void save_dataset(const Dataset& dataset, const std::string& dir, bool force);
Dataset load_dataset(const std::string& dir);

}  // namespace soat::env
