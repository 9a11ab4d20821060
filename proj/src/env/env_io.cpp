#include <algorithm>
#include <filesystem>
#include <map>
#include <sstream>

#include "soat/env/env.hpp"
#include "soat/util/errors.hpp"
#include "soat/util/text.hpp"

namespace soat::env {

namespace fs = std::filesystem;
using util::DataError;
using util::format_double;

namespace {

constexpr const char* kWorldMagic = "soat-world";
constexpr const char* kManifestMagic = "soat-manifest";
constexpr const char* kFormatVersion = "v1";

std::string world_file_name(const std::string& pool, int id) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03d.txt", pool.c_str(), id);
  return buf;
}

std::string serialize_world(const World& w, const std::vector<const Episode*>& episodes,
                            const std::vector<std::string>& episode_splits) {
  std::ostringstream out;
  out << kWorldMagic << " " << kFormatVersion << "\n";
  out << "world " << w.id << " pool " << w.split << " nodes " << w.graph.num_nodes() << " edges "
      << w.graph.edges.size() << " episodes " << episodes.size() << "\n";
  for (int i = 0; i < w.graph.num_nodes(); ++i) {
    const GraphNode& n = w.graph.nodes[static_cast<size_t>(i)];
    out << "node " << i << " " << format_double(n.x) << " " << format_double(n.y) << " "
        << format_double(n.z) << " " << n.scene_class << " " << n.objects.size();
    for (const GraphObject& o : n.objects) {
      out << " " << o.object_class << " " << format_double(o.size);
    }
    out << "\n";
  }
  for (const auto& [a, b] : w.graph.edges) out << "edge " << a << " " << b << "\n";
  for (size_t i = 0; i < episodes.size(); ++i) {
    const Episode& e = *episodes[i];
    out << "episode " << episode_splits[i] << " " << e.id << " " << e.world_index << " " << e.start
        << " " << e.goal << " " << e.path.size();
    for (int n : e.path) out << " " << n;
    out << " " << e.instruction.size();
    for (int t : e.instruction) out << " " << t;
    out << " " << e.object_ref_count << "\n";
  }
  out << "end\n";
  return out.str();
}

struct ParsedWorld {
  World world;
  std::vector<std::pair<std::string, Episode>> episodes;  // split name, episode
};

ParsedWorld parse_world(const std::string& text, const std::string& path) {
  std::istringstream in(text);
  std::string line;
  auto fail = [&](const std::string& why) -> DataError {
    return DataError("world file " + path + ": " + why);
  };
  if (!std::getline(in, line)) throw fail("empty file");
  {
    auto toks = util::split_ws(line);
    if (toks.size() != 2 || toks[0] != kWorldMagic) throw fail("not a world file");
    if (toks[1] != kFormatVersion) throw fail("unsupported format version " + toks[1]);
  }
  ParsedWorld pw;
  bool saw_end = false;
  while (std::getline(in, line)) {
    auto toks = util::split_ws(line);
    if (toks.empty()) continue;
    const std::string& kind = toks[0];
    size_t i = 1;
    auto next_int = [&]() {
      if (i >= toks.size()) throw fail("truncated " + kind + " record");
      return std::stoll(toks[i++]);
    };
    auto next_double = [&]() {
      if (i >= toks.size()) throw fail("truncated " + kind + " record");
      return std::stod(toks[i++]);
    };
    if (kind == "world") {
      pw.world.id = static_cast<int>(next_int());
      if (toks[i++] != "pool") throw fail("bad world record");
      pw.world.split = toks[i++];
    } else if (kind == "node") {
      const int id = static_cast<int>(next_int());
      if (id != static_cast<int>(pw.world.graph.nodes.size())) throw fail("nodes out of order");
      GraphNode n;
      n.x = next_double();
      n.y = next_double();
      n.z = next_double();
      n.scene_class = static_cast<int>(next_int());
      const int nobj = static_cast<int>(next_int());
      for (int k = 0; k < nobj; ++k) {
        GraphObject o;
        o.object_class = static_cast<int>(next_int());
        o.size = next_double();
        n.objects.push_back(o);
      }
      pw.world.graph.nodes.push_back(std::move(n));
    } else if (kind == "edge") {
      const int a = static_cast<int>(next_int());
      const int b = static_cast<int>(next_int());
      pw.world.graph.edges.push_back({a, b});
    } else if (kind == "episode") {
      if (i >= toks.size()) throw fail("truncated episode record");
      const std::string split = toks[i++];
      Episode e;
      e.id = static_cast<uint64_t>(next_int());
      e.world_index = static_cast<int>(next_int());
      e.start = static_cast<int>(next_int());
      e.goal = static_cast<int>(next_int());
      const int plen = static_cast<int>(next_int());
      for (int k = 0; k < plen; ++k) e.path.push_back(static_cast<int>(next_int()));
      const int ilen = static_cast<int>(next_int());
      for (int k = 0; k < ilen; ++k) e.instruction.push_back(static_cast<int>(next_int()));
      e.object_ref_count = static_cast<int>(next_int());
      pw.episodes.push_back({split, std::move(e)});
    } else if (kind == "end") {
      saw_end = true;
    } else {
      throw fail("unknown record kind: " + kind);
    }
  }
  if (!saw_end) throw fail("missing end marker");
  pw.world.graph.rebuild_adjacency();
  return pw;
}

std::map<std::string, std::string> params_to_map(const DatasetParams& p) {
  std::map<std::string, std::string> m;
  m["seed"] = std::to_string(p.seed);
  m["train_worlds"] = std::to_string(p.train_worlds);
  m["unseen_worlds"] = std::to_string(p.unseen_worlds);
  m["nodes_min"] = std::to_string(p.nodes_min);
  m["nodes_max"] = std::to_string(p.nodes_max);
  m["scene_classes"] = std::to_string(p.scene_classes);
  m["object_classes"] = std::to_string(p.object_classes);
  m["objects_per_node_min"] = std::to_string(p.objects_per_node_min);
  m["objects_per_node_max"] = std::to_string(p.objects_per_node_max);
  m["min_path_len"] = std::to_string(p.min_path_len);
  m["max_path_len"] = std::to_string(p.max_path_len);
  m["episodes_per_train_world"] = std::to_string(p.episodes_per_train_world);
  m["episodes_val_seen_per_world"] = std::to_string(p.episodes_val_seen_per_world);
  m["episodes_per_unseen_world"] = std::to_string(p.episodes_per_unseen_world);
  m["feature_dim_scene"] = std::to_string(p.feature_dim_scene);
  m["feature_dim_object"] = std::to_string(p.feature_dim_object);
  m["noise_sigma"] = format_double(p.noise_sigma);
  m["object_word_probability"] = format_double(p.object_word_probability);
  return m;
}

DatasetParams params_from_map(const std::map<std::string, std::string>& m) {
  DatasetParams p;
  auto geti = [&](const char* k) { return std::stoi(m.at(k)); };
  p.seed = std::stoull(m.at("seed"));
  p.train_worlds = geti("train_worlds");
  p.unseen_worlds = geti("unseen_worlds");
  p.nodes_min = geti("nodes_min");
  p.nodes_max = geti("nodes_max");
  p.scene_classes = geti("scene_classes");
  p.object_classes = geti("object_classes");
  p.objects_per_node_min = geti("objects_per_node_min");
  p.objects_per_node_max = geti("objects_per_node_max");
  p.min_path_len = geti("min_path_len");
  p.max_path_len = geti("max_path_len");
  p.episodes_per_train_world = geti("episodes_per_train_world");
  p.episodes_val_seen_per_world = geti("episodes_val_seen_per_world");
  p.episodes_per_unseen_world = geti("episodes_per_unseen_world");
  p.feature_dim_scene = geti("feature_dim_scene");
  p.feature_dim_object = geti("feature_dim_object");
  p.noise_sigma = std::stod(m.at("noise_sigma"));
  p.object_word_probability = std::stod(m.at("object_word_probability"));
  return p;
}

}  // namespace

void save_dataset(const Dataset& d, const std::string& dir, bool force) {
  const fs::path root(dir);
  const fs::path manifest = root / "manifest.txt";
  if (fs::exists(manifest) && !force) {
    throw DataError("refusing to overwrite existing dataset at " + dir + " (use --force)");
  }
  fs::create_directories(root / "worlds");

  // Group episodes by owning world.
  auto collect = [&](const World& w, const std::vector<Episode>& eps, const char* split,
                     std::vector<const Episode*>& out, std::vector<std::string>& splits) {
    for (const Episode& e : eps) {
      if (e.world_index == w.id) {
        out.push_back(&e);
        splits.push_back(split);
      }
    }
  };

  std::ostringstream manifest_out;
  manifest_out << kManifestMagic << " " << kFormatVersion << "\n";
  for (const auto& [k, v] : params_to_map(d.params)) manifest_out << "param " << k << " " << v << "\n";

  auto write_pool = [&](const std::vector<World>& pool) {
    for (const World& w : pool) {
      std::vector<const Episode*> eps;
      std::vector<std::string> splits;
      if (w.split == "train") {
        collect(w, d.train_episodes, kSplitTrain, eps, splits);
        collect(w, d.val_seen_episodes, kSplitValSeen, eps, splits);
      } else {
        collect(w, d.val_unseen_episodes, kSplitValUnseen, eps, splits);
      }
      const std::string rel = "worlds/" + world_file_name(w.split, w.id);
      util::write_text_file((root / rel).string(), serialize_world(w, eps, splits));
      manifest_out << "world " << w.split << " " << rel << " " << w.graph.content_hash() << "\n";
    }
  };
  write_pool(d.train_worlds);
  write_pool(d.unseen_worlds);

  manifest_out << "split " << kSplitTrain << " episodes " << d.train_episodes.size() << "\n";
  manifest_out << "split " << kSplitValSeen << " episodes " << d.val_seen_episodes.size() << "\n";
  manifest_out << "split " << kSplitValUnseen << " episodes " << d.val_unseen_episodes.size() << "\n";
  manifest_out << "end\n";
  util::write_text_file(manifest.string(), manifest_out.str());
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  const std::string manifest_text = util::read_text_file((root / "manifest.txt").string());
  std::istringstream in(manifest_text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("manifest: empty file");
  {
    auto toks = util::split_ws(line);
    if (toks.size() != 2 || toks[0] != kManifestMagic) throw DataError("manifest: bad header");
    if (toks[1] != kFormatVersion) {
      throw DataError("manifest: unsupported format version " + toks[1]);
    }
  }

  std::map<std::string, std::string> params;
  struct WorldEntry {
    std::string pool, rel;
    uint64_t hash;
  };
  std::vector<WorldEntry> world_entries;
  std::map<std::string, size_t> declared_counts;
  bool saw_end = false;
  while (std::getline(in, line)) {
    auto toks = util::split_ws(line);
    if (toks.empty()) continue;
    if (toks[0] == "param" && toks.size() == 3) {
      params[toks[1]] = toks[2];
    } else if (toks[0] == "world" && toks.size() == 4) {
      world_entries.push_back({toks[1], toks[2], std::stoull(toks[3])});
    } else if (toks[0] == "split" && toks.size() == 4 && toks[2] == "episodes") {
      declared_counts[toks[1]] = std::stoull(toks[3]);
    } else if (toks[0] == "end") {
      saw_end = true;
    } else {
      throw DataError("manifest: unrecognized line: " + line);
    }
  }
  if (!saw_end) throw DataError("manifest: missing end marker");

  Dataset d;
  d.params = params_from_map(params);
  d.vocab.num_scene_classes = d.params.scene_classes;
  d.vocab.num_object_classes = d.params.object_classes;
  d.synth = FeatureSynth::make(util::derive_seed(d.params.seed, 0x5f), d.params.scene_classes,
                               d.params.object_classes, d.params.feature_dim_scene,
                               d.params.feature_dim_object, d.params.noise_sigma);

  for (const WorldEntry& entry : world_entries) {
    ParsedWorld pw = parse_world(util::read_text_file((root / entry.rel).string()), entry.rel);
    if (pw.world.graph.content_hash() != entry.hash) {
      throw DataError("world file " + entry.rel + " does not match its manifest hash");
    }
    for (auto& [split, episode] : pw.episodes) {
      if (split == kSplitTrain) d.train_episodes.push_back(std::move(episode));
      else if (split == kSplitValSeen) d.val_seen_episodes.push_back(std::move(episode));
      else if (split == kSplitValUnseen) d.val_unseen_episodes.push_back(std::move(episode));
      else throw DataError("world file " + entry.rel + " has unknown split " + split);
    }
    if (entry.pool == "train") d.train_worlds.push_back(std::move(pw.world));
    else if (entry.pool == "unseen") d.unseen_worlds.push_back(std::move(pw.world));
    else throw DataError("manifest: unknown world pool " + entry.pool);
  }

  auto sort_by_id = [](std::vector<Episode>& eps) {
    std::sort(eps.begin(), eps.end(), [](const Episode& a, const Episode& b) { return a.id < b.id; });
  };
  sort_by_id(d.train_episodes);
  sort_by_id(d.val_seen_episodes);
  sort_by_id(d.val_unseen_episodes);
  auto sort_worlds = [](std::vector<World>& ws) {
    std::sort(ws.begin(), ws.end(), [](const World& a, const World& b) { return a.id < b.id; });
  };
  sort_worlds(d.train_worlds);
  sort_worlds(d.unseen_worlds);

  auto check_count = [&](const char* split, size_t actual) {
    auto it = declared_counts.find(split);
    if (it != declared_counts.end() && it->second != actual) {
      throw DataError(std::string("manifest episode count for ") + split + " (" +
                      std::to_string(it->second) + ") does not match files (" +
                      std::to_string(actual) + ")");
    }
  };
  check_count(kSplitTrain, d.train_episodes.size());
  check_count(kSplitValSeen, d.val_seen_episodes.size());
  check_count(kSplitValUnseen, d.val_unseen_episodes.size());
  return d;
}

}  // namespace soat::env
