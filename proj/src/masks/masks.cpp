#include "soat/masks/masks.hpp"

#include <numeric>

#include "soat/util/errors.hpp"

namespace soat::masks {

MaskPattern pattern_from_name(const std::string& name) {
  if (name == "baseline") return MaskPattern::kBaseline;
  if (name == "all") return MaskPattern::kAllAttention;
  if (name == "selective-object") return MaskPattern::kSelectiveObject;
  if (name == "selective-scene") return MaskPattern::kSelectiveScene;
  if (name == "object-only") return MaskPattern::kObjectOnly;
  throw util::ConfigError("unknown attention pattern: " + name +
                          " (expected baseline|all|selective-object|selective-scene|object-only)");
}

std::string pattern_name(MaskPattern pattern) {
  switch (pattern) {
    case MaskPattern::kBaseline: return "baseline";
    case MaskPattern::kAllAttention: return "all";
    case MaskPattern::kSelectiveObject: return "selective-object";
    case MaskPattern::kSelectiveScene: return "selective-scene";
    case MaskPattern::kObjectOnly: return "object-only";
  }
  throw util::ConfigError("invalid attention pattern value");
}

int TokenLayout::scene_token_for_view(int view) const {
  if (!per_view_scene_tokens) {
    throw util::ConfigError("layout has no per-view scene tokens");
  }
  if (view < 0 || view >= num_views) throw util::ConfigError("scene_token_for_view: bad view index");
  return scene_begin() + view;
}

TokenLayout layout_from_observation(int num_instruction, int num_views,
                                    const std::vector<int>& objects_per_view,
                                    bool per_view_scene_tokens) {
  if (num_instruction < 0 || num_views < 0) {
    throw util::ConfigError("layout_from_observation: negative counts");
  }
  if (static_cast<int>(objects_per_view.size()) != num_views) {
    throw util::ConfigError("layout_from_observation: objects_per_view must have one entry per view");
  }
  TokenLayout layout;
  layout.num_instruction = num_instruction;
  layout.num_views = num_views;
  layout.per_view_scene_tokens = per_view_scene_tokens;
  layout.objects_per_view = objects_per_view;
  for (int v = 0; v < num_views; ++v) {
    if (objects_per_view[static_cast<size_t>(v)] < 0) {
      throw util::ConfigError("layout_from_observation: negative object count");
    }
    for (int o = 0; o < objects_per_view[static_cast<size_t>(v)]; ++o) {
      layout.object_owner.push_back(v);
    }
  }
  return layout;
}

AttentionMask build_mask(MaskPattern pattern, const TokenLayout& layout) {
  if (pattern == MaskPattern::kObjectOnly && layout.per_view_scene_tokens) {
    throw util::ConfigError("object-only pattern requires a layout without per-view scene tokens");
  }
  if (pattern != MaskPattern::kObjectOnly && !layout.per_view_scene_tokens) {
    throw util::ConfigError(pattern_name(pattern) + " pattern requires per-view scene tokens");
  }

  std::vector<int> update;
  update.push_back(layout.state_index());
  const bool scene_updates = pattern == MaskPattern::kBaseline ||
                             pattern == MaskPattern::kAllAttention ||
                             pattern == MaskPattern::kSelectiveScene;
  const bool object_updates = pattern == MaskPattern::kAllAttention ||
                              pattern == MaskPattern::kSelectiveObject ||
                              pattern == MaskPattern::kObjectOnly;
  if (scene_updates) {
    for (int i = layout.scene_begin(); i < layout.scene_end(); ++i) update.push_back(i);
  }
  if (object_updates) {
    for (int i = layout.object_begin(); i < layout.object_end(); ++i) update.push_back(i);
  }

  AttentionMask mask;
  mask.update_set = std::move(update);
  mask.allow = nn::BoolMatrix(layout.total(), layout.total(), false);
  for (int row : mask.update_set) {
    for (int col = 0; col < layout.total(); ++col) mask.allow.at(row, col) = 1;
  }
  return mask;
}

}  // namespace soat::masks
