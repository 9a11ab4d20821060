#pragma once

#include <string>
#include <vector>

#include "soat/nn/tensor.hpp"

namespace soat::masks {

// Attention patterns from the ablation grid: which token groups act as
// queries (and are therefore updated per layer). Instruction tokens are keys
// and values only in every pattern.
enum class MaskPattern {
  kBaseline,         // queries: state + scene
  kAllAttention,     // queries: state + scene + objects
  kSelectiveObject,  // queries: state + objects (scene frozen)
  kSelectiveScene,   // queries: state + scene (objects frozen)
  kObjectOnly,       // queries: state + objects; layout carries no per-view scene tokens
};

MaskPattern pattern_from_name(const std::string& name);
std::string pattern_name(MaskPattern pattern);

// Token index assignment for one timestep: <state, instruction, scene, object>.
// Scene range has one slot per candidate view plus a trailing stop slot; for
// object-only layouts the per-view scene slots are dropped and only the stop
// slot remains so stopping stays expressible.
struct TokenLayout {
  int num_instruction = 0;
  int num_views = 0;                 // navigable views, stop excluded
  bool per_view_scene_tokens = true; // false only for object-only layouts
  std::vector<int> objects_per_view;
  std::vector<int> object_owner;     // owning view index per object slot

  int state_index() const { return 0; }
  int instr_begin() const { return 1; }
  int instr_end() const { return 1 + num_instruction; }
  int scene_begin() const { return instr_end(); }
  int scene_count() const { return per_view_scene_tokens ? num_views + 1 : 1; }
  int scene_end() const { return scene_begin() + scene_count(); }
  int stop_index() const { return scene_end() - 1; }
  int object_begin() const { return scene_end(); }
  int num_objects() const { return static_cast<int>(object_owner.size()); }
  int object_end() const { return object_begin() + num_objects(); }
  int total() const { return object_end(); }

  int scene_token_for_view(int view) const;
  int object_token(int ordinal) const { return object_begin() + ordinal; }
  int view_of_object(int ordinal) const { return object_owner[static_cast<size_t>(ordinal)]; }
};

TokenLayout layout_from_observation(int num_instruction, int num_views,
                                    const std::vector<int>& objects_per_view,
                                    bool per_view_scene_tokens = true);

// Query-permission matrix plus the set of token rows the encoder refreshes.
// Update rows attend to every token; all other rows never act as queries.
struct AttentionMask {
  nn::BoolMatrix allow;
  std::vector<int> update_set;  // sorted ascending
};

AttentionMask build_mask(MaskPattern pattern, const TokenLayout& layout);

}  // namespace soat::masks
