#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "soat/agent/model.hpp"
#include "soat/env/env.hpp"
#include "soat/masks/masks.hpp"
#include "soat/nn/grad_check.hpp"

namespace soat::agent {

// Owns the tape for one episode. All Vars produced during the episode
// (including the recurrent state) live here.
template <class T>
struct EpisodeContext {
  nn::Tape<T> tape;
  nn::ParamBinding<T> bind;

  EpisodeContext() : bind(tape) {}
  EpisodeContext(const EpisodeContext&) = delete;
  EpisodeContext& operator=(const EpisodeContext&) = delete;
};

template <class T>
struct AgentState {
  nn::Var state;                 // 1 x d, s_t
  nn::Var encoded_instruction;   // L x d, psi(I); immutable for the episode
  // Episode-lifetime K/V cache for the frozen instruction block, one segment
  // per encoder layer. Valid while model parameters are unchanged.
  std::vector<nn::KvSegment> instruction_kv;
  int timestep = 0;
};

struct ScoreProvenance {
  enum class Source { kScene, kObject, kNone };
  Source source = Source::kNone;
  int object_ordinal = -1;  // flattened object index when source == kObject
};

struct ActionDistribution {
  std::vector<double> scores;         // one logit per view, stop last
  std::vector<double> probabilities;  // softmax of scores
  std::vector<ScoreProvenance> provenance;

  int argmax() const;
  int sample(util::Rng& rng) const;
};

// Everything a caller needs to pick an action, build a loss, and refine the
// state afterwards.
template <class T>
struct StepResult {
  masks::TokenLayout layout;
  nn::Var view_scores;       // 1 x (num_views + 1) selected logits
  nn::Var scene_scores;      // 1 x scene_count, pattern-routed alpha(V_t)
  nn::Var object_scores;     // 1 x num_objects, alpha(G_t); invalid when no objects scored
  nn::Var state_output;      // 1 x d, psi(s_t)
  nn::Var raw_scene_tokens;  // scene_count x d, projected input scene features
  ActionDistribution distribution;
};

// --- value-level helpers ----------------------------------------------------

inline std::array<double, 4> direction_basis(double heading, double elevation) {
  return {std::sin(heading), std::cos(heading), std::sin(elevation), std::cos(elevation)};
}

template <class T>
nn::Tensor<T> tiled_direction_feature(double heading, double elevation, int d_action) {
  const auto basis = direction_basis(heading, elevation);
  nn::Tensor<T> out(1, d_action);
  for (int j = 0; j < d_action; ++j) out.data[static_cast<size_t>(j)] = static_cast<T>(basis[j % 4]);
  return out;
}

struct ViewAggregate {
  std::vector<double> scores;
  std::vector<ScoreProvenance> provenance;
};

// Per-view max over the scene score and the view's owned object scores; ties
// resolve to the scene, then to the lowest object index.
ViewAggregate aggregate_views(const std::vector<double>& scene_scores,
                              const std::vector<double>& object_scores,
                              const std::vector<int>& object_owner, int num_views);

// --- model forward ----------------------------------------------------------

// Encodes [CLS] w_1..w_L [SEP] with full self-attention; s_0 is the CLS
// output, psi(I) the word outputs, and the per-layer instruction K/V cache is
// prepared for the navigation steps.
template <class T>
AgentState<T> init_state(EpisodeContext<T>& ctx, Model<T>& model,
                         const std::vector<int>& instruction_tokens);

// Builds the per-layer K/V cache for an already-encoded instruction block.
template <class T>
std::vector<nn::KvSegment> build_instruction_cache(EpisodeContext<T>& ctx, Model<T>& model,
                                                   nn::Var encoded_instruction);

template <class T>
StepResult<T> step(EpisodeContext<T>& ctx, Model<T>& model, const AgentState<T>& state,
                   const std::vector<env::CandidateView>& views, bool use_cache = true);

// s_{t+1} from psi(s_t), the scene attention, the instruction attention, and
// the chosen action's directional features.
template <class T>
nn::Var refine_state(EpisodeContext<T>& ctx, Model<T>& model, const StepResult<T>& result,
                     nn::Var encoded_instruction, double heading, double elevation);

template <class T>
AgentState<T> advance_state(EpisodeContext<T>& ctx, Model<T>& model, const AgentState<T>& state,
                            const StepResult<T>& result, const env::CandidateView& chosen) {
  AgentState<T> next = state;
  next.state = refine_state(ctx, model, result, state.encoded_instruction, chosen.heading,
                            chosen.elevation);
  next.timestep = state.timestep + 1;
  return next;
}

// Runs one step through the cached fast path and the naive full recompute and
// returns the maximum absolute deviation across scores, state outputs, and
// action probabilities. Only meaningful for patterns with frozen visual or
// instruction tokens.
template <class T>
double cached_step_equivalence(EpisodeContext<T>& ctx, Model<T>& model, const AgentState<T>& state,
                               const std::vector<env::CandidateView>& views);

// --- implementation ---------------------------------------------------------

inline int ActionDistribution::argmax() const {
  int best = 0;
  for (size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[static_cast<size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

inline int ActionDistribution::sample(util::Rng& rng) const {
  const double u = rng.uniform();
  double cdf = 0.0;
  for (size_t i = 0; i < probabilities.size(); ++i) {
    cdf += probabilities[i];
    if (u < cdf) return static_cast<int>(i);
  }
  return static_cast<int>(probabilities.size()) - 1;
}

inline ViewAggregate aggregate_views(const std::vector<double>& scene_scores,
                                     const std::vector<double>& object_scores,
                                     const std::vector<int>& object_owner, int num_views) {
  if (object_scores.size() != object_owner.size()) {
    throw util::ConfigError("aggregate_views: ownership map size mismatch");
  }
  ViewAggregate out;
  out.scores.assign(static_cast<size_t>(num_views), 0.0);
  out.provenance.assign(static_cast<size_t>(num_views), {});
  for (int v = 0; v < num_views; ++v) {
    out.scores[static_cast<size_t>(v)] = scene_scores[static_cast<size_t>(v)];
    out.provenance[static_cast<size_t>(v)] = {ScoreProvenance::Source::kScene, -1};
  }
  for (size_t o = 0; o < object_scores.size(); ++o) {
    const int v = object_owner[o];
    if (v < 0 || v >= num_views) throw util::ConfigError("aggregate_views: owner out of range");
    if (object_scores[o] > out.scores[static_cast<size_t>(v)]) {
      out.scores[static_cast<size_t>(v)] = object_scores[o];
      out.provenance[static_cast<size_t>(v)] = {ScoreProvenance::Source::kObject, static_cast<int>(o)};
    }
  }
  return out;
}

namespace detail {

// True when the pattern scores candidate views against the raw projected
// scene features rather than the encoder outputs.
inline bool scores_use_raw_scene(masks::MaskPattern p) {
  return p == masks::MaskPattern::kSelectiveObject || p == masks::MaskPattern::kObjectOnly;
}

inline bool pattern_freezes_scene(masks::MaskPattern p) {
  return p == masks::MaskPattern::kSelectiveObject;
}

inline bool pattern_supports_cache(masks::MaskPattern p) {
  return p == masks::MaskPattern::kSelectiveObject || p == masks::MaskPattern::kSelectiveScene;
}

}  // namespace detail

template <class T>
std::vector<nn::KvSegment> build_instruction_cache(EpisodeContext<T>& ctx, Model<T>& model,
                                                   nn::Var encoded_instruction) {
  const int L = ctx.tape.val(encoded_instruction).rows;
  std::vector<nn::KvSegment> cache;
  cache.reserve(model.encoder.size());
  for (auto& layer : model.encoder) {
    nn::KvSegment seg;
    seg.row_begin = 1;
    seg.row_end = 1 + L;
    seg.k = nn::linear_forward(ctx.tape, ctx.bind, encoded_instruction, layer.wk);
    seg.v = nn::linear_forward(ctx.tape, ctx.bind, encoded_instruction, layer.wv);
    cache.push_back(seg);
  }
  return cache;
}

template <class T>
AgentState<T> init_state(EpisodeContext<T>& ctx, Model<T>& model,
                         const std::vector<int>& instruction_tokens) {
  const int L = static_cast<int>(instruction_tokens.size());
  if (L < 1) throw util::ConfigError("init_state: empty instruction");
  if (L > model.cfg.max_instruction_len) {
    throw util::ConfigError("init_state: instruction longer than max_instruction_len");
  }
  std::vector<int> ids;
  ids.reserve(static_cast<size_t>(L) + 2);
  ids.push_back(env::VocabSpec::kCls);
  for (int t : instruction_tokens) {
    if (t < 0 || t >= model.cfg.vocab_size) {
      throw util::ConfigError("init_state: token id out of vocabulary range");
    }
    ids.push_back(t);
  }
  ids.push_back(env::VocabSpec::kSep);

  nn::Var words = nn::gather_rows(ctx.tape, ctx.bind(model.word_embedding), ids);
  std::vector<int> pos_ids(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) pos_ids[i] = static_cast<int>(i);
  nn::Var pos = nn::gather_rows(ctx.tape, ctx.bind(model.position_embedding), pos_ids);
  nn::Var x = nn::add(ctx.tape, words, pos);

  const int total = L + 2;
  nn::BoolMatrix all_true(total, total, true);
  std::vector<int> update_all(static_cast<size_t>(total));
  for (int i = 0; i < total; ++i) update_all[static_cast<size_t>(i)] = i;
  nn::Var encoded = nn::encoder_stack_forward(ctx.tape, ctx.bind, x, all_true, model.encoder,
                                              update_all);

  AgentState<T> st;
  st.state = nn::gather_rows(ctx.tape, encoded, std::vector<int>{0});
  std::vector<int> word_rows(static_cast<size_t>(L));
  for (int i = 0; i < L; ++i) word_rows[static_cast<size_t>(i)] = i + 1;
  st.encoded_instruction = nn::gather_rows(ctx.tape, encoded, word_rows);
  st.instruction_kv = build_instruction_cache(ctx, model, st.encoded_instruction);
  st.timestep = 0;
  return st;
}

template <class T>
StepResult<T> step(EpisodeContext<T>& ctx, Model<T>& model, const AgentState<T>& state,
                   const std::vector<env::CandidateView>& views, bool use_cache) {
  const ModelConfig& cfg = model.cfg;
  if (views.empty() || views.back().target_node >= 0) {
    throw util::ConfigError("step: views must end with the stop pseudo-view");
  }
  const int num_views = static_cast<int>(views.size()) - 1;
  const int L = ctx.tape.val(state.encoded_instruction).rows;
  const bool per_view_scene = cfg.pattern != masks::MaskPattern::kObjectOnly;

  // Layout and raw feature blocks.
  std::vector<int> objects_per_view(static_cast<size_t>(num_views), 0);
  int num_objects = 0;
  if (cfg.use_objects) {
    for (int v = 0; v < num_views; ++v) {
      objects_per_view[static_cast<size_t>(v)] =
          static_cast<int>(views[static_cast<size_t>(v)].object_features.size());
      num_objects += objects_per_view[static_cast<size_t>(v)];
    }
  }
  masks::TokenLayout layout =
      masks::layout_from_observation(L, num_views, objects_per_view, per_view_scene);

  nn::Tensor<T> scene_feat(layout.scene_count(), cfg.d_scene);
  if (per_view_scene) {
    for (int v = 0; v < num_views; ++v) {
      const auto& f = views[static_cast<size_t>(v)].scene_feature;
      if (static_cast<int>(f.size()) != cfg.d_scene) {
        throw util::ConfigError("step: scene feature dimension mismatch");
      }
      for (int j = 0; j < cfg.d_scene; ++j) scene_feat.at(v, j) = static_cast<T>(f[static_cast<size_t>(j)]);
    }
  }
  // Stop row stays exactly zero (its rendered feature is all-zeros and the
  // scene projection is bias-free).
  nn::Var raw_scene = nn::linear_forward(ctx.tape, ctx.bind,
                                         nn::constant(ctx.tape, std::move(scene_feat)),
                                         model.scene_projection);

  nn::Var object_tokens;
  if (num_objects > 0) {
    nn::Tensor<T> obj_feat(num_objects, cfg.d_object);
    nn::Tensor<T> dir_basis(num_objects, 4);
    int row = 0;
    for (int v = 0; v < num_views; ++v) {
      const env::CandidateView& view = views[static_cast<size_t>(v)];
      const auto basis = direction_basis(view.heading, view.elevation);
      for (const auto& f : view.object_features) {
        if (static_cast<int>(f.size()) != cfg.d_object) {
          throw util::ConfigError("step: object feature dimension mismatch");
        }
        for (int j = 0; j < cfg.d_object; ++j) obj_feat.at(row, j) = static_cast<T>(f[static_cast<size_t>(j)]);
        for (int j = 0; j < 4; ++j) dir_basis.at(row, j) = static_cast<T>(basis[static_cast<size_t>(j)]);
        ++row;
      }
    }
    nn::Var projected = nn::linear_forward(ctx.tape, ctx.bind,
                                           nn::constant(ctx.tape, std::move(obj_feat)),
                                           model.object_projection);
    nn::Var direction = nn::linear_forward(ctx.tape, ctx.bind,
                                           nn::constant(ctx.tape, std::move(dir_basis)),
                                           model.direction_encoding);
    object_tokens = nn::add(ctx.tape, projected, direction);
  }

  std::vector<nn::Var> parts{state.state, state.encoded_instruction, raw_scene};
  if (num_objects > 0) parts.push_back(object_tokens);
  nn::Var tokens = nn::concat_rows(ctx.tape, parts);

  masks::AttentionMask mask = masks::build_mask(cfg.pattern, layout);

  // K/V caching: instruction segments live for the episode; frozen scene
  // segments are rebuilt once per timestep.
  std::optional<std::vector<std::vector<nn::KvSegment>>> cache;
  if (use_cache && detail::pattern_supports_cache(cfg.pattern)) {
    if (state.instruction_kv.size() != model.encoder.size()) {
      throw util::ConfigError("step: instruction K/V cache missing or stale");
    }
    cache.emplace();
    cache->resize(model.encoder.size());
    for (size_t l = 0; l < model.encoder.size(); ++l) {
      (*cache)[l].push_back(state.instruction_kv[l]);
      if (detail::pattern_freezes_scene(cfg.pattern)) {
        nn::KvSegment seg;
        seg.row_begin = layout.scene_begin();
        seg.row_end = layout.scene_end();
        seg.k = nn::linear_forward(ctx.tape, ctx.bind, raw_scene, model.encoder[l].wk);
        seg.v = nn::linear_forward(ctx.tape, ctx.bind, raw_scene, model.encoder[l].wv);
        (*cache)[l].push_back(seg);
      }
    }
  }

  nn::Var encoded = nn::encoder_stack_forward(ctx.tape, ctx.bind, tokens, mask.allow, model.encoder,
                                              mask.update_set, cache ? &*cache : nullptr);

  StepResult<T> out;
  out.layout = layout;
  out.raw_scene_tokens = raw_scene;
  out.state_output = nn::gather_rows(ctx.tape, encoded, std::vector<int>{layout.state_index()});

  const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.d)));
  if (detail::scores_use_raw_scene(cfg.pattern)) {
    out.scene_scores = nn::scale(ctx.tape, nn::matmul_nt(ctx.tape, out.state_output, raw_scene),
                                 inv_sqrt_d);
  } else {
    std::vector<int> scene_rows(static_cast<size_t>(layout.scene_count()));
    for (int i = 0; i < layout.scene_count(); ++i) scene_rows[static_cast<size_t>(i)] = layout.scene_begin() + i;
    nn::Var psi_scene = nn::gather_rows(ctx.tape, encoded, scene_rows);
    out.scene_scores = nn::scale(ctx.tape, nn::matmul_nt(ctx.tape, out.state_output, psi_scene),
                                 inv_sqrt_d);
  }

  std::vector<int> group_winner;
  if (cfg.use_view_aggregation && num_objects > 0) {
    std::vector<int> object_rows(static_cast<size_t>(num_objects));
    for (int i = 0; i < num_objects; ++i) object_rows[static_cast<size_t>(i)] = layout.object_begin() + i;
    nn::Var psi_objects = nn::gather_rows(ctx.tape, encoded, object_rows);
    out.object_scores = nn::scale(
        ctx.tape, nn::matmul_nt(ctx.tape, out.state_output, psi_objects), inv_sqrt_d);
    nn::Var all_scores = nn::concat_cols(ctx.tape, {out.scene_scores, out.object_scores});

    // Candidate columns per view in tie-break priority order: scene first,
    // then objects by ascending index. Stop is its own singleton group.
    std::vector<std::vector<int>> groups(static_cast<size_t>(num_views) + 1);
    for (int v = 0; v < num_views; ++v) {
      if (per_view_scene) groups[static_cast<size_t>(v)].push_back(v);
    }
    for (int o = 0; o < num_objects; ++o) {
      groups[static_cast<size_t>(layout.view_of_object(o))].push_back(layout.scene_count() + o);
    }
    groups[static_cast<size_t>(num_views)].push_back(layout.scene_count() - 1);  // stop slot
    auto selected = nn::select_max_groups(ctx.tape, all_scores, groups);
    out.view_scores = selected.scores;
    group_winner = std::move(selected.winners);
  } else {
    if (cfg.pattern == masks::MaskPattern::kObjectOnly) {
      throw util::ConfigError("step: object-only pattern requires view aggregation");
    }
    out.view_scores = out.scene_scores;
    group_winner.assign(static_cast<size_t>(num_views) + 1, -1);
    for (int v = 0; v <= num_views; ++v) group_winner[static_cast<size_t>(v)] = v;
  }

  // Distribution over the selected scores.
  const nn::Tensor<T>& score_val = ctx.tape.val(out.view_scores);
  if (!score_val.all_finite()) throw util::NumericError("step: non-finite action scores");
  ActionDistribution dist;
  dist.scores.resize(score_val.size());
  for (size_t i = 0; i < score_val.size(); ++i) dist.scores[i] = static_cast<double>(score_val.data[i]);
  double mx = dist.scores[0];
  for (double s : dist.scores) mx = std::max(mx, s);
  double sum = 0.0;
  dist.probabilities.resize(dist.scores.size());
  for (size_t i = 0; i < dist.scores.size(); ++i) {
    dist.probabilities[i] = std::exp(dist.scores[i] - mx);
    sum += dist.probabilities[i];
  }
  for (double& p : dist.probabilities) p /= sum;
  dist.provenance.resize(dist.scores.size());
  for (size_t v = 0; v < dist.provenance.size(); ++v) {
    const int winner = group_winner[v];
    if (winner < 0) {
      dist.provenance[v] = {ScoreProvenance::Source::kNone, -1};
    } else if (winner < layout.scene_count()) {
      dist.provenance[v] = {ScoreProvenance::Source::kScene, -1};
    } else {
      dist.provenance[v] = {ScoreProvenance::Source::kObject, winner - layout.scene_count()};
    }
  }
  out.distribution = std::move(dist);
  return out;
}

template <class T>
nn::Var refine_state(EpisodeContext<T>& ctx, Model<T>& model, const StepResult<T>& result,
                     nn::Var encoded_instruction, double heading, double elevation) {
  nn::Tape<T>& tp = ctx.tape;
  const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(model.cfg.d)));

  nn::Var scene_weights = nn::softmax(tp, result.scene_scores);
  nn::Var visual_summary = nn::matmul(tp, scene_weights, result.raw_scene_tokens);  // F^v

  nn::Var instr_scores = nn::scale(
      tp, nn::matmul_nt(tp, result.state_output, encoded_instruction), inv_sqrt_d);
  nn::Var instr_weights = nn::softmax(tp, instr_scores);
  nn::Var language_summary = nn::matmul(tp, instr_weights, encoded_instruction);  // F^l

  nn::Var fused = nn::mul(tp, visual_summary, language_summary);
  nn::Var h = nn::linear_forward(tp, ctx.bind, nn::concat_cols(tp, {result.state_output, fused}),
                                 model.refine_w1);
  nn::Var action = nn::constant(
      tp, tiled_direction_feature<T>(heading, elevation, model.cfg.d_action));
  return nn::linear_forward(tp, ctx.bind, nn::concat_cols(tp, {h, action}), model.refine_w2);
}

template <class T>
double cached_step_equivalence(EpisodeContext<T>& ctx, Model<T>& model, const AgentState<T>& state,
                               const std::vector<env::CandidateView>& views) {
  if (!detail::pattern_supports_cache(model.cfg.pattern)) {
    throw util::ConfigError("cached_step_equivalence requires a selective attention pattern");
  }
  StepResult<T> cached = step(ctx, model, state, views, /*use_cache=*/true);
  StepResult<T> naive = step(ctx, model, state, views, /*use_cache=*/false);

  double dev = 0.0;
  auto compare = [&](nn::Var a, nn::Var b) {
    const nn::Tensor<T>& av = ctx.tape.val(a);
    const nn::Tensor<T>& bv = ctx.tape.val(b);
    for (size_t i = 0; i < av.size(); ++i) {
      dev = std::max(dev, std::abs(static_cast<double>(av.data[i]) - static_cast<double>(bv.data[i])));
    }
  };
  compare(cached.view_scores, naive.view_scores);
  compare(cached.scene_scores, naive.scene_scores);
  compare(cached.state_output, naive.state_output);
  for (size_t i = 0; i < cached.distribution.probabilities.size(); ++i) {
    dev = std::max(dev, std::abs(cached.distribution.probabilities[i] -
                                 naive.distribution.probabilities[i]));
  }
  const int action = cached.distribution.argmax();
  nn::Var next_cached = refine_state(ctx, model, cached, state.encoded_instruction,
                                     views[static_cast<size_t>(action)].heading,
                                     views[static_cast<size_t>(action)].elevation);
  nn::Var next_naive = refine_state(ctx, model, naive, state.encoded_instruction,
                                    views[static_cast<size_t>(action)].heading,
                                    views[static_cast<size_t>(action)].elevation);
  compare(next_cached, next_naive);
  return dev;
}

}  // namespace soat::agent
