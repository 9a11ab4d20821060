#include <cmath>
#include <cstring>
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "soat/agent/rollout.hpp"
#include "soat/metrics/evaluate.hpp"
#include "soat/train/losses.hpp"
#include "soat/util/text.hpp"
#include "soat/verify/oracles.hpp"

namespace soat::cli {

namespace {

using masks::MaskPattern;

struct Verifier {
  uint64_t seed;
  bool inject_mask_bug = false;
  int failures = 0;
  int checks = 0;

  void report(const std::string& name, bool ok, const std::string& detail) {
    ++checks;
    if (!ok) ++failures;
    std::cout << "check " << name << " ... " << (ok ? "ok" : "FAIL") << " (" << detail << ")\n";
  }
};

agent::ModelConfig small_config(int vocab, MaskPattern pattern) {
  agent::ModelConfig cfg;
  cfg.d = 32;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.d_ff = 64;
  cfg.d_scene = 12;
  cfg.d_object = 12;
  cfg.d_action = 8;
  cfg.vocab_size = vocab;
  cfg = agent::config_for_pattern(cfg, pattern);
  return cfg;
}

std::vector<env::CandidateView> random_views(util::Rng& rng, int d_scene, int d_object,
                                             int max_views = 5, int max_objects = 3) {
  const int num_views = 1 + rng.uniform_int(max_views);
  std::vector<env::CandidateView> views;
  for (int v = 0; v < num_views; ++v) {
    env::CandidateView view;
    view.view_id = v;
    view.target_node = v;
    view.heading = rng.uniform(-3.1, 3.1);
    view.elevation = rng.uniform(-0.4, 0.4);
    view.scene_feature.resize(static_cast<size_t>(d_scene));
    for (auto& x : view.scene_feature) x = rng.normal();
    const int num_objects = rng.uniform_int(max_objects + 1);
    for (int o = 0; o < num_objects; ++o) {
      std::vector<double> f(static_cast<size_t>(d_object));
      for (auto& x : f) x = rng.normal();
      view.object_features.push_back(std::move(f));
    }
    views.push_back(std::move(view));
  }
  env::CandidateView stop;
  stop.view_id = num_views;
  stop.target_node = -1;
  stop.scene_feature.assign(static_cast<size_t>(d_scene), 0.0);
  views.push_back(std::move(stop));
  return views;
}

// Synthetic agent state over a freshly built context: random s_t and psi(I).
agent::AgentState<double> synthetic_state(agent::EpisodeContext<double>& ctx,
                                          agent::Model<double>& model, util::Rng& rng,
                                          int instr_len) {
  agent::AgentState<double> st;
  st.state = nn::constant(ctx.tape, nn::Tensor64::randn(1, model.cfg.d, rng, 0.5));
  st.encoded_instruction =
      nn::constant(ctx.tape, nn::Tensor64::randn(instr_len, model.cfg.d, rng, 0.5));
  st.instruction_kv = agent::build_instruction_cache(ctx, model, st.encoded_instruction);
  return st;
}

env::DatasetParams tiny_dataset_params(uint64_t seed) {
  env::DatasetParams p;
  p.seed = seed;
  p.train_worlds = 4;
  p.unseen_worlds = 2;
  p.nodes_min = 12;
  p.nodes_max = 18;
  p.scene_classes = 5;
  p.object_classes = 12;
  p.episodes_per_train_world = 6;
  p.episodes_val_seen_per_world = 2;
  p.episodes_per_unseen_world = 4;
  p.feature_dim_scene = 12;
  p.feature_dim_object = 12;
  return p;
}

// Criterion: under selective-object, instruction and scene rows pass through
// the full encoder stack bit-identically.
void check_mask_freeze(Verifier& v) {
  util::Rng rng(util::derive_seed(v.seed, 1));
  int bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int instr = 1 + rng.uniform_int(6);
    const int num_views = 1 + rng.uniform_int(4);
    std::vector<int> objs(static_cast<size_t>(num_views));
    for (auto& o : objs) o = rng.uniform_int(4);
    masks::TokenLayout layout = masks::layout_from_observation(instr, num_views, objs);
    masks::AttentionMask mask = masks::build_mask(MaskPattern::kSelectiveObject, layout);
    if (v.inject_mask_bug && !mask.update_set.empty()) {
      // Corrupt the update set: let the first instruction row be refreshed.
      mask.update_set.push_back(layout.instr_begin());
      std::sort(mask.update_set.begin(), mask.update_set.end());
      for (int col = 0; col < layout.total(); ++col) mask.allow.at(layout.instr_begin(), col) = 1;
    }

    const int d = 16;
    util::Rng layer_rng(rng.next_u64());
    std::vector<nn::EncoderLayer<double>> layers;
    const int L = 1 + rng.uniform_int(3);
    for (int l = 0; l < L; ++l) {
      layers.push_back(nn::EncoderLayer<double>::make("l" + std::to_string(l), d, 2, 32, layer_rng,
                                                      0.1, 1e-12));
    }
    nn::Tape<double> tape;
    nn::ParamBinding<double> bind(tape);
    nn::Tensor64 tokens = nn::Tensor64::randn(layout.total(), d, rng, 1.0);
    nn::Var x = tape.leaf(tokens);
    nn::Var y = nn::encoder_stack_forward(tape, bind, x, mask.allow, layers, mask.update_set);
    const nn::Tensor64& out = tape.val(y);
    // Instruction and scene rows are contiguous and all frozen under the
    // selective-object pattern.
    bool mutated = false;
    for (int r = layout.instr_begin(); r < layout.scene_end() && !mutated; ++r) {
      for (int c = 0; c < d; ++c) {
        if (std::memcmp(&out.at(r, c), &tokens.at(r, c), sizeof(double)) != 0) {
          mutated = true;
          break;
        }
      }
    }
    if (mutated) ++bad;
  }
  v.report("mask-freeze-invariant", bad == 0,
           bad == 0 ? "100 random configurations, frozen rows bitwise unchanged"
                    : std::to_string(bad) + " configurations had mutated frozen rows");
}

// Criterion: stop score is exactly 0 before softmax under selective-object.
void check_stop_logit(Verifier& v) {
  env::Dataset data = env::generate_dataset(tiny_dataset_params(util::derive_seed(v.seed, 2)));
  agent::ModelConfig cfg = small_config(data.vocab.vocab_size(), MaskPattern::kSelectiveObject);
  cfg.d_scene = data.params.feature_dim_scene;
  cfg.d_object = data.params.feature_dim_object;
  agent::Model<double> model = agent::Model<double>::make(cfg, util::derive_seed(v.seed, 3));

  int violations = 0;
  int episodes_run = 0;
  int steps_checked = 0;
  for (const env::Episode& episode : data.train_episodes) {
    if (episodes_run >= 50) break;
    ++episodes_run;
    const env::NavGraph& graph = data.world_for(env::kSplitTrain, episode).graph;
    agent::EpisodeContext<double> ctx;
    util::Rng noise(util::derive_seed(v.seed, 4, episode.id));
    agent::AgentState<double> st = agent::init_state(ctx, model, episode.instruction);
    int node = episode.start, came_from = -1;
    for (int t = 0; t < model.cfg.max_episode_steps; ++t) {
      auto views = env::render_observation(graph, node, came_from, data.synth, noise);
      auto res = agent::step(ctx, model, st, views);
      ++steps_checked;
      if (res.distribution.scores.back() != 0.0) ++violations;
      const int action = res.distribution.argmax();
      if (action == static_cast<int>(views.size()) - 1) break;
      st = agent::advance_state(ctx, model, st, res, views[static_cast<size_t>(action)]);
      came_from = node;
      node = views[static_cast<size_t>(action)].target_node;
    }
  }
  v.report("stop-logit-zero", violations == 0,
           std::to_string(episodes_run) + " episodes, " + std::to_string(steps_checked) +
               " steps, " + std::to_string(violations) + " nonzero stop logits");
}

void check_grad_encoder(Verifier& v) {
  util::Rng rng(util::derive_seed(v.seed, 5));
  nn::EncoderLayer<double> layer = nn::EncoderLayer<double>::make("g", 16, 2, 32, rng, 0.2, 1e-12);
  nn::Tensor64 input = nn::Tensor64::randn(5, 16, rng, 1.0);
  // Random weighting: an unweighted sum of squares is constant after the
  // final layer norm and would hide upstream gradient errors.
  nn::Tensor64 weighting = nn::Tensor64::randn(5, 16, rng, 1.0);
  nn::BoolMatrix mask(5, 5, true);
  std::vector<int> update{0, 1, 2, 3, 4};
  std::vector<nn::Parameter<double>*> params;
  layer.collect(params);

  auto loss_fn = [&](bool with_grad) {
    nn::Tape<double> tape;
    nn::ParamBinding<double> bind(tape);
    nn::Var x = tape.leaf(input);
    nn::Var y = nn::encoder_layer_forward(tape, bind, x, mask, layer, update);
    nn::Var w = nn::mul(tape, y, tape.leaf(weighting));
    nn::Var loss = nn::sum_all(tape, nn::mul(tape, w, w));
    const double value = tape.val(loss).data[0];
    if (with_grad) {
      tape.backward(loss);
      bind.flush_grads();
    }
    return value;
  };
  const double err = nn::grad_check<double>(loss_fn, params, 1e-5, 6, util::derive_seed(v.seed, 6));
  v.report("grad-check-encoder-layer", err < 1e-4,
           "max relative error " + util::format_double(err) + " (tolerance 1e-4)");
}

void check_grad_bc_episode(Verifier& v) {
  env::Dataset data = env::generate_dataset(tiny_dataset_params(util::derive_seed(v.seed, 7)));
  agent::ModelConfig cfg = small_config(data.vocab.vocab_size(), MaskPattern::kSelectiveObject);
  cfg.d_scene = data.params.feature_dim_scene;
  cfg.d_object = data.params.feature_dim_object;
  agent::Model<double> model = agent::Model<double>::make(cfg, util::derive_seed(v.seed, 8));

  // Find an episode with a 3-step teacher rollout (2 hops + stop).
  const env::Episode* episode = nullptr;
  for (const env::Episode& e : data.train_episodes) {
    if (e.path.size() == 3) {
      episode = &e;
      break;
    }
  }
  if (!episode) episode = &data.train_episodes.front();
  const env::NavGraph& graph = data.world_for(env::kSplitTrain, *episode).graph;
  const uint64_t noise_seed = util::derive_seed(v.seed, 9);

  auto params = model.parameters();
  const auto index = model.parameter_index();
  auto loss_fn = [&](bool with_grad) {
    agent::EpisodeContext<double> ctx;
    util::Rng noise(noise_seed);
    agent::RolloutOptions opts;
    opts.select = agent::ActionSelect::kTeacherForced;
    opts.record_bc_loss = true;
    auto rollout = agent::run_model_episode(ctx, model, graph, *episode, data.synth, noise,
                                            nullptr, opts);
    nn::Var loss = nn::scale(ctx.tape, nn::add_n(ctx.tape, rollout.step_losses),
                             1.0 / rollout.step_losses.size());
    const double value = ctx.tape.val(loss).data[0];
    if (with_grad) {
      ctx.tape.backward(loss);
      ctx.bind.flush_grads();
    }
    return value;
  };
  const double err = nn::grad_check<double>(loss_fn, params, 1e-5, 3, util::derive_seed(v.seed, 10));
  v.report("grad-check-bc-episode", err < 1e-3,
           "max relative error " + util::format_double(err) + " (tolerance 1e-3)");
}

void check_aggregation_oracle(Verifier& v) {
  util::Rng rng(util::derive_seed(v.seed, 11));
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int num_views = 1 + rng.uniform_int(6);
    std::vector<double> scene(static_cast<size_t>(num_views));
    for (auto& s : scene) s = rng.normal();
    std::vector<double> object_scores;
    std::vector<int> owner;
    for (int view = 0; view < num_views; ++view) {
      const int k = rng.uniform_int(5);
      for (int o = 0; o < k; ++o) {
        object_scores.push_back(rng.normal());
        owner.push_back(view);
      }
    }
    auto lib = agent::aggregate_views(scene, object_scores, owner, num_views);
    auto oracle = verify::brute_force_aggregation(scene, object_scores, owner, num_views);
    for (int view = 0; view < num_views; ++view) {
      if (lib.scores[static_cast<size_t>(view)] != oracle.view_scores[static_cast<size_t>(view)] ||
          lib.provenance[static_cast<size_t>(view)].source !=
              oracle.provenance[static_cast<size_t>(view)].source ||
          lib.provenance[static_cast<size_t>(view)].object_ordinal !=
              oracle.provenance[static_cast<size_t>(view)].object_ordinal) {
        ++mismatches;
        break;
      }
    }
    int lib_argmax = 0;
    for (size_t i = 1; i < lib.scores.size(); ++i) {
      if (lib.scores[i] > lib.scores[static_cast<size_t>(lib_argmax)]) lib_argmax = static_cast<int>(i);
    }
    if (lib_argmax != oracle.argmax) ++mismatches;
  }
  v.report("aggregation-oracle", mismatches == 0,
           "1000 random steps vs brute-force enumeration, " + std::to_string(mismatches) +
               " mismatches");
}

void check_permutation_invariance(Verifier& v) {
  util::Rng rng(util::derive_seed(v.seed, 12));
  agent::ModelConfig cfg = small_config(32, MaskPattern::kSelectiveObject);
  agent::Model<double> model = agent::Model<double>::make(cfg, util::derive_seed(v.seed, 13));
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    auto views = random_views(rng, cfg.d_scene, cfg.d_object);
    agent::EpisodeContext<double> ctx;
    agent::AgentState<double> st = synthetic_state(ctx, model, rng, 1 + rng.uniform_int(5));
    auto base = agent::step(ctx, model, st, views);

    auto permuted = views;
    for (auto& view : permuted) {
      for (size_t i = view.object_features.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rng.uniform_int(static_cast<int>(i)));
        std::swap(view.object_features[i - 1], view.object_features[j]);
      }
    }
    auto perm = agent::step(ctx, model, st, permuted);
    for (size_t i = 0; i < base.distribution.probabilities.size(); ++i) {
      worst = std::max(worst, std::abs(base.distribution.probabilities[i] -
                                       perm.distribution.probabilities[i]));
    }
  }
  v.report("object-permutation-invariance", worst <= 1e-12,
           "200 random steps, max probability deviation " + util::format_double(worst));
}

void check_cache_equivalence(Verifier& v) {
  util::Rng rng(util::derive_seed(v.seed, 14));
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const MaskPattern pattern =
        trial % 4 == 3 ? MaskPattern::kSelectiveScene : MaskPattern::kSelectiveObject;
    agent::ModelConfig cfg = small_config(32, pattern);
    agent::Model<double> model =
        agent::Model<double>::make(cfg, util::derive_seed(v.seed, 15, static_cast<uint64_t>(trial)));
    agent::EpisodeContext<double> ctx;
    agent::AgentState<double> st = synthetic_state(ctx, model, rng, 1 + rng.uniform_int(6));
    auto views = random_views(rng, cfg.d_scene, cfg.d_object);
    worst = std::max(worst, agent::cached_step_equivalence(ctx, model, st, views));
  }
  v.report("kv-cache-equivalence", worst < 1e-12,
           "100 random selective steps, max deviation " + util::format_double(worst));
}

void check_metric_oracles(Verifier& v) {
  env::Dataset data = env::generate_dataset(tiny_dataset_params(util::derive_seed(v.seed, 16)));
  util::Rng rng(util::derive_seed(v.seed, 17));

  // nDTW vs exhaustive alignment enumeration.
  double worst_ndtw = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const env::NavGraph& graph =
        data.train_worlds[static_cast<size_t>(rng.uniform_int(static_cast<int>(data.train_worlds.size())))]
            .graph;
    auto random_path = [&](int len) {
      std::vector<int> p;
      for (int i = 0; i < len; ++i) p.push_back(rng.uniform_int(graph.num_nodes()));
      return p;
    };
    const std::vector<int> p = random_path(1 + rng.uniform_int(6));
    const std::vector<int> r = random_path(1 + rng.uniform_int(6));
    const double expected =
        std::exp(-verify::brute_force_dtw(graph, p, r) / (static_cast<double>(r.size()) * 3.0));
    worst_ndtw = std::max(worst_ndtw, std::abs(metrics::ndtw(graph, p, r) - expected));
  }
  const bool ndtw_ok = worst_ndtw < 1e-9;

  // Navigation error vs Bellman-Ford.
  int ne_mismatches = 0;
  for (const env::World& w : data.train_worlds) {
    for (int trial = 0; trial < 10; ++trial) {
      const int goal = rng.uniform_int(w.graph.num_nodes());
      const int node = rng.uniform_int(w.graph.num_nodes());
      const auto oracle = verify::bellman_ford_from(w.graph, goal);
      if (metrics::navigation_error(w.graph, node, goal) != oracle[static_cast<size_t>(node)]) {
        ++ne_mismatches;
      }
    }
  }

  // Teacher policy is perfect on every split.
  bool teacher_ok = true;
  for (const char* split : {env::kSplitTrain, env::kSplitValSeen, env::kSplitValUnseen}) {
    auto report = metrics::evaluate_split<double>(nullptr, agent::Policy::kTeacher, data, split,
                                                  util::derive_seed(v.seed, 18), 0, 1);
    if (report.overall.sr != 1.0 || report.overall.spl != 1.0 || report.overall.ndtw != 1.0) {
      teacher_ok = false;
    }
  }

  v.report("metric-oracles", ndtw_ok && ne_mismatches == 0 && teacher_ok,
           "ndtw max dev " + util::format_double(worst_ndtw) + ", ne mismatches " +
               std::to_string(ne_mismatches) + ", teacher perfect: " +
               (teacher_ok ? "yes" : "no"));
}

}  // namespace

int cmd_verify(const std::vector<std::string>& args) {
  CLI::App app{"run the verification suite (gradients, masks, caching, metric oracles)"};
  uint64_t seed = 7;
  bool inject_mask_bug = false;
  app.add_option("--seed", seed, "verification seed");
  app.add_flag("--inject-mask-bug", inject_mask_bug,
               "deliberately corrupt the selective mask (self-test of the suite)")
      ->group("");  // hidden
  {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
      app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      app.exit(e);
      return util::kExitConfig;
    }
  }

  Verifier v{seed, inject_mask_bug};
  check_mask_freeze(v);
  check_stop_logit(v);
  check_grad_encoder(v);
  check_grad_bc_episode(v);
  check_aggregation_oracle(v);
  check_permutation_invariance(v);
  check_cache_equivalence(v);
  check_metric_oracles(v);

  if (v.failures == 0) {
    std::cout << "verification passed (" << v.checks << " checks)\n";
    return util::kExitOk;
  }
  std::cout << "verification FAILED (" << v.failures << " of " << v.checks << " checks)\n";
  return util::kExitVerifyFailed;
}

}  // namespace soat::cli
