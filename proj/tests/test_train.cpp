#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "soat/train/train.hpp"

using namespace soat;
using agent::EpisodeContext;
using agent::Model;
using agent::ModelConfig;
using masks::MaskPattern;
using nn::Tensor64;
using nn::Var;

namespace {

ModelConfig tiny_config(int vocab, MaskPattern pattern = MaskPattern::kSelectiveObject) {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.d_ff = 32;
  cfg.d_scene = 6;
  cfg.d_object = 6;
  cfg.d_action = 8;
  cfg.vocab_size = vocab;
  cfg.max_instruction_len = 40;
  cfg.max_episode_steps = 3;
  return agent::config_for_pattern(cfg, pattern);
}

env::DatasetParams tiny_dataset(uint64_t seed) {
  env::DatasetParams p;
  p.seed = seed;
  p.train_worlds = 2;
  p.unseen_worlds = 1;
  p.nodes_min = 10;
  p.nodes_max = 12;
  p.scene_classes = 4;
  p.object_classes = 8;
  p.episodes_per_train_world = 6;
  p.episodes_val_seen_per_world = 2;
  p.episodes_per_unseen_world = 3;
  p.feature_dim_scene = 6;
  p.feature_dim_object = 6;
  return p;
}

// Two nodes 5 m apart: stopping at the start is a failure, at the goal a
// success. Used by the policy-gradient enumeration oracle.
struct TwoNodeWorld {
  env::NavGraph graph;
  env::Episode episode;
  env::FeatureSynth synth;

  TwoNodeWorld() {
    env::GraphNode a, b;
    b.x = 5.0;
    a.scene_class = 0;
    b.scene_class = 1;
    graph.nodes = {a, b};
    graph.edges = {{0, 1}};
    graph.rebuild_adjacency();
    episode.id = 1;
    episode.start = 0;
    episode.goal = 1;
    episode.path = {0, 1};
    episode.instruction = {5, 6};
    synth = env::FeatureSynth::make(3, 4, 8, 6, 6, 0.0);
  }
};

}  // namespace

TEST_CASE("adamw matches the reference update formula on scalars") {
  // Library step.
  nn::Parameter<double> p("w", Tensor64::full(2, 2, 1.5));  // multi-row: decays
  train::AdamWOptions opts;
  opts.lr = 0.01;
  opts.beta1 = 0.9;
  opts.beta2 = 0.999;
  opts.eps = 1e-8;
  opts.weight_decay = 0.04;
  train::AdamW<double> optimizer({&p}, opts);

  // Independent transcription, tracked per scalar.
  double theta = 1.5, m = 0.0, v = 0.0;
  const double grads[4] = {0.3, -1.1, 0.02, 2.4};
  for (int t = 1; t <= 4; ++t) {
    const double g = grads[t - 1];
    p.grad.fill(g);
    optimizer.step();
    m = opts.beta1 * m + (1 - opts.beta1) * g;
    v = opts.beta2 * v + (1 - opts.beta2) * g * g;
    const double m_hat = m / (1 - std::pow(opts.beta1, t));
    const double v_hat = v / (1 - std::pow(opts.beta2, t));
    theta -= opts.lr * (m_hat / (std::sqrt(v_hat) + opts.eps) + opts.weight_decay * theta);
    for (double x : p.value.data) CHECK(std::abs(x - theta) < 1e-12);
  }

  // Single-row parameters (biases, layer norm) are not decayed.
  nn::Parameter<double> bias("b", Tensor64::full(1, 3, 2.0));
  train::AdamW<double> opt2({&bias}, opts);
  bias.grad.fill(0.0);
  opt2.step();
  for (double x : bias.value.data) CHECK(x == 2.0);  // zero grad, no decay
}

TEST_CASE("clip_global_norm rescales exactly at the threshold") {
  nn::Parameter<double> a("a", Tensor64::full(1, 3, 0.0));
  nn::Parameter<double> b("b", Tensor64::full(1, 4, 0.0));
  a.grad.fill(3.0);
  b.grad.fill(4.0);
  const double norm = std::sqrt(9.0 * 3 + 16.0 * 4);
  std::vector<nn::Parameter<double>*> params{&a, &b};
  CHECK(train::clip_global_norm(params, 1e9) == doctest::Approx(norm));
  CHECK(a.grad.data[0] == 3.0);  // below threshold: untouched

  const double reported = train::clip_global_norm(params, 1.0);
  CHECK(reported == doctest::Approx(norm));
  double clipped_sq = 0.0;
  for (auto* p : params) {
    for (double g : p->grad.data) clipped_sq += g * g;
  }
  CHECK(std::sqrt(clipped_sq) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("bc loss: near ln(K+1) untrained, near zero with injected logits") {
  env::Dataset data = env::generate_dataset(tiny_dataset(7));
  Model<double> model = Model<double>::make(tiny_config(data.vocab.vocab_size()), 21);
  const auto index = model.parameter_index();
  auto sink = train::make_grad_sink(model);

  // Untrained: logits are near zero, per-step loss is close to the uniform
  // bound ln(K+1). Average over episodes and compare step-wise expectations.
  double total_loss = 0.0;
  double total_uniform = 0.0;
  int steps = 0;
  for (const auto& episode : data.train_episodes) {
    const env::NavGraph& graph = data.world_for(env::kSplitTrain, episode).graph;
    auto stats = train::bc_episode_loss(model, graph, episode, data.synth, 100 + episode.id, index,
                                        sink, 1.0);
    total_loss += stats.loss * stats.steps;
    steps += stats.steps;
    // Uniform bound per visited node: ln(num_neighbors + 1), averaged later.
    int node = episode.start;
    for (size_t i = 0; i + 1 < episode.path.size(); ++i) {
      total_uniform += std::log(static_cast<double>(graph.adjacency[(size_t)node].size()) + 1.0);
      node = episode.path[i + 1];
    }
    total_uniform += std::log(static_cast<double>(graph.adjacency[(size_t)node].size()) + 1.0);
  }
  const double mean_loss = total_loss / steps;
  const double mean_uniform = total_uniform / steps;
  CHECK(mean_loss == doctest::Approx(mean_uniform).epsilon(0.2));

  // Perfect model via logit injection: cross-entropy of a +50 teacher logit.
  nn::Tape<double> tape;
  Tensor64 scores(1, 4);
  scores.data = {0.0, 50.0, 0.0, 0.0};
  Var loss = nn::cross_entropy_with_logits(tape, tape.leaf(scores), 1);
  CHECK(tape.val(loss).data[0] < 1e-12);
}

TEST_CASE("bc gradient check on a 2-step episode") {
  env::Dataset data = env::generate_dataset(tiny_dataset(8));
  Model<double> model = Model<double>::make(tiny_config(data.vocab.vocab_size()), 22);
  const env::Episode* episode = &data.train_episodes.front();
  for (const auto& e : data.train_episodes) {
    if (e.path.size() == 2) episode = &e;  // 1 hop + stop = 2 teacher steps
  }
  const env::NavGraph& graph = data.world_for(env::kSplitTrain, *episode).graph;
  auto params = model.parameters();
  auto loss_fn = [&](bool with_grad) {
    EpisodeContext<double> ctx;
    util::Rng noise(555);
    agent::RolloutOptions opts;
    opts.select = agent::ActionSelect::kTeacherForced;
    opts.record_bc_loss = true;
    auto rollout = agent::run_model_episode(ctx, model, graph, *episode, data.synth, noise,
                                            nullptr, opts);
    Var loss = nn::scale(ctx.tape, nn::add_n(ctx.tape, rollout.step_losses),
                         1.0 / rollout.step_losses.size());
    const double v = ctx.tape.val(loss).data[0];
    if (with_grad) {
      ctx.tape.backward(loss);
      ctx.bind.flush_grads();
    }
    return v;
  };
  CHECK(nn::grad_check<double>(loss_fn, params, 1e-5, 3, 11) < 1e-3);
}

TEST_CASE("pg with advantage exactly zero contributes no gradient") {
  TwoNodeWorld world;
  Model<double> model = Model<double>::make(tiny_config(16), 23);
  const auto index = model.parameter_index();
  auto sink = train::make_grad_sink(model);

  train::RewardConfig reward;
  reward.success_reward = 0.5;
  reward.failure_reward = 0.5;  // deterministic return regardless of outcome
  reward.step_penalty = 0.0;
  auto stats = train::pg_episode_loss(model, world.graph, world.episode, world.synth, 5, 6,
                                      /*baseline=*/0.5, reward, index, sink, 1.0);
  CHECK(stats.pg_return == 0.5);
  for (const auto& buffer : sink) {
    for (double g : buffer.data) CHECK(g == 0.0);
  }
}

TEST_CASE("pg estimator mean aligns with the exact enumerated policy gradient") {
  TwoNodeWorld world;
  Model<double> model = Model<double>::make(tiny_config(16), 24);
  const auto index = model.parameter_index();
  auto params = model.parameters();

  train::RewardConfig reward;  // defaults: +1 success, -1 failure, -0.01/step

  // Exact gradient of the surrogate loss E[-logP(tau) * R(tau)] at b = 0:
  // enumerate every action sequence (move/stop per step, 3-step cap).
  auto exact = train::make_grad_sink(model);
  std::vector<std::vector<int>> sequences;
  for (int first : {0, 1}) {
    if (first == 1) {
      sequences.push_back({1});
      continue;
    }
    for (int second : {0, 1}) {
      if (second == 1) {
        sequences.push_back({0, 1});
        continue;
      }
      for (int third : {0, 1}) sequences.push_back({0, 0, third});
    }
  }
  for (const auto& seq : sequences) {
    EpisodeContext<double> ctx;
    util::Rng noise(999);  // sigma is 0; the stream is unused but required
    agent::AgentState<double> st = agent::init_state(ctx, model, world.episode.instruction);
    int node = world.episode.start, came_from = -1;
    std::vector<Var> log_probs;
    int final_node = node;
    for (int action : seq) {
      auto views = env::render_observation(world.graph, node, came_from, world.synth, noise);
      auto res = agent::step(ctx, model, st, views);
      log_probs.push_back(nn::pick(ctx.tape, nn::log_softmax(ctx.tape, res.view_scores), 0, action));
      if (action == static_cast<int>(views.size()) - 1) break;
      const auto& chosen = views[static_cast<size_t>(action)];
      st = agent::advance_state(ctx, model, st, res, chosen);
      came_from = node;
      node = chosen.target_node;
      final_node = node;
    }
    Var log_p = nn::add_n(ctx.tape, log_probs);
    const double p_tau = std::exp(ctx.tape.val(log_p).data[0]);
    const double ne = metrics::navigation_error(world.graph, final_node, world.episode.goal);
    const double ret = (metrics::success(ne) ? reward.success_reward : reward.failure_reward) +
                       reward.step_penalty * static_cast<double>(seq.size());
    // d/dtheta of P(tau) * (-logP(tau) * R): contribution P * R * d(-logP).
    Var loss = nn::scale(ctx.tape, log_p, -1.0);
    ctx.tape.backward(loss);
    ctx.bind.flush_grads_to(index, exact, p_tau * ret);
  }

  // Estimator mean over sampled rollouts with baseline 0.
  auto estimate = train::make_grad_sink(model);
  const int samples = 4000;
  for (int k = 0; k < samples; ++k) {
    train::pg_episode_loss(model, world.graph, world.episode, world.synth, 50, 1000 + k, 0.0,
                           reward, index, estimate, 1.0 / samples);
  }

  double dot = 0.0, exact_norm = 0.0, est_norm = 0.0;
  for (size_t i = 0; i < exact.size(); ++i) {
    for (size_t j = 0; j < exact[i].size(); ++j) {
      dot += exact[i].data[j] * estimate[i].data[j];
      exact_norm += exact[i].data[j] * exact[i].data[j];
      est_norm += estimate[i].data[j] * estimate[i].data[j];
    }
  }
  CHECK(exact_norm > 0.0);
  CHECK(est_norm > 0.0);
  CHECK(dot > 0.0);
  // Direction agreement, not just positivity.
  CHECK(dot / (std::sqrt(exact_norm) * std::sqrt(est_norm)) > 0.5);
}

TEST_CASE("pretraining rejects degenerate batches and reaches high accuracy") {
  env::Dataset data = env::generate_dataset(tiny_dataset(9));
  Model<double> model = Model<double>::make(tiny_config(data.vocab.vocab_size()), 25);

  train::PretrainConfig bad;
  bad.batch_size = 1;
  CHECK_THROWS_AS(train::pretrain_alignment(model, data, bad, nullptr), util::ConfigError);

  // Untrained: accuracy sits near class-level chance (few classes, so a
  // 32-item batch repeats classes and chance is ~1/classes, not 1/batch).
  const double chance = train::alignment_holdout_accuracy(model, data, 32, 25, 77);
  CHECK(chance < 0.35);

  // Trained on noiseless features: accuracy approaches 100%.
  env::DatasetParams noiseless_params = tiny_dataset(10);
  noiseless_params.noise_sigma = 0.0;
  env::Dataset noiseless = env::generate_dataset(noiseless_params);
  Model<double> model2 = Model<double>::make(tiny_config(noiseless.vocab.vocab_size()), 26);
  train::PretrainConfig pc;
  pc.iterations = 1500;
  pc.batch_size = 32;
  pc.seed = 5;
  auto result = train::pretrain_alignment(model2, noiseless, pc, nullptr);
  CHECK(result.holdout_accuracy >= 0.99);

  // Default noise level: > 95% held-out matching accuracy.
  Model<double> model3 = Model<double>::make(tiny_config(data.vocab.vocab_size()), 27);
  auto noisy = train::pretrain_alignment(model3, data, pc, nullptr);
  CHECK(noisy.holdout_accuracy > 0.95);
}

TEST_CASE("train loop: lr 0 leaves parameters bit-identical") {
  env::Dataset data = env::generate_dataset(tiny_dataset(11));
  Model<double> model = Model<double>::make(tiny_config(data.vocab.vocab_size()), 28);
  std::vector<Tensor64> before;
  for (auto* p : model.parameters()) before.push_back(p->value);

  namespace fs = std::filesystem;
  const std::string out = (fs::temp_directory_path() / "soat_test_lr0").string();
  fs::remove_all(out);
  train::TrainConfig cfg;
  cfg.seed = 3;
  cfg.iterations = 3;
  cfg.batch_size = 4;
  cfg.lr = 0.0;
  cfg.pretrain = false;
  cfg.eval_every = 0;
  cfg.log_every = 1;
  train::train_loop(model, data, cfg, out);

  auto params = model.parameters();
  for (size_t i = 0; i < params.size(); ++i) {
    CHECK(std::memcmp(params[i]->value.data.data(), before[i].data.data(),
                      before[i].size() * sizeof(double)) == 0);
  }
  fs::remove_all(out);
}

TEST_CASE("train loop: same seed, single worker, identical logs; synth untouched") {
  env::Dataset data = env::generate_dataset(tiny_dataset(12));
  const uint64_t synth_hash = data.synth.content_hash();

  namespace fs = std::filesystem;
  auto run = [&](const std::string& dir) {
    fs::remove_all(dir);
    Model<double> model = Model<double>::make(tiny_config(data.vocab.vocab_size()), 29);
    train::TrainConfig cfg;
    cfg.seed = 13;
    cfg.iterations = 4;
    cfg.batch_size = 4;
    cfg.pretrain = true;
    cfg.pretrain_iterations = 20;
    cfg.pretrain_batch = 8;
    cfg.eval_every = 2;
    cfg.eval_episodes = 4;
    cfg.log_every = 1;
    train::train_loop(model, data, cfg, dir);
  };
  const std::string out_a = (fs::temp_directory_path() / "soat_test_det_a").string();
  const std::string out_b = (fs::temp_directory_path() / "soat_test_det_b").string();
  run(out_a);
  run(out_b);
  CHECK(util::files_byte_identical((fs::path(out_a) / "train_log.txt").string(),
                                   (fs::path(out_b) / "train_log.txt").string()));
  CHECK(util::files_byte_identical((fs::path(out_a) / "checkpoint_final.ckpt").string(),
                                   (fs::path(out_b) / "checkpoint_final.ckpt").string()));
  // Training never mutates the feature synthesizer (contamination guard).
  CHECK(data.synth.content_hash() == synth_hash);
  fs::remove_all(out_a);
  fs::remove_all(out_b);
}

TEST_CASE("bc loss is invariant under batch permutation (mean reduction)") {
  env::Dataset data = env::generate_dataset(tiny_dataset(13));
  Model<double> model = Model<double>::make(tiny_config(data.vocab.vocab_size()), 30);
  const auto index = model.parameter_index();
  auto sink = train::make_grad_sink(model);

  std::vector<const env::Episode*> batch;
  for (const auto& e : data.train_episodes) batch.push_back(&e);
  auto mean_loss = [&](const std::vector<const env::Episode*>& eps) {
    double total = 0.0;
    for (const auto* e : eps) {
      const env::NavGraph& g = data.world_for(env::kSplitTrain, *e).graph;
      total += train::bc_episode_loss(model, g, *e, data.synth, 400 + e->id, index, sink, 0.0).loss;
    }
    return total / eps.size();
  };
  const double forward_order = mean_loss(batch);
  std::reverse(batch.begin(), batch.end());
  const double reverse_order = mean_loss(batch);
  CHECK(std::abs(forward_order - reverse_order) < 1e-12);
}
