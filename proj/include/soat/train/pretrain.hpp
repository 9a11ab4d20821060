#pragma once

#include <ostream>

#include "soat/agent/agent.hpp"
#include "soat/env/env.hpp"
#include "soat/train/optim.hpp"
#include "soat/util/text.hpp"

namespace soat::train {

struct PretrainConfig {
  int iterations = 1500;
  int batch_size = 32;
  double lr = 2e-3;
  uint64_t seed = 1;
  int log_every = 100;
  int eval_batches = 25;
};

struct PretrainResult {
  double final_loss = 0.0;
  double holdout_accuracy = 0.0;
};

namespace detail {

// One (word token, feature) batch; scene and object batches alternate so each
// batch projects through a single input projection. Classes repeat within a
// batch whenever the batch is larger than the class count, so matching is
// scored at class level.
template <class T>
struct AlignmentBatch {
  std::vector<int> tokens;
  std::vector<int> classes;
  nn::Tensor<T> features;
  bool is_scene = false;
};

template <class T>
AlignmentBatch<T> sample_alignment_batch(const env::Dataset& data, int batch, bool is_scene,
                                         util::Rng& rng) {
  const env::FeatureSynth& synth = data.synth;
  AlignmentBatch<T> out;
  out.is_scene = is_scene;
  const int dim = is_scene ? synth.dim_scene : synth.dim_object;
  out.features = nn::Tensor<T>(batch, dim);
  for (int i = 0; i < batch; ++i) {
    if (is_scene) {
      const int cls = rng.uniform_int(data.vocab.num_scene_classes);
      out.tokens.push_back(data.vocab.scene_word(cls));
      out.classes.push_back(cls);
      auto f = synth.scene_feature(cls, rng);
      for (int j = 0; j < dim; ++j) out.features.at(i, j) = static_cast<T>(f[static_cast<size_t>(j)]);
    } else {
      const int cls = rng.uniform_int(data.vocab.num_object_classes);
      out.tokens.push_back(data.vocab.object_word(cls));
      out.classes.push_back(cls);
      auto f = synth.object_feature(cls, rng.uniform(0.8, 1.2), rng);
      for (int j = 0; j < dim; ++j) out.features.at(i, j) = static_cast<T>(f[static_cast<size_t>(j)]);
    }
  }
  return out;
}

// Returns {loss var, row-direction class-level top-1 hits}; both matching
// directions are averaged into the loss.
template <class T>
std::pair<nn::Var, int> alignment_batch_loss(agent::Model<T>& model, agent::EpisodeContext<T>& ctx,
                                             const AlignmentBatch<T>& batch) {
  const int n = static_cast<int>(batch.tokens.size());
  nn::Var words = nn::gather_rows(ctx.tape, ctx.bind(model.word_embedding), batch.tokens);
  nn::LinearLayer<T>& proj = batch.is_scene ? model.scene_projection : model.object_projection;
  nn::Var feats = nn::linear_forward(ctx.tape, ctx.bind, nn::constant(ctx.tape, batch.features), proj);
  const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(model.cfg.d)));
  nn::Var logits_wf = nn::scale(ctx.tape, nn::matmul_nt(ctx.tape, words, feats), inv_sqrt_d);
  nn::Var logits_fw = nn::scale(ctx.tape, nn::matmul_nt(ctx.tape, feats, words), inv_sqrt_d);

  std::vector<nn::Var> terms;
  int hits = 0;
  const nn::Tensor<T>& lv = ctx.tape.val(logits_wf);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < n; ++j) {
      if (lv.at(i, j) > lv.at(i, best)) best = j;
    }
    if (batch.classes[static_cast<size_t>(best)] == batch.classes[static_cast<size_t>(i)]) ++hits;
    terms.push_back(nn::cross_entropy_with_logits(
        ctx.tape, nn::gather_rows(ctx.tape, logits_wf, std::vector<int>{i}), i));
    terms.push_back(nn::cross_entropy_with_logits(
        ctx.tape, nn::gather_rows(ctx.tape, logits_fw, std::vector<int>{i}), i));
  }
  nn::Var loss = nn::scale(ctx.tape, nn::add_n(ctx.tape, terms), static_cast<T>(1.0 / (2.0 * n)));
  return {loss, hits};
}

}  // namespace detail

// Metric only; no parameter updates.
template <class T>
double alignment_holdout_accuracy(agent::Model<T>& model, const env::Dataset& data, int batch,
                                  int batches, uint64_t seed) {
  util::Rng rng(util::derive_seed(seed, 0xa11e));
  int hits = 0, total = 0;
  for (int b = 0; b < batches; ++b) {
    agent::EpisodeContext<T> ctx;
    auto data_batch = detail::sample_alignment_batch<T>(data, batch, b % 2 == 0, rng);
    auto [loss, batch_hits] = detail::alignment_batch_loss(model, ctx, data_batch);
    (void)loss;
    hits += batch_hits;
    total += batch;
  }
  return static_cast<double>(hits) / total;
}

// Contrastive token/feature alignment; trains the word embeddings and the two
// input projections only.
template <class T>
PretrainResult pretrain_alignment(agent::Model<T>& model, const env::Dataset& data,
                                  const PretrainConfig& cfg, std::ostream* log) {
  if (cfg.batch_size < 2) {
    throw util::ConfigError("pretrain_alignment: batch size must be at least 2");
  }
  auto params = model.alignment_parameters();
  AdamWOptions opts;
  opts.lr = cfg.lr;
  opts.weight_decay = 0.0;
  AdamW<T> optimizer(params, opts);
  const auto index = model.parameter_index();

  util::Rng rng(util::derive_seed(cfg.seed, 0x9e7a));
  PretrainResult result;
  for (int it = 1; it <= cfg.iterations; ++it) {
    agent::EpisodeContext<T> ctx;
    auto batch = detail::sample_alignment_batch<T>(data, cfg.batch_size, it % 2 == 0, rng);
    auto [loss, hits] = detail::alignment_batch_loss(model, ctx, batch);
    (void)hits;
    result.final_loss = static_cast<double>(ctx.tape.val(loss).data[0]);
    if (!std::isfinite(result.final_loss)) {
      throw util::NumericError("pretrain_alignment: non-finite loss");
    }
    ctx.tape.backward(loss);
    ctx.bind.flush_grads();
    optimizer.step();
    optimizer.zero_grad();
    if (log && (it % cfg.log_every == 0 || it == cfg.iterations)) {
      (*log) << "pretrain " << it << " loss " << util::format_metric(result.final_loss) << "\n";
    }
  }
  result.holdout_accuracy = alignment_holdout_accuracy(model, data, cfg.batch_size,
                                                       cfg.eval_batches, cfg.seed + 1);
  if (log) {
    (*log) << "pretrain done accuracy " << util::format_metric(result.holdout_accuracy) << "\n";
  }
  return result;
}

}  // namespace soat::train
