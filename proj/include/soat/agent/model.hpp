#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "soat/masks/masks.hpp"
#include "soat/nn/layers.hpp"
#include "soat/util/kvconfig.hpp"

namespace soat::agent {

struct ModelConfig {
  int d = 64;        // hidden size
  int heads = 4;
  int layers = 4;
  int d_ff = 256;
  int d_scene = 32;  // raw scene feature dimension
  int d_object = 32; // raw object feature dimension
  int d_action = 16; // tiled directional feature dimension, multiple of 4
  int vocab_size = 0;
  int max_instruction_len = 48;  // word tokens, CLS/SEP excluded
  double ln_eps = 1e-12;
  double init_std = 0.02;
  int max_episode_steps = 15;

  // Behavioural configuration; the ablation grid toggles these.
  masks::MaskPattern pattern = masks::MaskPattern::kSelectiveObject;
  bool use_objects = true;
  bool use_view_aggregation = true;

  void validate() const;
  util::KvConfig to_kv() const;
  static ModelConfig from_kv(util::KvConfig& kv);
};

// Applies the named pattern's conventional agent configuration.
ModelConfig config_for_pattern(ModelConfig base, masks::MaskPattern pattern);

template <class T>
struct Model {
  ModelConfig cfg;
  nn::Parameter<T> word_embedding;      // vocab x d
  nn::Parameter<T> position_embedding;  // (max_instruction_len + 2) x d
  nn::LinearLayer<T> scene_projection;  // d_scene -> d, bias-free so the stop
                                        // view's all-zeros feature projects to
                                        // exactly zero
  nn::LinearLayer<T> object_projection; // d_object -> d
  nn::LinearLayer<T> direction_encoding;// 4 -> d, bias-free
  std::vector<nn::EncoderLayer<T>> encoder;
  nn::LinearLayer<T> refine_w1;         // 2d -> d
  nn::LinearLayer<T> refine_w2;         // (d + d_action) -> d

  static Model make(const ModelConfig& cfg, uint64_t seed);

  std::vector<nn::Parameter<T>*> parameters();
  // Parameters trained by the alignment pretraining stage.
  std::vector<nn::Parameter<T>*> alignment_parameters();
  std::unordered_map<const nn::Parameter<T>*, int> parameter_index();
};

template <class T>
Model<T> Model<T>::make(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  util::Rng rng(util::derive_seed(seed, 0x30de1));
  const T std = static_cast<T>(cfg.init_std);
  m.word_embedding =
      nn::Parameter<T>("embeddings/word", nn::Tensor<T>::randn(cfg.vocab_size, cfg.d, rng, std));
  m.position_embedding = nn::Parameter<T>(
      "embeddings/position", nn::Tensor<T>::randn(cfg.max_instruction_len + 2, cfg.d, rng, std));
  m.scene_projection =
      nn::LinearLayer<T>::make("proj/scene", cfg.d_scene, cfg.d, rng, std, /*with_bias=*/false);
  m.object_projection = nn::LinearLayer<T>::make("proj/object", cfg.d_object, cfg.d, rng, std);
  m.direction_encoding =
      nn::LinearLayer<T>::make("proj/direction", 4, cfg.d, rng, std, /*with_bias=*/false);
  for (int l = 0; l < cfg.layers; ++l) {
    m.encoder.push_back(nn::EncoderLayer<T>::make("encoder/" + std::to_string(l), cfg.d, cfg.heads,
                                                  cfg.d_ff, rng, std, static_cast<T>(cfg.ln_eps)));
  }
  m.refine_w1 = nn::LinearLayer<T>::make("refine/w1", 2 * cfg.d, cfg.d, rng, std, /*with_bias=*/false);
  m.refine_w2 = nn::LinearLayer<T>::make("refine/w2", cfg.d + cfg.d_action, cfg.d, rng, std,
                                         /*with_bias=*/false);
  return m;
}

template <class T>
std::vector<nn::Parameter<T>*> Model<T>::parameters() {
  std::vector<nn::Parameter<T>*> out;
  out.push_back(&word_embedding);
  out.push_back(&position_embedding);
  scene_projection.collect(out);
  object_projection.collect(out);
  direction_encoding.collect(out);
  for (auto& layer : encoder) layer.collect(out);
  refine_w1.collect(out);
  refine_w2.collect(out);
  return out;
}

template <class T>
std::vector<nn::Parameter<T>*> Model<T>::alignment_parameters() {
  std::vector<nn::Parameter<T>*> out;
  out.push_back(&word_embedding);
  scene_projection.collect(out);
  object_projection.collect(out);
  return out;
}

template <class T>
std::unordered_map<const nn::Parameter<T>*, int> Model<T>::parameter_index() {
  std::unordered_map<const nn::Parameter<T>*, int> map;
  auto params = parameters();
  for (size_t i = 0; i < params.size(); ++i) map.emplace(params[i], static_cast<int>(i));
  return map;
}

}  // namespace soat::agent
