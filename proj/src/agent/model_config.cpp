#include "soat/agent/model.hpp"

#include "soat/util/errors.hpp"
#include "soat/util/text.hpp"

namespace soat::agent {

void ModelConfig::validate() const {
  if (d < 4 || heads < 1 || d % heads != 0) {
    throw util::ConfigError("model config: hidden size must be a positive multiple of head count");
  }
  if (layers < 1) throw util::ConfigError("model config: need at least one encoder layer");
  if (d_action < 4 || d_action % 4 != 0) {
    throw util::ConfigError("model config: directional dimension must be a positive multiple of 4");
  }
  if (vocab_size < 1) throw util::ConfigError("model config: vocab size not set");
  if (max_instruction_len < 1) throw util::ConfigError("model config: max instruction length < 1");
  if (!(ln_eps > 0.0)) throw util::ConfigError("model config: layer-norm epsilon must be positive");
  if (max_episode_steps < 1) throw util::ConfigError("model config: max episode steps < 1");
  if (pattern == masks::MaskPattern::kObjectOnly && !(use_objects && use_view_aggregation)) {
    throw util::ConfigError("object-only pattern requires object features and view aggregation");
  }
}

util::KvConfig ModelConfig::to_kv() const {
  util::KvConfig kv;
  kv.set("model.d", std::to_string(d));
  kv.set("model.heads", std::to_string(heads));
  kv.set("model.layers", std::to_string(layers));
  kv.set("model.d_ff", std::to_string(d_ff));
  kv.set("model.d_scene", std::to_string(d_scene));
  kv.set("model.d_object", std::to_string(d_object));
  kv.set("model.d_action", std::to_string(d_action));
  kv.set("model.vocab_size", std::to_string(vocab_size));
  kv.set("model.max_instruction_len", std::to_string(max_instruction_len));
  kv.set("model.ln_eps", util::format_double(ln_eps));
  kv.set("model.init_std", util::format_double(init_std));
  kv.set("model.max_episode_steps", std::to_string(max_episode_steps));
  kv.set("model.pattern", masks::pattern_name(pattern));
  kv.set("model.use_objects", use_objects ? "true" : "false");
  kv.set("model.use_view_aggregation", use_view_aggregation ? "true" : "false");
  return kv;
}

ModelConfig ModelConfig::from_kv(util::KvConfig& kv) {
  ModelConfig c;
  c.d = kv.get_int("model.d", c.d);
  c.heads = kv.get_int("model.heads", c.heads);
  c.layers = kv.get_int("model.layers", c.layers);
  c.d_ff = kv.get_int("model.d_ff", c.d_ff);
  c.d_scene = kv.get_int("model.d_scene", c.d_scene);
  c.d_object = kv.get_int("model.d_object", c.d_object);
  c.d_action = kv.get_int("model.d_action", c.d_action);
  c.vocab_size = kv.get_int("model.vocab_size", c.vocab_size);
  c.max_instruction_len = kv.get_int("model.max_instruction_len", c.max_instruction_len);
  c.ln_eps = kv.get_double("model.ln_eps", c.ln_eps);
  c.init_std = kv.get_double("model.init_std", c.init_std);
  c.max_episode_steps = kv.get_int("model.max_episode_steps", c.max_episode_steps);
  c.pattern = masks::pattern_from_name(kv.get_string("model.pattern", masks::pattern_name(c.pattern)));
  c.use_objects = kv.get_bool("model.use_objects", c.use_objects);
  c.use_view_aggregation = kv.get_bool("model.use_view_aggregation", c.use_view_aggregation);
  return c;
}

ModelConfig config_for_pattern(ModelConfig base, masks::MaskPattern pattern) {
  base.pattern = pattern;
  switch (pattern) {
    case masks::MaskPattern::kBaseline:
      base.use_objects = false;
      base.use_view_aggregation = false;
      break;
    case masks::MaskPattern::kAllAttention:
      base.use_objects = true;
      base.use_view_aggregation = true;
      break;
    case masks::MaskPattern::kSelectiveObject:
      base.use_objects = true;
      base.use_view_aggregation = true;
      break;
    case masks::MaskPattern::kSelectiveScene:
      base.use_objects = true;
      base.use_view_aggregation = false;
      break;
    case masks::MaskPattern::kObjectOnly:
      base.use_objects = true;
      base.use_view_aggregation = true;
      break;
  }
  return base;
}

}  // namespace soat::agent
