#include "soat/train/train.hpp"

namespace soat::train {

void TrainConfig::apply_kv(util::KvConfig& kv) {
  seed = kv.get_u64("train.seed", seed);
  iterations = kv.get_int("train.iterations", iterations);
  batch_size = kv.get_int("train.batch_size", batch_size);
  bc_fraction = kv.get_double("train.bc_fraction", bc_fraction);
  lr = kv.get_double("train.lr", lr);
  beta1 = kv.get_double("train.beta1", beta1);
  beta2 = kv.get_double("train.beta2", beta2);
  adam_eps = kv.get_double("train.adam_eps", adam_eps);
  weight_decay = kv.get_double("train.weight_decay", weight_decay);
  grad_clip = kv.get_double("train.grad_clip", grad_clip);
  baseline_decay = kv.get_double("train.baseline_decay", baseline_decay);
  success_reward = kv.get_double("train.success_reward", success_reward);
  failure_reward = kv.get_double("train.failure_reward", failure_reward);
  step_penalty = kv.get_double("train.step_penalty", step_penalty);
  entropy_weight = kv.get_double("train.entropy_weight", entropy_weight);
  pretrain = kv.get_bool("train.pretrain", pretrain);
  pretrain_iterations = kv.get_int("train.pretrain_iterations", pretrain_iterations);
  pretrain_batch = kv.get_int("train.pretrain_batch", pretrain_batch);
  pretrain_lr = kv.get_double("train.pretrain_lr", pretrain_lr);
  eval_every = kv.get_int("train.eval_every", eval_every);
  eval_episodes = kv.get_int("train.eval_episodes", eval_episodes);
  checkpoint_every = kv.get_int("train.checkpoint_every", checkpoint_every);
  log_every = kv.get_int("train.log_every", log_every);
  workers = kv.get_int("train.workers", workers);
}

util::KvConfig TrainConfig::to_kv() const {
  util::KvConfig kv;
  kv.set("train.seed", std::to_string(seed));
  kv.set("train.iterations", std::to_string(iterations));
  kv.set("train.batch_size", std::to_string(batch_size));
  kv.set("train.bc_fraction", util::format_double(bc_fraction));
  kv.set("train.lr", util::format_double(lr));
  kv.set("train.beta1", util::format_double(beta1));
  kv.set("train.beta2", util::format_double(beta2));
  kv.set("train.adam_eps", util::format_double(adam_eps));
  kv.set("train.weight_decay", util::format_double(weight_decay));
  kv.set("train.grad_clip", util::format_double(grad_clip));
  kv.set("train.baseline_decay", util::format_double(baseline_decay));
  kv.set("train.success_reward", util::format_double(success_reward));
  kv.set("train.failure_reward", util::format_double(failure_reward));
  kv.set("train.step_penalty", util::format_double(step_penalty));
  kv.set("train.entropy_weight", util::format_double(entropy_weight));
  kv.set("train.pretrain", pretrain ? "true" : "false");
  kv.set("train.pretrain_iterations", std::to_string(pretrain_iterations));
  kv.set("train.pretrain_batch", std::to_string(pretrain_batch));
  kv.set("train.pretrain_lr", util::format_double(pretrain_lr));
  kv.set("train.eval_every", std::to_string(eval_every));
  kv.set("train.eval_episodes", std::to_string(eval_episodes));
  kv.set("train.checkpoint_every", std::to_string(checkpoint_every));
  kv.set("train.log_every", std::to_string(log_every));
  kv.set("train.workers", std::to_string(workers));
  return kv;
}

}  // namespace soat::train
