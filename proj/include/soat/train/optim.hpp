#pragma once

#include <cmath>
#include <vector>

#include "soat/nn/tape.hpp"

namespace soat::train {

struct AdamWOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// AdamW with bias-corrected moments and decoupled weight decay. Decay applies
// to multi-row tensors only (weight matrices and embedding tables); biases and
// layer-norm parameters are single rows and stay undecayed.
template <class T>
class AdamW {
 public:
  AdamW(std::vector<nn::Parameter<T>*> params, AdamWOptions opts)
      : params_(std::move(params)), opts_(opts) {
    for (nn::Parameter<T>* p : params_) {
      m_.emplace_back(p->value.rows, p->value.cols);
      v_.emplace_back(p->value.rows, p->value.cols);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
      nn::Parameter<T>& p = *params_[k];
      const bool decay = p.value.rows > 1 && opts_.weight_decay > 0.0;
      for (size_t i = 0; i < p.value.size(); ++i) {
        const double g = static_cast<double>(p.grad.data[i]);
        double m = static_cast<double>(m_[k].data[i]);
        double v = static_cast<double>(v_[k].data[i]);
        m = opts_.beta1 * m + (1.0 - opts_.beta1) * g;
        v = opts_.beta2 * v + (1.0 - opts_.beta2) * g * g;
        m_[k].data[i] = static_cast<T>(m);
        v_[k].data[i] = static_cast<T>(v);
        const double m_hat = m / bc1;
        const double v_hat = v / bc2;
        double update = m_hat / (std::sqrt(v_hat) + opts_.eps);
        if (decay) update += opts_.weight_decay * static_cast<double>(p.value.data[i]);
        p.value.data[i] -= static_cast<T>(opts_.lr * update);
      }
    }
  }

  void zero_grad() {
    for (nn::Parameter<T>* p : params_) p->zero_grad();
  }

  uint64_t step_count() const { return t_; }
  std::vector<nn::Tensor<T>>& first_moments() { return m_; }
  std::vector<nn::Tensor<T>>& second_moments() { return v_; }

  void restore(uint64_t step_count, std::vector<nn::Tensor<T>> m, std::vector<nn::Tensor<T>> v) {
    if (m.size() != params_.size() || v.size() != params_.size()) {
      throw util::ConfigError("AdamW::restore: moment count mismatch");
    }
    for (size_t k = 0; k < params_.size(); ++k) {
      if (!m[k].same_shape(params_[k]->value) || !v[k].same_shape(params_[k]->value)) {
        throw util::ConfigError("AdamW::restore: moment shape mismatch for " + params_[k]->name);
      }
    }
    t_ = step_count;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  std::vector<nn::Parameter<T>*> params_;
  AdamWOptions opts_;
  std::vector<nn::Tensor<T>> m_, v_;
  uint64_t t_ = 0;
};

// Scales all gradients so the global L2 norm is at most `max_norm`; returns
// the pre-clip norm.
template <class T>
double clip_global_norm(const std::vector<nn::Parameter<T>*>& params, double max_norm) {
  double sq = 0.0;
  for (nn::Parameter<T>* p : params) {
    for (const T& g : p->grad.data) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (nn::Parameter<T>* p : params) {
      for (T& g : p->grad.data) g *= factor;
    }
  }
  return norm;
}

}  // namespace soat::train
