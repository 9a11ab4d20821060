#pragma once

#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "soat/nn/tensor.hpp"

namespace soat::nn {

// Handle to a value recorded on a Tape. Only meaningful for the tape that
// produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Operations append a value plus a closure that, given the
// gradient of the output, accumulates gradients into the parents. backward()
// replays the closures in reverse recording order.
template <class T>
class Tape {
 public:
  // Backward closures receive the tape and the id of their own output so they
  // can read its gradient and accumulate into their parents'.
  using BackwardFn = std::function<void(Tape<T>&, Var self)>;

  Var leaf(Tensor<T> value) {
    values_.push_back(std::move(value));
    backs_.emplace_back();
    return Var{static_cast<int>(values_.size()) - 1};
  }

  Var node(Tensor<T> value, BackwardFn back) {
    values_.push_back(std::move(value));
    backs_.push_back(std::move(back));
    return Var{static_cast<int>(values_.size()) - 1};
  }

  const Tensor<T>& val(Var v) const { return values_[static_cast<size_t>(v.id)]; }

  // Gradient buffer; valid while a backward pass is live.
  Tensor<T>& grad(Var v) { return grads_[static_cast<size_t>(v.id)]; }

  void backward(Var loss) {
    const Tensor<T>& lv = val(loss);
    if (lv.rows != 1 || lv.cols != 1) {
      throw util::ConfigError("backward requires a 1x1 scalar loss");
    }
    if (!std::isfinite(static_cast<double>(lv.data[0]))) {
      throw util::NumericError("backward called on a non-finite loss");
    }
    grads_.clear();
    grads_.reserve(values_.size());
    for (const auto& v : values_) grads_.emplace_back(v.rows, v.cols);
    grads_live_ = true;
    grad(loss).data[0] = T(1);
    for (int i = static_cast<int>(backs_.size()) - 1; i >= 0; --i) {
      if (backs_[static_cast<size_t>(i)]) backs_[static_cast<size_t>(i)](*this, Var{i});
    }
  }

  bool grads_live() const { return grads_live_; }
  size_t num_nodes() const { return values_.size(); }

  void reset() {
    values_.clear();
    backs_.clear();
    grads_.clear();
    grads_live_ = false;
  }

 private:
  std::vector<Tensor<T>> values_;
  std::vector<BackwardFn> backs_;
  std::vector<Tensor<T>> grads_;
  bool grads_live_ = false;
};

// Named trainable tensor with its gradient accumulator.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols) {}

  void zero_grad() { grad.fill(T(0)); }
};

// Memoizes the tape leaf for each parameter so one episode references each
// parameter exactly once, and copies tape gradients back out after backward.
template <class T>
class ParamBinding {
 public:
  explicit ParamBinding(Tape<T>& tape) : tape_(&tape) {}

  Var operator()(Parameter<T>& p) {
    auto it = memo_.find(&p);
    if (it != memo_.end()) return it->second;
    Var v = tape_->leaf(p.value);
    memo_.emplace(&p, v);
    bound_.push_back({&p, v});
    return v;
  }

  // grad += scale * tape_grad for every bound parameter.
  void flush_grads(T scale = T(1)) {
    if (!tape_->grads_live()) {
      throw util::ConfigError("flush_grads called before backward");
    }
    for (auto& [p, v] : bound_) {
      const Tensor<T>& g = tape_->grad(v);
      for (size_t i = 0; i < g.size(); ++i) p->grad.data[i] += g.data[i] * scale;
    }
  }

  // Same, but into external buffers keyed by a parameter -> ordinal map; lets
  // concurrent rollouts accumulate without touching the shared grad buffers.
  void flush_grads_to(const std::unordered_map<const Parameter<T>*, int>& index,
                      std::vector<Tensor<T>>& sink, T scale = T(1)) {
    if (!tape_->grads_live()) {
      throw util::ConfigError("flush_grads_to called before backward");
    }
    for (auto& [p, v] : bound_) {
      auto it = index.find(p);
      if (it == index.end()) throw util::ConfigError("flush_grads_to: parameter not in index");
      Tensor<T>& dst = sink[static_cast<size_t>(it->second)];
      const Tensor<T>& g = tape_->grad(v);
      for (size_t i = 0; i < g.size(); ++i) dst.data[i] += g.data[i] * scale;
    }
  }

 private:
  Tape<T>* tape_;
  std::unordered_map<Parameter<T>*, Var> memo_;
  std::vector<std::pair<Parameter<T>*, Var>> bound_;
};

}  // namespace soat::nn
