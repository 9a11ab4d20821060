#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "soat/nn/ops.hpp"

namespace soat::nn {

template <class T>
struct LinearLayer {
  LinearLayer() = default;

  Parameter<T> weight;  // in x out
  Parameter<T> bias;    // 1 x out when has_bias
  bool has_bias = true;

  static LinearLayer make(const std::string& name, int in, int out, util::Rng& rng, T init_std,
                          bool with_bias = true) {
    LinearLayer l;
    l.weight = Parameter<T>(name + "/weight", Tensor<T>::randn(in, out, rng, init_std));
    l.has_bias = with_bias;
    if (with_bias) l.bias = Parameter<T>(name + "/bias", Tensor<T>::zeros(1, out));
    return l;
  }

  int in_dim() const { return weight.value.rows; }
  int out_dim() const { return weight.value.cols; }

  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&weight);
    if (has_bias) out.push_back(&bias);
  }
};

template <class T>
Var linear_forward(Tape<T>& tp, ParamBinding<T>& bind, Var x, LinearLayer<T>& layer) {
  if (tp.val(x).cols != layer.in_dim()) {
    throw util::ConfigError("linear_forward: input has " + std::to_string(tp.val(x).cols) +
                            " cols, layer expects " + std::to_string(layer.in_dim()));
  }
  Var y = matmul(tp, x, bind(layer.weight));
  if (layer.has_bias) y = add_row_broadcast(tp, y, bind(layer.bias));
  return y;
}

// Post-norm transformer encoder layer (attention + residual + LN, then
// feed-forward + residual + LN), GELU activation.
template <class T>
struct EncoderLayer {
  int heads = 1;
  T ln_eps = static_cast<T>(1e-12);
  LinearLayer<T> wq, wk, wv, wo;
  LinearLayer<T> ff1, ff2;
  Parameter<T> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;

  static EncoderLayer make(const std::string& name, int d, int num_heads, int d_ff, util::Rng& rng,
                           T init_std, T eps) {
    if (num_heads < 1 || d % num_heads != 0) {
      throw util::ConfigError("encoder layer: hidden size must be divisible by head count");
    }
    if (!(eps > T(0))) throw util::ConfigError("encoder layer: layer-norm epsilon must be positive");
    EncoderLayer l;
    l.heads = num_heads;
    l.ln_eps = eps;
    l.wq = LinearLayer<T>::make(name + "/attn/wq", d, d, rng, init_std);
    // No key bias: it shifts every score for a query equally and cancels in
    // softmax, leaving a parameter with an identically-zero gradient.
    l.wk = LinearLayer<T>::make(name + "/attn/wk", d, d, rng, init_std, /*with_bias=*/false);
    l.wv = LinearLayer<T>::make(name + "/attn/wv", d, d, rng, init_std);
    l.wo = LinearLayer<T>::make(name + "/attn/wo", d, d, rng, init_std);
    l.ff1 = LinearLayer<T>::make(name + "/ff1", d, d_ff, rng, init_std);
    l.ff2 = LinearLayer<T>::make(name + "/ff2", d_ff, d, rng, init_std);
    l.ln1_gamma = Parameter<T>(name + "/ln1/gamma", Tensor<T>::full(1, d, T(1)));
    l.ln1_beta = Parameter<T>(name + "/ln1/beta", Tensor<T>::zeros(1, d));
    l.ln2_gamma = Parameter<T>(name + "/ln2/gamma", Tensor<T>::full(1, d, T(1)));
    l.ln2_beta = Parameter<T>(name + "/ln2/beta", Tensor<T>::zeros(1, d));
    return l;
  }

  void collect(std::vector<Parameter<T>*>& out) {
    wq.collect(out);
    wk.collect(out);
    wv.collect(out);
    wo.collect(out);
    ff1.collect(out);
    ff2.collect(out);
    out.push_back(&ln1_gamma);
    out.push_back(&ln1_beta);
    out.push_back(&ln2_gamma);
    out.push_back(&ln2_beta);
  }
};

// Precomputed key/value projections for a contiguous row range of a token
// block whose inputs are frozen (they pass through encoder layers unchanged,
// so their per-layer K/V never change either).
struct KvSegment {
  int row_begin = 0;
  int row_end = 0;
  Var k;
  Var v;
};

// Assembles the full key (or value) matrix for one layer: cached segments are
// reused, remaining rows are projected fresh. Linear maps act row-wise, so the
// result is bit-identical to projecting the whole token matrix at once.
template <class T>
Var assemble_projection(Tape<T>& tp, ParamBinding<T>& bind, Var tokens, LinearLayer<T>& lin,
                        const std::vector<KvSegment>& segments, bool use_value_slot) {
  const int total_rows = tp.val(tokens).rows;
  if (segments.empty()) {
    return linear_forward(tp, bind, tokens, lin);
  }
  std::vector<Var> parts;
  int row = 0;
  for (const KvSegment& seg : segments) {
    if (seg.row_begin < row || seg.row_end > total_rows || seg.row_begin >= seg.row_end) {
      throw util::ConfigError("assemble_projection: bad cache segment range");
    }
    if (seg.row_begin > row) {
      std::vector<int> fresh(static_cast<size_t>(seg.row_begin - row));
      for (int i = row; i < seg.row_begin; ++i) fresh[static_cast<size_t>(i - row)] = i;
      parts.push_back(linear_forward(tp, bind, gather_rows(tp, tokens, std::move(fresh)), lin));
    }
    parts.push_back(use_value_slot ? seg.v : seg.k);
    row = seg.row_end;
  }
  if (row < total_rows) {
    std::vector<int> fresh(static_cast<size_t>(total_rows - row));
    for (int i = row; i < total_rows; ++i) fresh[static_cast<size_t>(i - row)] = i;
    parts.push_back(linear_forward(tp, bind, gather_rows(tp, tokens, std::move(fresh)), lin));
  }
  return concat_rows(tp, parts);
}

// One encoder layer where only `update_set` rows are recomputed; all other
// rows are returned exactly as given and participate only as keys/values.
// `cache` optionally supplies precomputed K/V segments for frozen rows.
template <class T>
Var encoder_layer_forward(Tape<T>& tp, ParamBinding<T>& bind, Var tokens, const BoolMatrix& mask,
                          EncoderLayer<T>& layer, const std::vector<int>& update_set,
                          const std::vector<KvSegment>* cache = nullptr) {
  const Tensor<T>& xv = tp.val(tokens);
  if (mask.rows != xv.rows || mask.cols != xv.rows) {
    throw util::ConfigError("encoder_layer_forward: mask must be square over the token count");
  }
  if (update_set.empty()) return tokens;  // valid no-op
  for (int u : update_set) {
    if (u < 0 || u >= xv.rows) throw util::ConfigError("encoder_layer_forward: update index out of range");
  }

  const int d = layer.wq.in_dim();
  const int dh = d / layer.heads;
  static const std::vector<KvSegment> kNoCache;
  const std::vector<KvSegment>& segs = cache ? *cache : kNoCache;

  Var queries_in = gather_rows(tp, tokens, update_set);
  Var q = linear_forward(tp, bind, queries_in, layer.wq);
  Var k = assemble_projection(tp, bind, tokens, layer.wk, segs, /*use_value_slot=*/false);
  Var v = assemble_projection(tp, bind, tokens, layer.wv, segs, /*use_value_slot=*/true);

  BoolMatrix query_mask = mask.select_rows(update_set);
  const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  std::vector<Var> head_ctx;
  head_ctx.reserve(static_cast<size_t>(layer.heads));
  for (int h = 0; h < layer.heads; ++h) {
    Var qh = slice_cols(tp, q, h * dh, (h + 1) * dh);
    Var kh = slice_cols(tp, k, h * dh, (h + 1) * dh);
    Var vh = slice_cols(tp, v, h * dh, (h + 1) * dh);
    Var scores = scale(tp, matmul_nt(tp, qh, kh), inv_sqrt_dh);
    Var weights = masked_softmax(tp, scores, query_mask);
    head_ctx.push_back(matmul(tp, weights, vh));
  }
  Var ctx = layer.heads == 1 ? head_ctx[0] : concat_cols(tp, head_ctx);
  Var attn_out = linear_forward(tp, bind, ctx, layer.wo);

  Var a = layer_norm(tp, add(tp, queries_in, attn_out), bind(layer.ln1_gamma), bind(layer.ln1_beta),
                     layer.ln_eps);
  Var ff = linear_forward(tp, bind, gelu(tp, linear_forward(tp, bind, a, layer.ff1)), layer.ff2);
  Var y = layer_norm(tp, add(tp, a, ff), bind(layer.ln2_gamma), bind(layer.ln2_beta), layer.ln_eps);

  return scatter_rows(tp, tokens, update_set, y);
}

// Full stack; `cache`, when given, holds one segment list per layer.
template <class T>
Var encoder_stack_forward(Tape<T>& tp, ParamBinding<T>& bind, Var tokens, const BoolMatrix& mask,
                          std::vector<EncoderLayer<T>>& layers, const std::vector<int>& update_set,
                          const std::vector<std::vector<KvSegment>>* cache = nullptr) {
  if (cache && cache->size() != layers.size()) {
    throw util::ConfigError("encoder_stack_forward: cache must cover every layer");
  }
  Var x = tokens;
  for (size_t i = 0; i < layers.size(); ++i) {
    x = encoder_layer_forward(tp, bind, x, mask, layers[i], update_set,
                              cache ? &(*cache)[i] : nullptr);
  }
  return x;
}

}  // namespace soat::nn
