#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "soat/nn/grad_check.hpp"
#include "soat/nn/layers.hpp"
#include "soat/nn/ops.hpp"

using namespace soat;
using nn::BoolMatrix;
using nn::Tensor64;
using nn::Var;

namespace {

// ---------------------------------------------------------------------------
// Independent oracles. These stay deliberately naive and separate from the
// library kernels they check.
// ---------------------------------------------------------------------------

Tensor64 naive_matmul(const Tensor64& a, const Tensor64& b) {
  Tensor64 c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(k, j);
      c.at(i, j) = acc;
    }
  }
  return c;
}

// Row-by-row masked softmax attention, written as the formula reads.
Tensor64 brute_force_masked_attention(const Tensor64& q, const Tensor64& k, const Tensor64& v,
                                      const BoolMatrix& mask) {
  Tensor64 out(q.rows, v.cols);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols));
  for (int i = 0; i < q.rows; ++i) {
    std::vector<double> weights(static_cast<size_t>(k.rows), 0.0);
    double denom = 0.0;
    double mx = -1e300;
    for (int j = 0; j < k.rows; ++j) {
      if (!mask.at(i, j)) continue;
      double score = 0.0;
      for (int c = 0; c < q.cols; ++c) score += q.at(i, c) * k.at(j, c);
      mx = std::max(mx, score * scale);
    }
    for (int j = 0; j < k.rows; ++j) {
      if (!mask.at(i, j)) continue;
      double score = 0.0;
      for (int c = 0; c < q.cols; ++c) score += q.at(i, c) * k.at(j, c);
      weights[static_cast<size_t>(j)] = std::exp(score * scale - mx);
      denom += weights[static_cast<size_t>(j)];
    }
    for (int j = 0; j < k.rows; ++j) {
      for (int c = 0; c < v.cols; ++c) {
        out.at(i, c) += weights[static_cast<size_t>(j)] / denom * v.at(j, c);
      }
    }
  }
  return out;
}

std::vector<double> naive_layer_norm_row(const std::vector<double>& x,
                                         const std::vector<double>& gamma,
                                         const std::vector<double>& beta, double eps) {
  const size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) {
    out[i] = (x[i] - mean) / std::sqrt(var + eps) * gamma[i] + beta[i];
  }
  return out;
}

// Straight-line transformer encoder layer with full self-attention, written
// without the update-set machinery.
Tensor64 reference_encoder_layer(const Tensor64& x, nn::EncoderLayer<double>& layer) {
  const int d = layer.wq.in_dim();
  const int heads = layer.heads;
  const int dh = d / heads;
  auto with_bias = [](Tensor64 m, const Tensor64& b) {
    for (int i = 0; i < m.rows; ++i) {
      for (int j = 0; j < m.cols; ++j) m.at(i, j) += b.at(0, j);
    }
    return m;
  };
  Tensor64 q = with_bias(naive_matmul(x, layer.wq.weight.value), layer.wq.bias.value);
  Tensor64 k = naive_matmul(x, layer.wk.weight.value);  // key projection is bias-free
  Tensor64 v = with_bias(naive_matmul(x, layer.wv.weight.value), layer.wv.bias.value);

  Tensor64 ctx(x.rows, d);
  for (int h = 0; h < heads; ++h) {
    Tensor64 qh(x.rows, dh), kh(x.rows, dh), vh(x.rows, dh);
    for (int i = 0; i < x.rows; ++i) {
      for (int c = 0; c < dh; ++c) {
        qh.at(i, c) = q.at(i, h * dh + c);
        kh.at(i, c) = k.at(i, h * dh + c);
        vh.at(i, c) = v.at(i, h * dh + c);
      }
    }
    Tensor64 head = brute_force_masked_attention(qh, kh, vh, BoolMatrix(x.rows, x.rows, true));
    for (int i = 0; i < x.rows; ++i) {
      for (int c = 0; c < dh; ++c) ctx.at(i, h * dh + c) = head.at(i, c);
    }
  }
  Tensor64 attn = with_bias(naive_matmul(ctx, layer.wo.weight.value), layer.wo.bias.value);

  Tensor64 a(x.rows, d);
  for (int i = 0; i < x.rows; ++i) {
    std::vector<double> row(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) row[static_cast<size_t>(j)] = x.at(i, j) + attn.at(i, j);
    auto normed = naive_layer_norm_row(
        row, std::vector<double>(layer.ln1_gamma.value.data.begin(), layer.ln1_gamma.value.data.end()),
        std::vector<double>(layer.ln1_beta.value.data.begin(), layer.ln1_beta.value.data.end()),
        layer.ln_eps);
    for (int j = 0; j < d; ++j) a.at(i, j) = normed[static_cast<size_t>(j)];
  }

  Tensor64 f1 = with_bias(naive_matmul(a, layer.ff1.weight.value), layer.ff1.bias.value);
  for (double& val : f1.data) val = val * 0.5 * (1.0 + std::erf(val / std::sqrt(2.0)));
  Tensor64 f2 = with_bias(naive_matmul(f1, layer.ff2.weight.value), layer.ff2.bias.value);

  Tensor64 y(x.rows, d);
  for (int i = 0; i < x.rows; ++i) {
    std::vector<double> row(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) row[static_cast<size_t>(j)] = a.at(i, j) + f2.at(i, j);
    auto normed = naive_layer_norm_row(
        row, std::vector<double>(layer.ln2_gamma.value.data.begin(), layer.ln2_gamma.value.data.end()),
        std::vector<double>(layer.ln2_beta.value.data.begin(), layer.ln2_beta.value.data.end()),
        layer.ln_eps);
    for (int j = 0; j < d; ++j) y.at(i, j) = normed[static_cast<size_t>(j)];
  }
  return y;
}

double max_abs_diff(const Tensor64& a, const Tensor64& b) {
  REQUIRE(a.rows == b.rows);
  REQUIRE(a.cols == b.cols);
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace

TEST_CASE("linear forward: identity, zero input, matmul oracle") {
  util::Rng rng(11);
  nn::Tape<double> tape;
  nn::ParamBinding<double> bind(tape);

  nn::LinearLayer<double> ident = nn::LinearLayer<double>::make("id", 3, 3, rng, 0.0);
  ident.weight.value = Tensor64::identity(3);
  Var x = tape.leaf(Tensor64::identity(3));
  Var y = nn::linear_forward(tape, bind, x, ident);
  CHECK(max_abs_diff(tape.val(y), Tensor64::identity(3)) == 0.0);

  nn::LinearLayer<double> lin = nn::LinearLayer<double>::make("lin", 4, 3, rng, 0.3);
  for (int j = 0; j < 3; ++j) lin.bias.value.at(0, j) = j + 0.5;
  Var zeros = tape.leaf(Tensor64::zeros(2, 4));
  Var rows = nn::linear_forward(tape, bind, zeros, lin);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 3; ++j) CHECK(tape.val(rows).at(i, j) == lin.bias.value.at(0, j));
  }

  nn::LinearLayer<double> rand_layer = nn::LinearLayer<double>::make("r", 3, 2, rng, 0.7);
  Tensor64 input = Tensor64::randn(2, 3, rng, 1.0);
  Var xr = tape.leaf(input);
  Var yr = nn::linear_forward(tape, bind, xr, rand_layer);
  Tensor64 expected = naive_matmul(input, rand_layer.weight.value);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) expected.at(i, j) += rand_layer.bias.value.at(0, j);
  }
  CHECK(max_abs_diff(tape.val(yr), expected) < 1e-14);

  Var bad = tape.leaf(Tensor64::zeros(1, 5));
  CHECK_THROWS_AS(nn::linear_forward(tape, bind, bad, rand_layer), util::ConfigError);
}

TEST_CASE("masked attention: single key, uniform case, brute-force oracle") {
  util::Rng rng(12);
  nn::Tape<double> tape;

  // One query, one permitted key: output is exactly that key's value row.
  {
    Var q = tape.leaf(Tensor64::randn(1, 4, rng, 1.0));
    Var k = tape.leaf(Tensor64::randn(3, 4, rng, 1.0));
    Tensor64 values = Tensor64::randn(3, 5, rng, 1.0);
    Var v = tape.leaf(values);
    BoolMatrix mask(1, 3, false);
    mask.at(0, 1) = 1;
    Var out = nn::masked_attention_forward(tape, q, k, v, mask);
    for (int c = 0; c < 5; ++c) CHECK(tape.val(out).at(0, c) == values.at(1, c));
  }

  // All-true mask with Q orthogonal to every K: uniform weights, mean of V.
  {
    Tensor64 q(1, 2);
    q.at(0, 0) = 1.0;  // K rows live in the second coordinate only
    Tensor64 k(4, 2);
    for (int j = 0; j < 4; ++j) k.at(j, 1) = j + 1.0;
    Tensor64 values = Tensor64::randn(4, 3, rng, 1.0);
    Var out = nn::masked_attention_forward(tape, tape.leaf(q), tape.leaf(k), tape.leaf(values),
                                           BoolMatrix(1, 4, true));
    for (int c = 0; c < 3; ++c) {
      double mean = 0.0;
      for (int j = 0; j < 4; ++j) mean += values.at(j, c);
      mean /= 4.0;
      CHECK(tape.val(out).at(0, c) == doctest::Approx(mean).epsilon(1e-13));
    }
  }

  // Random mask vs the brute-force oracle.
  for (int trial = 0; trial < 20; ++trial) {
    Tensor64 q = Tensor64::randn(3, 4, rng, 1.0);
    Tensor64 k = Tensor64::randn(4, 4, rng, 1.0);
    Tensor64 values = Tensor64::randn(4, 2, rng, 1.0);
    BoolMatrix mask(3, 4, false);
    for (int i = 0; i < 3; ++i) {
      int permitted = 0;
      for (int j = 0; j < 4; ++j) {
        if (rng.uniform() < 0.5) {
          mask.at(i, j) = 1;
          ++permitted;
        }
      }
      if (permitted == 0) mask.at(i, rng.uniform_int(4)) = 1;
    }
    Var out = nn::masked_attention_forward(tape, tape.leaf(q), tape.leaf(k), tape.leaf(values), mask);
    CHECK(max_abs_diff(tape.val(out), brute_force_masked_attention(q, k, values, mask)) < 1e-12);
  }

  // Degenerate mask: a query row with no permitted key.
  {
    Var q = tape.leaf(Tensor64::randn(2, 3, rng, 1.0));
    Var k = tape.leaf(Tensor64::randn(2, 3, rng, 1.0));
    Var v = tape.leaf(Tensor64::randn(2, 3, rng, 1.0));
    BoolMatrix mask(2, 2, false);
    mask.at(0, 0) = 1;
    CHECK_THROWS_AS(nn::masked_attention_forward(tape, q, k, v, mask), util::NumericError);
  }
}

TEST_CASE("masked softmax rows sum to 1 over permitted keys") {
  util::Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    nn::Tape<double> tape;
    const int rows = 1 + rng.uniform_int(6);
    const int cols = 1 + rng.uniform_int(8);
    BoolMatrix mask(rows, cols, false);
    for (int i = 0; i < rows; ++i) {
      mask.at(i, rng.uniform_int(cols)) = 1;
      for (int j = 0; j < cols; ++j) {
        if (rng.uniform() < 0.4) mask.at(i, j) = 1;
      }
    }
    Var x = tape.leaf(Tensor64::randn(rows, cols, rng, 3.0));
    Var p = nn::masked_softmax(tape, x, mask);
    for (int i = 0; i < rows; ++i) {
      double sum = 0.0;
      for (int j = 0; j < cols; ++j) {
        if (!mask.at(i, j)) CHECK(tape.val(p).at(i, j) == 0.0);
        sum += tape.val(p).at(i, j);
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("encoder layer: empty update set is the identity") {
  util::Rng rng(14);
  nn::EncoderLayer<double> layer = nn::EncoderLayer<double>::make("e", 8, 2, 16, rng, 0.2, 1e-12);
  nn::Tape<double> tape;
  nn::ParamBinding<double> bind(tape);
  Tensor64 input = Tensor64::randn(4, 8, rng, 1.0);
  Var x = tape.leaf(input);
  Var y = nn::encoder_layer_forward(tape, bind, x, BoolMatrix(4, 4, true), layer, {});
  CHECK(y.id == x.id);  // exact no-op
}

TEST_CASE("encoder layer: frozen rows are returned bit-identical") {
  util::Rng rng(15);
  nn::EncoderLayer<double> layer = nn::EncoderLayer<double>::make("e", 8, 2, 16, rng, 0.2, 1e-12);
  nn::Tape<double> tape;
  nn::ParamBinding<double> bind(tape);
  Tensor64 input = Tensor64::randn(5, 8, rng, 1.0);
  Var x = tape.leaf(input);
  Var y = nn::encoder_layer_forward(tape, bind, x, BoolMatrix(5, 5, true), layer, {0});
  const Tensor64& out = tape.val(y);
  bool row0_changed = false;
  for (int c = 0; c < 8; ++c) {
    if (out.at(0, c) != input.at(0, c)) row0_changed = true;
  }
  CHECK(row0_changed);
  for (int r = 1; r < 5; ++r) {
    CHECK(std::memcmp(out.row(r), input.row(r), 8 * sizeof(double)) == 0);
  }
}

TEST_CASE("encoder layer: full update matches the reference layer") {
  util::Rng rng(16);
  for (int trial = 0; trial < 5; ++trial) {
    nn::EncoderLayer<double> layer = nn::EncoderLayer<double>::make("e", 12, 3, 24, rng, 0.3, 1e-12);
    nn::Tape<double> tape;
    nn::ParamBinding<double> bind(tape);
    Tensor64 input = Tensor64::randn(6, 12, rng, 0.8);
    Var x = tape.leaf(input);
    Var y = nn::encoder_layer_forward(tape, bind, x, BoolMatrix(6, 6, true), layer,
                                      {0, 1, 2, 3, 4, 5});
    CHECK(max_abs_diff(tape.val(y), reference_encoder_layer(input, layer)) < 1e-11);
  }
}

TEST_CASE("grad check: linear layer with quadratic loss is exact") {
  util::Rng rng(17);
  nn::LinearLayer<double> layer = nn::LinearLayer<double>::make("l", 4, 3, rng, 0.5);
  Tensor64 input = Tensor64::randn(3, 4, rng, 1.0);
  std::vector<nn::Parameter<double>*> params;
  layer.collect(params);
  auto loss_fn = [&](bool with_grad) {
    nn::Tape<double> tape;
    nn::ParamBinding<double> bind(tape);
    Var y = nn::linear_forward(tape, bind, tape.leaf(input), layer);
    Var loss = nn::sum_all(tape, nn::mul(tape, y, y));
    const double v = tape.val(loss).data[0];
    if (with_grad) {
      tape.backward(loss);
      bind.flush_grads();
    }
    return v;
  };
  CHECK(nn::grad_check<double>(loss_fn, params, 1e-5) < 1e-8);
}

TEST_CASE("grad check: one encoder layer") {
  util::Rng rng(18);
  nn::EncoderLayer<double> layer = nn::EncoderLayer<double>::make("e", 8, 2, 16, rng, 0.3, 1e-12);
  Tensor64 input = Tensor64::randn(4, 8, rng, 0.7);
  // Random output weighting keeps the loss sensitive to every parameter (a
  // plain sum of squares is constant after the final layer norm).
  Tensor64 weighting = Tensor64::randn(4, 8, rng, 1.0);
  BoolMatrix mask(4, 4, true);
  mask.at(1, 3) = 0;  // exercise the masked path too
  std::vector<nn::Parameter<double>*> params;
  layer.collect(params);
  auto loss_fn = [&](bool with_grad) {
    nn::Tape<double> tape;
    nn::ParamBinding<double> bind(tape);
    Var y = nn::encoder_layer_forward(tape, bind, tape.leaf(input), mask, layer, {0, 1, 2, 3});
    Var w = nn::mul(tape, y, tape.leaf(weighting));
    Var loss = nn::sum_all(tape, nn::mul(tape, w, w));
    const double v = tape.val(loss).data[0];
    if (with_grad) {
      tape.backward(loss);
      bind.flush_grads();
    }
    return v;
  };
  CHECK(nn::grad_check<double>(loss_fn, params, 1e-5) < 1e-4);
}

TEST_CASE("grad check: gather/scatter/concat/slice/softmax composite") {
  util::Rng rng(19);
  nn::Parameter<double> p("p", Tensor64::randn(5, 6, rng, 0.8));
  std::vector<nn::Parameter<double>*> params{&p};
  auto loss_fn = [&](bool with_grad) {
    nn::Tape<double> tape;
    nn::ParamBinding<double> bind(tape);
    Var x = bind(p);
    Var g = nn::gather_rows(tape, x, {0, 2, 4});
    Var s = nn::slice_cols(tape, g, 1, 5);
    Var c = nn::concat_cols(tape, {s, s});
    Var c2 = nn::concat_rows(tape, {c, c});
    Var soft = nn::log_softmax(tape, c2);
    Var picked = nn::pick(tape, soft, 1, 2);
    Var sc = nn::scatter_rows(tape, x, {1}, nn::gather_rows(tape, x, {3}));
    Var loss = nn::add(tape, nn::sum_all(tape, nn::gelu(tape, sc)), picked);
    const double v = tape.val(loss).data[0];
    if (with_grad) {
      tape.backward(loss);
      bind.flush_grads();
    }
    return v;
  };
  CHECK(nn::grad_check<double>(loss_fn, params, 1e-5) < 1e-6);
}

TEST_CASE("grad check: cross entropy and masked softmax") {
  util::Rng rng(20);
  nn::Parameter<double> p("p", Tensor64::randn(3, 5, rng, 1.0));
  std::vector<nn::Parameter<double>*> params{&p};
  BoolMatrix mask(3, 5, false);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 5; ++j) {
      if ((i + j) % 2 == 0) mask.at(i, j) = 1;
    }
  }
  auto loss_fn = [&](bool with_grad) {
    nn::Tape<double> tape;
    nn::ParamBinding<double> bind(tape);
    Var x = bind(p);
    Var sm = nn::masked_softmax(tape, x, mask);
    Var ce = nn::cross_entropy_with_logits(tape, nn::gather_rows(tape, x, {1}), 2);
    Var loss = nn::add(tape, nn::sum_all(tape, nn::mul(tape, sm, sm)), ce);
    const double v = tape.val(loss).data[0];
    if (with_grad) {
      tape.backward(loss);
      bind.flush_grads();
    }
    return v;
  };
  CHECK(nn::grad_check<double>(loss_fn, params, 1e-5) < 1e-6);
}

TEST_CASE("select_max_groups picks winners with scene-first tie break") {
  nn::Tape<double> tape;
  Tensor64 row(1, 6);
  row.data = {0.2, 0.5, 0.5, -0.1, 0.7, 0.7};
  Var x = tape.leaf(row);
  auto result = nn::select_max_groups(tape, x, {{0, 1}, {2, 3}, {4, 5}, {}});
  CHECK(tape.val(result.scores).at(0, 0) == 0.5);
  CHECK(result.winners[0] == 1);
  CHECK(tape.val(result.scores).at(0, 1) == 0.5);
  CHECK(result.winners[1] == 2);  // first listed wins the tie
  CHECK(result.winners[2] == 4);
  CHECK(result.winners[3] == -1);
  CHECK(tape.val(result.scores).at(0, 3) == nn::kEmptyGroupScore);

  // Gradient routes to winners only.
  Var loss = nn::sum_all(tape, nn::gather_rows(tape, result.scores, {0}));
  tape.backward(loss);
  const Tensor64& gx = tape.grad(x);
  CHECK(gx.data[1] == 1.0);
  CHECK(gx.data[0] == 0.0);
  CHECK(gx.data[2] == 1.0);
  CHECK(gx.data[3] == 0.0);
  CHECK(gx.data[4] == 1.0);
  CHECK(gx.data[5] == 0.0);
}

TEST_CASE("determinism: identical seeds produce bit-identical outputs") {
  auto run_once = [](uint64_t seed) {
    util::Rng rng(seed);
    nn::EncoderLayer<double> layer = nn::EncoderLayer<double>::make("e", 8, 2, 16, rng, 0.3, 1e-12);
    nn::Tape<double> tape;
    nn::ParamBinding<double> bind(tape);
    Var x = tape.leaf(Tensor64::randn(4, 8, rng, 1.0));
    Var y = nn::encoder_layer_forward(tape, bind, x, BoolMatrix(4, 4, true), layer, {0, 1, 2, 3});
    return tape.val(y);
  };
  Tensor64 a = run_once(99);
  Tensor64 b = run_once(99);
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("all outputs finite after forward and backward") {
  util::Rng rng(21);
  nn::EncoderLayer<double> layer = nn::EncoderLayer<double>::make("e", 8, 2, 16, rng, 0.3, 1e-12);
  nn::Tape<double> tape;
  nn::ParamBinding<double> bind(tape);
  Var x = tape.leaf(Tensor64::randn(4, 8, rng, 1.0));
  Var y = nn::encoder_layer_forward(tape, bind, x, BoolMatrix(4, 4, true), layer, {0, 1, 2, 3});
  Var loss = nn::sum_all(tape, nn::mul(tape, y, y));
  CHECK(tape.val(y).all_finite());
  tape.backward(loss);
  std::vector<nn::Parameter<double>*> params;
  layer.collect(params);
  bind.flush_grads();
  for (auto* p : params) CHECK(p->grad.all_finite());
}

TEST_CASE("float32 instantiation works for forward passes") {
  util::Rng rng(22);
  nn::EncoderLayer<float> layer = nn::EncoderLayer<float>::make("e", 8, 2, 16, rng, 0.3f, 1e-6f);
  nn::Tape<float> tape;
  nn::ParamBinding<float> bind(tape);
  Var x = tape.leaf(nn::Tensor32::randn(4, 8, rng, 1.0f));
  Var y = nn::encoder_layer_forward(tape, bind, x, BoolMatrix(4, 4, true), layer, {0, 1, 2, 3});
  CHECK(tape.val(y).all_finite());
  Var loss = nn::sum_all(tape, nn::mul(tape, y, y));
  tape.backward(loss);
  bind.flush_grads();
  std::vector<nn::Parameter<float>*> params;
  layer.collect(params);
  for (auto* p : params) CHECK(p->grad.all_finite());
}

TEST_CASE("grad_check validates its epsilon range") {
  nn::Parameter<double> p("p", Tensor64::zeros(1, 1));
  std::vector<nn::Parameter<double>*> params{&p};
  auto loss_fn = [&](bool) { return 0.0; };
  CHECK_THROWS_AS(nn::grad_check<double>(loss_fn, params, 1e-2), util::ConfigError);
  CHECK_THROWS_AS(nn::grad_check<double>(loss_fn, params, 0.0), util::ConfigError);
}
