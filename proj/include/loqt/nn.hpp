#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "loqt/matrix.hpp"
#include "loqt/nf4.hpp"

namespace loqt {

// A trainable dense tensor with its gradient accumulator.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)),
        grad(value.rows, value.cols) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0f); }
};

// A frozen weight that is either dense or NF4-quantized; LoQT layers hold
// their base W and projector P behind this so the engine can swap
// representations without touching the layer graph.
struct BaseWeight {
  bool quantized = false;
  Matrix dense;
  QuantizedMatrix q;

  static BaseWeight from_dense(Matrix m) {
    BaseWeight out;
    out.dense = std::move(m);
    return out;
  }

  std::size_t rows() const { return quantized ? q.rows : dense.rows; }
  std::size_t cols() const { return quantized ? q.cols : dense.cols; }

  Matrix deq() const { return quantized ? dequantize(q) : dense; }

  void set_dense(Matrix m) {
    quantized = false;
    dense = std::move(m);
    q = QuantizedMatrix{};
  }

  void set_quantized(QuantizedMatrix qm) {
    quantized = true;
    q = std::move(qm);
    dense = Matrix{};
  }
};

// Which side of W the rank-r projector lives on: Left keeps P (m x r) with
// trainable B (r x n); Right keeps Q (n x r) with trainable B (m x r). The
// convention follows "project the smaller side": Left when m <= n.
enum class Orientation { kLeft, kRight };

inline Orientation orientation_for_shape(std::size_t m, std::size_t n) {
  return m <= n ? Orientation::kLeft : Orientation::kRight;
}

// Common interface for the two linear-layer forms. forward caches what
// backward needs; backward accumulates parameter gradients and returns the
// input gradient.
class Linear {
 public:
  virtual ~Linear() = default;
  virtual Matrix forward(const Matrix& x) = 0;
  virtual Matrix backward(const Matrix& upstream) = 0;
  virtual std::size_t in_dim() const = 0;
  virtual std::size_t out_dim() const = 0;
  virtual void collect_params(std::vector<Param*>& out) = 0;
};

// y = x * W with trainable dense W (m x n).
class PlainLinear : public Linear {
 public:
  Param w;

  PlainLinear(std::string name, Matrix weight)
      : w(std::move(name), std::move(weight)) {}

  Matrix forward(const Matrix& x) override {
    if (x.cols != w.value.rows) {
      throw std::invalid_argument(w.name + ": input " + x.shape_str() +
                                  " does not match weight " +
                                  w.value.shape_str());
    }
    cache_x_ = x;
    has_cache_ = true;
    return matmul(x, w.value);
  }

  Matrix backward(const Matrix& upstream) override {
    if (!has_cache_) {
      throw std::logic_error(w.name + ": backward called before forward");
    }
    add_scaled(w.grad, matmul_tn(cache_x_, upstream), 1.0f);
    return matmul_nt(upstream, w.value);
  }

  std::size_t in_dim() const override { return w.value.rows; }
  std::size_t out_dim() const override { return w.value.cols; }

  void collect_params(std::vector<Param*>& out) override { out.push_back(&w); }

 private:
  Matrix cache_x_;
  bool has_cache_ = false;
};

// The LoQT layer: y = x * deq(W) + s * (x * deq(P)) * B in Left orientation,
// y = x * deq(W) + s * (x * B) * deq(Q)^T in Right orientation. Only B is
// trainable; W and P are frozen (and usually quantized). The merged matrix
// W + s*P*B is never materialized in the forward/backward path.
class LoqtLinear : public Linear {
 public:
  BaseWeight base;  // m x n
  BaseWeight proj;  // Left: m x r; Right: n x r
  Param b;          // Left: r x n; Right: m x r
  float s = 0.5f;
  Orientation orientation = Orientation::kLeft;
  std::size_t rank = 0;

  LoqtLinear(std::string name, Matrix weight, std::size_t r, float scale,
             Orientation orient)
      : s(scale), orientation(orient), rank(r), name_(std::move(name)) {
    const std::size_t m = weight.rows;
    const std::size_t n = weight.cols;
    base = BaseWeight::from_dense(std::move(weight));
    if (orientation == Orientation::kLeft) {
      proj = BaseWeight::from_dense(Matrix(m, r));
      b = Param(name_ + ".b", Matrix(r, n));
    } else {
      proj = BaseWeight::from_dense(Matrix(n, r));
      b = Param(name_ + ".b", Matrix(m, r));
    }
  }

  const std::string& name() const { return name_; }

  Matrix forward(const Matrix& x) override {
    if (x.cols != base.rows()) {
      throw std::invalid_argument(name_ + ": input " + x.shape_str() +
                                  " does not match base weight " +
                                  std::to_string(base.rows()) + "x" +
                                  std::to_string(base.cols()));
    }
    cache_x_ = x;
    cache_w_ = base.deq();
    cache_p_ = proj.deq();
    has_cache_ = true;
    Matrix y = matmul(x, cache_w_);
    if (orientation == Orientation::kLeft) {
      cache_xp_ = matmul(x, cache_p_);
      if (max_abs(b.value) != 0.0f) {
        add_scaled(y, matmul(cache_xp_, b.value), s);
      }
    } else {
      if (max_abs(b.value) != 0.0f) {
        add_scaled(y, matmul_nt(matmul(x, b.value), cache_p_), s);
      }
    }
    return y;
  }

  Matrix backward(const Matrix& upstream) override {
    if (!has_cache_) {
      throw std::logic_error(name_ + ": backward called before forward");
    }
    if (capture_merged_grad_) {
      merged_grad_ = matmul_tn(cache_x_, upstream);
    }
    Matrix dx = matmul_nt(upstream, cache_w_);
    if (orientation == Orientation::kLeft) {
      add_scaled(b.grad, matmul_tn(cache_xp_, upstream), s);
      add_scaled(dx, matmul_nt(matmul_nt(upstream, b.value), cache_p_), s);
    } else {
      const Matrix up_q = matmul(upstream, cache_p_);
      add_scaled(b.grad, matmul_tn(cache_x_, up_q), s);
      add_scaled(dx, matmul_nt(up_q, b.value), s);
    }
    return dx;
  }

  // deq(W) + s * P * B, materialized; merge-time only.
  Matrix effective_weight() const {
    Matrix w = base.deq();
    if (orientation == Orientation::kLeft) {
      add_scaled(w, matmul(proj.deq(), b.value), s);
    } else {
      add_scaled(w, matmul_nt(b.value, proj.deq()), s);
    }
    return w;
  }

  // When set, backward also records grad of the *effective* merged weight,
  // x^T * upstream; the engine uses it to reinitialize P at merges.
  void set_capture_merged_grad(bool on) { capture_merged_grad_ = on; }
  const Matrix& merged_grad() const { return merged_grad_; }

  std::size_t in_dim() const override { return base.rows(); }
  std::size_t out_dim() const override { return base.cols(); }

  void collect_params(std::vector<Param*>& out) override {
    out.push_back(&b);
  }

 private:
  std::string name_;
  Matrix cache_x_, cache_w_, cache_p_, cache_xp_;
  Matrix merged_grad_;
  bool has_cache_ = false;
  bool capture_merged_grad_ = false;
};

// Token embedding lookup: rows of a (vocab x d) table.
class Embedding {
 public:
  Param table;

  Embedding(std::string name, Matrix weights)
      : table(std::move(name), std::move(weights)) {}

  Matrix forward(const std::vector<int>& tokens) {
    cache_tokens_ = tokens;
    Matrix out(tokens.size(), table.value.cols);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const int t = tokens[i];
      if (t < 0 || static_cast<std::size_t>(t) >= table.value.rows) {
        throw std::invalid_argument(table.name + ": token " +
                                    std::to_string(t) +
                                    " outside vocabulary of size " +
                                    std::to_string(table.value.rows));
      }
      std::copy(table.value.row(static_cast<std::size_t>(t)),
                table.value.row(static_cast<std::size_t>(t)) +
                    table.value.cols,
                out.row(i));
    }
    return out;
  }

  void backward(const Matrix& upstream) {
    for (std::size_t i = 0; i < cache_tokens_.size(); ++i) {
      float* grad_row =
          table.grad.row(static_cast<std::size_t>(cache_tokens_[i]));
      const float* up_row = upstream.row(i);
      for (std::size_t j = 0; j < upstream.cols; ++j) grad_row[j] += up_row[j];
    }
  }

 private:
  std::vector<int> cache_tokens_;
};

// Row-wise layer normalization with affine parameters.
class LayerNorm {
 public:
  Param gamma;
  Param beta;

  explicit LayerNorm(std::string name, std::size_t dim)
      : gamma(name + ".gamma", Matrix(1, dim, 1.0f)),
        beta(name + ".beta", Matrix(1, dim)) {}

  Matrix forward(const Matrix& x) {
    if (x.cols != gamma.value.cols) {
      throw std::invalid_argument(gamma.name + ": input " + x.shape_str() +
                                  " does not match normalized dim " +
                                  std::to_string(gamma.value.cols));
    }
    const std::size_t d = x.cols;
    cache_xhat_ = Matrix(x.rows, d);
    cache_inv_std_.assign(x.rows, 0.0f);
    Matrix out(x.rows, d);
    for (std::size_t i = 0; i < x.rows; ++i) {
      const float* row = x.row(i);
      double mean = 0.0;
      for (std::size_t j = 0; j < d; ++j) mean += row[j];
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double c = row[j] - mean;
        var += c * c;
      }
      var /= static_cast<double>(d);
      const float inv = static_cast<float>(1.0 / std::sqrt(var + 1e-5));
      cache_inv_std_[i] = inv;
      for (std::size_t j = 0; j < d; ++j) {
        const float xhat = (row[j] - static_cast<float>(mean)) * inv;
        cache_xhat_(i, j) = xhat;
        out(i, j) = gamma.value.data[j] * xhat + beta.value.data[j];
      }
    }
    return out;
  }

  Matrix backward(const Matrix& upstream) {
    const std::size_t d = upstream.cols;
    Matrix dx(upstream.rows, d);
    for (std::size_t i = 0; i < upstream.rows; ++i) {
      const float* up = upstream.row(i);
      const float* xhat = cache_xhat_.row(i);
      double sum_dxhat = 0.0;
      double sum_dxhat_xhat = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double dxhat = static_cast<double>(up[j]) * gamma.value.data[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat[j];
        gamma.grad.data[j] += up[j] * xhat[j];
        beta.grad.data[j] += up[j];
      }
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j) {
        const double dxhat = static_cast<double>(up[j]) * gamma.value.data[j];
        dx(i, j) = static_cast<float>(
            cache_inv_std_[i] *
            (dxhat - sum_dxhat * inv_d - xhat[j] * sum_dxhat_xhat * inv_d));
      }
    }
    return dx;
  }

  void collect_params(std::vector<Param*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }

 private:
  Matrix cache_xhat_;
  std::vector<float> cache_inv_std_;
};

inline float silu(float z) { return z / (1.0f + std::exp(-z)); }

inline float silu_derivative(float z) {
  const float sig = 1.0f / (1.0f + std::exp(-z));
  return sig * (1.0f + z * (1.0f - sig));
}

namespace detail {

inline Matrix slice(const Matrix& a, std::size_t r0, std::size_t r1,
                    std::size_t c0, std::size_t c1) {
  Matrix out(r1 - r0, c1 - c0);
  for (std::size_t i = r0; i < r1; ++i) {
    std::copy(a.row(i) + c0, a.row(i) + c1, out.row(i - r0));
  }
  return out;
}

inline void add_into_slice(Matrix& into, const Matrix& piece, std::size_t r0,
                           std::size_t c0) {
  for (std::size_t i = 0; i < piece.rows; ++i) {
    float* dst = into.row(r0 + i) + c0;
    const float* src = piece.row(i);
    for (std::size_t j = 0; j < piece.cols; ++j) dst[j] += src[j];
  }
}

}  // namespace detail

// Multi-head causal self-attention over sequences of fixed context length.
// Input is (batch * ctx) x d with sequences laid out contiguously.
class CausalSelfAttention {
 public:
  std::unique_ptr<Linear> wq, wk, wv, wo;
  std::size_t n_heads;
  std::size_t ctx;

  CausalSelfAttention(std::unique_ptr<Linear> q, std::unique_ptr<Linear> k,
                      std::unique_ptr<Linear> v, std::unique_ptr<Linear> o,
                      std::size_t heads, std::size_t context)
      : wq(std::move(q)), wk(std::move(k)), wv(std::move(v)),
        wo(std::move(o)), n_heads(heads), ctx(context) {}

  Matrix forward(const Matrix& x) {
    if (x.cols % n_heads != 0 || x.rows % ctx != 0) {
      throw std::invalid_argument(
          "attention: input " + x.shape_str() + " not divisible into " +
          std::to_string(n_heads) + " heads over context " +
          std::to_string(ctx));
    }
    const std::size_t d = x.cols;
    const std::size_t dh = d / n_heads;
    const std::size_t batch = x.rows / ctx;
    cache_q_ = wq->forward(x);
    cache_k_ = wk->forward(x);
    cache_v_ = wv->forward(x);
    cache_attn_.assign(batch * n_heads, Matrix{});
    Matrix o(x.rows, d);
    const float inv_sqrt_dh =
        1.0f / std::sqrt(static_cast<float>(dh));
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t r0 = b * ctx;
      for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t c0 = h * dh;
        const Matrix qh = detail::slice(cache_q_, r0, r0 + ctx, c0, c0 + dh);
        const Matrix kh = detail::slice(cache_k_, r0, r0 + ctx, c0, c0 + dh);
        const Matrix vh = detail::slice(cache_v_, r0, r0 + ctx, c0, c0 + dh);
        Matrix scores = matmul_nt(qh, kh);
        for (float& v : scores.data) v *= inv_sqrt_dh;
        // Causal mask + row softmax.
        for (std::size_t i = 0; i < ctx; ++i) {
          float* row = scores.row(i);
          for (std::size_t j = i + 1; j < ctx; ++j) {
            row[j] = -std::numeric_limits<float>::infinity();
          }
          float mx = row[0];
          for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
          double denom = 0.0;
          for (std::size_t j = 0; j <= i; ++j) {
            row[j] = std::exp(row[j] - mx);
            denom += row[j];
          }
          const float inv = static_cast<float>(1.0 / denom);
          for (std::size_t j = 0; j <= i; ++j) row[j] *= inv;
          for (std::size_t j = i + 1; j < ctx; ++j) row[j] = 0.0f;
        }
        cache_attn_[b * n_heads + h] = scores;
        detail::add_into_slice(o, matmul(scores, vh), r0, c0);
      }
    }
    return wo->forward(o);
  }

  Matrix backward(const Matrix& upstream) {
    const Matrix do_ = wo->backward(upstream);
    const std::size_t d = do_.cols;
    const std::size_t dh = d / n_heads;
    const std::size_t batch = do_.rows / ctx;
    const float inv_sqrt_dh =
        1.0f / std::sqrt(static_cast<float>(dh));
    Matrix dq(do_.rows, d), dk(do_.rows, d), dv(do_.rows, d);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t r0 = b * ctx;
      for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t c0 = h * dh;
        const Matrix& attn = cache_attn_[b * n_heads + h];
        const Matrix qh = detail::slice(cache_q_, r0, r0 + ctx, c0, c0 + dh);
        const Matrix kh = detail::slice(cache_k_, r0, r0 + ctx, c0, c0 + dh);
        const Matrix vh = detail::slice(cache_v_, r0, r0 + ctx, c0, c0 + dh);
        const Matrix doh = detail::slice(do_, r0, r0 + ctx, c0, c0 + dh);

        const Matrix dvh = matmul_tn(attn, doh);
        Matrix dattn = matmul_nt(doh, vh);
        // Softmax backward per row; masked positions have attn = 0 so they
        // contribute nothing.
        for (std::size_t i = 0; i < ctx; ++i) {
          const float* arow = attn.row(i);
          float* drow = dattn.row(i);
          double dot = 0.0;
          for (std::size_t j = 0; j <= i; ++j) {
            dot += static_cast<double>(drow[j]) * arow[j];
          }
          for (std::size_t j = 0; j <= i; ++j) {
            drow[j] = arow[j] * (drow[j] - static_cast<float>(dot));
          }
          for (std::size_t j = i + 1; j < ctx; ++j) drow[j] = 0.0f;
        }
        for (float& v : dattn.data) v *= inv_sqrt_dh;
        detail::add_into_slice(dq, matmul(dattn, kh), r0, c0);
        detail::add_into_slice(dk, matmul_tn(dattn, qh), r0, c0);
        detail::add_into_slice(dv, dvh, r0, c0);
      }
    }
    Matrix dx = wq->backward(dq);
    const Matrix dxk = wk->backward(dk);
    const Matrix dxv = wv->backward(dv);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      dx.data[i] += dxk.data[i] + dxv.data[i];
    }
    return dx;
  }

  void collect_params(std::vector<Param*>& out) {
    wq->collect_params(out);
    wk->collect_params(out);
    wv->collect_params(out);
    wo->collect_params(out);
  }

 private:
  Matrix cache_q_, cache_k_, cache_v_;
  std::vector<Matrix> cache_attn_;
};

// SwiGLU feed-forward: y = (silu(x*W_gate) ⊙ (x*W_up)) * W_down.
class SwigluMlp {
 public:
  std::unique_ptr<Linear> gate, up, down;

  SwigluMlp(std::unique_ptr<Linear> g, std::unique_ptr<Linear> u,
            std::unique_ptr<Linear> d)
      : gate(std::move(g)), up(std::move(u)), down(std::move(d)) {}

  Matrix forward(const Matrix& x) {
    cache_g_ = gate->forward(x);
    cache_u_ = up->forward(x);
    Matrix act(cache_g_.rows, cache_g_.cols);
    for (std::size_t i = 0; i < act.size(); ++i) {
      act.data[i] = silu(cache_g_.data[i]) * cache_u_.data[i];
    }
    return down->forward(act);
  }

  Matrix backward(const Matrix& upstream) {
    const Matrix dact = down->backward(upstream);
    Matrix dg(dact.rows, dact.cols), du(dact.rows, dact.cols);
    for (std::size_t i = 0; i < dact.size(); ++i) {
      dg.data[i] =
          dact.data[i] * cache_u_.data[i] * silu_derivative(cache_g_.data[i]);
      du.data[i] = dact.data[i] * silu(cache_g_.data[i]);
    }
    Matrix dx = gate->backward(dg);
    const Matrix dxu = up->backward(du);
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += dxu.data[i];
    return dx;
  }

  void collect_params(std::vector<Param*>& out) {
    gate->collect_params(out);
    up->collect_params(out);
    down->collect_params(out);
  }

 private:
  Matrix cache_g_, cache_u_;
};

struct LossResult {
  double value = 0.0;
  Matrix dlogits;  // gradient w.r.t. the logits/predictions, already scaled
};

// Mean negative log-likelihood over rows; logits (N x V), targets length N.
inline LossResult cross_entropy_loss(const Matrix& logits,
                                     const std::vector<int>& targets) {
  if (targets.size() != logits.rows) {
    throw std::invalid_argument(
        "cross_entropy_loss: " + std::to_string(targets.size()) +
        " targets for logits " + logits.shape_str());
  }
  LossResult out;
  out.dlogits = Matrix(logits.rows, logits.cols);
  const double inv_n = 1.0 / static_cast<double>(logits.rows);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const float* row = logits.row(i);
    float mx = row[0];
    for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) {
      denom += std::exp(static_cast<double>(row[j]) - mx);
    }
    const double lse = static_cast<double>(mx) + std::log(denom);
    const int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= logits.cols) {
      throw std::invalid_argument("cross_entropy_loss: target " +
                                  std::to_string(t) + " outside logits " +
                                  logits.shape_str());
    }
    total += lse - static_cast<double>(row[static_cast<std::size_t>(t)]);
    float* drow = out.dlogits.row(i);
    for (std::size_t j = 0; j < logits.cols; ++j) {
      const double p = std::exp(static_cast<double>(row[j]) - lse);
      drow[j] = static_cast<float>(p * inv_n);
    }
    drow[static_cast<std::size_t>(t)] -= static_cast<float>(inv_n);
  }
  out.value = total * inv_n;
  return out;
}

// Mean over rows of (1/2) * squared error: L = (1/2N) * sum ||pred - tgt||^2.
inline LossResult mse_loss(const Matrix& pred, const Matrix& target) {
  check_same_shape("mse_loss", pred, target);
  LossResult out;
  out.dlogits = Matrix(pred.rows, pred.cols);
  const double inv_n = 1.0 / static_cast<double>(pred.rows);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) -
                     static_cast<double>(target.data[i]);
    total += d * d;
    out.dlogits.data[i] = static_cast<float>(d * inv_n);
  }
  out.value = 0.5 * total * inv_n;
  return out;
}

}  // namespace loqt
