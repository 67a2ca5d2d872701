#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "loqt/matrix.hpp"
#include "loqt/nn.hpp"
#include "loqt/svd.hpp"

namespace loqt {

// Bias-corrected Adam state for exactly one trainable tensor. Moments are
// stored in 32-bit like everything else; the per-element update math runs in
// double so the scalar oracle in the tests can pin it to 1e-7.
struct AdamState {
  Matrix m;
  Matrix v;
  std::uint64_t t = 0;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;

  static AdamState for_shape(std::size_t rows, std::size_t cols) {
    AdamState st;
    st.m = Matrix(rows, cols);
    st.v = Matrix(rows, cols);
    return st;
  }

  void reset() {
    std::fill(m.data.begin(), m.data.end(), 0.0f);
    std::fill(v.data.begin(), v.data.end(), 0.0f);
    t = 0;
  }
};

// One Adam step: updates the moments in place and returns the parameter
// update -lr * m_hat / (sqrt(v_hat) + eps). Applying it is the caller's job.
inline Matrix adam_step(AdamState& st, const Matrix& grad, float lr) {
  if (grad.rows != st.m.rows || grad.cols != st.m.cols) {
    throw std::invalid_argument("adam_step: gradient " + grad.shape_str() +
                                " does not match state " + st.m.shape_str());
  }
  ++st.t;
  const double b1 = static_cast<double>(st.beta1);
  const double b2 = static_cast<double>(st.beta2);
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  const double eps = static_cast<double>(st.eps);
  Matrix update(grad.rows, grad.cols);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double g = static_cast<double>(grad.data[i]);
    const double m_new = b1 * static_cast<double>(st.m.data[i]) +
                         (1.0 - b1) * g;
    const double v_new = b2 * static_cast<double>(st.v.data[i]) +
                         (1.0 - b2) * g * g;
    st.m.data[i] = static_cast<float>(m_new);
    st.v.data[i] = static_cast<float>(v_new);
    const double m_hat = m_new / bc1;
    const double v_hat = v_new / bc2;
    update.data[i] = static_cast<float>(
        -static_cast<double>(lr) * m_hat / (std::sqrt(v_hat) + eps));
  }
  return update;
}

// One-sided GaLore: Adam runs on the rank-r projection of the full gradient,
// and the up-projected update is applied to the full weight. Left orientation
// projects rows (P: m x r, projected gradient r x n); Right projects columns
// (P: n x r, projected gradient m x r).
struct GaLoreState {
  Orientation orientation = Orientation::kLeft;
  Matrix p;
  AdamState adam;
  std::uint64_t steps_since_refresh = 0;
};

inline GaLoreState make_galore_state(std::size_t m, std::size_t n,
                                     std::size_t r) {
  GaLoreState st;
  st.orientation = orientation_for_shape(m, n);
  if (st.orientation == Orientation::kLeft) {
    st.p = Matrix(m, r);
    st.adam = AdamState::for_shape(r, n);
  } else {
    st.p = Matrix(n, r);
    st.adam = AdamState::for_shape(m, r);
  }
  return st;
}

// Recomputes the projector from a fresh gradient. Adam moments are kept by
// default (GaLore trains through stale statistics); the flag resets them for
// experiments that need aligned moment policies.
inline void refresh_projector(GaLoreState& st, const Matrix& g_w,
                              std::size_t r, bool reset_moments = false) {
  if (st.orientation == Orientation::kLeft) {
    st.p = truncated_left_factor(g_w, r);
  } else {
    st.p = truncated_right_factor(g_w, r);
  }
  if (reset_moments) st.adam.reset();
  st.steps_since_refresh = 0;
}

// Full-weight update P * rho(P^T G) (Left) or rho(G P) * P^T (Right); rho is
// Adam. The caller applies the returned m x n update to the weight.
inline Matrix galore_step(GaLoreState& st, const Matrix& g_w, float lr) {
  ++st.steps_since_refresh;
  if (st.orientation == Orientation::kLeft) {
    if (st.p.rows != g_w.rows) {
      throw std::invalid_argument("galore_step: projector " +
                                  st.p.shape_str() + " does not match  " +
                                  "gradient " + g_w.shape_str());
    }
    const Matrix projected = matmul_tn(st.p, g_w);  // r x n
    return matmul(st.p, adam_step(st.adam, projected, lr));
  }
  if (st.p.rows != g_w.cols) {
    throw std::invalid_argument("galore_step: projector " + st.p.shape_str() +
                                " does not match gradient " +
                                g_w.shape_str());
  }
  const Matrix projected = matmul(g_w, st.p);  // m x r
  return matmul_nt(adam_step(st.adam, projected, lr), st.p);
}

}  // namespace loqt
