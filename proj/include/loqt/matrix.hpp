#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "loqt/rng.hpp"

namespace loqt {

// Number of worker threads for the matmul kernels, read once from the
// LOQT_THREADS environment variable (default 1). Row-partitioned workers
// produce each output row with the same arithmetic as the serial path, so the
// thread count never changes results.
inline int thread_count() {
  static const int count = [] {
    const char* env = std::getenv("LOQT_THREADS");
    if (env == nullptr) return 1;
    const long parsed = std::strtol(env, nullptr, 10);
    return parsed < 1 ? 1 : static_cast<int>(parsed);
  }();
  return count;
}

namespace detail {

// Runs fn(begin, end) over [0, total) split into contiguous chunks, one per
// worker. Each row belongs to exactly one worker.
template <typename Fn>
void parallel_rows(std::size_t total, Fn&& fn) {
  const int workers = thread_count();
  if (workers <= 1 || total < static_cast<std::size_t>(workers)) {
    fn(std::size_t{0}, total);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers) - 1);
  const std::size_t chunk = (total + workers - 1) / workers;
  for (int w = 1; w < workers; ++w) {
    const std::size_t begin = chunk * static_cast<std::size_t>(w);
    if (begin >= total) break;
    const std::size_t end = std::min(total, begin + chunk);
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  fn(std::size_t{0}, std::min(total, chunk));
  for (auto& t : pool) t.join();
}

}  // namespace detail

// Dense row-major matrix of 32-bit reals; the universal numeric carrier.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, float fill = 0.0f)
      : rows(r), cols(c), data(r * c, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0f;
    return out;
  }

  float& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  float operator()(std::size_t i, std::size_t j) const {
    return data[i * cols + j];
  }

  float* row(std::size_t i) { return data.data() + i * cols; }
  const float* row(std::size_t i) const { return data.data() + i * cols; }

  std::size_t size() const { return data.size(); }

  std::string shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }
};

inline void check_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw std::invalid_argument(std::string(op) + ": shapes " + a.shape_str() +
                                " and " + b.shape_str() + " do not match");
  }
}

// out = a * b. The j-inner broadcast kernel accumulates each output row over k
// in a fixed order, so results are deterministic, and the inner loop carries
// no reduction, so it vectorizes without fast-math.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw std::invalid_argument("matmul: cannot multiply " + a.shape_str() +
                                " by " + b.shape_str());
  }
  Matrix out(a.rows, b.cols);
  detail::parallel_rows(a.rows, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      float* out_row = out.row(i);
      const float* a_row = a.row(i);
      for (std::size_t k = 0; k < a.cols; ++k) {
        const float aik = a_row[k];
        const float* b_row = b.row(k);
        for (std::size_t j = 0; j < b.cols; ++j) out_row[j] += aik * b_row[j];
      }
    }
  });
  return out;
}

// out = a^T * b, with a (k x m), b (k x n), out (m x n). Same broadcast
// structure as matmul; used for gradient contractions like P^T G.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) {
    throw std::invalid_argument("matmul_tn: cannot multiply transpose of " +
                                a.shape_str() + " by " + b.shape_str());
  }
  Matrix out(a.cols, b.cols);
  detail::parallel_rows(a.cols, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t l = 0; l < a.rows; ++l) {
      const float* a_row = a.row(l);
      const float* b_row = b.row(l);
      for (std::size_t i = i0; i < i1; ++i) {
        const float ali = a_row[i];
        float* out_row = out.row(i);
        for (std::size_t j = 0; j < b.cols; ++j) out_row[j] += ali * b_row[j];
      }
    }
  });
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  }
  return out;
}

// out = a * b^T, with a (m x k), b (n x k). Routed through a transpose so the
// hot loop stays the vectorizable broadcast kernel instead of a dot-product
// reduction.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) {
    throw std::invalid_argument("matmul_nt: cannot multiply " + a.shape_str() +
                                " by transpose of " + b.shape_str());
  }
  return matmul(a, transpose(b));
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  check_same_shape("add", a, b);
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
  return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
  check_same_shape("sub", a, b);
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

inline Matrix scale(const Matrix& a, float alpha) {
  Matrix out = a;
  for (float& x : out.data) x *= alpha;
  return out;
}

// acc += alpha * x, in place.
inline void add_scaled(Matrix& acc, const Matrix& x, float alpha) {
  check_same_shape("add_scaled", acc, x);
  for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += alpha * x.data[i];
}

inline double frobenius_norm(const Matrix& a) {
  double sum = 0.0;
  for (float x : a.data) sum += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(sum);
}

inline double frobenius_distance(const Matrix& a, const Matrix& b) {
  check_same_shape("frobenius_distance", a, b);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d =
        static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    sum += d * d;
  }
  return std::sqrt(sum);
}

inline float max_abs(const Matrix& a) {
  float best = 0.0f;
  for (float x : a.data) best = std::max(best, std::fabs(x));
  return best;
}

inline bool all_finite(const Matrix& a) {
  for (float x : a.data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows == b.rows && a.cols == b.cols &&
         (a.data.empty() ||
          std::memcmp(a.data.data(), b.data.data(),
                      a.data.size() * sizeof(float)) == 0);
}

inline Matrix randn(std::size_t rows, std::size_t cols, Rng& rng,
                    float stddev = 1.0f) {
  Matrix out(rows, cols);
  for (float& x : out.data) {
    x = stddev * static_cast<float>(rng.normal());
  }
  return out;
}

}  // namespace loqt
