#pragma once

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "loqt/matrix.hpp"

namespace loqt {

struct SvdResult {
  Matrix u;                                // m x k
  std::vector<float> singular_values;      // length k, non-increasing
  Matrix vt;                               // k x n
};

namespace detail {

// Factorization in double precision, kept internal so that downstream
// consumers (pseudo-inverse, adapter init) can work from the unrounded
// factors. Storage is column-major: column j of u starts at u[j * m].
struct SvdFactors {
  std::size_t m = 0, n = 0, k = 0;
  std::vector<double> u;      // m x k
  std::vector<double> sigma;  // k
  std::vector<double> v;      // n x k
};

// One-sided Jacobi on the columns of a tall (m >= n) working copy. Rotations
// run in a fixed cyclic order, so the factorization is deterministic. The
// 1e-10 relative off-diagonal tolerance needs double accumulation; results
// are rounded to 32-bit only at the public boundary.
inline SvdFactors jacobi_svd_tall(std::size_t m, std::size_t n,
                                  std::vector<double> w,
                                  const std::string& shape_str) {
  constexpr int kSweepCap = 100;
  constexpr double kOffDiagTol = 1e-10;
  // Columns this far below the matrix norm are round-off debris from exact
  // rank deficiency; they cannot meet the relative criterion and are treated
  // as zero directions instead of being rotated forever.
  constexpr double kNegligible = 1e-13;

  double frob2 = 0.0;
  for (double x : w) frob2 += x * x;
  const double negligible_norm = kNegligible * std::sqrt(frob2);
  const double negligible_norm2 = negligible_norm * negligible_norm;

  std::vector<double> v(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) v[j * n + j] = 1.0;

  bool converged = false;
  for (int sweep = 0; sweep < kSweepCap; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* cp = w.data() + p * m;
        double* cq = w.data() + q * m;
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += cp[i] * cp[i];
          beta += cq[i] * cq[i];
          gamma += cp[i] * cq[i];
        }
        if (alpha <= negligible_norm2 || beta <= negligible_norm2) continue;
        if (std::fabs(gamma) <= kOffDiagTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double sign = zeta >= 0.0 ? 1.0 : -1.0;
        const double t =
            sign / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double xp = cp[i];
          const double xq = cq[i];
          cp[i] = c * xp - s * xq;
          cq[i] = s * xp + c * xq;
        }
        double* vp = v.data() + p * n;
        double* vq = v.data() + q * n;
        for (std::size_t i = 0; i < n; ++i) {
          const double xp = vp[i];
          const double xq = vq[i];
          vp[i] = c * xp - s * xq;
          vq[i] = s * xp + c * xq;
        }
      }
    }
    if (!rotated) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw std::runtime_error("svd: Jacobi iteration did not converge for " +
                             shape_str + " within 100 sweeps");
  }

  std::vector<double> norms(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double sum = 0.0;
    const double* col = w.data() + j * m;
    for (std::size_t i = 0; i < m; ++i) sum += col[i] * col[i];
    norms[j] = std::sqrt(sum);
    if (norms[j] <= negligible_norm) norms[j] = 0.0;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return norms[a] > norms[b];
                   });

  SvdFactors out;
  out.m = m;
  out.n = n;
  out.k = n;
  out.sigma.resize(n);
  out.u.assign(n * m, 0.0);
  out.v.assign(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.sigma[j] = norms[src];
    const double* vcol = v.data() + src * n;
    std::copy(vcol, vcol + n, out.v.data() + j * n);
    if (norms[src] > 0.0) {
      const double* wcol = w.data() + src * m;
      double* ucol = out.u.data() + j * m;
      const double inv = 1.0 / norms[src];
      for (std::size_t i = 0; i < m; ++i) ucol[i] = wcol[i] * inv;
    }
  }

  // Exactly-zero columns get deterministic orthonormal completions from the
  // standard basis, so U always has a full set of orthonormal columns.
  for (std::size_t j = 0; j < n; ++j) {
    if (out.sigma[j] > 0.0) continue;
    double* ucol = out.u.data() + j * m;
    for (std::size_t cand = 0; cand < m; ++cand) {
      std::vector<double> e(m, 0.0);
      e[cand] = 1.0;
      for (std::size_t prev = 0; prev < j; ++prev) {
        const double* pcol = out.u.data() + prev * m;
        double dot = 0.0;
        for (std::size_t i = 0; i < m; ++i) dot += pcol[i] * e[i];
        for (std::size_t i = 0; i < m; ++i) e[i] -= dot * pcol[i];
      }
      double norm = 0.0;
      for (double x : e) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 0.5) {
        for (std::size_t i = 0; i < m; ++i) ucol[i] = e[i] / norm;
        break;
      }
    }
  }
  return out;
}

// Deterministic sign convention: the largest-magnitude entry of each U column
// is made non-negative (ties broken by lowest index), flipping the matching V
// column to preserve the product.
inline void apply_sign_convention(SvdFactors& f) {
  for (std::size_t j = 0; j < f.k; ++j) {
    double* ucol = f.u.data() + j * f.m;
    std::size_t best = 0;
    double best_abs = std::fabs(ucol[0]);
    for (std::size_t i = 1; i < f.m; ++i) {
      const double a = std::fabs(ucol[i]);
      if (a > best_abs) {
        best_abs = a;
        best = i;
      }
    }
    if (ucol[best] < 0.0) {
      for (std::size_t i = 0; i < f.m; ++i) ucol[i] = -ucol[i];
      double* vcol = f.v.data() + j * f.n;
      for (std::size_t i = 0; i < f.n; ++i) vcol[i] = -vcol[i];
    }
  }
}

inline SvdFactors svd_factors(const Matrix& a) {
  if (a.rows == 0 || a.cols == 0) {
    throw std::invalid_argument("svd: matrix " + a.shape_str() + " is empty");
  }
  const std::size_t m = a.rows;
  const std::size_t n = a.cols;
  SvdFactors f;
  if (m >= n) {
    std::vector<double> w(m * n);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) {
        w[j * m + i] = static_cast<double>(a(i, j));
      }
    }
    f = jacobi_svd_tall(m, n, std::move(w), a.shape_str());
  } else {
    // Wide input: factor the transpose, then swap the roles of U and V.
    std::vector<double> w(n * m);
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        w[j * n + i] = static_cast<double>(a(j, i));
      }
    }
    SvdFactors t = jacobi_svd_tall(n, m, std::move(w), a.shape_str());
    f.m = m;
    f.n = n;
    f.k = t.k;
    f.sigma = std::move(t.sigma);
    f.u = std::move(t.v);  // m x k
    f.v = std::move(t.u);  // n x k
  }
  apply_sign_convention(f);
  return f;
}

}  // namespace detail

inline SvdResult svd(const Matrix& a) {
  const detail::SvdFactors f = detail::svd_factors(a);
  SvdResult out;
  out.u = Matrix(f.m, f.k);
  out.vt = Matrix(f.k, f.n);
  out.singular_values.resize(f.k);
  for (std::size_t j = 0; j < f.k; ++j) {
    out.singular_values[j] = static_cast<float>(f.sigma[j]);
    for (std::size_t i = 0; i < f.m; ++i) {
      out.u(i, j) = static_cast<float>(f.u[j * f.m + i]);
    }
    for (std::size_t i = 0; i < f.n; ++i) {
      out.vt(j, i) = static_cast<float>(f.v[j * f.n + i]);
    }
  }
  return out;
}

// First r columns of U from svd(g); the projector used for adapter init.
inline Matrix truncated_left_factor(const Matrix& g, std::size_t r) {
  const std::size_t k = std::min(g.rows, g.cols);
  if (r < 1 || r > k) {
    throw std::invalid_argument(
        "truncated_left_factor: rank " + std::to_string(r) +
        " out of range for " + g.shape_str() + " (valid 1.." +
        std::to_string(k) + ")");
  }
  const detail::SvdFactors f = detail::svd_factors(g);
  Matrix out(f.m, r);
  for (std::size_t j = 0; j < r; ++j) {
    for (std::size_t i = 0; i < f.m; ++i) {
      out(i, j) = static_cast<float>(f.u[j * f.m + i]);
    }
  }
  return out;
}

// First r columns of V, i.e. the right factor; the projector for wide layers.
inline Matrix truncated_right_factor(const Matrix& g, std::size_t r) {
  const std::size_t k = std::min(g.rows, g.cols);
  if (r < 1 || r > k) {
    throw std::invalid_argument(
        "truncated_right_factor: rank " + std::to_string(r) +
        " out of range for " + g.shape_str() + " (valid 1.." +
        std::to_string(k) + ")");
  }
  const detail::SvdFactors f = detail::svd_factors(g);
  Matrix out(f.n, r);
  for (std::size_t j = 0; j < r; ++j) {
    for (std::size_t i = 0; i < f.n; ++i) {
      out(i, j) = static_cast<float>(f.v[j * f.n + i]);
    }
  }
  return out;
}

// Moore-Penrose pseudo-inverse. Singular values at or below
// max(m,n) * eps * sigma_max count as zero (the conventional rank cutoff).
inline Matrix pseudo_inverse(const Matrix& a) {
  const detail::SvdFactors f = detail::svd_factors(a);
  const double sigma_max = f.k > 0 ? f.sigma[0] : 0.0;
  const double cutoff = static_cast<double>(std::max(f.m, f.n)) *
                        static_cast<double>(FLT_EPSILON) * sigma_max;
  std::vector<double> acc(f.n * f.m, 0.0);
  for (std::size_t j = 0; j < f.k; ++j) {
    if (!(f.sigma[j] > cutoff)) continue;
    const double inv = 1.0 / f.sigma[j];
    const double* vcol = f.v.data() + j * f.n;
    const double* ucol = f.u.data() + j * f.m;
    for (std::size_t i = 0; i < f.n; ++i) {
      const double vi = vcol[i] * inv;
      double* acc_row = acc.data() + i * f.m;
      for (std::size_t l = 0; l < f.m; ++l) acc_row[l] += vi * ucol[l];
    }
  }
  Matrix out(f.n, f.m);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = static_cast<float>(acc[i]);
  }
  return out;
}

}  // namespace loqt
