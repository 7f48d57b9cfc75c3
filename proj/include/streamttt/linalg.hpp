#pragma once

// Minimal dense linear algebra for small dimensions (d <= a few hundred).
// Row-major matrices, throwing error checks, no external dependencies.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "streamttt/rng.hpp"

namespace streamttt {

using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm_sq(const Vec& a) { return dot(a, a); }
inline double norm(const Vec& a) { return std::sqrt(norm_sq(a)); }

inline void axpy(double c, const Vec& x, Vec& y) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: size mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += c * x[i];
}

inline Vec sub(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw std::invalid_argument("sub: size mismatch");
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

inline Vec add(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw std::invalid_argument("add: size mismatch");
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
  return r;
}

inline Vec scaled(const Vec& a, double c) {
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = c * a[i];
  return r;
}

inline bool all_finite(const Vec& a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Mat scaled_identity(std::size_t n, double c) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = c;
    return m;
  }

  bool operator==(const Mat& o) const {
    return rows == o.rows && cols == o.cols && a == o.a;
  }
};

inline Vec matvec(const Mat& m, const Vec& x) {
  if (m.cols != x.size()) throw std::invalid_argument("matvec: size mismatch");
  Vec y(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) s += m(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

inline Mat matmul(const Mat& p, const Mat& q) {
  if (p.cols != q.rows) throw std::invalid_argument("matmul: size mismatch");
  Mat r(p.rows, q.cols);
  for (std::size_t i = 0; i < p.rows; ++i)
    for (std::size_t k = 0; k < p.cols; ++k) {
      const double pik = p(i, k);
      if (pik == 0.0) continue;
      for (std::size_t j = 0; j < q.cols; ++j) r(i, j) += pik * q(k, j);
    }
  return r;
}

inline Mat transpose(const Mat& m) {
  Mat r(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) r(j, i) = m(i, j);
  return r;
}

// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
inline Mat cholesky(const Mat& m, double tol = 1e-12) {
  if (m.rows != m.cols) throw std::invalid_argument("cholesky: not square");
  const std::size_t n = m.rows;
  Mat l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (s <= tol) throw std::runtime_error("cholesky: matrix not positive definite");
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return l;
}

// Solves (L L^T) x = b given the Cholesky factor L.
inline Vec chol_solve(const Mat& l, const Vec& b) {
  const std::size_t n = l.rows;
  if (b.size() != n) throw std::invalid_argument("chol_solve: size mismatch");
  Vec y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
    y[i] = s / l(i, i);
  }
  Vec x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
    x[ii] = s / l(ii, ii);
  }
  return x;
}

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
inline Vec symmetric_eigenvalues(const Mat& m, int max_sweeps = 64) {
  if (m.rows != m.cols) throw std::invalid_argument("eigenvalues: not square");
  const std::size_t n = m.rows;
  Mat a = m;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-26) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < n; ++i) {
          const double aip = a(i, p), aiq = a(i, q);
          a(i, p) = c * aip - s * aiq;
          a(i, q) = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double api = a(p, i), aqi = a(q, i);
          a(p, i) = c * api - s * aqi;
          a(q, i) = s * api + c * aqi;
        }
      }
    }
  }
  Vec ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

inline double min_eigenvalue(const Mat& m) { return symmetric_eigenvalues(m).front(); }

// Largest singular value, via the eigenvalues of W^T W.
inline double spectral_norm(const Mat& w) {
  const Mat g = matmul(transpose(w), w);
  const double lmax = symmetric_eigenvalues(g).back();
  return std::sqrt(std::max(0.0, lmax));
}

inline Vec gaussian_vec(std::size_t n, Rng& rng, double stddev = 1.0) {
  Vec v(n);
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return v;
}

// Uniform on the unit sphere.
inline Vec random_unit_vec(std::size_t n, Rng& rng) {
  for (;;) {
    Vec v = gaussian_vec(n, rng);
    const double r = norm(v);
    if (r > 1e-12) {
      for (auto& x : v) x /= r;
      return v;
    }
  }
}

// Random orthogonal matrix: modified Gram-Schmidt on a Gaussian matrix.
inline Mat random_orthogonal(std::size_t n, Rng& rng) {
  Mat q(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    Vec col = gaussian_vec(n, rng);
    for (std::size_t jj = 0; jj < j; ++jj) {
      double proj = 0.0;
      for (std::size_t i = 0; i < n; ++i) proj += q(i, jj) * col[i];
      for (std::size_t i = 0; i < n; ++i) col[i] -= proj * q(i, jj);
    }
    double r = norm(col);
    if (r < 1e-10) return random_orthogonal(n, rng);  // rare degenerate draw
    for (std::size_t i = 0; i < n; ++i) q(i, j) = col[i] / r;
  }
  return q;
}

}  // namespace streamttt
