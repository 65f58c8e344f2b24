#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "nao/errors.hpp"
#include "nao/tensor.hpp"

// Dense symmetric linear algebra at desk scale, plus matrix-free CG.
// Everything here is deterministic and single-threaded per call.
namespace nao::linalg {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

// Largest |eigenvalue| of a symmetric matrix by power iteration.
inline double sym_norm_estimate(const ValueGrid& A, int iters = 50) {
  const std::size_t n = A.rows();
  std::vector<double> x(n, 1.0), y(n);
  double lam = 0.0;
  for (int it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += A.at(i, j) * x[j];
      y[i] = s;
    }
    lam = norm2(y);
    if (lam == 0.0) return 0.0;
    for (std::size_t i = 0; i < n; ++i) x[i] = y[i] / lam;
  }
  return lam;
}

// In-place lower Cholesky factor of an SPD matrix. Throws SolveError when a
// pivot fails (matrix not positive definite to working precision).
class Cholesky {
 public:
  explicit Cholesky(const ValueGrid& A) : n_(A.rows()), L_(A) {
    if (A.rank() != 2 || A.rows() != A.cols())
      throw ShapeError("cholesky: need square matrix, got " + shape_str(A.shape));
    for (std::size_t j = 0; j < n_; ++j) {
      double d = L_.at(j, j);
      for (std::size_t k = 0; k < j; ++k) d -= L_.at(j, k) * L_.at(j, k);
      if (d <= 0.0 || !std::isfinite(d))
        throw SolveError("cholesky pivot " + std::to_string(j) + " is " +
                             std::to_string(d) + ": matrix not SPD",
                         d != 0.0 ? std::abs(L_.at(0, 0) / d) : 0.0);
      const double ljj = std::sqrt(d);
      L_.at(j, j) = ljj;
      for (std::size_t i = j + 1; i < n_; ++i) {
        double s = L_.at(i, j);
        for (std::size_t k = 0; k < j; ++k) s -= L_.at(i, k) * L_.at(j, k);
        L_.at(i, j) = s / ljj;
      }
    }
  }

  std::vector<double> solve(std::vector<double> b) const {
    for (std::size_t i = 0; i < n_; ++i) {
      double s = b[i];
      for (std::size_t k = 0; k < i; ++k) s -= L_.at(i, k) * b[k];
      b[i] = s / L_.at(i, i);
    }
    for (std::size_t ii = n_; ii-- > 0;) {
      double s = b[ii];
      for (std::size_t k = ii + 1; k < n_; ++k) s -= L_.at(k, ii) * b[k];
      b[ii] = s / L_.at(ii, ii);
    }
    return b;
  }

  ValueGrid inverse() const {
    ValueGrid inv = ValueGrid::matrix(n_, n_);
    std::vector<double> e(n_, 0.0);
    for (std::size_t j = 0; j < n_; ++j) {
      e[j] = 1.0;
      std::vector<double> col = solve(e);
      for (std::size_t i = 0; i < n_; ++i) inv.at(i, j) = col[i];
      e[j] = 0.0;
    }
    return inv;
  }

  // Lower factor (upper triangle holds stale input entries).
  const ValueGrid& factor() const { return L_; }

 private:
  std::size_t n_;
  ValueGrid L_;
};

// Symmetric solve via LDLT without pivoting; suitable for symmetric
// positive- or mildly indefinite systems arising from G_u + lambda*W.
class Ldlt {
 public:
  explicit Ldlt(const ValueGrid& A) : n_(A.rows()), L_(A), d_(n_) {
    if (A.rank() != 2 || A.rows() != A.cols())
      throw ShapeError("ldlt: need square matrix, got " + shape_str(A.shape));
    for (std::size_t j = 0; j < n_; ++j) {
      double dj = L_.at(j, j);
      for (std::size_t k = 0; k < j; ++k) dj -= L_.at(j, k) * L_.at(j, k) * d_[k];
      if (dj == 0.0 || !std::isfinite(dj))
        throw SolveError("ldlt: zero pivot at " + std::to_string(j) + ": singular system");
      d_[j] = dj;
      for (std::size_t i = j + 1; i < n_; ++i) {
        double s = L_.at(i, j);
        for (std::size_t k = 0; k < j; ++k) s -= L_.at(i, k) * L_.at(j, k) * d_[k];
        L_.at(i, j) = s / dj;
      }
    }
  }

  std::vector<double> solve(std::vector<double> b) const {
    for (std::size_t i = 0; i < n_; ++i) {
      double s = b[i];
      for (std::size_t k = 0; k < i; ++k) s -= L_.at(i, k) * b[k];
      b[i] = s;
    }
    for (std::size_t i = 0; i < n_; ++i) b[i] /= d_[i];
    for (std::size_t ii = n_; ii-- > 0;) {
      double s = b[ii];
      for (std::size_t k = ii + 1; k < n_; ++k) s -= L_.at(k, ii) * b[k];
      b[ii] = s;
    }
    return b;
  }

 private:
  std::size_t n_;
  ValueGrid L_;
  std::vector<double> d_;
};

struct EigenSym {
  std::vector<double> eigenvalues;  // ascending
  ValueGrid eigenvectors;           // column j pairs with eigenvalues[j]
};

// Cyclic Jacobi for symmetric matrices. Fine for the desk-scale grids used
// by the identifiability and recovery analyses (n up to a few hundred).
inline EigenSym eigen_sym(const ValueGrid& A, double tol = 1e-13, int max_sweeps = 60) {
  if (A.rank() != 2 || A.rows() != A.cols())
    throw ShapeError("eigen_sym: need square matrix, got " + shape_str(A.shape));
  const std::size_t n = A.rows();
  ValueGrid M = A;
  ValueGrid V = ValueGrid::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) V.at(i, i) = 1.0;

  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) scale = std::max(scale, std::abs(M.at(i, j)));
  if (scale == 0.0) scale = 1.0;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off = std::max(off, std::abs(M.at(p, q)));
    if (off <= tol * scale) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = M.at(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double app = M.at(p, p), aqq = M.at(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = M.at(k, p), mkq = M.at(k, q);
          M.at(k, p) = c * mkp - s * mkq;
          M.at(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = M.at(p, k), mqk = M.at(q, k);
          M.at(p, k) = c * mpk - s * mqk;
          M.at(q, k) = s * mpk + c * mqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = V.at(k, p), vkq = V.at(k, q);
          V.at(k, p) = c * vkp - s * vkq;
          V.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return M.at(a, a) < M.at(b, b); });
  EigenSym out;
  out.eigenvalues.resize(n);
  out.eigenvectors = ValueGrid::matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    out.eigenvalues[j] = M.at(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) out.eigenvectors.at(i, j) = V.at(i, order[j]);
  }
  return out;
}

// Preconditioned (Jacobi) conjugate gradient on a matrix-free SPD operator.
inline std::vector<double> cg(
    const std::function<void(const std::vector<double>&, std::vector<double>&)>& apply,
    const std::vector<double>& rhs, const std::vector<double>& inv_diag,
    double rel_tol, std::size_t max_iters) {
  const std::size_t n = rhs.size();
  std::vector<double> x(n, 0.0), r = rhs, z(n), p(n), Ap(n);
  const double bnorm = norm2(rhs);
  if (bnorm == 0.0) return x;
  for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
  p = z;
  double rz = dot(r, z);
  for (std::size_t it = 0; it < max_iters; ++it) {
    apply(p, Ap);
    const double alpha = rz / dot(p, Ap);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * Ap[i];
    }
    if (norm2(r) <= rel_tol * bnorm) return x;
    for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  throw SolveError("cg did not converge: residual " +
                   std::to_string(norm2(r) / bnorm) + " after " +
                   std::to_string(max_iters) + " iterations");
}

}  // namespace nao::linalg
