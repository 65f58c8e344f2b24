#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "nao/errors.hpp"
#include "nao/linalg.hpp"
#include "nao/radial.hpp"
#include "nao/rng.hpp"
#include "nao/tensor.hpp"

namespace nao::darcy {

// n x n nodes on the unit square, h = 1/(n-1); node (i,j) sits at
// (x,y) = (j*h, i*h), row-major index i*n + j. Interior nodes exclude the
// Dirichlet boundary ring.
struct Grid {
  std::size_t n;
  explicit Grid(std::size_t nodes) : n(nodes) {
    if (n < 3) throw ConfigError("darcy grid needs at least 3 nodes per side");
  }
  double h() const { return 1.0 / double(n - 1); }
  std::size_t interior() const { return (n - 2) * (n - 2); }
};

// ---------------------------------------------------------------------------
// Gaussian random fields (squared-exponential covariance, Cholesky sampling)
// ---------------------------------------------------------------------------

class GrfSampler {
 public:
  GrfSampler(const Grid& grid, double length_scale, double variance = 1.0) : n_(grid.n) {
    if (length_scale <= 0.0) throw ConfigError("grf: length scale must be positive");
    const double h = grid.h();
    const std::size_t m = n_ * n_;
    ValueGrid C = ValueGrid::matrix(m, m);
    for (std::size_t a = 0; a < m; ++a) {
      const double xa = double(a % n_) * h, ya = double(a / n_) * h;
      for (std::size_t b = 0; b < m; ++b) {
        const double dx = xa - double(b % n_) * h, dy = ya - double(b / n_) * h;
        C.at(a, b) = variance * std::exp(-(dx * dx + dy * dy) / (2.0 * length_scale * length_scale));
      }
      C.at(a, a) += 1e-10 * variance;  // jitter
    }
    try {
      fac_ = std::make_unique<linalg::Cholesky>(C);
    } catch (const SolveError& e) {
      throw NumericError(std::string("grf covariance not PSD after jitter: ") + e.what());
    }
  }

  // Zero-mean draw; one normal deviate per node, consumed in node order.
  ValueGrid sample(Rng& rng) const {
    const std::size_t m = n_ * n_;
    std::vector<double> z(m);
    for (double& v : z) v = rng.normal();
    const ValueGrid& L = fac_->factor();
    ValueGrid field = ValueGrid::matrix(n_, n_);
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k <= i; ++k) s += L.at(i, k) * z[k];
      field[i] = s;
    }
    return field;
  }

 private:
  std::size_t n_;
  std::unique_ptr<linalg::Cholesky> fac_;
};

inline ValueGrid sample_source_grf(std::uint64_t seed, double length_scale,
                                   std::size_t n = 21, double variance = 1.0) {
  GrfSampler sampler(Grid(n), length_scale, variance);
  Rng rng(seed);
  return sampler.sample(rng);
}

// ---------------------------------------------------------------------------
// Two-phase microstructures
// ---------------------------------------------------------------------------

inline constexpr double kPhaseLow = 3.0;
inline constexpr double kPhaseHigh = 12.0;

struct Microstructure {
  ValueGrid conductivity;  // n x n, entries exactly 3 or 12
  std::uint64_t seed = 0;
};

// Thresholded smooth random field: field > threshold takes conductivity 12,
// the rest 3. threshold = -inf degenerates to uniform 12.
inline Microstructure generate_microstructure(std::uint64_t seed, std::size_t n = 21,
                                              double length_scale = 0.2,
                                              double threshold = 0.0) {
  GrfSampler sampler(Grid(n), length_scale, 1.0);
  Rng rng(seed);
  ValueGrid field = sampler.sample(rng);
  Microstructure ms;
  ms.seed = seed;
  ms.conductivity = ValueGrid::matrix(n, n);
  for (std::size_t i = 0; i < field.size(); ++i)
    ms.conductivity[i] = field[i] > threshold ? kPhaseHigh : kPhaseLow;
  return ms;
}

// ---------------------------------------------------------------------------
// Finite-difference Darcy solver: -div(b grad p) = g, p = 0 on the boundary
// ---------------------------------------------------------------------------

namespace detail {

inline double face(double ba, double bb) { return 2.0 * ba * bb / (ba + bb); }  // harmonic mean

// y = A x with A the h-free 5-point stencil on interior nodes.
inline void apply_stiffness(const ValueGrid& b, const std::vector<double>& x,
                            std::vector<double>& y) {
  const std::size_t n = b.rows();
  const std::size_t m = n - 2;
  auto xi = [&](std::size_t i, std::size_t j) -> double {
    if (i == 0 || j == 0 || i == n - 1 || j == n - 1) return 0.0;
    return x[(i - 1) * m + (j - 1)];
  };
  for (std::size_t i = 1; i + 1 < n; ++i) {
    for (std::size_t j = 1; j + 1 < n; ++j) {
      const double bc = b.at(i, j);
      const double wn = face(bc, b.at(i - 1, j)), ws = face(bc, b.at(i + 1, j));
      const double ww = face(bc, b.at(i, j - 1)), we = face(bc, b.at(i, j + 1));
      const double xc = xi(i, j);
      y[(i - 1) * m + (j - 1)] = (wn + ws + ww + we) * xc - wn * xi(i - 1, j) -
                                 ws * xi(i + 1, j) - ww * xi(i, j - 1) - we * xi(i, j + 1);
    }
  }
}

}  // namespace detail

// Solves the 5-point discretization with harmonic-mean face conductivities.
// Returns the full field with zero boundary values.
inline ValueGrid darcy_solve(const ValueGrid& b, const ValueGrid& g, double rel_tol = 1e-12) {
  if (b.rank() != 2 || b.rows() != b.cols()) throw ShapeError("darcy_solve: b must be square");
  require_same_shape(b, g, "darcy_solve");
  for (double v : b.values)
    if (v <= 0.0) throw ConfigError("darcy_solve: conductivity must be positive");
  const std::size_t n = b.rows();
  const Grid grid(n);
  const double h2 = grid.h() * grid.h();
  const std::size_t m = n - 2;
  std::vector<double> rhs(m * m), inv_diag(m * m);
  for (std::size_t i = 1; i + 1 < n; ++i)
    for (std::size_t j = 1; j + 1 < n; ++j) {
      rhs[(i - 1) * m + (j - 1)] = h2 * g.at(i, j);
      const double bc = b.at(i, j);
      inv_diag[(i - 1) * m + (j - 1)] =
          1.0 / (detail::face(bc, b.at(i - 1, j)) + detail::face(bc, b.at(i + 1, j)) +
                 detail::face(bc, b.at(i, j - 1)) + detail::face(bc, b.at(i, j + 1)));
    }
  auto apply = [&](const std::vector<double>& x, std::vector<double>& y) {
    detail::apply_stiffness(b, x, y);
  };
  std::vector<double> p_int = linalg::cg(apply, rhs, inv_diag, rel_tol, 16 * n * n);
  ValueGrid p = ValueGrid::matrix(n, n);
  for (std::size_t i = 1; i + 1 < n; ++i)
    for (std::size_t j = 1; j + 1 < n; ++j) p.at(i, j) = p_int[(i - 1) * m + (j - 1)];
  return p;
}

// Dense interior stiffness matrix (h-free stencil), M x M with
// M = (n-2)^2. Symmetric positive definite for positive b.
inline ValueGrid stiffness_matrix(const ValueGrid& b) {
  const std::size_t n = b.rows();
  const std::size_t m = n - 2;
  const std::size_t M = m * m;
  ValueGrid A = ValueGrid::matrix(M, M);
  for (std::size_t i = 1; i + 1 < n; ++i)
    for (std::size_t j = 1; j + 1 < n; ++j) {
      const std::size_t row = (i - 1) * m + (j - 1);
      const double bc = b.at(i, j);
      const double wn = detail::face(bc, b.at(i - 1, j)), ws = detail::face(bc, b.at(i + 1, j));
      const double ww = detail::face(bc, b.at(i, j - 1)), we = detail::face(bc, b.at(i, j + 1));
      A.at(row, row) = wn + ws + ww + we;
      if (i > 1) A.at(row, row - m) = -wn;
      if (i + 2 < n) A.at(row, row + m) = -ws;
      if (j > 1) A.at(row, row - 1) = -ww;
      if (j + 2 < n) A.at(row, row + 1) = -we;
    }
  return A;
}

struct StiffnessKernel {
  ValueGrid values;  // M x M inverse stiffness (interior nodes, row-major)
  std::size_t n = 0;  // full grid side
};

// Ground-truth kernel of the g -> p task: the inverse of the interior
// stiffness matrix. p = A^{-1} g * h^2 on interior nodes.
inline StiffnessKernel stiffness_inverse_kernel(const ValueGrid& b) {
  for (double v : b.values)
    if (v <= 0.0) throw ConfigError("stiffness kernel: conductivity must be positive");
  StiffnessKernel out;
  out.n = b.rows();
  linalg::Cholesky fac(stiffness_matrix(b));
  out.values = fac.inverse();
  return out;
}

// Interior kernel padded to the full n^2 x n^2 grid; boundary rows/columns
// are identically zero (Dirichlet data carries no kernel information there).
inline ValueGrid pad_kernel_to_grid(const StiffnessKernel& k) {
  const std::size_t n = k.n, m = n - 2;
  ValueGrid full = ValueGrid::matrix(n * n, n * n);
  for (std::size_t i = 1; i + 1 < n; ++i)
    for (std::size_t j = 1; j + 1 < n; ++j)
      for (std::size_t i2 = 1; i2 + 1 < n; ++i2)
        for (std::size_t j2 = 1; j2 + 1 < n; ++j2)
          full.at(i * n + j, i2 * n + j2) =
              k.values.at((i - 1) * m + (j - 1), (i2 - 1) * m + (j2 - 1));
  return full;
}

// ---------------------------------------------------------------------------
// Microstructure recovery from a kernel
// ---------------------------------------------------------------------------

inline double otsu_threshold(const std::vector<double>& data) {
  double lo = data[0], hi = data[0];
  for (double v : data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo <= 1e-12 * std::max({std::abs(hi), std::abs(lo), 1.0}))
    throw DegenerateError("otsu: constant data, no threshold exists");
  constexpr int kBins = 64;
  std::vector<double> hist(kBins, 0.0);
  for (double v : data) {
    int b = int((v - lo) / (hi - lo) * kBins);
    hist[std::size_t(std::clamp(b, 0, kBins - 1))] += 1.0;
  }
  const double total = double(data.size());
  double sum_all = 0.0;
  for (int b = 0; b < kBins; ++b) sum_all += b * hist[std::size_t(b)];
  double w0 = 0.0, sum0 = 0.0, best_var = -1.0;
  int best_bin = 0;
  for (int b = 0; b < kBins - 1; ++b) {
    w0 += hist[std::size_t(b)];
    if (w0 == 0.0) continue;
    const double w1 = total - w0;
    if (w1 == 0.0) break;
    sum0 += b * hist[std::size_t(b)];
    const double mu0 = sum0 / w0, mu1 = (sum_all - sum0) / w1;
    const double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (var > best_var) {
      best_var = var;
      best_bin = b;
    }
  }
  return lo + (best_bin + 1) * (hi - lo) / kBins;
}

// Per-row kernel mass mapped back onto the interior grid and thresholded
// into the two phases. Rows with large total interaction are the compliant
// (low-conductivity) phase.
inline ValueGrid recover_microstructure(const StiffnessKernel& kernel,
                                        double threshold = 0.0, bool use_otsu = true) {
  const std::size_t M = kernel.values.rows();
  if (kernel.values.cols() != M) throw ShapeError("recover: kernel must be square");
  std::vector<double> row_sum(M, 0.0);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < M; ++j) row_sum[i] += kernel.values.at(i, j);
  const double thr = use_otsu ? otsu_threshold(row_sum) : threshold;
  const std::size_t m = kernel.n - 2;
  ValueGrid phases = ValueGrid::matrix(m, m);
  for (std::size_t i = 0; i < M; ++i)
    phases[i] = row_sum[i] > thr ? kPhaseLow : kPhaseHigh;
  return phases;
}

// Fraction of matching interior phases, skipping `ring` cells next to the
// boundary (Dirichlet data pins the kernel to zero there).
inline double recovery_match_fraction(const ValueGrid& phases, const Microstructure& truth,
                                      std::size_t ring = 2) {
  const std::size_t m = phases.rows();
  const std::size_t n = truth.conductivity.rows();
  if (m != n - 2) throw ShapeError("recovery match: interior size mismatch");
  std::size_t total = 0, match = 0;
  for (std::size_t i = ring; i < m - ring; ++i)
    for (std::size_t j = ring; j < m - ring; ++j) {
      ++total;
      if (phases.at(i, j) == truth.conductivity.at(i + 1, j + 1)) ++match;
    }
  if (total == 0) throw ConfigError("recovery match: ring leaves no interior nodes");
  return double(match) / double(total);
}

// ---------------------------------------------------------------------------
// Tokenization and permutation augmentation
// ---------------------------------------------------------------------------

// g -> p task: one column per (source, pressure) pair on the full grid.
inline TokenPair build_tokens_g_to_p(const Microstructure& ms,
                                     const std::vector<ValueGrid>& sources, int task_id = -1) {
  if (sources.empty()) throw ConfigError("darcy tokens: no sources");
  const std::size_t n = ms.conductivity.rows();
  const std::size_t N = n * n;
  const std::size_t d = sources.size();
  TokenPair tp;
  tp.layout = TokenLayout::paired;
  const Grid grid(n);
  tp.row_weight = grid.h() * grid.h();
  tp.x_weight = tp.row_weight;
  tp.task_id = task_id;
  tp.u = ValueGrid::matrix(N, d);
  tp.f = ValueGrid::matrix(N, d);
  for (std::size_t j = 0; j < d; ++j) {
    const ValueGrid p = darcy_solve(ms.conductivity, sources[j]);
    for (std::size_t a = 0; a < N; ++a) {
      tp.u.at(a, j) = sources[j][a];
      tp.f.at(a, j) = p[a];
    }
  }
  return tp;
}

// b -> p task: a fixed source, one column per (microstructure, pressure)
// pair. Nonlinear in the input; no closed-form kernel truth.
inline TokenPair build_tokens_b_to_p(const std::vector<Microstructure>& structures,
                                     const ValueGrid& source, int task_id = -1) {
  if (structures.empty()) throw ConfigError("darcy tokens: no microstructures");
  const std::size_t n = structures.front().conductivity.rows();
  const std::size_t N = n * n;
  TokenPair tp;
  tp.layout = TokenLayout::paired;
  const Grid grid(n);
  tp.row_weight = grid.h() * grid.h();
  tp.x_weight = tp.row_weight;
  tp.task_id = task_id;
  tp.u = ValueGrid::matrix(N, structures.size());
  tp.f = ValueGrid::matrix(N, structures.size());
  for (std::size_t j = 0; j < structures.size(); ++j) {
    const ValueGrid p = darcy_solve(structures[j].conductivity, source);
    for (std::size_t a = 0; a < N; ++a) {
      tp.u.at(a, j) = structures[j].conductivity[a];
      tp.f.at(a, j) = p[a];
    }
  }
  return tp;
}

// Emits n_perm column permutations of each sample; the first is always the
// identity. Deterministic per seed.
inline std::vector<TokenPair> permute_augment(const std::vector<TokenPair>& samples,
                                              std::size_t n_perm, std::uint64_t seed) {
  if (n_perm < 1) throw ConfigError("permute_augment: n_perm must be >= 1");
  Rng rng(seed);
  std::vector<TokenPair> out;
  out.reserve(samples.size() * n_perm);
  for (const TokenPair& s : samples) {
    const std::size_t d = s.u.cols();
    for (std::size_t p = 0; p < n_perm; ++p) {
      std::vector<std::size_t> perm(d);
      for (std::size_t j = 0; j < d; ++j) perm[j] = j;
      if (p > 0) rng.shuffle(perm);
      TokenPair tp = s;
      for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t a = 0; a < s.u.rows(); ++a) tp.u.at(a, j) = s.u.at(a, perm[j]);
        for (std::size_t a = 0; a < s.f.rows(); ++a) tp.f.at(a, j) = s.f.at(a, perm[j]);
      }
      if (!s.columns.empty()) {
        tp.columns.resize(d);
        for (std::size_t j = 0; j < d; ++j) tp.columns[j] = s.columns[perm[j]];
      }
      out.push_back(std::move(tp));
    }
  }
  return out;
}

}  // namespace nao::darcy
