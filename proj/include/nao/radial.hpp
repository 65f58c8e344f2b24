#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nao/errors.hpp"
#include "nao/quadrature.hpp"
#include "nao/rng.hpp"
#include "nao/tensor.hpp"

namespace nao {

inline constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Closed-form radial kernel families
// ---------------------------------------------------------------------------

enum class KernelFamily { sine, cosine, polynomial, gaussian, ood1 };

inline const char* family_name(KernelFamily f) {
  switch (f) {
    case KernelFamily::sine: return "sine";
    case KernelFamily::cosine: return "cosine";
    case KernelFamily::polynomial: return "polynomial";
    case KernelFamily::gaussian: return "gaussian";
    case KernelFamily::ood1: return "ood1";
  }
  return "?";
}

// Degree-n Legendre polynomial by the three-term recurrence.
inline double legendre(int n, double x) {
  if (n == 0) return 1.0;
  double pm = 1.0, p = x;
  for (int k = 1; k < n; ++k) {
    const double pn = ((2.0 * k + 1.0) * x * p - k * pm) / (k + 1.0);
    pm = p;
    p = pn;
  }
  return p;
}

struct RadialKernelSpec {
  KernelFamily family;
  int eta = 0;         // task index within the family
  double delta;        // support radius (indicator cutoff)

  RadialKernelSpec(KernelFamily fam, int index)
      : family(fam), eta(index), delta(default_delta(fam)) {
    validate();
  }

  static double default_delta(KernelFamily fam) {
    switch (fam) {
      case KernelFamily::sine:
      case KernelFamily::ood1:
      case KernelFamily::gaussian: return 11.0;
      case KernelFamily::cosine:
      case KernelFamily::polynomial: return 10.0;
    }
    return 0.0;
  }

  void validate() const {
    const bool ok = (family == KernelFamily::sine && eta >= 1 && eta <= 8) ||
                    (family == KernelFamily::cosine && eta >= 0 && eta <= 6) ||
                    (family == KernelFamily::polynomial && eta >= 1 && eta <= 7) ||
                    (family == KernelFamily::gaussian && eta == 0) ||
                    (family == KernelFamily::ood1 && eta == 0);
    if (!ok)
      throw ConfigError(std::string("unknown kernel family/index: ") +
                        family_name(family) + "/" + std::to_string(eta));
  }

  double eval(double r) const {
    if (r < 0.0 || r > delta) return 0.0;
    switch (family) {
      case KernelFamily::sine:
        return std::exp(-eta * r) * std::sin(6.0 * r);
      case KernelFamily::ood1:
        return r * (11.0 - r) * std::exp(-5.0 * r) * std::sin(6.0 * r);
      case KernelFamily::cosine:
        return (10.0 - r) / 20.0 * std::cos(eta * r) * (10.0 - r);
      case KernelFamily::polynomial:
        return std::exp(-0.1 * r) * legendre(eta, (r - 10.0) / 10.0);
      case KernelFamily::gaussian:
        return std::exp(-0.5 * r * r) / std::sqrt(2.0 * kPi);
    }
    return 0.0;
  }

  std::string label() const {
    std::string s = family_name(family);
    if (family == KernelFamily::sine || family == KernelFamily::cosine ||
        family == KernelFamily::polynomial)
      s += std::to_string(eta);
    return s;
  }
};

inline double eval_kernel(const RadialKernelSpec& spec, double r) { return spec.eval(r); }

// ---------------------------------------------------------------------------
// Input functions and the second-difference feature
// ---------------------------------------------------------------------------

// u(x) = cos(kx) or sin(kx) on [-pi, pi], zero outside.
struct InputFunctionSpec {
  enum class Kind { cos_k, sin_k };
  Kind kind;
  int k;

  InputFunctionSpec(Kind kd, int freq) : kind(kd), k(freq) {
    if (freq <= 0) throw ConfigError("input function frequency must be positive");
  }

  double eval(double x) const {
    if (x < -kPi || x > kPi) return 0.0;
    return kind == Kind::cos_k ? std::cos(k * x) : std::sin(k * x);
  }

  std::string label() const {
    return (kind == Kind::cos_k ? "cos" : "sin") + std::to_string(k);
  }
};

// g[u](r, x) = u(x+r) + u(x-r) - 2 u(x)
inline double g_feature(const InputFunctionSpec& u, double r, double x) {
  return u.eval(x + r) + u.eval(x - r) - 2.0 * u.eval(x);
}

// ---------------------------------------------------------------------------
// Forward operator: f(x) = int_0^delta K(r) g[u](r, x) dr
// ---------------------------------------------------------------------------

inline double apply_operator(const std::function<double(double)>& kernel, double delta,
                             const InputFunctionSpec& u, double x, double rel_tol) {
  if (std::abs(x) > kPi + delta) return 0.0;  // no support overlap
  auto integrand = [&](double r) { return kernel(r) * g_feature(u, r, x); };
  return quad::integrate(integrand, 0.0, delta, rel_tol).value;
}

inline double apply_operator(const RadialKernelSpec& spec, const InputFunctionSpec& u,
                             double x, double rel_tol = 1e-8) {
  return apply_operator([&](double r) { return spec.eval(r); }, spec.delta, u, x, rel_tol);
}

// ---------------------------------------------------------------------------
// Sampling grid and tokens
// ---------------------------------------------------------------------------

// Uniform x-mesh of the informative window |x| <= pi + delta and matching
// r-mesh of (0, delta] with dr = dx. Columns are indexed by signed integers
// j with x_j = j*dx; rows by k = 1..N with r_k = k*dr.
struct SampleGrid {
  double dx;
  double dr;
  double delta;
  std::int64_t col_lo, col_hi;
  std::size_t n_r;

  SampleGrid(double spacing, double support)
      : dx(spacing), dr(spacing), delta(support) {
    if (spacing <= 0.0 || support <= 0.0)
      throw ConfigError("sample grid: spacing and support must be positive");
    col_hi = std::int64_t(std::ceil((kPi + delta) / dx - 1e-12));
    col_lo = -col_hi;
    n_r = std::size_t(std::ceil(delta / dr - 1e-12));
  }

  double x(std::int64_t j) const { return double(j) * dx; }
  double r(std::size_t k) const { return double(k) * dr; }  // k in 1..n_r
  std::size_t n_cols() const { return std::size_t(col_hi - col_lo + 1); }

  std::vector<double> r_grid() const {
    std::vector<double> out(n_r);
    for (std::size_t k = 0; k < n_r; ++k) out[k] = r(k + 1);
    return out;
  }
};

enum class TokenLayout { radial, paired };

// One training/test sample: stacked u/f token matrices plus the quadrature
// weights the operators need. Column j of u and f refer to the same point.
struct TokenPair {
  ValueGrid u;  // N_u x d
  ValueGrid f;  // N_f x d (radial: 1 x d)
  TokenLayout layout = TokenLayout::radial;
  double row_weight = 0.0;  // u-row quadrature weight: dr (radial), cell area (paired)
  double x_weight = 0.0;    // weight of the x-integral in losses and norms
  int task_id = -1;
  int function_id = -1;
  std::vector<std::int64_t> columns;
};

inline TokenPair build_tokens(const RadialKernelSpec& spec, const InputFunctionSpec& u,
                              const SampleGrid& grid, const std::vector<std::int64_t>& columns,
                              double quad_tol = 1e-8, int task_id = -1, int function_id = -1) {
  const std::size_t d = columns.size();
  for (std::int64_t j : columns)
    if (j < grid.col_lo || j > grid.col_hi)
      throw std::out_of_range("column index " + std::to_string(j) +
                              " outside informative window [" + std::to_string(grid.col_lo) +
                              "," + std::to_string(grid.col_hi) + "]");
  TokenPair tp;
  tp.u = ValueGrid::matrix(grid.n_r, d);
  tp.f = ValueGrid::matrix(1, d);
  tp.layout = TokenLayout::radial;
  tp.row_weight = grid.dr;
  tp.x_weight = grid.dx;
  tp.task_id = task_id;
  tp.function_id = function_id;
  tp.columns = columns;
  for (std::size_t j = 0; j < d; ++j) {
    const double xj = grid.x(columns[j]);
    for (std::size_t k = 0; k < grid.n_r; ++k)
      tp.u.at(k, j) = g_feature(u, grid.r(k + 1), xj);
    tp.f.at(0, j) = apply_operator(spec, u, xj, quad_tol);
  }
  return tp;
}

// Ground-truth kernel sampled on the grid's r-mesh.
inline std::vector<double> sample_kernel(const RadialKernelSpec& spec, const SampleGrid& grid) {
  std::vector<double> out(grid.n_r);
  for (std::size_t k = 0; k < grid.n_r; ++k) out[k] = spec.eval(grid.r(k + 1));
  return out;
}

// Partitions the informative columns into floor(n_cols/d) contiguous blocks
// and emits one TokenPair per (kernel, function, block). When
// max_blocks_per_function > 0, a seeded subset of blocks is used instead of
// all of them. Deterministic for a fixed seed.
inline std::vector<TokenPair> assemble_dataset(const std::vector<RadialKernelSpec>& kernels,
                                               const std::vector<InputFunctionSpec>& functions,
                                               const SampleGrid& grid, std::size_t d,
                                               std::uint64_t seed,
                                               std::size_t max_blocks_per_function = 0,
                                               double quad_tol = 1e-8) {
  const std::size_t n_cols = grid.n_cols();
  if (d > n_cols)
    throw ConfigError("token size d=" + std::to_string(d) + " exceeds " +
                      std::to_string(n_cols) + " informative columns");
  const std::size_t n_blocks = n_cols / d;
  Rng rng(seed);
  std::vector<std::size_t> block_ids(n_blocks);
  for (std::size_t b = 0; b < n_blocks; ++b) block_ids[b] = b;
  if (max_blocks_per_function > 0 && max_blocks_per_function < n_blocks) {
    rng.shuffle(block_ids);
    block_ids.resize(max_blocks_per_function);
    std::sort(block_ids.begin(), block_ids.end());
  }
  std::vector<TokenPair> out;
  out.reserve(kernels.size() * functions.size() * block_ids.size());
  for (std::size_t t = 0; t < kernels.size(); ++t) {
    for (std::size_t fi = 0; fi < functions.size(); ++fi) {
      for (std::size_t b : block_ids) {
        std::vector<std::int64_t> cols(d);
        for (std::size_t j = 0; j < d; ++j)
          cols[j] = grid.col_lo + std::int64_t(b * d + j);
        out.push_back(build_tokens(kernels[t], functions[fi], grid, cols, quad_tol,
                                   int(t), int(fi)));
      }
    }
  }
  return out;
}

}  // namespace nao
