#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include "nao/errors.hpp"
#include "nao/linalg.hpp"
#include "nao/radial.hpp"
#include "nao/tensor.hpp"

namespace nao {

// ---------------------------------------------------------------------------
// Empirical measure and data-adaptive Gram (Lemma 2 objects)
// ---------------------------------------------------------------------------

struct RhoResult {
  std::vector<double> rho;  // density on the r-grid, integrates to 1
  double Z;                 // normalization constant
};

// rho'(r_k) = (1/Z) sum_samples sum_j |g[u](r_k, x_j)| dx, Z such that
// sum_k rho'(r_k) dr = 1.
inline RhoResult build_rho(const std::vector<TokenPair>& dataset, std::size_t n_r, double dr) {
  if (dataset.empty()) throw ConfigError("build_rho: empty dataset");
  std::vector<double> raw(n_r, 0.0);
  for (const TokenPair& s : dataset) {
    if (s.u.rows() != n_r)
      throw ShapeError("build_rho: sample rows " + std::to_string(s.u.rows()) +
                       " vs grid " + std::to_string(n_r));
    for (std::size_t k = 0; k < n_r; ++k)
      for (std::size_t j = 0; j < s.u.cols(); ++j)
        raw[k] += std::abs(s.u.at(k, j)) * s.x_weight;
  }
  double Z = 0.0;
  for (double v : raw) Z += v * dr;
  if (Z <= 0.0) throw DegenerateError("build_rho: all g-features vanish, measure degenerate");
  RhoResult out;
  out.Z = Z;
  out.rho.resize(n_r);
  for (std::size_t k = 0; k < n_r; ++k) out.rho[k] = raw[k] / Z;
  return out;
}

// G(r,s) = (1/(n d)) sum_samples sum_j g[u](r, x_j) g[u](s, x_j) dx;
// symmetric PSD by construction.
inline ValueGrid build_gram(const std::vector<TokenPair>& dataset, std::size_t n_r) {
  if (dataset.empty()) throw ConfigError("build_gram: empty dataset");
  ValueGrid G = ValueGrid::matrix(n_r, n_r);
  double count = 0.0;
  for (const TokenPair& s : dataset) {
    count += double(s.u.cols());
    for (std::size_t a = 0; a < n_r; ++a)
      for (std::size_t b = a; b < n_r; ++b) {
        double acc = 0.0;
        for (std::size_t j = 0; j < s.u.cols(); ++j) acc += s.u.at(a, j) * s.u.at(b, j);
        G.at(a, b) += acc * s.x_weight;
      }
  }
  for (std::size_t a = 0; a < n_r; ++a)
    for (std::size_t b = a; b < n_r; ++b) {
      G.at(a, b) /= count;
      G.at(b, a) = G.at(a, b);
    }
  return G;
}

// rho', G, and the reproducing kernel G_bar = G/(rho' rho') restricted to
// the support of rho'.
struct EstimationContext {
  std::vector<double> r;
  double dr = 0.0;
  std::vector<double> rho;
  double Z = 0.0;
  ValueGrid G;
  ValueGrid G_bar;
  std::vector<std::size_t> support;
};

inline EstimationContext build_estimation_context(const std::vector<TokenPair>& dataset,
                                                  const std::vector<double>& r_grid,
                                                  double dr) {
  EstimationContext ctx;
  ctx.r = r_grid;
  ctx.dr = dr;
  RhoResult rr = build_rho(dataset, r_grid.size(), dr);
  ctx.rho = std::move(rr.rho);
  ctx.Z = rr.Z;
  ctx.G = build_gram(dataset, r_grid.size());
  double rho_max = 0.0;
  for (double v : ctx.rho) rho_max = std::max(rho_max, v);
  const double tol = 1e-12 * rho_max;
  ctx.G_bar = ValueGrid::matrix(r_grid.size(), r_grid.size());
  for (std::size_t k = 0; k < ctx.rho.size(); ++k)
    if (ctx.rho[k] > tol) ctx.support.push_back(k);
  for (std::size_t a : ctx.support)
    for (std::size_t b : ctx.support)
      ctx.G_bar.at(a, b) = ctx.G.at(a, b) / (ctx.rho[a] * ctx.rho[b]);
  return ctx;
}

// ---------------------------------------------------------------------------
// Single-pair regularized estimator (Appendix B)
// ---------------------------------------------------------------------------

enum class Regularizer { data_adaptive, identity, custom };

// G_u carries the full integral-operator discretization (dx and dr weights),
// so K^{u,f} = G_u K_true up to quadrature error and the algebraic estimator
// recovers the sampled kernel directly.
struct SinglePairContext {
  ValueGrid G_u;              // N x N
  std::vector<double> K_uf;   // N
  double dr = 0.0;
  Regularizer reg = Regularizer::data_adaptive;
  ValueGrid W;                // used when reg == custom
};

inline SinglePairContext build_single_pair(const TokenPair& tp,
                                           Regularizer reg = Regularizer::data_adaptive) {
  if (tp.layout != TokenLayout::radial)
    throw ConfigError("single-pair estimator: radial tokens required");
  const std::size_t n = tp.u.rows();
  SinglePairContext ctx;
  ctx.dr = tp.row_weight;
  ctx.reg = reg;
  ctx.G_u = ValueGrid::matrix(n, n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a; b < n; ++b) {
      double acc = 0.0;
      for (std::size_t j = 0; j < tp.u.cols(); ++j) acc += tp.u.at(a, j) * tp.u.at(b, j);
      ctx.G_u.at(a, b) = acc * tp.x_weight * tp.row_weight;
      ctx.G_u.at(b, a) = ctx.G_u.at(a, b);
    }
  ctx.K_uf.assign(n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    double acc = 0.0;
    for (std::size_t j = 0; j < tp.u.cols(); ++j) acc += tp.u.at(a, j) * tp.f.at(0, j);
    ctx.K_uf[a] = acc * tp.x_weight;
  }
  return ctx;
}

namespace detail {

inline std::vector<double> matvec(const ValueGrid& A, const std::vector<double>& x) {
  std::vector<double> y(A.rows(), 0.0);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < A.cols(); ++j) s += A.at(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

template <typename Solver>
std::vector<double> solve_refined(const Solver& fac, const ValueGrid& M,
                                  const std::vector<double>& rhs, int refine = 2) {
  std::vector<double> x = fac.solve(rhs);
  for (int it = 0; it < refine; ++it) {
    std::vector<double> res = matvec(M, x);
    for (std::size_t i = 0; i < res.size(); ++i) res[i] = rhs[i] - res[i];
    std::vector<double> corr = fac.solve(res);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += corr[i];
  }
  return x;
}

}  // namespace detail

// Regularized kernel estimate. data_adaptive solves (G_u^2 + lambda I) K =
// G_u K^{u,f} (the H_{G_u} penalty, matching the Neumann-series identity);
// identity/custom solve (G_u + lambda W) K = K^{u,f}.
inline std::vector<double> regularized_estimate(const SinglePairContext& ctx, double lambda) {
  if (lambda <= 0.0) throw ConfigError("regularized_estimate: lambda must be positive");
  const std::size_t n = ctx.G_u.rows();
  ValueGrid M(ctx.G_u.shape);
  std::vector<double> rhs;
  switch (ctx.reg) {
    case Regularizer::data_adaptive: {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t k = 0; k < n; ++k) s += ctx.G_u.at(i, k) * ctx.G_u.at(k, j);
          M.at(i, j) = s + (i == j ? lambda : 0.0);
        }
      rhs = detail::matvec(ctx.G_u, ctx.K_uf);
      break;
    }
    case Regularizer::identity: {
      M = ctx.G_u;
      for (std::size_t i = 0; i < n; ++i) M.at(i, i) += lambda;
      rhs = ctx.K_uf;
      break;
    }
    case Regularizer::custom: {
      require_same_shape(ctx.G_u, ctx.W, "regularized_estimate");
      M = ctx.G_u;
      for (std::size_t i = 0; i < n * n; ++i) M[i] += lambda * ctx.W[i];
      rhs = ctx.K_uf;
      break;
    }
  }
  if (ctx.reg == Regularizer::custom) {
    linalg::Ldlt fac(M);  // throws SolveError on singular pivots
    return detail::solve_refined(fac, M, rhs);
  }
  linalg::Cholesky fac(M);
  return detail::solve_refined(fac, M, rhs);
}

// ---------------------------------------------------------------------------
// L-curve selection of lambda
// ---------------------------------------------------------------------------

struct LambdaDiagnostics {
  double lambda, residual, solution_norm, curvature;
};

struct LambdaSelection {
  double lambda = 0.0;
  bool degenerate_fallback = false;  // warning flag: no corner found
  double condition_estimate = 0.0;
  double residual = 0.0;
  std::vector<LambdaDiagnostics> curve;
};

inline std::vector<double> default_lambda_grid(const SinglePairContext& ctx,
                                               std::size_t n_points = 25) {
  double scale = linalg::sym_norm_estimate(ctx.G_u);
  if (scale <= 0.0) scale = 1.0;
  if (ctx.reg == Regularizer::data_adaptive) scale *= scale;
  std::vector<double> out(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    const double t = n_points == 1 ? 0.0 : double(i) / double(n_points - 1);
    out[i] = scale * std::pow(10.0, -12.0 + 14.0 * t);
  }
  return out;
}

// Corner of the log residual / log norm curve by maximum signed Menger
// curvature (positive = the classic corner orientation with lambda
// ascending). Flat or corner-free curves fall back to the largest lambda on
// the minimal-residual plateau, with the warning flag set.
inline LambdaSelection select_lambda(const SinglePairContext& ctx,
                                     const std::vector<double>& candidates) {
  if (candidates.empty()) throw ConfigError("select_lambda: empty candidate grid");
  std::vector<double> lams = candidates;
  std::sort(lams.begin(), lams.end());
  const std::size_t n = lams.size();

  LambdaSelection sel;
  std::vector<double> res(n), nrm(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> K = regularized_estimate(ctx, lams[i]);
    std::vector<double> GK = detail::matvec(ctx.G_u, K);
    double r2 = 0.0, n2 = 0.0;
    for (std::size_t k = 0; k < K.size(); ++k) {
      const double dr_k = GK[k] - ctx.K_uf[k];
      r2 += dr_k * dr_k;
      n2 += K[k] * K[k];
    }
    res[i] = std::sqrt(r2);
    nrm[i] = std::sqrt(n2);
    sel.curve.push_back({lams[i], res[i], nrm[i], 0.0});
  }

  const double floor_v = 1e-300;
  auto lg = [&](double v) { return std::log10(std::max(v, floor_v)); };
  double best_kappa = 0.0;
  int best_i = -1;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double x0 = lg(res[i - 1]), y0 = lg(nrm[i - 1]);
    const double x1 = lg(res[i]), y1 = lg(nrm[i]);
    const double x2 = lg(res[i + 1]), y2 = lg(nrm[i + 1]);
    const double cross = (x1 - x0) * (y2 - y1) - (y1 - y0) * (x2 - x1);
    const double a = std::hypot(x1 - x0, y1 - y0);
    const double b = std::hypot(x2 - x1, y2 - y1);
    const double c = std::hypot(x2 - x0, y2 - y0);
    const double kappa = (a > 0 && b > 0 && c > 0) ? 2.0 * cross / (a * b * c) : 0.0;
    sel.curve[i].curvature = kappa;
    if (kappa >= best_kappa) {  // >= ties break toward larger lambda
      best_kappa = kappa;
      best_i = int(i);
    }
  }

  const double kappa_min = 0.1;
  if (best_i >= 0 && best_kappa > kappa_min) {
    sel.lambda = lams[std::size_t(best_i)];
    sel.residual = res[std::size_t(best_i)];
  } else {
    sel.degenerate_fallback = true;
    double res_min = res[0];
    for (double v : res) res_min = std::min(res_min, v);
    for (std::size_t ii = n; ii-- > 0;) {
      if (res[ii] <= 2.0 * res_min + floor_v) {
        sel.lambda = lams[ii];
        sel.residual = res[ii];
        break;
      }
    }
  }

  const double gnorm = linalg::sym_norm_estimate(ctx.G_u);
  const double base = ctx.reg == Regularizer::data_adaptive ? gnorm * gnorm : gnorm;
  sel.condition_estimate = (base + sel.lambda) / sel.lambda;
  return sel;
}

// ---------------------------------------------------------------------------
// Error metrics
// ---------------------------------------------------------------------------

// Mean over samples of the relative L2 error of the predicted f-token.
inline double operator_error(const std::vector<ValueGrid>& predicted,
                             const std::vector<ValueGrid>& truth) {
  if (predicted.size() != truth.size() || predicted.empty())
    throw ShapeError("operator_error: mismatched or empty sample lists");
  double acc = 0.0;
  for (std::size_t s = 0; s < predicted.size(); ++s) {
    require_same_shape(predicted[s], truth[s], "operator_error");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < truth[s].size(); ++i) {
      const double dv = predicted[s][i] - truth[s][i];
      num += dv * dv;
      den += truth[s][i] * truth[s][i];
    }
    if (den <= 0.0)
      throw NumericError("operator_error: zero-norm truth in sample " + std::to_string(s));
    acc += std::sqrt(num / den);
  }
  return acc / double(predicted.size());
}

// ||Khat - Ktrue||_{L2(rho)} / ||Ktrue||_{L2(rho)} with the weighted Riemann
// discretization of the empirical measure.
inline double kernel_error(const std::vector<double>& k_hat, const std::vector<double>& k_true,
                           const std::vector<double>& rho, double dr) {
  if (k_hat.size() != k_true.size() || k_true.size() != rho.size())
    throw ShapeError("kernel_error: grid size mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < k_true.size(); ++k) {
    const double w = rho[k] * dr;
    const double dv = k_hat[k] - k_true[k];
    num += dv * dv * w;
    den += k_true[k] * k_true[k] * w;
  }
  if (den <= 0.0) throw NumericError("kernel_error: truth has zero L2(rho) norm");
  return std::sqrt(num / den);
}

// Relative Frobenius error for grid kernels without an empirical measure.
inline double kernel_error_frobenius(const ValueGrid& k_hat, const ValueGrid& k_true) {
  require_same_shape(k_hat, k_true, "kernel_error_frobenius");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < k_true.size(); ++i) {
    const double dv = k_hat[i] - k_true[i];
    num += dv * dv;
    den += k_true[i] * k_true[i];
  }
  if (den <= 0.0) throw NumericError("kernel_error_frobenius: zero-norm truth");
  return std::sqrt(num / den);
}

// Training loss as a functional of an explicit grid kernel (no model):
// (1/n) sum_s sum_j |sum_k K_k u[k,j] dr - f_j|^2 dx.
inline double radial_loss_at_kernel(const std::vector<TokenPair>& dataset,
                                    const std::vector<double>& K) {
  if (dataset.empty()) throw ConfigError("radial_loss_at_kernel: empty dataset");
  double total = 0.0;
  for (const TokenPair& s : dataset) {
    if (s.u.rows() != K.size())
      throw ShapeError("radial_loss_at_kernel: kernel grid mismatch");
    for (std::size_t j = 0; j < s.u.cols(); ++j) {
      double pred = 0.0;
      for (std::size_t k = 0; k < K.size(); ++k) pred += K[k] * s.u.at(k, j) * s.row_weight;
      const double dv = pred - s.f.at(0, j);
      total += dv * dv * s.x_weight;
    }
  }
  return total / double(dataset.size());
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

inline void export_kernel_csv(const std::string& path, const std::vector<double>& r,
                              const std::vector<double>& rho, const std::vector<double>& k_true,
                              const std::vector<double>& k_hat) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot open csv for writing: " + path);
  os << "r,rho,K_true,K_hat\n";
  char buf[160];
  for (std::size_t k = 0; k < r.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", r[k], rho[k], k_true[k],
                  k_hat[k]);
    os << buf;
  }
}

inline void export_lambda_diagnostics(const std::string& path, const LambdaSelection& sel) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot open csv for writing: " + path);
  os << "lambda,residual,solution_norm,curvature,selected,degenerate_fallback,condition_estimate\n";
  char buf[256];
  for (const LambdaDiagnostics& d : sel.curve) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%d,%d,%.17g\n", d.lambda,
                  d.residual, d.solution_norm, d.curvature, d.lambda == sel.lambda ? 1 : 0,
                  sel.degenerate_fallback ? 1 : 0, sel.condition_estimate);
    os << buf;
  }
}

}  // namespace nao
