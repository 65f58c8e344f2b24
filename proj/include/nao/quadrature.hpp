#pragma once

#include <cmath>
#include <functional>
#include <queue>
#include <string>
#include <vector>

#include "nao/errors.hpp"

namespace nao::quad {

// 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK dqk15
// abscissae/weights). Odd-indexed Kronrod nodes are the Gauss nodes.
inline constexpr double kXgk[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144838258730, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};

inline constexpr double kWgk[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};

inline constexpr double kWg[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Panel {
  double a, b;
  double value;
  double error;
  bool operator<(const Panel& o) const { return error < o.error; }
};

template <typename F>
Panel gk15(const F& f, double a, double b) {
  const double hl = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  double fv[15];
  for (int i = 0; i < 7; ++i) {
    fv[i] = f(mid - hl * kXgk[i]);
    fv[14 - i] = f(mid + hl * kXgk[i]);
  }
  fv[7] = f(mid);

  double resk = kWgk[7] * fv[7];
  for (int i = 0; i < 7; ++i) resk += kWgk[i] * (fv[i] + fv[14 - i]);
  // Gauss nodes are the odd-indexed Kronrod nodes plus the center.
  double resg = kWg[3] * fv[7];
  for (int i = 0; i < 3; ++i) resg += kWg[i] * (fv[2 * i + 1] + fv[13 - 2 * i]);

  const double reskh = resk * 0.5;
  double resasc = kWgk[7] * std::abs(fv[7] - reskh);
  for (int i = 0; i < 7; ++i)
    resasc += kWgk[i] * (std::abs(fv[i] - reskh) + std::abs(fv[14 - i] - reskh));
  resasc *= std::abs(hl);

  double err = std::abs((resk - resg) * hl);
  if (resasc != 0.0 && err != 0.0)
    err = resasc * std::min(1.0, std::pow(200.0 * err / resasc, 1.5));
  return Panel{a, b, resk * hl, err};
}

struct Result {
  double value;
  double error_estimate;
  int panels;
};

// Adaptive integration: repeatedly bisect the panel with the largest error
// estimate until the global estimate meets max(rel_tol*|I|, abs_tol).
template <typename F>
Result integrate(const F& f, double a, double b, double rel_tol = 1e-8,
                 double abs_tol = 0.0, int max_panels = 5000) {
  if (rel_tol <= 0.0 && abs_tol <= 0.0)
    throw ConfigError("quadrature: tolerance must be positive");
  std::priority_queue<Panel> heap;
  Panel first = gk15(f, a, b);
  double total = first.value, toterr = first.error;
  heap.push(first);
  int n_panels = 1;
  while (toterr > std::max(std::abs(total) * rel_tol, abs_tol)) {
    if (n_panels >= max_panels) {
      const double rel = std::abs(total) > 0.0 ? toterr / std::abs(total) : toterr;
      throw QuadratureError("quadrature: no convergence after " +
                                std::to_string(n_panels) + " panels, estimated error " +
                                std::to_string(rel),
                            rel);
    }
    Panel worst = heap.top();
    heap.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    Panel left = gk15(f, worst.a, mid);
    Panel right = gk15(f, mid, worst.b);
    total += left.value + right.value - worst.value;
    toterr += left.error + right.error - worst.error;
    heap.push(left);
    heap.push(right);
    ++n_panels;
  }
  return Result{total, toterr, n_panels};
}

}  // namespace nao::quad
