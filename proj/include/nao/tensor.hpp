#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "nao/errors.hpp"

namespace nao {

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

// Dense row-major array of f64 with shape metadata. The universal numeric
// carrier: discretized functions, tokens, weights, kernel estimates.
class ValueGrid {
 public:
  ValueGrid() = default;

  explicit ValueGrid(std::vector<std::size_t> shp)
      : shape(std::move(shp)), values(count(shape), 0.0) {}

  ValueGrid(std::vector<std::size_t> shp, std::vector<double> vals)
      : shape(std::move(shp)), values(std::move(vals)) {
    if (count(shape) != values.size())
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
  }

  static ValueGrid matrix(std::size_t n, std::size_t m, double fill = 0.0) {
    ValueGrid g({n, m});
    if (fill != 0.0) std::fill(g.values.begin(), g.values.end(), fill);
    return g;
  }

  static ValueGrid scalar(double v) {
    ValueGrid g({1, 1});
    g.values[0] = v;
    return g;
  }

  // Row-major rank-2 literal, e.g. ValueGrid::from_rows({{1,2},{3,4}}).
  static ValueGrid from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    std::size_t n = rows.size();
    std::size_t m = n ? rows.begin()->size() : 0;
    ValueGrid g({n, m});
    std::size_t i = 0;
    for (const auto& r : rows) {
      if (r.size() != m) throw ShapeError("ragged row literal");
      for (double v : r) g.values[i++] = v;
    }
    return g;
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t v : s) n *= v;
    return n;
  }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }

  std::size_t rows() const {
    if (shape.size() != 2) throw ShapeError("rows() on non-matrix " + shape_str(shape));
    return shape[0];
  }
  std::size_t cols() const {
    if (shape.size() != 2) throw ShapeError("cols() on non-matrix " + shape_str(shape));
    return shape[1];
  }

  double& at(std::size_t i, std::size_t j) { return values[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * shape[1] + j]; }

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  bool same_shape(const ValueGrid& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double abs_max() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
  }

  std::vector<std::size_t> shape;
  std::vector<double> values;
};

inline void require_same_shape(const ValueGrid& a, const ValueGrid& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
}

}  // namespace nao
