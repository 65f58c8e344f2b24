#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "nao/tensor.hpp"

namespace nao {

// All randomness flows through explicitly seeded generators; no implicit
// entropy anywhere in the library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(gen_);
  }

  std::uint64_t integer(std::uint64_t bound) {  // in [0, bound)
    return std::uniform_int_distribution<std::uint64_t>(0, bound - 1)(gen_);
  }

  ValueGrid uniform_matrix(std::size_t n, std::size_t m, double lo, double hi) {
    ValueGrid g = ValueGrid::matrix(n, m);
    for (double& v : g.values) v = uniform(lo, hi);
    return g;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[integer(i)]);
  }

  // Deterministic child seed for a named sub-stream.
  std::uint64_t fork() { return gen_(); }

  std::mt19937_64& raw() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace nao
