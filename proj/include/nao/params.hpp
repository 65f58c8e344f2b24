#pragma once

#include <string>
#include <vector>

#include "nao/errors.hpp"
#include "nao/tensor.hpp"

namespace nao {

// Ordered collection of named trainable tensors. Insertion order is the
// canonical order for checkpoints, optimizer state and RNG draws.
class ParamStore {
 public:
  void add(std::string name, ValueGrid v) {
    if (index_of(name) >= 0) throw ConfigError("duplicate parameter name: " + name);
    names_.push_back(std::move(name));
    values_.push_back(std::move(v));
  }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return int(i);
    return -1;
  }

  ValueGrid& at(const std::string& name) {
    int i = index_of(name);
    if (i < 0) throw ConfigError("unknown parameter: " + name);
    return values_[std::size_t(i)];
  }
  const ValueGrid& at(const std::string& name) const {
    int i = index_of(name);
    if (i < 0) throw ConfigError("unknown parameter: " + name);
    return values_[std::size_t(i)];
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  ValueGrid& value(std::size_t i) { return values_[i]; }
  const ValueGrid& value(std::size_t i) const { return values_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<ValueGrid> values_;
};

}  // namespace nao
