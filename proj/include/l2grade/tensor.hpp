#pragma once

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

namespace l2grade {

/// Row-major sequence of equal-width feature vectors.
struct Sequence {
  std::size_t dim = 0;
  std::vector<double> data;

  Sequence() = default;
  explicit Sequence(std::size_t step_dim) : dim(step_dim) {}

  std::size_t steps() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const double> step(std::size_t t) const { return {data.data() + t * dim, dim}; }
  std::span<double> step(std::size_t t) { return {data.data() + t * dim, dim}; }
  void push(std::span<const double> v) { data.insert(data.end(), v.begin(), v.end()); }

  friend bool operator==(const Sequence&, const Sequence&) = default;
};

using DenseInput = std::vector<double>;
using NetInput = std::variant<DenseInput, Sequence>;

}  // namespace l2grade
