#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedrank {

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major tensor of doubles. The sole carrier of activations,
// parameters and gradients throughout the artifact.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> v)
      : shape(std::move(s)), values(std::move(v)) {
    if (numel(shape) != values.size())
      throw DimensionError("tensor value count does not match shape");
  }

  static std::size_t numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> s) {
    std::size_t n = numel(s);
    return Tensor{std::move(s), std::vector<double>(n, 0.0)};
  }

  static Tensor full(std::vector<std::size_t> s, double v) {
    std::size_t n = numel(s);
    return Tensor{std::move(s), std::vector<double>(n, v)};
  }

  static Tensor vec(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor{{n}, std::move(v)};
  }

  static Tensor identity(std::size_t d) {
    Tensor t = zeros({d, d});
    for (std::size_t i = 0; i < d; ++i) t.values[i * d + i] = 1.0;
    return t;
  }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }

  double& at(std::size_t r, std::size_t c) { return values[r * shape.back() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * shape.back() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) os << ',';
      os << shape[i];
    }
    os << ']';
    return os.str();
  }
};

}  // namespace fedrank
