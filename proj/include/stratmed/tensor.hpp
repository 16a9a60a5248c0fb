#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stratmed/rng.hpp"

namespace stratmed {

// Dense row-major 64-bit float tensor. Rank 1 and 2 cover the whole model.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s);

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<std::size_t> s, double v);
  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
  void fill(double v);
  std::string shape_str() const;
};

std::size_t shape_size(const std::vector<std::size_t>& shape);
std::string shape_to_string(const std::vector<std::size_t>& shape);

// Deterministic uniform init over [lo, hi) from the counter RNG.
Tensor uniform_init(std::vector<std::size_t> shape, double lo, double hi,
                    std::uint64_t seed);

}  // namespace stratmed
