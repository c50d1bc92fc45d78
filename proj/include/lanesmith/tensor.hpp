#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "lanesmith/rng.hpp"

namespace lanesmith::tc {

// Dense row-major tensor of 64-bit floats. Most of the pipeline works with
// rank-2 shapes; scalars are [1,1].
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> d);

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor scalar(double value) { return Tensor({1, 1}, {value}); }
  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0);
  static Tensor randu(std::vector<int> shape, Rng& rng, double lo, double hi);
  // Row-major 2-D literal.
  static Tensor mat(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor row(std::initializer_list<double> values);

  std::int64_t numel() const;
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const;
};

Tensor matmul_vals(const Tensor& a, const Tensor& b);
Tensor transpose_vals(const Tensor& a);
bool all_finite(const Tensor& t);

double dot_all(const Tensor& a, const Tensor& b);
double norm_all(const Tensor& a);

}  // namespace lanesmith::tc
