#include "lanesmith/tensor.hpp"

#include <Eigen/Core>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace lanesmith::tc {

namespace {
using EigenMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EigenMat>;
using MutMap = Eigen::Map<EigenMat>;
}  // namespace

Tensor::Tensor(std::vector<int> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (numel() != static_cast<std::int64_t>(data.size()))
    throw std::invalid_argument("Tensor: shape/data size mismatch");
}

Tensor Tensor::zeros(std::vector<int> shape) {
  Tensor t;
  t.shape = std::move(shape);
  t.data.assign(static_cast<std::size_t>(t.numel()), 0.0);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (auto& v : t.data) v = value;
  return t;
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev) {
  Tensor t = zeros(std::move(shape));
  for (auto& v : t.data) v = rng.normal() * stddev;
  return t;
}

Tensor Tensor::randu(std::vector<int> shape, Rng& rng, double lo, double hi) {
  Tensor t = zeros(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::mat(std::initializer_list<std::initializer_list<double>> rows) {
  const int r = static_cast<int>(rows.size());
  const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
  Tensor t = zeros({r, c});
  int i = 0;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != c)
      throw std::invalid_argument("Tensor::mat: ragged rows");
    int j = 0;
    for (double v : row) t.at(i, j++) = v;
    ++i;
  }
  return t;
}

Tensor Tensor::row(std::initializer_list<double> values) {
  Tensor t = zeros({1, static_cast<int>(values.size())});
  int j = 0;
  for (double v : values) t.at(0, j++) = v;
  return t;
}

std::int64_t Tensor::numel() const {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor matmul_vals(const Tensor& a, const Tensor& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.cols() != b.rows())
    throw std::invalid_argument("matmul: shape mismatch " + a.shape_str() + " x " +
                                b.shape_str());
  Tensor out = Tensor::zeros({a.rows(), b.cols()});
  if (out.numel() == 0 || a.cols() == 0) return out;
  ConstMap ma(a.data.data(), a.rows(), a.cols());
  ConstMap mb(b.data.data(), b.rows(), b.cols());
  MutMap mo(out.data.data(), out.rows(), out.cols());
  mo.noalias() = ma * mb;
  return out;
}

Tensor transpose_vals(const Tensor& a) {
  if (a.shape.size() != 2) throw std::invalid_argument("transpose: rank-2 only");
  Tensor out = Tensor::zeros({a.cols(), a.rows()});
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

double dot_all(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

double norm_all(const Tensor& a) { return std::sqrt(dot_all(a, a)); }

}  // namespace lanesmith::tc
