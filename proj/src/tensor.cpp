#include "guiprobe/tensor.hpp"

#include <stdexcept>

namespace guiprobe {

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor extents must be positive");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  if (shape_numel(shape) != numel())
    throw std::invalid_argument("tensor data length does not match shape " +
                                shape_str());
}

Tensor Tensor::zeros(std::vector<int> shape) {
  Tensor t;
  t.data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  t.shape = std::move(shape);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (auto& v : t.data) v = value;
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::row(std::vector<double> values) {
  const int n = static_cast<int>(values.size());
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

int Tensor::rows() const { return ndim() >= 2 ? shape[0] : 1; }

int Tensor::cols() const {
  if (ndim() == 0) return 1;
  return ndim() >= 2 ? shape[1] : shape[0];
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace guiprobe
