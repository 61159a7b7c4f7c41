#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace guiprobe {

// Dense row-major tensor of doubles. Rank is usually 1 or 2; images enter the
// graph as flat {H*W*3} vectors and get patchified.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(std::vector<int> shape_, std::vector<double> data_);

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor scalar(double value);
  static Tensor row(std::vector<double> values);  // shape {n}
  static Tensor matrix(int rows, int cols, std::vector<double> values);

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  bool is_scalar() const { return numel() == 1; }

  // 2-D accessors; a rank-1 tensor behaves as a single row.
  int rows() const;
  int cols() const;
  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const {
    return data[static_cast<size_t>(r) * cols() + c];
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  std::string shape_str() const;
};

std::int64_t shape_numel(const std::vector<int>& shape);

}  // namespace guiprobe
