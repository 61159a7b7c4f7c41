#pragma once

#include <functional>
#include <vector>

#include "guiprobe/tensor.hpp"

namespace guiprobe {

// Reverse-mode autodiff over a linear tape. Ops append nodes in execution
// order, which is already a topological order, so backward() is a single
// reverse sweep that visits each node once.
//
// Leaf gradients accumulate across backward() calls until zero_grad();
// intermediate gradients are scratch and reset on every call.
class Tape {
 public:
  struct Val {
    int id = -1;
  };

  Val leaf(Tensor t);      // keeps t.requires_grad
  Val constant(Tensor t);  // never differentiated

  Val matmul(Val a, Val b);
  Val transpose(Val a);

  // Same-shape elementwise; the right operand may be a scalar tensor.
  Val add(Val a, Val b);
  Val sub(Val a, Val b);
  Val mul(Val a, Val b);

  Val relu(Val a);
  Val exp(Val a);
  Val log(Val a);
  Val scale(Val a, double c);

  Val add_bias(Val m, Val bias);  // [r x c] + [c], row broadcast
  Val layer_norm(Val x, Val gain, Val bias, double eps = 1e-5);
  Val softmax_rows(Val x);
  // mask entries are 0/1; masked-out positions get probability 0. Every row
  // must keep at least one allowed entry.
  Val softmax_rows_masked(Val x, const Tensor& mask);

  Val softmax_cross_entropy(Val logits, int target);
  Val cross_entropy_rows(Val logits, const std::vector<int>& targets);

  Val embed_rows(Val table, const std::vector<int>& ids);
  Val concat_rows(const std::vector<Val>& parts);
  Val concat_cols(const std::vector<Val>& parts);
  Val slice_rows(Val a, int r0, int r1);
  Val slice_cols(Val a, int c0, int c1);
  Val reshape(Val a, std::vector<int> shape);

  Val sum(Val a);
  Val mean(Val a);

  // {H,W,3} image -> [N x p*p*3] patch matrix, patches in row-major grid
  // order, each patch flattened (py, px, channel).
  Val patchify(Val image, int patch);
  // Replicates the last row/column so H+pad_bottom, W+pad_right.
  Val pad_replicate(Val image, int pad_bottom, int pad_right);

  void backward(Val loss);
  void zero_grad();

  const Tensor& value(Val v) const { return nodes_[check(v)].value; }
  const Tensor& grad(Val v);
  bool requires_grad(Val v) const { return nodes_[check(v)].requires_grad; }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_live = false;
    std::function<void(Tape&)> back;  // empty for leaves/constants
  };

  int check(Val v) const;
  Val push(Tensor value, bool requires_grad, std::function<void(Tape&)> back);
  Tensor& grad_buf(int id);  // allocates zeros on first touch
  void add_into(int id, const double* src, std::int64_t n);

  std::vector<Node> nodes_;
};

}  // namespace guiprobe
