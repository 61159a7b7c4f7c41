#include "guiprobe/tape.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace guiprobe {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;

MapC as_matrix(const Tensor& t) {
  return MapC(t.data.data(), t.rows(), t.cols());
}

MapM as_matrix(Tensor& t) { return MapM(t.data.data(), t.rows(), t.cols()); }

void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2)
    throw std::invalid_argument(std::string(op) + ": expected a 2-D tensor, got " +
                                t.shape_str());
}

}  // namespace

int Tape::check(Val v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("tape value handle is not on this tape");
  return v.id;
}

Tape::Val Tape::push(Tensor value, bool requires_grad,
                     std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Val{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[id];
  if (!n.grad_live) {
    if (!n.grad.same_shape(n.value)) n.grad = Tensor::zeros(n.value.shape);
    else n.grad.data.assign(n.grad.data.size(), 0.0);
    n.grad_live = true;
  }
  return n.grad;
}

void Tape::add_into(int id, const double* src, std::int64_t n) {
  double* dst = grad_buf(id).data.data();
  for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

const Tensor& Tape::grad(Val v) {
  const int id = check(v);
  if (!nodes_[id].grad_live) grad_buf(id);
  return nodes_[id].grad;
}

void Tape::zero_grad() {
  for (Node& n : nodes_) {
    n.grad_live = false;
    n.grad = Tensor();
  }
}

void Tape::backward(Val loss) {
  const int id = check(loss);
  if (!nodes_[id].value.is_scalar())
    throw std::invalid_argument("backward requires a scalar loss, got " +
                                nodes_[id].value.shape_str());
  // Drop scratch grads of interior nodes; leaves keep accumulating.
  for (Node& n : nodes_)
    if (n.back) n.grad_live = false;
  grad_buf(id).data[0] += 1.0;
  for (int i = id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.back && n.grad_live && n.requires_grad) n.back(*this);
  }
}

Tape::Val Tape::leaf(Tensor t) {
  const bool rg = t.requires_grad;
  return push(std::move(t), rg, {});
}

Tape::Val Tape::constant(Tensor t) {
  t.requires_grad = false;
  return push(std::move(t), false, {});
}

Tape::Val Tape::matmul(Val av, Val bv) {
  const int a = check(av), b = check(bv);
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  require_2d(ta, "matmul");
  require_2d(tb, "matmul");
  if (ta.shape[1] != tb.shape[0])
    throw std::invalid_argument("matmul shape mismatch: " + ta.shape_str() +
                                " * " + tb.shape_str());
  Tensor out = Tensor::zeros({ta.shape[0], tb.shape[1]});
  as_matrix(out).noalias() = as_matrix(ta) * as_matrix(tb);
  const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), rg, [a, b, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    auto gm = as_matrix(g);
    if (t.nodes_[a].requires_grad)
      as_matrix(t.grad_buf(a)).noalias() +=
          gm * as_matrix(t.nodes_[b].value).transpose();
    if (t.nodes_[b].requires_grad)
      as_matrix(t.grad_buf(b)).noalias() +=
          as_matrix(t.nodes_[a].value).transpose() * gm;
  });
}

Tape::Val Tape::transpose(Val av) {
  const int a = check(av);
  const Tensor& ta = nodes_[a].value;
  require_2d(ta, "transpose");
  Tensor out = Tensor::zeros({ta.shape[1], ta.shape[0]});
  as_matrix(out).noalias() = as_matrix(ta).transpose();
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), nodes_[a].requires_grad, [a, self](Tape& t) {
    as_matrix(t.grad_buf(a)).noalias() +=
        as_matrix(t.nodes_[self].grad).transpose();
  });
}

namespace {
enum class EwKind { Add, Sub, Mul };
}

Tape::Val Tape::add(Val a, Val b) {
  const int ia = check(a), ib = check(b);
  const Tensor& ta = nodes_[ia].value;
  const Tensor& tb = nodes_[ib].value;
  const bool bscalar = tb.is_scalar() && !ta.is_scalar();
  if (!bscalar && !ta.same_shape(tb))
    throw std::invalid_argument("add shape mismatch: " + ta.shape_str() +
                                " vs " + tb.shape_str());
  Tensor out = ta;
  out.requires_grad = false;
  if (bscalar) {
    const double c = tb.data[0];
    for (auto& v : out.data) v += c;
  } else {
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
  }
  const bool rg = nodes_[ia].requires_grad || nodes_[ib].requires_grad;
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), rg, [ia, ib, bscalar, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const auto n = g.numel();
    if (t.nodes_[ia].requires_grad) t.add_into(ia, g.data.data(), n);
    if (t.nodes_[ib].requires_grad) {
      if (bscalar) {
        double s = 0;
        for (double v : g.data) s += v;
        t.grad_buf(ib).data[0] += s;
      } else {
        t.add_into(ib, g.data.data(), n);
      }
    }
  });
}

Tape::Val Tape::sub(Val a, Val b) {
  const int ia = check(a), ib = check(b);
  const Tensor& ta = nodes_[ia].value;
  const Tensor& tb = nodes_[ib].value;
  const bool bscalar = tb.is_scalar() && !ta.is_scalar();
  if (!bscalar && !ta.same_shape(tb))
    throw std::invalid_argument("sub shape mismatch: " + ta.shape_str() +
                                " vs " + tb.shape_str());
  Tensor out = ta;
  out.requires_grad = false;
  if (bscalar) {
    const double c = tb.data[0];
    for (auto& v : out.data) v -= c;
  } else {
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= tb.data[i];
  }
  const bool rg = nodes_[ia].requires_grad || nodes_[ib].requires_grad;
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), rg, [ia, ib, bscalar, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    if (t.nodes_[ia].requires_grad) t.add_into(ia, g.data.data(), g.numel());
    if (t.nodes_[ib].requires_grad) {
      if (bscalar) {
        double s = 0;
        for (double v : g.data) s += v;
        t.grad_buf(ib).data[0] -= s;
      } else {
        double* dst = t.grad_buf(ib).data.data();
        for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] -= g.data[i];
      }
    }
  });
}

Tape::Val Tape::mul(Val a, Val b) {
  const int ia = check(a), ib = check(b);
  const Tensor& ta = nodes_[ia].value;
  const Tensor& tb = nodes_[ib].value;
  const bool bscalar = tb.is_scalar() && !ta.is_scalar();
  if (!bscalar && !ta.same_shape(tb))
    throw std::invalid_argument("mul shape mismatch: " + ta.shape_str() +
                                " vs " + tb.shape_str());
  Tensor out = ta;
  out.requires_grad = false;
  if (bscalar) {
    const double c = tb.data[0];
    for (auto& v : out.data) v *= c;
  } else {
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
  }
  const bool rg = nodes_[ia].requires_grad || nodes_[ib].requires_grad;
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), rg, [ia, ib, bscalar, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& va = t.nodes_[ia].value;
    const Tensor& vb = t.nodes_[ib].value;
    if (t.nodes_[ia].requires_grad) {
      double* dst = t.grad_buf(ia).data.data();
      if (bscalar) {
        const double c = vb.data[0];
        for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += g.data[i] * c;
      } else {
        for (std::int64_t i = 0; i < g.numel(); ++i)
          dst[i] += g.data[i] * vb.data[i];
      }
    }
    if (t.nodes_[ib].requires_grad) {
      if (bscalar) {
        double s = 0;
        for (std::int64_t i = 0; i < g.numel(); ++i)
          s += g.data[i] * va.data[i];
        t.grad_buf(ib).data[0] += s;
      } else {
        double* dst = t.grad_buf(ib).data.data();
        for (std::int64_t i = 0; i < g.numel(); ++i)
          dst[i] += g.data[i] * va.data[i];
      }
    }
  });
}

Tape::Val Tape::relu(Val av) {
  const int a = check(av);
  Tensor out = nodes_[a].value;
  out.requires_grad = false;
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), nodes_[a].requires_grad, [a, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& x = t.nodes_[a].value;
    double* dst = t.grad_buf(a).data.data();
    // subgradient at 0 is taken as 0
    for (std::int64_t i = 0; i < g.numel(); ++i)
      if (x.data[i] > 0.0) dst[i] += g.data[i];
  });
}

Tape::Val Tape::exp(Val av) {
  const int a = check(av);
  Tensor out = nodes_[a].value;
  out.requires_grad = false;
  for (auto& v : out.data) v = std::exp(v);
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), nodes_[a].requires_grad, [a, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& y = t.nodes_[self].value;
    double* dst = t.grad_buf(a).data.data();
    for (std::int64_t i = 0; i < g.numel(); ++i)
      dst[i] += g.data[i] * y.data[i];
  });
}

Tape::Val Tape::log(Val av) {
  const int a = check(av);
  Tensor out = nodes_[a].value;
  out.requires_grad = false;
  for (auto& v : out.data) {
    if (!(v > 0.0))
      throw std::invalid_argument("log of non-positive value " +
                                  std::to_string(v));
    v = std::log(v);
  }
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), nodes_[a].requires_grad, [a, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& x = t.nodes_[a].value;
    double* dst = t.grad_buf(a).data.data();
    for (std::int64_t i = 0; i < g.numel(); ++i)
      dst[i] += g.data[i] / x.data[i];
  });
}

Tape::Val Tape::scale(Val av, double c) {
  const int a = check(av);
  Tensor out = nodes_[a].value;
  out.requires_grad = false;
  for (auto& v : out.data) v *= c;
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), nodes_[a].requires_grad, [a, c, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    double* dst = t.grad_buf(a).data.data();
    for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += c * g.data[i];
  });
}

Tape::Val Tape::add_bias(Val mv, Val bv) {
  const int m = check(mv), b = check(bv);
  const Tensor& tm = nodes_[m].value;
  const Tensor& tb = nodes_[b].value;
  require_2d(tm, "add_bias");
  if (tb.numel() != tm.shape[1])
    throw std::invalid_argument("add_bias width mismatch: " + tm.shape_str() +
                                " vs " + tb.shape_str());
  Tensor out = tm;
  out.requires_grad = false;
  const int rows = tm.shape[0], cols = tm.shape[1];
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out.data[static_cast<size_t>(r) * cols + c] += tb.data[c];
  const bool rg = nodes_[m].requires_grad || nodes_[b].requires_grad;
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), rg, [m, b, rows, cols, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    if (t.nodes_[m].requires_grad) t.add_into(m, g.data.data(), g.numel());
    if (t.nodes_[b].requires_grad) {
      double* dst = t.grad_buf(b).data.data();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
          dst[c] += g.data[static_cast<size_t>(r) * cols + c];
    }
  });
}

Tape::Val Tape::layer_norm(Val xv, Val gv, Val bv, double eps) {
  const int x = check(xv), gn = check(gv), bs = check(bv);
  const Tensor& tx = nodes_[x].value;
  require_2d(tx, "layer_norm");
  const int rows = tx.shape[0], cols = tx.shape[1];
  if (nodes_[gn].value.numel() != cols || nodes_[bs].value.numel() != cols)
    throw std::invalid_argument("layer_norm gain/bias width mismatch");
  Tensor out = Tensor::zeros(tx.shape);
  Tensor xhat = Tensor::zeros(tx.shape);
  std::vector<double> inv_sigma(rows);
  const double* gd = nodes_[gn].value.data.data();
  const double* bd = nodes_[bs].value.data.data();
  for (int r = 0; r < rows; ++r) {
    const double* row = tx.data.data() + static_cast<size_t>(r) * cols;
    double mu = 0;
    for (int c = 0; c < cols; ++c) mu += row[c];
    mu /= cols;
    double var = 0;
    for (int c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= cols;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = is;
    double* xh = xhat.data.data() + static_cast<size_t>(r) * cols;
    double* o = out.data.data() + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) {
      xh[c] = (row[c] - mu) * is;
      o[c] = gd[c] * xh[c] + bd[c];
    }
  }
  const bool rg = nodes_[x].requires_grad || nodes_[gn].requires_grad ||
                  nodes_[bs].requires_grad;
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), rg,
              [x, gn, bs, rows, cols, self, xhat = std::move(xhat),
               inv_sigma = std::move(inv_sigma)](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const double* gd = t.nodes_[gn].value.data.data();
    if (t.nodes_[x].requires_grad) {
      double* dx = t.grad_buf(x).data.data();
      for (int r = 0; r < rows; ++r) {
        const double* gr = g.data.data() + static_cast<size_t>(r) * cols;
        const double* xh = xhat.data.data() + static_cast<size_t>(r) * cols;
        double mean_dxh = 0, mean_dxh_xh = 0;
        for (int c = 0; c < cols; ++c) {
          const double dxh = gr[c] * gd[c];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xh[c];
        }
        mean_dxh /= cols;
        mean_dxh_xh /= cols;
        double* dr = dx + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) {
          const double dxh = gr[c] * gd[c];
          dr[c] += inv_sigma[r] * (dxh - mean_dxh - xh[c] * mean_dxh_xh);
        }
      }
    }
    if (t.nodes_[gn].requires_grad) {
      double* dg = t.grad_buf(gn).data.data();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
          dg[c] += g.at(r, c) * xhat.at(r, c);
    }
    if (t.nodes_[bs].requires_grad) {
      double* db = t.grad_buf(bs).data.data();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) db[c] += g.at(r, c);
    }
  });
}

Tape::Val Tape::softmax_rows(Val xv) {
  const int x = check(xv);
  const Tensor& tx = nodes_[x].value;
  require_2d(tx, "softmax_rows");
  const int rows = tx.shape[0], cols = tx.shape[1];
  Tensor out = Tensor::zeros(tx.shape);
  for (int r = 0; r < rows; ++r) {
    const double* row = tx.data.data() + static_cast<size_t>(r) * cols;
    double* o = out.data.data() + static_cast<size_t>(r) * cols;
    double m = row[0];
    for (int c = 1; c < cols; ++c) m = std::max(m, row[c]);
    double z = 0;
    for (int c = 0; c < cols; ++c) {
      o[c] = std::exp(row[c] - m);
      z += o[c];
    }
    const double iz = 1.0 / z;
    for (int c = 0; c < cols; ++c) o[c] *= iz;
  }
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), nodes_[x].requires_grad,
              [x, rows, cols, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& y = t.nodes_[self].value;
    double* dx = t.grad_buf(x).data.data();
    for (int r = 0; r < rows; ++r) {
      const double* gr = g.data.data() + static_cast<size_t>(r) * cols;
      const double* yr = y.data.data() + static_cast<size_t>(r) * cols;
      double dot = 0;
      for (int c = 0; c < cols; ++c) dot += gr[c] * yr[c];
      double* dr = dx + static_cast<size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) dr[c] += yr[c] * (gr[c] - dot);
    }
  });
}

Tape::Val Tape::softmax_rows_masked(Val xv, const Tensor& mask) {
  const int x = check(xv);
  const Tensor& tx = nodes_[x].value;
  require_2d(tx, "softmax_rows_masked");
  if (!mask.same_shape(tx))
    throw std::invalid_argument("softmax mask shape mismatch: " +
                                tx.shape_str() + " vs " + mask.shape_str());
  const int rows = tx.shape[0], cols = tx.shape[1];
  Tensor out = Tensor::zeros(tx.shape);
  for (int r = 0; r < rows; ++r) {
    const double* row = tx.data.data() + static_cast<size_t>(r) * cols;
    const double* mk = mask.data.data() + static_cast<size_t>(r) * cols;
    double* o = out.data.data() + static_cast<size_t>(r) * cols;
    double m = -1e300;
    for (int c = 0; c < cols; ++c)
      if (mk[c] != 0.0) m = std::max(m, row[c]);
    if (m == -1e300)
      throw std::invalid_argument("softmax mask row with no allowed entries");
    double z = 0;
    for (int c = 0; c < cols; ++c) {
      if (mk[c] != 0.0) {
        o[c] = std::exp(row[c] - m);
        z += o[c];
      }
    }
    const double iz = 1.0 / z;
    for (int c = 0; c < cols; ++c) o[c] *= iz;
  }
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), nodes_[x].requires_grad,
              [x, rows, cols, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& y = t.nodes_[self].value;
    double* dx = t.grad_buf(x).data.data();
    for (int r = 0; r < rows; ++r) {
      const double* gr = g.data.data() + static_cast<size_t>(r) * cols;
      const double* yr = y.data.data() + static_cast<size_t>(r) * cols;
      double dot = 0;
      for (int c = 0; c < cols; ++c) dot += gr[c] * yr[c];
      double* dr = dx + static_cast<size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) dr[c] += yr[c] * (gr[c] - dot);
    }
  });
}

namespace {
void check_finite_logits(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v))
      throw std::invalid_argument("softmax_cross_entropy: non-finite logit");
}
}  // namespace

Tape::Val Tape::softmax_cross_entropy(Val lv, int target) {
  const int l = check(lv);
  const Tensor& tl = nodes_[l].value;
  if (tl.ndim() > 2 || (tl.ndim() == 2 && tl.shape[0] != 1))
    throw std::invalid_argument("softmax_cross_entropy expects a logit vector");
  const int v = static_cast<int>(tl.numel());
  if (target < 0 || target >= v)
    throw std::invalid_argument("softmax_cross_entropy: target " +
                                std::to_string(target) + " out of range [0, " +
                                std::to_string(v) + ")");
  check_finite_logits(tl);
  double m = tl.data[0];
  for (int c = 1; c < v; ++c) m = std::max(m, tl.data[c]);
  double z = 0;
  std::vector<double> p(v);
  for (int c = 0; c < v; ++c) {
    p[c] = std::exp(tl.data[c] - m);
    z += p[c];
  }
  const double lse = m + std::log(z);
  for (int c = 0; c < v; ++c) p[c] /= z;
  Tensor out = Tensor::scalar(lse - tl.data[target]);
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), nodes_[l].requires_grad,
              [l, target, v, self, p = std::move(p)](Tape& t) {
    const double g = t.nodes_[self].grad.data[0];
    double* dst = t.grad_buf(l).data.data();
    for (int c = 0; c < v; ++c)
      dst[c] += g * (p[c] - (c == target ? 1.0 : 0.0));
  });
}

Tape::Val Tape::cross_entropy_rows(Val lv, const std::vector<int>& targets) {
  const int l = check(lv);
  const Tensor& tl = nodes_[l].value;
  require_2d(tl, "cross_entropy_rows");
  const int rows = tl.shape[0], v = tl.shape[1];
  if (static_cast<int>(targets.size()) != rows)
    throw std::invalid_argument("cross_entropy_rows: target count mismatch");
  check_finite_logits(tl);
  Tensor probs = Tensor::zeros(tl.shape);
  double loss = 0;
  for (int r = 0; r < rows; ++r) {
    if (targets[r] < 0 || targets[r] >= v)
      throw std::invalid_argument("cross_entropy_rows: target out of range");
    const double* row = tl.data.data() + static_cast<size_t>(r) * v;
    double* pr = probs.data.data() + static_cast<size_t>(r) * v;
    double m = row[0];
    for (int c = 1; c < v; ++c) m = std::max(m, row[c]);
    double z = 0;
    for (int c = 0; c < v; ++c) {
      pr[c] = std::exp(row[c] - m);
      z += pr[c];
    }
    loss += m + std::log(z) - row[targets[r]];
    for (int c = 0; c < v; ++c) pr[c] /= z;
  }
  Tensor out = Tensor::scalar(loss);
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), nodes_[l].requires_grad,
              [l, rows, v, targets, self, probs = std::move(probs)](Tape& t) {
    const double g = t.nodes_[self].grad.data[0];
    double* dst = t.grad_buf(l).data.data();
    for (int r = 0; r < rows; ++r) {
      const double* pr = probs.data.data() + static_cast<size_t>(r) * v;
      double* dr = dst + static_cast<size_t>(r) * v;
      for (int c = 0; c < v; ++c) dr[c] += g * pr[c];
      dr[targets[r]] -= g;
    }
  });
}

Tape::Val Tape::embed_rows(Val tv, const std::vector<int>& ids) {
  const int tb = check(tv);
  const Tensor& table = nodes_[tb].value;
  require_2d(table, "embed_rows");
  const int v = table.shape[0], d = table.shape[1];
  const int n = static_cast<int>(ids.size());
  Tensor out = Tensor::zeros({n, d});
  for (int i = 0; i < n; ++i) {
    if (ids[i] < 0 || ids[i] >= v)
      throw std::invalid_argument("embed_rows: id " + std::to_string(ids[i]) +
                                  " out of range [0, " + std::to_string(v) + ")");
    const double* src = table.data.data() + static_cast<size_t>(ids[i]) * d;
    std::copy(src, src + d, out.data.data() + static_cast<size_t>(i) * d);
  }
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), nodes_[tb].requires_grad,
              [tb, ids, d, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    double* dst = t.grad_buf(tb).data.data();
    for (size_t i = 0; i < ids.size(); ++i) {
      const double* gr = g.data.data() + i * d;
      double* dr = dst + static_cast<size_t>(ids[i]) * d;
      for (int c = 0; c < d; ++c) dr[c] += gr[c];
    }
  });
}

Tape::Val Tape::concat_rows(const std::vector<Val>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no operands");
  int rows = 0;
  int cols = -1;
  std::vector<int> ids;
  bool rg = false;
  for (Val p : parts) {
    const int id = check(p);
    const Tensor& t = nodes_[id].value;
    require_2d(t, "concat_rows");
    if (cols < 0) cols = t.shape[1];
    else if (cols != t.shape[1])
      throw std::invalid_argument("concat_rows: width mismatch");
    rows += t.shape[0];
    rg = rg || nodes_[id].requires_grad;
    ids.push_back(id);
  }
  Tensor out = Tensor::zeros({rows, cols});
  double* dst = out.data.data();
  for (int id : ids) {
    const Tensor& t = nodes_[id].value;
    std::copy(t.data.begin(), t.data.end(), dst);
    dst += t.numel();
  }
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), rg, [ids, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const double* src = g.data.data();
    for (int id : ids) {
      const std::int64_t n = t.nodes_[id].value.numel();
      if (t.nodes_[id].requires_grad) t.add_into(id, src, n);
      src += n;
    }
  });
}

Tape::Val Tape::concat_cols(const std::vector<Val>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no operands");
  int rows = -1;
  int cols = 0;
  std::vector<int> ids;
  bool rg = false;
  for (Val p : parts) {
    const int id = check(p);
    const Tensor& t = nodes_[id].value;
    require_2d(t, "concat_cols");
    if (rows < 0) rows = t.shape[0];
    else if (rows != t.shape[0])
      throw std::invalid_argument("concat_cols: height mismatch");
    cols += t.shape[1];
    rg = rg || nodes_[id].requires_grad;
    ids.push_back(id);
  }
  Tensor out = Tensor::zeros({rows, cols});
  int off = 0;
  for (int id : ids) {
    const Tensor& t = nodes_[id].value;
    const int w = t.shape[1];
    for (int r = 0; r < rows; ++r)
      std::copy(t.data.data() + static_cast<size_t>(r) * w,
                t.data.data() + static_cast<size_t>(r + 1) * w,
                out.data.data() + static_cast<size_t>(r) * cols + off);
    off += w;
  }
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), rg, [ids, rows, cols, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    int off = 0;
    for (int id : ids) {
      const int w = t.nodes_[id].value.shape[1];
      if (t.nodes_[id].requires_grad) {
        double* dst = t.grad_buf(id).data.data();
        for (int r = 0; r < rows; ++r) {
          const double* gr = g.data.data() + static_cast<size_t>(r) * cols + off;
          double* dr = dst + static_cast<size_t>(r) * w;
          for (int c = 0; c < w; ++c) dr[c] += gr[c];
        }
      }
      off += w;
    }
  });
}

Tape::Val Tape::slice_rows(Val av, int r0, int r1) {
  const int a = check(av);
  const Tensor& ta = nodes_[a].value;
  require_2d(ta, "slice_rows");
  if (r0 < 0 || r1 > ta.shape[0] || r0 >= r1)
    throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) +
                                ", " + std::to_string(r1) + ") for " +
                                ta.shape_str());
  const int cols = ta.shape[1];
  Tensor out = Tensor::zeros({r1 - r0, cols});
  std::copy(ta.data.data() + static_cast<size_t>(r0) * cols,
            ta.data.data() + static_cast<size_t>(r1) * cols, out.data.data());
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), nodes_[a].requires_grad,
              [a, r0, cols, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    double* dst = t.grad_buf(a).data.data() + static_cast<size_t>(r0) * cols;
    for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += g.data[i];
  });
}

Tape::Val Tape::slice_cols(Val av, int c0, int c1) {
  const int a = check(av);
  const Tensor& ta = nodes_[a].value;
  require_2d(ta, "slice_cols");
  if (c0 < 0 || c1 > ta.shape[1] || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) +
                                ", " + std::to_string(c1) + ") for " +
                                ta.shape_str());
  const int rows = ta.shape[0], cols = ta.shape[1], w = c1 - c0;
  Tensor out = Tensor::zeros({rows, w});
  for (int r = 0; r < rows; ++r)
    std::copy(ta.data.data() + static_cast<size_t>(r) * cols + c0,
              ta.data.data() + static_cast<size_t>(r) * cols + c1,
              out.data.data() + static_cast<size_t>(r) * w);
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), nodes_[a].requires_grad,
              [a, c0, rows, cols, w, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    double* dst = t.grad_buf(a).data.data();
    for (int r = 0; r < rows; ++r) {
      const double* gr = g.data.data() + static_cast<size_t>(r) * w;
      double* dr = dst + static_cast<size_t>(r) * cols + c0;
      for (int c = 0; c < w; ++c) dr[c] += gr[c];
    }
  });
}

Tape::Val Tape::reshape(Val av, std::vector<int> shape) {
  const int a = check(av);
  const Tensor& ta = nodes_[a].value;
  if (shape_numel(shape) != ta.numel())
    throw std::invalid_argument("reshape: element count mismatch " +
                                ta.shape_str());
  Tensor out(shape, ta.data);
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), nodes_[a].requires_grad, [a, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    t.add_into(a, g.data.data(), g.numel());
  });
}

Tape::Val Tape::sum(Val av) {
  const int a = check(av);
  const Tensor& ta = nodes_[a].value;
  double s = 0;
  for (double v : ta.data) s += v;
  const int self = static_cast<int>(nodes_.size());
  return push(Tensor::scalar(s), nodes_[a].requires_grad, [a, self](Tape& t) {
    const double g = t.nodes_[self].grad.data[0];
    double* dst = t.grad_buf(a).data.data();
    const std::int64_t n = t.nodes_[a].value.numel();
    for (std::int64_t i = 0; i < n; ++i) dst[i] += g;
  });
}

Tape::Val Tape::mean(Val av) {
  const int a = check(av);
  const Tensor& ta = nodes_[a].value;
  double s = 0;
  for (double v : ta.data) s += v;
  const double inv = 1.0 / static_cast<double>(ta.numel());
  const int self = static_cast<int>(nodes_.size());
  return push(Tensor::scalar(s * inv), nodes_[a].requires_grad,
              [a, inv, self](Tape& t) {
    const double g = t.nodes_[self].grad.data[0] * inv;
    double* dst = t.grad_buf(a).data.data();
    const std::int64_t n = t.nodes_[a].value.numel();
    for (std::int64_t i = 0; i < n; ++i) dst[i] += g;
  });
}

Tape::Val Tape::patchify(Val iv, int patch) {
  const int a = check(iv);
  const Tensor& img = nodes_[a].value;
  if (img.ndim() != 3 || img.shape[2] != 3)
    throw std::invalid_argument("patchify expects an {H,W,3} image, got " +
                                img.shape_str());
  const int h = img.shape[0], w = img.shape[1];
  if (h % patch != 0 || w % patch != 0)
    throw std::invalid_argument("patchify: image " + img.shape_str() +
                                " not divisible by patch " +
                                std::to_string(patch));
  const int gh = h / patch, gw = w / patch;
  const int pd = patch * patch * 3;
  Tensor out = Tensor::zeros({gh * gw, pd});
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      double* dst = out.data.data() + static_cast<size_t>(gy * gw + gx) * pd;
      for (int py = 0; py < patch; ++py) {
        const double* src =
            img.data.data() +
            (static_cast<size_t>(gy * patch + py) * w + gx * patch) * 3;
        std::copy(src, src + patch * 3, dst + static_cast<size_t>(py) * patch * 3);
      }
    }
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), nodes_[a].requires_grad,
              [a, h, w, patch, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const int gw = w / patch;
    const int pd = patch * patch * 3;
    double* dst = t.grad_buf(a).data.data();
    const int gh = h / patch;
    for (int gy = 0; gy < gh; ++gy)
      for (int gx = 0; gx < gw; ++gx) {
        const double* src = g.data.data() + static_cast<size_t>(gy * gw + gx) * pd;
        for (int py = 0; py < patch; ++py) {
          double* d =
              dst + (static_cast<size_t>(gy * patch + py) * w + gx * patch) * 3;
          const double* s = src + static_cast<size_t>(py) * patch * 3;
          for (int i = 0; i < patch * 3; ++i) d[i] += s[i];
        }
      }
  });
}

Tape::Val Tape::pad_replicate(Val iv, int pad_bottom, int pad_right) {
  const int a = check(iv);
  const Tensor& img = nodes_[a].value;
  if (img.ndim() != 3 || img.shape[2] != 3)
    throw std::invalid_argument("pad_replicate expects an {H,W,3} image");
  if (pad_bottom < 0 || pad_right < 0)
    throw std::invalid_argument("pad_replicate: negative padding");
  const int h = img.shape[0], w = img.shape[1];
  const int nh = h + pad_bottom, nw = w + pad_right;
  Tensor out = Tensor::zeros({nh, nw, 3});
  for (int y = 0; y < nh; ++y) {
    const int sy = y < h ? y : h - 1;
    for (int x = 0; x < nw; ++x) {
      const int sx = x < w ? x : w - 1;
      const double* src = img.data.data() + (static_cast<size_t>(sy) * w + sx) * 3;
      double* dst = out.data.data() + (static_cast<size_t>(y) * nw + x) * 3;
      dst[0] = src[0];
      dst[1] = src[1];
      dst[2] = src[2];
    }
  }
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), nodes_[a].requires_grad,
              [a, h, w, nh, nw, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    double* dst = t.grad_buf(a).data.data();
    for (int y = 0; y < nh; ++y) {
      const int sy = y < h ? y : h - 1;
      for (int x = 0; x < nw; ++x) {
        const int sx = x < w ? x : w - 1;
        const double* gr = g.data.data() + (static_cast<size_t>(y) * nw + x) * 3;
        double* d = dst + (static_cast<size_t>(sy) * w + sx) * 3;
        d[0] += gr[0];
        d[1] += gr[1];
        d[2] += gr[2];
      }
    }
  });
}

}  // namespace guiprobe
