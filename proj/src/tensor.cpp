#include "cetal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "cetal/kernels.hpp"

namespace cetal {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

NodePtr make_node(Shape shape, std::vector<double> data,
                  std::vector<NodePtr> parents,
                  std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  for (auto& p : parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor: " + shape_str(shape) + " does not hold " +
                     std::to_string(data.size()) + " values");
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item: tensor has " + std::to_string(numel()) +
                     " elements, expected 1");
  }
  return node_->data[0];
}

Tensor Tensor::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

// ---- backward -------------------------------------------------------------

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     shape_str(loss.shape()));
  }
  NodePtr root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS: children appear after all their parents in
  // `order` reversed.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  kernels::add(a.data().data(), b.data().data(), out.data(), out.size());
  NodePtr pa = a.node(), pb = b.node();
  return Tensor(make_node(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      kernels::axpy(1.0, n.grad.data(), pa->grad.data(), n.grad.size());
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      kernels::axpy(1.0, n.grad.data(), pb->grad.data(), n.grad.size());
    }
  }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  NodePtr pa = a.node(), pb = b.node();
  return Tensor(make_node(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      kernels::axpy(1.0, n.grad.data(), pa->grad.data(), n.grad.size());
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      kernels::axpy(-1.0, n.grad.data(), pb->grad.data(), n.grad.size());
    }
  }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  kernels::mul(a.data().data(), b.data().data(), out.data(), out.size());
  NodePtr pa = a.node(), pb = b.node();
  return Tensor(make_node(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      kernels::fma_acc(n.grad.data(), pb->data.data(), pa->grad.data(), n.grad.size());
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      kernels::fma_acc(n.grad.data(), pa->data.data(), pb->grad.data(), n.grad.size());
    }
  }));
}

Tensor ediv(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "ediv");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
  NodePtr pa = a.node(), pb = b.node();
  return Tensor(make_node(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      double bi = pb->data[i];
      if (pa->requires_grad) {
        pa->ensure_grad();
        pa->grad[i] += n.grad[i] / bi;
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        pb->grad[i] -= n.grad[i] * pa->data[i] / (bi * bi);
      }
    }
  }));
}

namespace {

Tensor min_max_impl(const Tensor& a, const Tensor& b, bool is_min) {
  check_same_shape(a, b, is_min ? "emin" : "emax");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = is_min ? std::min(a.data()[i], b.data()[i])
                    : std::max(a.data()[i], b.data()[i]);
  }
  NodePtr pa = a.node(), pb = b.node();
  return Tensor(make_node(a.shape(), std::move(out), {pa, pb},
                          [pa, pb, is_min](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      bool pick_a = is_min ? (pa->data[i] <= pb->data[i])
                           : (pa->data[i] >= pb->data[i]);
      const NodePtr& tgt = pick_a ? pa : pb;
      if (tgt->requires_grad) {
        tgt->ensure_grad();
        tgt->grad[i] += n.grad[i];
      }
    }
  }));
}

}  // namespace

Tensor emin(const Tensor& a, const Tensor& b) { return min_max_impl(a, b, true); }
Tensor emax(const Tensor& a, const Tensor& b) { return min_max_impl(a, b, false); }

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.data());
  kernels::scale(out.data(), c, out.size());
  NodePtr px = x.node();
  return Tensor(make_node(x.shape(), std::move(out), {px}, [px, c](Node& n) {
    px->ensure_grad();
    kernels::axpy(c, n.grad.data(), px->grad.data(), n.grad.size());
  }));
}

Tensor add_scalar(const Tensor& x, double c) {
  std::vector<double> out(x.data());
  for (auto& v : out) v += c;
  NodePtr px = x.node();
  return Tensor(make_node(x.shape(), std::move(out), {px}, [px](Node& n) {
    px->ensure_grad();
    kernels::axpy(1.0, n.grad.data(), px->grad.data(), n.grad.size());
  }));
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(x.data()[i]);
  NodePtr px = x.node();
  auto y = std::make_shared<std::vector<double>>(out);
  return Tensor(make_node(x.shape(), std::move(out), {px}, [px, y](Node& n) {
    px->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      double s = (*y)[i];
      px->grad[i] += n.grad[i] * s * (1.0 - s);
    }
  }));
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, x.data()[i]);
  NodePtr px = x.node();
  return Tensor(make_node(x.shape(), std::move(out), {px}, [px](Node& n) {
    px->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      if (px->data[i] > 0.0) px->grad[i] += n.grad[i];
    }
  }));
}

Tensor softplus(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_softplus(x.data()[i]);
  NodePtr px = x.node();
  return Tensor(make_node(x.shape(), std::move(out), {px}, [px](Node& n) {
    px->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      px->grad[i] += n.grad[i] * stable_sigmoid(px->data[i]);
    }
  }));
}

Tensor swish(const Tensor& x, const Tensor& beta) {
  if (beta.numel() != 1) {
    throw ShapeError("swish: beta must be scalar, got " + shape_str(beta.shape()));
  }
  double b = beta.data()[0];
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x.data()[i] * stable_sigmoid(b * x.data()[i]);
  }
  NodePtr px = x.node(), pb = beta.node();
  return Tensor(make_node(x.shape(), std::move(out), {px, pb}, [px, pb](Node& n) {
    double b = pb->data[0];
    double db = 0.0;
    if (px->requires_grad) px->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      double xi = px->data[i];
      double s = stable_sigmoid(b * xi);
      if (px->requires_grad) {
        px->grad[i] += n.grad[i] * (s + b * xi * s * (1.0 - s));
      }
      db += n.grad[i] * xi * xi * s * (1.0 - s);
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      pb->grad[0] += db;
    }
  }));
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  NodePtr px = x.node();
  return Tensor(make_node({1}, {acc}, {px}, [px](Node& n) {
    px->ensure_grad();
    double g = n.grad[0];
    for (auto& v : px->grad) v += g;
  }));
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / double(x.numel())); }

// ---- shape -------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " +
                     shape_str(new_shape));
  }
  NodePtr px = x.node();
  return Tensor(make_node(std::move(new_shape), x.data(), {px}, [px](Node& n) {
    px->ensure_grad();
    kernels::axpy(1.0, n.grad.data(), px->grad.data(), n.grad.size());
  }));
}

namespace {

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& dims) {
  const Shape& in = x.shape();
  if (dims.size() != in.size()) {
    throw ShapeError("permute: rank mismatch for " + shape_str(in));
  }
  Shape out_shape(in.size());
  for (std::size_t i = 0; i < dims.size(); ++i) out_shape[i] = in[dims[i]];
  auto in_strides = row_major_strides(in);
  // out-linear index -> in-linear index map
  auto idx_map = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> counter(in.size(), 0);
  for (std::size_t o = 0; o < x.numel(); ++o) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < dims.size(); ++d) src += counter[d] * in_strides[dims[d]];
    (*idx_map)[o] = src;
    for (std::size_t d = dims.size(); d-- > 0;) {
      if (++counter[d] < out_shape[d]) break;
      counter[d] = 0;
    }
  }
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = x.data()[(*idx_map)[o]];
  NodePtr px = x.node();
  return Tensor(make_node(std::move(out_shape), std::move(out), {px},
                          [px, idx_map](Node& n) {
    px->ensure_grad();
    for (std::size_t o = 0; o < n.grad.size(); ++o) {
      px->grad[(*idx_map)[o]] += n.grad[o];
    }
  }));
}

Tensor expand_time(const Tensor& x, std::size_t t) {
  if (x.rank() != 3 || x.dim(2) != 1) {
    throw ShapeError("expand_time: expected [B,C,1], got " + shape_str(x.shape()));
  }
  std::size_t bc = x.dim(0) * x.dim(1);
  std::vector<double> out(bc * t);
  for (std::size_t i = 0; i < bc; ++i) {
    std::fill(out.begin() + i * t, out.begin() + (i + 1) * t, x.data()[i]);
  }
  NodePtr px = x.node();
  return Tensor(make_node({x.dim(0), x.dim(1), t}, std::move(out), {px},
                          [px, bc, t](Node& n) {
    px->ensure_grad();
    for (std::size_t i = 0; i < bc; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < t; ++j) acc += n.grad[i * t + j];
      px->grad[i] += acc;
    }
  }));
}

// ---- conv / pooling ----------------------------------------------------------

Tensor conv1d(const Tensor& x, const Tensor& weight,
              const std::optional<Tensor>& bias, int stride, int padding) {
  if (x.rank() != 3 || weight.rank() != 3) {
    throw ShapeError("conv1d: expected x[B,Cin,T], weight[Cout,Cin,K]");
  }
  const std::size_t B = x.dim(0), Cin = x.dim(1), T = x.dim(2);
  const std::size_t Cout = weight.dim(0), K = weight.dim(2);
  if (weight.dim(1) != Cin) {
    throw ShapeError("conv1d: input channels mismatch, x " + shape_str(x.shape()) +
                     " vs weight " + shape_str(weight.shape()));
  }
  if (stride < 1 || padding < 0 || K < 1 || T + 2 * std::size_t(padding) < K) {
    throw ShapeError("conv1d: invalid geometry (T=" + std::to_string(T) +
                     ", K=" + std::to_string(K) + ", stride=" + std::to_string(stride) +
                     ", padding=" + std::to_string(padding) + ")");
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != Cout)) {
    throw ShapeError("conv1d: bias shape " + shape_str(bias->shape()));
  }
  const std::size_t Tout = (T + 2 * padding - K) / stride + 1;

  std::vector<double> out(B * Cout * Tout, 0.0);
  const double* xd = x.data().data();
  const double* wd = weight.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Cout; ++co) {
      double* orow = out.data() + (b * Cout + co) * Tout;
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const double* xrow = xd + (b * Cin + ci) * T;
        const double* wrow = wd + (co * Cin + ci) * K;
        if (stride == 1) {
          for (std::size_t k = 0; k < K; ++k) {
            // output t uses x[t + k - padding]
            long off = long(k) - padding;
            long t0 = off < 0 ? -off : 0;
            long t1 = std::min(long(Tout), long(T) - off);
            if (t1 > t0) kernels::axpy(wrow[k], xrow + t0 + off, orow + t0, t1 - t0);
          }
        } else {
          for (std::size_t t = 0; t < Tout; ++t) {
            long base = long(t) * stride - padding;
            double acc = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
              long xi = base + long(k);
              if (xi >= 0 && xi < long(T)) acc += wrow[k] * xrow[xi];
            }
            orow[t] += acc;
          }
        }
      }
      if (bias) {
        double bv = bias->data()[co];
        for (std::size_t t = 0; t < Tout; ++t) orow[t] += bv;
      }
    }
  }

  NodePtr px = x.node(), pw = weight.node();
  NodePtr pbias = bias ? bias->node() : nullptr;
  std::vector<NodePtr> parents = {px, pw};
  if (pbias) parents.push_back(pbias);
  int s = stride, p = padding;
  return Tensor(make_node(
      {B, Cout, Tout}, std::move(out), std::move(parents),
      [px, pw, pbias, B, Cin, T, Cout, K, Tout, s, p](Node& n) {
        const double* gd = n.grad.data();
        if (px->requires_grad) px->ensure_grad();
        if (pw->requires_grad) pw->ensure_grad();
        if (pbias && pbias->requires_grad) pbias->ensure_grad();
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t co = 0; co < Cout; ++co) {
            const double* grow = gd + (b * Cout + co) * Tout;
            for (std::size_t ci = 0; ci < Cin; ++ci) {
              const double* xrow = px->data.data() + (b * Cin + ci) * T;
              const double* wrow = pw->data.data() + (co * Cin + ci) * K;
              double* gxrow =
                  px->requires_grad ? px->grad.data() + (b * Cin + ci) * T : nullptr;
              double* gwrow =
                  pw->requires_grad ? pw->grad.data() + (co * Cin + ci) * K : nullptr;
              if (s == 1) {
                for (std::size_t k = 0; k < K; ++k) {
                  long off = long(k) - p;
                  long t0 = off < 0 ? -off : 0;
                  long t1 = std::min(long(Tout), long(T) - off);
                  if (t1 <= t0) continue;
                  if (gxrow) kernels::axpy(wrow[k], grow + t0, gxrow + t0 + off, t1 - t0);
                  if (gwrow) gwrow[k] += kernels::dot(grow + t0, xrow + t0 + off, t1 - t0);
                }
              } else {
                for (std::size_t t = 0; t < Tout; ++t) {
                  long base = long(t) * s - p;
                  for (std::size_t k = 0; k < K; ++k) {
                    long xi = base + long(k);
                    if (xi < 0 || xi >= long(T)) continue;
                    if (gxrow) gxrow[xi] += wrow[k] * grow[t];
                    if (gwrow) gwrow[k] += grow[t] * xrow[xi];
                  }
                }
              }
            }
            if (pbias && pbias->requires_grad) {
              double acc = 0.0;
              for (std::size_t t = 0; t < Tout; ++t) acc += grow[t];
              pbias->grad[co] += acc;
            }
          }
        }
      }));
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& weight,
                        const std::optional<Tensor>& bias, int stride,
                        int padding) {
  if (x.rank() != 3 || weight.rank() != 2 || weight.dim(0) != x.dim(1)) {
    throw ShapeError("depthwise_conv1d: x " + shape_str(x.shape()) + " weight " +
                     shape_str(weight.shape()));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2), K = weight.dim(1);
  if (T + 2 * std::size_t(padding) < K) {
    throw ShapeError("depthwise_conv1d: kernel exceeds padded length");
  }
  const std::size_t Tout = (T + 2 * padding - K) / stride + 1;
  std::vector<double> out(B * C * Tout, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* xrow = x.data().data() + (b * C + c) * T;
      const double* wrow = weight.data().data() + c * K;
      double* orow = out.data() + (b * C + c) * Tout;
      double bv = bias ? bias->data()[c] : 0.0;
      for (std::size_t t = 0; t < Tout; ++t) {
        long base = long(t) * stride - padding;
        double acc = bv;
        for (std::size_t k = 0; k < K; ++k) {
          long xi = base + long(k);
          if (xi >= 0 && xi < long(T)) acc += wrow[k] * xrow[xi];
        }
        orow[t] = acc;
      }
    }
  }
  NodePtr px = x.node(), pw = weight.node();
  NodePtr pbias = bias ? bias->node() : nullptr;
  std::vector<NodePtr> parents = {px, pw};
  if (pbias) parents.push_back(pbias);
  int s = stride, p = padding;
  return Tensor(make_node(
      {B, C, Tout}, std::move(out), std::move(parents),
      [px, pw, pbias, B, C, T, K, Tout, s, p](Node& n) {
        if (px->requires_grad) px->ensure_grad();
        if (pw->requires_grad) pw->ensure_grad();
        if (pbias && pbias->requires_grad) pbias->ensure_grad();
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t c = 0; c < C; ++c) {
            const double* grow = n.grad.data() + (b * C + c) * Tout;
            const double* xrow = px->data.data() + (b * C + c) * T;
            const double* wrow = pw->data.data() + c * K;
            for (std::size_t t = 0; t < Tout; ++t) {
              long base = long(t) * s - p;
              for (std::size_t k = 0; k < K; ++k) {
                long xi = base + long(k);
                if (xi < 0 || xi >= long(T)) continue;
                if (px->requires_grad) px->grad[(b * C + c) * T + xi] += wrow[k] * grow[t];
                if (pw->requires_grad) pw->grad[c * K + k] += grow[t] * xrow[xi];
              }
              if (pbias && pbias->requires_grad) pbias->grad[c] += grow[t];
            }
          }
        }
      }));
}

Tensor adaptive_avg_pool1d_to_one(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("adaptive_avg_pool1d_to_one: expected [B,C,T]");
  const std::size_t BC = x.dim(0) * x.dim(1), T = x.dim(2);
  if (T == 0) throw ShapeError("adaptive_avg_pool1d_to_one: empty sequence (T=0)");
  std::vector<double> out(BC);
  std::vector<double> window(T);
  for (std::size_t i = 0; i < BC; ++i) {
    // summing in sorted order makes the mean exactly permutation-invariant
    std::copy(x.data().begin() + long(i * T), x.data().begin() + long((i + 1) * T),
              window.begin());
    std::sort(window.begin(), window.end());
    double acc = 0.0;
    for (double v : window) acc += v;
    out[i] = acc / double(T);
  }
  NodePtr px = x.node();
  return Tensor(make_node({x.dim(0), x.dim(1), 1}, std::move(out), {px},
                          [px, BC, T](Node& n) {
    px->ensure_grad();
    double inv = 1.0 / double(T);
    for (std::size_t i = 0; i < BC; ++i) {
      double g = n.grad[i] * inv;
      for (std::size_t t = 0; t < T; ++t) px->grad[i * T + t] += g;
    }
  }));
}

Tensor max_pool1d(const Tensor& x, int k, int s) {
  if (x.rank() != 3) throw ShapeError("max_pool1d: expected [B,C,T]");
  const std::size_t BC = x.dim(0) * x.dim(1), T = x.dim(2);
  if (k < 1 || std::size_t(k) > T) {
    throw ShapeError("max_pool1d: window k=" + std::to_string(k) +
                     " exceeds sequence length T=" + std::to_string(T));
  }
  if (s < 1) throw ShapeError("max_pool1d: stride must be >= 1");
  const std::size_t Tout = (T - k) / s + 1;
  std::vector<double> out(BC * Tout);
  auto argmax = std::make_shared<std::vector<std::size_t>>(BC * Tout);
  for (std::size_t i = 0; i < BC; ++i) {
    const double* xrow = x.data().data() + i * T;
    for (std::size_t t = 0; t < Tout; ++t) {
      std::size_t base = t * s;
      std::size_t best = base;
      double bv = xrow[base];
      for (int j = 1; j < k; ++j) {
        if (xrow[base + j] > bv) {  // first occurrence wins ties
          bv = xrow[base + j];
          best = base + j;
        }
      }
      out[i * Tout + t] = bv;
      (*argmax)[i * Tout + t] = i * T + best;
    }
  }
  NodePtr px = x.node();
  return Tensor(make_node({x.dim(0), x.dim(1), Tout}, std::move(out), {px},
                          [px, argmax](Node& n) {
    px->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      px->grad[(*argmax)[i]] += n.grad[i];
    }
  }));
}

Tensor linear_interpolate(const Tensor& x, std::size_t target_len) {
  if (x.rank() != 3) throw ShapeError("linear_interpolate: expected [B,C,L]");
  const std::size_t BC = x.dim(0) * x.dim(1), L = x.dim(2);
  if (L < 1 || target_len < 1) throw ShapeError("linear_interpolate: empty axis");
  // Endpoint-aligned sample positions; degenerate axes replicate.
  struct Tap { std::size_t lo, hi; double wl, wh; };
  auto taps = std::make_shared<std::vector<Tap>>(target_len);
  for (std::size_t i = 0; i < target_len; ++i) {
    double pos = (target_len == 1 || L == 1)
                     ? 0.0
                     : double(i) * double(L - 1) / double(target_len - 1);
    std::size_t lo = std::min<std::size_t>(std::size_t(pos), L - 1);
    std::size_t hi = std::min(lo + 1, L - 1);
    double wh = pos - double(lo);
    (*taps)[i] = {lo, hi, 1.0 - wh, wh};
  }
  std::vector<double> out(BC * target_len);
  for (std::size_t r = 0; r < BC; ++r) {
    const double* xrow = x.data().data() + r * L;
    for (std::size_t i = 0; i < target_len; ++i) {
      const Tap& t = (*taps)[i];
      out[r * target_len + i] = t.wl * xrow[t.lo] + t.wh * xrow[t.hi];
    }
  }
  NodePtr px = x.node();
  return Tensor(make_node({x.dim(0), x.dim(1), target_len}, std::move(out), {px},
                          [px, taps, BC, L, target_len](Node& n) {
    px->ensure_grad();
    for (std::size_t r = 0; r < BC; ++r) {
      for (std::size_t i = 0; i < target_len; ++i) {
        const Tap& t = (*taps)[i];
        double g = n.grad[r * target_len + i];
        px->grad[r * L + t.lo] += t.wl * g;
        px->grad[r * L + t.hi] += t.wh * g;
      }
    }
  }));
}

// ---- layer norm / attention ----------------------------------------------

Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma,
                           const Tensor& beta_shift, double eps) {
  if (x.rank() != 3) throw ShapeError("layer_norm_channels: expected [B,D,T]");
  const std::size_t B = x.dim(0), D = x.dim(1), T = x.dim(2);
  if (gamma.numel() != D || beta_shift.numel() != D) {
    throw ShapeError("layer_norm_channels: affine params must have D=" +
                     std::to_string(D) + " entries");
  }
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(B * T);
  const double* xd = x.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      double m = 0.0;
      for (std::size_t d = 0; d < D; ++d) m += xd[(b * D + d) * T + t];
      m /= double(D);
      double v = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        double c = xd[(b * D + d) * T + t] - m;
        v += c * c;
      }
      v /= double(D);
      double is = 1.0 / std::sqrt(v + eps);
      (*inv_std)[b * T + t] = is;
      for (std::size_t d = 0; d < D; ++d) {
        std::size_t idx = (b * D + d) * T + t;
        double xh = (xd[idx] - m) * is;
        (*xhat)[idx] = xh;
        out[idx] = gamma.data()[d] * xh + beta_shift.data()[d];
      }
    }
  }
  NodePtr px = x.node(), pg = gamma.node(), pb = beta_shift.node();
  return Tensor(make_node(x.shape(), std::move(out), {px, pg, pb},
                          [px, pg, pb, xhat, inv_std, B, D, T](Node& n) {
    if (px->requires_grad) px->ensure_grad();
    if (pg->requires_grad) pg->ensure_grad();
    if (pb->requires_grad) pb->ensure_grad();
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < T; ++t) {
        double sum_gd = 0.0, sum_gdx = 0.0;
        for (std::size_t d = 0; d < D; ++d) {
          std::size_t idx = (b * D + d) * T + t;
          double gd = n.grad[idx] * pg->data[d];
          sum_gd += gd;
          sum_gdx += gd * (*xhat)[idx];
        }
        double is = (*inv_std)[b * T + t];
        for (std::size_t d = 0; d < D; ++d) {
          std::size_t idx = (b * D + d) * T + t;
          if (pg->requires_grad) pg->grad[d] += n.grad[idx] * (*xhat)[idx];
          if (pb->requires_grad) pb->grad[d] += n.grad[idx];
          if (px->requires_grad) {
            double gd = n.grad[idx] * pg->data[d];
            px->grad[idx] += is * (gd - sum_gd / double(D) -
                                   (*xhat)[idx] * sum_gdx / double(D));
          }
        }
      }
    }
  }));
}

Tensor batched_matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(1)) {
    throw ShapeError("batched_matmul: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t BB = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
  std::vector<double> out(BB * M * N, 0.0);
  for (std::size_t i = 0; i < BB; ++i) {
    const double* ab = a.data().data() + i * M * K;
    const double* bb = b.data().data() + i * K * N;
    double* ob = out.data() + i * M * N;
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t k = 0; k < K; ++k) {
        kernels::axpy(ab[m * K + k], bb + k * N, ob + m * N, N);
      }
    }
  }
  NodePtr pa = a.node(), pb = b.node();
  return Tensor(make_node({BB, M, N}, std::move(out), {pa, pb},
                          [pa, pb, BB, M, K, N](Node& n) {
    if (pa->requires_grad) pa->ensure_grad();
    if (pb->requires_grad) pb->ensure_grad();
    for (std::size_t i = 0; i < BB; ++i) {
      const double* gb = n.grad.data() + i * M * N;
      const double* ab = pa->data.data() + i * M * K;
      const double* bb = pb->data.data() + i * K * N;
      for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t k = 0; k < K; ++k) {
          if (pa->requires_grad) {
            pa->grad[i * M * K + m * K + k] += kernels::dot(gb + m * N, bb + k * N, N);
          }
          if (pb->requires_grad) {
            kernels::axpy(ab[m * K + k], gb + m * N, pb->grad.data() + i * K * N + k * N, N);
          }
        }
      }
    }
  }));
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("softmax_lastdim: rank 0");
  const std::size_t N = x.shape().back();
  const std::size_t R = x.numel() / N;
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < R; ++r) {
    const double* row = x.data().data() + r * N;
    double mx = row[0];
    for (std::size_t i = 1; i < N; ++i) mx = std::max(mx, row[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      out[r * N + i] = std::exp(row[i] - mx);
      z += out[r * N + i];
    }
    for (std::size_t i = 0; i < N; ++i) out[r * N + i] /= z;
  }
  NodePtr px = x.node();
  auto y = std::make_shared<std::vector<double>>(out);
  return Tensor(make_node(x.shape(), std::move(out), {px}, [px, y, R, N](Node& n) {
    px->ensure_grad();
    for (std::size_t r = 0; r < R; ++r) {
      const double* yr = y->data() + r * N;
      const double* gr = n.grad.data() + r * N;
      double dot = kernels::dot(yr, gr, N);
      for (std::size_t i = 0; i < N; ++i) {
        px->grad[r * N + i] += yr[i] * (gr[i] - dot);
      }
    }
  }));
}

Tensor multi_head_self_attention(const Tensor& x, const AttentionParams& p,
                                 int num_heads,
                                 std::optional<int> local_window) {
  if (x.rank() != 3) throw ShapeError("attention: expected [B,D,T]");
  const std::size_t B = x.dim(0), D = x.dim(1), T = x.dim(2);
  if (num_heads < 1 || D % std::size_t(num_heads) != 0) {
    throw ConfigError("attention: embed dim " + std::to_string(D) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  }
  const std::size_t H = num_heads, dh = D / H;

  Tensor q = conv1d(x, p.wq, p.bq, 1, 0);
  Tensor k = conv1d(x, p.wk, p.bk, 1, 0);
  Tensor v = conv1d(x, p.wv, p.bv, 1, 0);

  // [B,D,T] -> [B*H, dh, T]; channel axis is h-major so this is a pure reshape
  Tensor kt = reshape(k, {B * H, dh, T});
  Tensor qh = permute(reshape(q, {B * H, dh, T}), {0, 2, 1});  // [BH,T,dh]
  Tensor vh = permute(reshape(v, {B * H, dh, T}), {0, 2, 1});

  Tensor scores = scale(batched_matmul(qh, kt), 1.0 / std::sqrt(double(dh)));
  if (local_window) {
    int w = *local_window;
    std::vector<double> mask(B * H * T * T, 0.0);
    for (std::size_t i = 0; i < T; ++i) {
      for (std::size_t j = 0; j < T; ++j) {
        if (std::llabs(long(i) - long(j)) > w) {
          for (std::size_t bh = 0; bh < B * H; ++bh) {
            mask[(bh * T + i) * T + j] = -1e30;
          }
        }
      }
    }
    scores = add(scores, Tensor({B * H, T, T}, std::move(mask)));
  }
  Tensor attn = softmax_lastdim(scores);
  Tensor out = batched_matmul(attn, vh);                      // [BH,T,dh]
  out = reshape(permute(out, {0, 2, 1}), {B, D, T});
  return conv1d(out, p.wo, p.bo, 1, 0);
}

void check_finite(const Tensor& t, const std::string& what) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value in " + what);
    }
  }
}

}  // namespace cetal
