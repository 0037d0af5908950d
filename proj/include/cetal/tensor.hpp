#pragma once

// Dense tensor with reverse-mode automatic differentiation.
//
// Tensors are shared handles onto graph nodes. Every op that produces a
// tensor whose inputs require gradients records a backward closure; calling
// backward(loss) on a scalar walks the recorded graph once in reverse
// topological order and accumulates adjoints into each requires-grad node.
// All math is 64-bit; persistence narrows to 32-bit at the file boundary.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cetal/errors.hpp"

namespace cetal {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized lazily, same length as data
  bool requires_grad = false;
  std::string name;  // set for parameters; used in diagnostics
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // pushes this->grad into parents

  std::size_t numel() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  void zero_grad() { grad.assign(data.size(), 0.0); }
};

using NodePtr = std::shared_ptr<Node>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->numel(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t rank() const { return node_->shape.size(); }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& grad() { return node_->grad; }
  const std::vector<double>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  void set_name(std::string n) { node_->name = std::move(n); }

  double item() const;

  NodePtr node() const { return node_; }

  // Value copy detached from any recorded history.
  Tensor detach() const;

 private:
  NodePtr node_;
};

// ---- graph execution ----------------------------------------------------

// loss must be a scalar (numel 1); populates .grad on every reachable
// requires-grad tensor.
void backward(const Tensor& loss);

// ---- elementwise --------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor ediv(const Tensor& a, const Tensor& b);
Tensor emin(const Tensor& a, const Tensor& b);  // ties keep a's gradient
Tensor emax(const Tensor& a, const Tensor& b);  // ties keep a's gradient
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
// swish(x, beta) = x * sigmoid(beta * x); beta is a scalar tensor and may be
// a learnable parameter. beta=1 is SiLU.
Tensor swish(const Tensor& x, const Tensor& beta);

// ---- reductions ---------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- shape --------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape);
// dims is a permutation of axis indices; out[i0,..] = x[i_{dims[0]},..]
Tensor permute(const Tensor& x, const std::vector<std::size_t>& dims);
// x: [B,C,1] -> [B,C,T] by replication along time
Tensor expand_time(const Tensor& x, std::size_t t);

// ---- sequence ops (channels-first layout [B,C,T]) -----------------------

Tensor conv1d(const Tensor& x, const Tensor& weight,
              const std::optional<Tensor>& bias, int stride, int padding);
// weight: [C,K]; one filter per channel
Tensor depthwise_conv1d(const Tensor& x, const Tensor& weight,
                        const std::optional<Tensor>& bias, int stride,
                        int padding);
Tensor adaptive_avg_pool1d_to_one(const Tensor& x);
Tensor max_pool1d(const Tensor& x, int k, int s);
Tensor linear_interpolate(const Tensor& x, std::size_t target_len);

// ---- normalization / attention ------------------------------------------

// x: [B,D,T]; normalizes over the channel axis per (b,t), then affine.
Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma,
                           const Tensor& beta_shift, double eps = 1e-5);

// batched: a [B,M,K] x b [B,K,N] -> [B,M,N]
Tensor batched_matmul(const Tensor& a, const Tensor& b);
Tensor softmax_lastdim(const Tensor& x);

struct AttentionParams {
  Tensor wq, wk, wv, wo;  // [D,D,1] conv kernels
  Tensor bq, bk, bv, bo;  // [D]
};

// x: [B,D,T]; scaled dot-product attention over time, per head.
// local_window (when set) masks attention to |i-j| <= local_window.
Tensor multi_head_self_attention(const Tensor& x, const AttentionParams& p,
                                 int num_heads,
                                 std::optional<int> local_window = {});

// ---- utilities ------------------------------------------------------------

// Throws NumericError naming the tensor if any entry is NaN or Inf.
void check_finite(const Tensor& t, const std::string& what);

}  // namespace cetal
