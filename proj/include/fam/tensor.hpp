#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fam/errors.hpp"

namespace fam {

/// Dense row-major tensor of doubles. Plain value type: copying copies data.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double v);

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // 2-D accessors; callers guarantee rank()==2.
    double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * dim(1) + c]; }
    double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * dim(1) + c]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    bool bitwise_equal(const Tensor& other) const;

    std::string shape_str() const;

  private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

std::int64_t shape_size(const std::vector<int>& shape);

// In-place y += a*x. Shapes must match.
void axpy(Tensor& y, double a, const Tensor& x);

// Row-wise softmax of a 2-D tensor (value-level, no gradient).
Tensor softmax_rows(const Tensor& logits);

// Index of the max entry in row r of a 2-D tensor (first on ties).
int argmax_row(const Tensor& t, int r);

/// Handle to a node on a GradTape.
struct Var {
    int id = -1;
};

class Gradients;

/// Wengert-list reverse-mode tape. Operations record their inputs and a rule
/// that expresses the backward step with further tape operations, so the
/// result of backward() is itself differentiable (used by the second-order
/// meta objective). backward() walks nodes in exact reverse execution order.
class GradTape {
  public:
    Var leaf(Tensor value);       // differentiable input (parameter)
    Var constant(Tensor value);   // non-differentiable input

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    std::size_t node_count() const { return nodes_.size(); }

    // Elementwise; shapes must match exactly.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var scale(Var a, double c);

    Var exp(Var a);
    Var log(Var a);
    Var relu(Var a);

    // 2-D linear algebra.
    Var matmul(Var a, Var b);
    Var transpose(Var a);

    // Same data, new shape; sizes must agree.
    Var reshape(Var x, std::vector<int> shape);

    // Bias broadcast and its reductions: the only broadcasting offered.
    Var add_rowvec(Var x, Var bias);       // [m,n] + [n]
    Var add_chan_bias(Var x, Var bias);    // [C,H,W] or [N,C,H,W] + [C]
    Var chan_sums(Var x);                  // -> [C]
    Var expand_chan(Var v, std::vector<int> shape);  // [C] -> [..,C,H,W]
    Var col_sums(Var x);                   // [m,n] -> [n]
    Var expand_rows(Var v, int rows);      // [n] -> [rows,n]
    Var row_sums(Var x);                   // [m,n] -> [m,1]
    Var expand_cols(Var v, int cols);      // [m,1] -> [m,cols]

    Var sum_all(Var x);                    // -> [1]
    Var expand_full(Var s, std::vector<int> shape);  // [1] -> shape

    // x[i, labels[i]] -> [m,1] and its scatter adjoint.
    Var pick_rows(Var x, std::vector<int> labels);
    Var pick_scatter(Var p, std::vector<int> labels, int cols);

    // Per-row max as a detached constant [m,1]; used for stable logsumexp.
    Var rowmax_detached(Var x);

    // 3x3 cross-correlation, stride 1, zero padding 1. Input [C,H,W] or
    // [N,C,H,W]; kernels [F,C,3,3]. Spatial dims preserved.
    Var conv2d(Var input, Var kernels);
    Var conv2d_grad_input(Var grad_out, Var kernels, std::vector<int> input_shape);
    Var conv2d_grad_kernels(Var grad_out, Var input, std::vector<int> kernel_shape);

    // 2x2 max pooling, stride 2, floor semantics; a 1-wide spatial dim
    // passes through unchanged.
    Var max_pool_2x2(Var input);

    // Mean cross-entropy between logits [m,n] and integer labels (size m).
    // Composed from the primitives above, so higher-order gradients work.
    Var softmax_cross_entropy(Var logits, const std::vector<int>& labels);

    /// Gradients of a scalar loss with respect to every reachable node.
    Gradients backward(Var loss);

  private:
    friend class Gradients;

    struct BackwardPass {
        std::vector<int> grad_of;  // node id -> grad node id, -1 if none
        void add(GradTape& t, Var parent, Var contrib);
    };

    struct Node {
        Tensor value;
        bool needs_grad = false;
        std::function<void(GradTape&, BackwardPass&, Var self, Var grad)> backprop;
    };

    Var push(Tensor value, bool needs_grad,
             std::function<void(GradTape&, BackwardPass&, Var, Var)> backprop);
    bool any_needs_grad(std::initializer_list<Var> vars) const;
    const Node& node(Var v) const;

    // take/unpool pair backing max_pool_2x2; indices are flat positions into
    // the source tensor, one per output cell (disjoint windows, no collisions).
    Var take(Var src, std::shared_ptr<const std::vector<std::int64_t>> idx,
             std::vector<int> out_shape);
    Var unpool(Var g, std::shared_ptr<const std::vector<std::int64_t>> idx,
               std::vector<int> out_shape);

    std::deque<Node> nodes_;
};

/// Result of GradTape::backward. Nodes unreachable from the loss report a
/// zero gradient of the right shape.
class Gradients {
  public:
    explicit Gradients(std::vector<int> grad_ids) : grad_ids_(std::move(grad_ids)) {}

    std::optional<Var> at(Var v) const;
    Tensor value_or_zero(const GradTape& tape, Var v) const;

  private:
    std::vector<int> grad_ids_;
};

}  // namespace fam
