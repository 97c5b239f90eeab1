// Reverse-mode autodiff tape. Operations are recorded in creation order,
// which is already a topological order, and the backward pass replays them
// once in reverse. A Tape is built fresh for each forward pass and is not
// shared between threads.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "chroma/tensor.hpp"

namespace chroma {

using NodeId = int;

class Tape;

// Lightweight handle pairing a tape with a node id.
struct Var {
    Tape* tape = nullptr;
    NodeId id = -1;

    const Tensor& value() const;
    const Tensor& grad() const;
};

class Tape {
public:
    struct ParamBinding {
        Tensor* storage;
        NodeId id;
    };

    NodeId add_node(Tensor value, bool requires_grad, std::string op);
    void add_step(std::vector<NodeId> inputs, NodeId output, std::function<void(Tape&)> backward);

    Var constant(Tensor value) { return {this, add_node(std::move(value), false, "constant")}; }
    Var leaf(Tensor value, bool requires_grad) {
        return {this, add_node(std::move(value), requires_grad, "leaf")};
    }
    // A leaf mirroring external parameter storage; grads for all bound
    // parameters can be collected after backward().
    Var param(Tensor& storage) {
        Var v{this, add_node(storage, true, "param")};
        params_.push_back({&storage, v.id});
        return v;
    }

    const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    Tensor& mutable_value(NodeId id) { return nodes_[static_cast<std::size_t>(id)].value; }
    const Tensor& grad(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
    Tensor& grad_buffer(NodeId id) { return nodes_[static_cast<std::size_t>(id)].grad; }
    bool requires_grad(NodeId id) const {
        return nodes_[static_cast<std::size_t>(id)].requires_grad;
    }
    const std::string& op_name(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].op; }
    int num_nodes() const { return static_cast<int>(nodes_.size()); }

    // Accumulates into the node's grad buffer, allocating it on first touch.
    void accumulate_grad(NodeId id, const Tensor& delta);

    // Seeds d(root)/d(root) = 1 and replays recorded steps newest-first.
    // The root must be a scalar (single-element) node. May be called more
    // than once; gradients accumulate across calls.
    void backward(NodeId root);

    const std::vector<ParamBinding>& params() const { return params_; }
    const Tensor* grad_for(const Tensor* storage) const;

    // First node (in creation order) holding a non-finite value, or -1.
    NodeId first_nonfinite_node() const;

private:
    struct Node {
        Tensor value;
        Tensor grad;  // empty until touched by backward
        bool requires_grad;
        std::string op;
    };
    struct Step {
        std::vector<NodeId> inputs;
        NodeId output;
        std::function<void(Tape&)> backward;
    };

    std::vector<Node> nodes_;
    std::vector<Step> steps_;
    std::vector<ParamBinding> params_;
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline const Tensor& Var::grad() const { return tape->grad(id); }

// ---- elementwise / arithmetic ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var square(Var a);
Var exp_op(Var a);
Var log_op(Var a);

// ---- reductions / shape ----
Var sum_all(Var a);                       // -> shape {1}
Var sum_rows(Var a);                      // (m, n) -> (m), summing each row
Var reshape(Var a, std::vector<int> shape);
Var slice0(Var a, int start, int len);    // slice along axis 0
Var select(Var a, int index);             // 1-D gather of one element -> {1}
Var concat_channels(Var a, Var b);        // NCHW concat along C

// ---- activations ----
Var relu(Var a);
Var tanh_op(Var a);
Var softmax(Var a, int axis);             // max-subtracted, sums to 1 along axis

// ---- linear algebra ----
Var matmul(Var a, Var b);                 // (m,k) x (k,n) -> (m,n)
Var fully_connected(Var x, Var weight, Var bias);  // (n,i) x (i,o) + bias(o)

// ---- spatial ops (NCHW) ----
Var conv2d(Var input, Var kernel, int stride, int pad);
Var bias_channel(Var x, Var bias);        // add bias[c] across N,H,W
Var bilinear_upsample(Var x, int factor); // align-corners-false
Var zero_pad2d(Var x, int top, int bottom, int left, int right);
Var forward_diff(Var x, int axis);        // 3-D (C,H,W); axis 1 = vertical, 2 = horizontal

struct BatchNormStats {
    Tensor running_mean;  // (C); empty until first use, then seeded with zeros
    Tensor running_var;   // (C); empty until first use, then seeded with ones
    double momentum = 0.9;
    double eps = 1e-5;
};

enum class BatchNormMode { train, eval };

// Per-channel batch normalization over N,H,W. Train mode normalizes by batch
// statistics and updates running stats in place; eval mode uses running stats.
Var batchnorm(Var x, Var gamma, Var beta, BatchNormStats& stats, BatchNormMode mode);

// log(sum(exp(x))) over a 1-D node, max-subtracted. The max shift is read
// from the node value and treated as constant, which leaves the gradient
// (softmax) unchanged.
Var logsumexp(Var x);

// Reference forward convolution as a direct quadruple loop, accumulating in
// (c, kh, kw) order. The tape op's im2col path matches it bit for bit.
Tensor conv2d_reference(const Tensor& input, const Tensor& kernel, int stride, int pad);

}  // namespace chroma
