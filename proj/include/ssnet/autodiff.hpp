#pragma once

// Define-by-run reverse-mode differentiation over float32 tensors.
//
// Every primitive returns a Var. When at least one operand requires gradients
// the result records its parents and a backward closure; otherwise it is a
// plain constant. Reductions, matmul and conv accumulate in double.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ssnet/tensor.hpp"

namespace ssnet {

enum class OpKind {
    leaf,
    constant,
    stop_gradient,
    add,
    sub,
    mul,
    div,
    matmul,
    conv2d,
    leaky_relu,
    sigmoid,
    softplus,
    softmax,
    log,
    sum,
    mean,
    l2_norm,
    concat,
    slice,
    reshape,
    transpose,
    gather_rows,
    add_bias,
    avg_pool2,
    upsample2,
    to_rows,
};

std::string_view op_name(OpKind kind);

/// Per-kind attributes. Unused fields are ignored by a given primitive.
struct PrimitiveAttrs {
    std::optional<std::size_t> axis;  // softmax/sum/mean/l2_norm/concat/slice/add_bias
    float slope = 0.01f;              // leaky_relu
    std::size_t stride = 1;           // conv2d
    std::size_t padding = 0;          // conv2d
    std::size_t begin = 0, end = 0;   // slice
    std::vector<std::size_t> indices; // gather_rows
    Shape shape;                      // reshape
    bool transpose_a = false;         // matmul
    bool transpose_b = false;         // matmul
};

struct Node;

/// Handle to a value in the recorded graph. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t size() const { return value().size(); }
    bool requires_grad() const;
    OpKind kind() const;
    bool defined() const noexcept { return node_ != nullptr; }

    /// In-place access for optimizer updates on leaf parameters.
    Tensor& mutable_value();

    const std::shared_ptr<Node>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
};

using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> parent_grads)>;

struct Node {
    OpKind kind = OpKind::constant;
    Tensor value;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;
};

/// Trainable leaf.
Var parameter(Tensor value);
/// Leaf that never receives gradients.
Var constant(Tensor value);
/// Value-equal copy that is cut from the graph.
Var stop_gradient(const Var& v);

Var apply_primitive(OpKind kind, std::span<const Var> operands, const PrimitiveAttrs& attrs = {});

// Convenience wrappers around apply_primitive.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, float factor);
Var matmul(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);
Var conv2d(const Var& x, const Var& w, const Var& bias, std::size_t stride = 1, std::size_t padding = 0);
Var conv2d(const Var& x, const Var& w, std::size_t stride = 1, std::size_t padding = 0);
Var leaky_relu(const Var& x, float slope = 0.01f);
Var sigmoid(const Var& x);
Var softplus(const Var& x);
Var softmax(const Var& x, std::size_t axis);
Var log(const Var& x);
Var sum(const Var& x);
Var sum(const Var& x, std::size_t axis);
Var mean(const Var& x);
Var l2_norm(const Var& x);
Var l2_norm(const Var& x, std::size_t axis);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end);
Var reshape(const Var& x, Shape shape);
Var transpose(const Var& x);
Var gather_rows(const Var& x, std::vector<std::size_t> indices);
Var add_bias(const Var& x, const Var& bias, std::size_t axis);
Var avg_pool2(const Var& x);
Var upsample2(const Var& x);
Var to_rows(const Var& x);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

struct Gradient {
    Tensor value;
    /// True when the tensor is not reachable from the loss through recorded
    /// nodes. The value is then all zeros.
    bool detached = false;
};

/// d(loss)/d(t) for every t in wrt. Does not modify any value in the graph.
std::vector<Gradient> gradients(const Var& loss, std::span<const Var> wrt);

/// When true (default) kernels run serially with a fixed accumulation order.
void set_deterministic(bool on);
bool deterministic();

} // namespace ssnet
