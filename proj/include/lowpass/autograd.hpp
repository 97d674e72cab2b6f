#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lowpass/conv.hpp"
#include "lowpass/tensor.hpp"

namespace lowpass {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
public:
    Var() = default;
    Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Graph& graph() const { return *graph_; }
    std::size_t id() const noexcept { return id_; }
    bool requires_grad() const;

private:
    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

/// Tape of operation records. Nodes are appended in evaluation order, so
/// reverse insertion order is a valid reverse topological order.
class Graph {
public:
    /// Receives the gradient flowing into the node's output.
    using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Appends an op node. `backward` is dropped when no input needs grad.
    Var record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

    /// Reverse-mode sweep from a scalar output.
    void backward(Var output);
    /// Vector-Jacobian product: sweep seeded with `seed` (same shape as output).
    void backward(Var output, const Tensor& seed);

    /// Gradient of the last sweep; zeros when the node was not reached.
    Tensor grad(Var v) const;
    void zero_grad();

    /// Add into the gradient slot of an input during a sweep.
    void accumulate(Var v, const Tensor& g);

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        std::string op;
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        Tensor grad;
    };
    std::vector<Node> nodes_;
};

enum class BatchNormMode { train, eval };

struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;
    double eps = 1e-5;
    double momentum = 0.1;

    static BatchNormState identity(std::size_t channels);
};

namespace ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var mul(Var a, Var b);
Var sum(Var a);
Var sum_squares(Var a);
/// Euclidean norm over every element; zero gradient at the origin.
Var l2norm(Var a);
Var l2dist(Var a, Var b);

Var relu(Var x);
Var tanh(Var x);
Var conv2d(Var x, Var k, std::size_t stride = 1, Padding padding = Padding::same_circular);
/// Per-channel normalization. Train mode normalizes with batch statistics and
/// updates `state`; eval mode uses the running statistics.
Var batchnorm2d(Var x, Var gamma, Var beta, BatchNormState& state, BatchNormMode mode);

Var lowpass(Var x, std::size_t u);
Var decimate(Var x, std::size_t s);
/// Depthwise circular blur with (1/16)[1,2,1] x [1,2,1].
Var binomial_blur(Var x);
Var zero_pad_channels(Var x, std::size_t channels);
Var reshape(Var x, Shape shape);
/// x[B,F] times w[O,F]^T plus b[O].
Var linear(Var x, Var w, Var b);
/// Mean softmax cross-entropy of logits[B,K] against integer labels.
Var cross_entropy(Var logits, std::span<const int> labels);

}  // namespace ops

Tensor binomial_blur(const Tensor& x);

using VarFn = std::function<Var(Graph&, Var)>;

/// Rows are gradients of each output component, one backward sweep per row.
Eigen::MatrixXd jacobian(const VarFn& f, const Tensor& x);

/// Value and gradient of a scalar-valued f at x.
std::pair<double, Tensor> value_and_grad(const VarFn& f, const Tensor& x);

}  // namespace lowpass
