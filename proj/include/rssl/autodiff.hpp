#pragma once

#include "rssl/matrix.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace rssl::ad {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    [[nodiscard]] const Matrix& value() const;
    [[nodiscard]] std::size_t rows() const { return value().rows(); }
    [[nodiscard]] std::size_t cols() const { return value().cols(); }
    /// Value of a 1x1 node.
    [[nodiscard]] double scalar() const;
};

/// Local gradient rule: receives dL/d(output) and returns one contribution per
/// parent. An empty Matrix means "no contribution".
using BackwardRule = std::function<std::vector<Matrix>(const Matrix& grad_out)>;

class Gradients {
public:
    explicit Gradients(std::vector<Matrix> grads) : grads_(std::move(grads)) {}

    /// dL/d(node). A zero matrix of the node's shape when no path reaches it.
    [[nodiscard]] Matrix of(Var v) const;
    [[nodiscard]] bool reached(Var v) const { return v.id < grads_.size() && !grads_[v.id].empty(); }

private:
    friend class Graph;
    std::vector<Matrix> grads_;
    std::vector<std::pair<std::size_t, std::size_t>> shapes_;
};

/// Reverse-mode tape. Nodes are appended in construction order; backward
/// walks the ancestors of the root in reverse topological order.
///
/// A graph is meant for one loss evaluation on one thread.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Differentiable input.
    Var leaf(Matrix value);
    /// Input that never receives a gradient.
    Var constant(Matrix value);
    /// Generic node. Used by the built-in ops and by callers that need a fused
    /// custom rule.
    Var apply(Matrix value, std::vector<Var> parents, BackwardRule rule, std::string rule_name);

    [[nodiscard]] const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
    [[nodiscard]] const std::string& rule_name(Var v) const { return nodes_.at(v.id).rule_name; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

    /// Rewires a node's parents. Only graph surgery in tests needs this; it is
    /// the one way a cycle can be introduced.
    void set_parents(Var node, std::vector<Var> parents);

    /// Gradients of a 1x1 root with respect to every node on a path to it.
    /// Throws ShapeMismatch for a non-scalar root and GraphCycle when a node is
    /// its own ancestor.
    [[nodiscard]] Gradients backward(Var root) const;

private:
    struct Node {
        Matrix value;
        std::vector<std::size_t> parents;
        BackwardRule rule;
        std::string rule_name;
        bool requires_grad = false;
    };

    Var push(Node node);

    std::vector<Node> nodes_;
};

// Elementwise and linear-algebra ops. All operands must live in one graph.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var hadamard(Var a, Var b);
Var matmul(Var a, Var b);
Var transpose(Var a);
/// a (r x c) + bias (r x 1) broadcast over columns.
Var add_column_bias(Var a, Var bias);
Var relu(Var a);
Var tanh(Var a);
/// 1x1 sum of all entries.
Var sum(Var a);
/// 1x1 trace(a^T b) = sum of entrywise products.
Var frobenius_dot(Var a, Var b);
/// 1x1 log det of a symmetric positive-definite node; gradient is m^{-1}.
Var logdet_spd(Var m);
/// Columns scaled to unit l2 norm. A column whose norm is below 1e-12 is
/// replaced by the first basis vector and passes no gradient.
Var normalize_columns(Var a);
/// Entrywise mean of equally-shaped nodes.
Var mean_of(std::span<const Var> parts);
Var hcat(std::span<const Var> parts);
Var col_block(Var a, std::size_t first, std::size_t count);
/// Mean over columns j of -log softmax(logits[:, j])[target_j]. When
/// exclude_diagonal is set, entry (j, j) is dropped from column j's softmax.
Var cross_entropy_columns(Var logits, std::span<const std::size_t> targets, bool exclude_diagonal = false);

/// Negative control for self-checks: flips the sign of logdet_spd's
/// gradient in every graph built afterwards.
void set_logdet_gradient_fault(bool on) noexcept;

/// Norm floor below which normalize_columns substitutes e_1.
inline constexpr double kColumnNormFloor = 1e-12;

} // namespace rssl::ad
