#include "rssl/autodiff.hpp"

#include "rssl/errors.hpp"
#include "rssl/linalg.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

namespace rssl::ad {

const Matrix& Var::value() const { return graph->value(*this); }

double Var::scalar() const {
    const Matrix& m = value();
    if (m.rows() != 1 || m.cols() != 1) {
        throw ShapeMismatch("scalar() on a non-1x1 node");
    }
    return m(0, 0);
}

Matrix Gradients::of(Var v) const {
    if (v.id < grads_.size() && !grads_[v.id].empty()) {
        return grads_[v.id];
    }
    const auto [r, c] = shapes_.at(v.id);
    return Matrix(r, c);
}

Var Graph::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Var Graph::leaf(Matrix value) {
    Node n;
    n.value = std::move(value);
    n.rule_name = "leaf";
    n.requires_grad = true;
    return push(std::move(n));
}

Var Graph::constant(Matrix value) {
    Node n;
    n.value = std::move(value);
    n.rule_name = "constant";
    return push(std::move(n));
}

Var Graph::apply(Matrix value, std::vector<Var> parents, BackwardRule rule, std::string rule_name) {
    Node n;
    n.value = std::move(value);
    n.rule = std::move(rule);
    n.rule_name = std::move(rule_name);
    for (const Var& p : parents) {
        if (p.graph != this) {
            throw Error("ad: operand belongs to a different graph");
        }
        n.parents.push_back(p.id);
        n.requires_grad = n.requires_grad || nodes_.at(p.id).requires_grad;
    }
    return push(std::move(n));
}

void Graph::set_parents(Var node, std::vector<Var> parents) {
    Node& n = nodes_.at(node.id);
    n.parents.clear();
    for (const Var& p : parents) {
        n.parents.push_back(p.id);
    }
}

Gradients Graph::backward(Var root) const {
    const Matrix& rv = nodes_.at(root.id).value;
    if (rv.rows() != 1 || rv.cols() != 1) {
        throw ShapeMismatch("backward root must be 1x1");
    }

    // Iterative DFS for a post-order over ancestors of root; a grey node seen
    // again is a back edge.
    enum class Mark : unsigned char { white, grey, black };
    std::vector<Mark> mark(nodes_.size(), Mark::white);
    std::vector<std::size_t> order;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{root.id, 0}};
    mark[root.id] = Mark::grey;
    while (!stack.empty()) {
        auto& [id, next] = stack.back();
        const Node& n = nodes_[id];
        if (next < n.parents.size()) {
            const std::size_t p = n.parents[next++];
            if (mark[p] == Mark::grey) {
                throw GraphCycle("node " + std::to_string(p) + " is its own ancestor");
            }
            if (mark[p] == Mark::white) {
                mark[p] = Mark::grey;
                stack.emplace_back(p, 0);
            }
        } else {
            mark[id] = Mark::black;
            order.push_back(id);
            stack.pop_back();
        }
    }

    std::vector<Matrix> grads(nodes_.size());
    grads[root.id] = Matrix(1, 1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const Node& n = nodes_[*it];
        if (!n.requires_grad || !n.rule || grads[*it].empty()) {
            continue;
        }
        std::vector<Matrix> contrib = n.rule(grads[*it]);
        for (std::size_t k = 0; k < n.parents.size() && k < contrib.size(); ++k) {
            const std::size_t p = n.parents[k];
            if (contrib[k].empty() || !nodes_[p].requires_grad) {
                continue;
            }
            if (grads[p].empty()) {
                grads[p] = std::move(contrib[k]);
            } else {
                grads[p] += contrib[k];
            }
        }
    }

    Gradients out(std::move(grads));
    out.shapes_.reserve(nodes_.size());
    for (const Node& n : nodes_) {
        out.shapes_.emplace_back(n.value.rows(), n.value.cols());
    }
    return out;
}

namespace {

Graph& graph_of(Var a, Var b) {
    if (a.graph == nullptr || a.graph != b.graph) {
        throw Error("ad: operands belong to different graphs");
    }
    return *a.graph;
}

void require_same_shape(Var a, Var b, const char* op) {
    if (!a.value().same_shape(b.value())) {
        throw ShapeMismatch(std::string(op) + ": operand shapes differ");
    }
}

} // namespace

Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    return graph_of(a, b).apply(a.value() + b.value(), {a, b},
                                [](const Matrix& g) { return std::vector<Matrix>{g, g}; }, "add");
}

Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    return graph_of(a, b).apply(a.value() - b.value(), {a, b},
                                [](const Matrix& g) { return std::vector<Matrix>{g, -1.0 * g}; },
                                "sub");
}

Var scale(Var a, double s) {
    return a.graph->apply(a.value() * s, {a},
                          [s](const Matrix& g) { return std::vector<Matrix>{g * s}; }, "scale");
}

Var hadamard(Var a, Var b) {
    require_same_shape(a, b, "hadamard");
    return graph_of(a, b).apply(rssl::hadamard(a.value(), b.value()), {a, b},
                                [a, b](const Matrix& g) {
                                    return std::vector<Matrix>{rssl::hadamard(g, b.value()),
                                                               rssl::hadamard(g, a.value())};
                                },
                                "hadamard");
}

Var matmul(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const bool need_a = g.requires_grad(a);
    const bool need_b = g.requires_grad(b);
    return g.apply(rssl::matmul(a.value(), b.value()), {a, b},
                   [a, b, need_a, need_b](const Matrix& grad) {
                       return std::vector<Matrix>{
                           need_a ? rssl::matmul_nt(grad, b.value()) : Matrix{},
                           need_b ? rssl::matmul_tn(a.value(), grad) : Matrix{}};
                   },
                   "matmul");
}

Var transpose(Var a) {
    return a.graph->apply(a.value().transposed(), {a},
                          [](const Matrix& g) { return std::vector<Matrix>{g.transposed()}; },
                          "transpose");
}

Var add_column_bias(Var a, Var bias) {
    const Matrix& av = a.value();
    const Matrix& bv = bias.value();
    if (bv.rows() != av.rows() || bv.cols() != 1) {
        throw ShapeMismatch("add_column_bias: bias must be rows x 1");
    }
    Matrix out = av;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        const double bias_r = bv(r, 0);
        for (double& v : out.row(r)) {
            v += bias_r;
        }
    }
    return graph_of(a, bias).apply(std::move(out), {a, bias},
                                   [](const Matrix& g) {
                                       Matrix gb(g.rows(), 1);
                                       for (std::size_t r = 0; r < g.rows(); ++r) {
                                           double s = 0.0;
                                           for (double v : g.row(r)) {
                                               s += v;
                                           }
                                           gb(r, 0) = s;
                                       }
                                       return std::vector<Matrix>{g, std::move(gb)};
                                   },
                                   "add_column_bias");
}

Var relu(Var a) {
    Matrix out = a.value();
    for (double& v : out.values()) {
        v = v > 0.0 ? v : 0.0;
    }
    return a.graph->apply(std::move(out), {a},
                          [a](const Matrix& g) {
                              Matrix d = g;
                              const auto in = a.value().values();
                              auto dv = d.values();
                              for (std::size_t i = 0; i < dv.size(); ++i) {
                                  if (!(in[i] > 0.0)) {
                                      dv[i] = 0.0;
                                  }
                              }
                              return std::vector<Matrix>{std::move(d)};
                          },
                          "relu");
}

Var tanh(Var a) {
    Matrix out = a.value();
    for (double& v : out.values()) {
        v = std::tanh(v);
    }
    Matrix y_copy = out;
    return a.graph->apply(std::move(out), {a},
                   [y = std::move(y_copy)](const Matrix& grad) {
                       Matrix d = grad;
                       auto dv = d.values();
                       const auto yv = y.values();
                       for (std::size_t i = 0; i < dv.size(); ++i) {
                           dv[i] *= 1.0 - yv[i] * yv[i];
                       }
                       return std::vector<Matrix>{std::move(d)};
                   },
                   "tanh");
}

Var sum(Var a) {
    const std::size_t r = a.rows();
    const std::size_t c = a.cols();
    return a.graph->apply(Matrix(1, 1, rssl::sum(a.value())), {a},
                          [r, c](const Matrix& g) { return std::vector<Matrix>{Matrix(r, c, g(0, 0))}; },
                          "sum");
}

Var frobenius_dot(Var a, Var b) {
    require_same_shape(a, b, "frobenius_dot");
    return graph_of(a, b).apply(Matrix(1, 1, rssl::frobenius_dot(a.value(), b.value())), {a, b},
                                [a, b](const Matrix& g) {
                                    const double s = g(0, 0);
                                    return std::vector<Matrix>{b.value() * s, a.value() * s};
                                },
                                "frobenius_dot");
}

namespace {
std::atomic<bool> logdet_fault{false};
} // namespace

void set_logdet_gradient_fault(bool on) noexcept { logdet_fault.store(on); }

Var logdet_spd(Var m) {
    const double sign = logdet_fault.load() ? -1.0 : 1.0;
    const Matrix lower = rssl::cholesky_spd(m.value());
    double s = 0.0;
    for (std::size_t i = 0; i < lower.rows(); ++i) {
        s += std::log(lower(i, i));
    }
    return m.graph->apply(Matrix(1, 1, 2.0 * s), {m},
                          [lower, sign](const Matrix& g) {
                              return std::vector<Matrix>{rssl::cholesky_inverse(lower) * (sign * g(0, 0))};
                          },
                          "logdet_spd");
}

Var normalize_columns(Var a) {
    const Matrix& x = a.value();
    const std::size_t rows = x.rows();
    const std::size_t cols = x.cols();
    std::vector<double> norms(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            norms[c] += x(r, c) * x(r, c);
        }
    }
    for (double& n : norms) {
        n = std::sqrt(n);
    }
    Matrix y(rows, cols);
    for (std::size_t c = 0; c < cols; ++c) {
        if (norms[c] < kColumnNormFloor) {
            y(0, c) = 1.0;
            continue;
        }
        for (std::size_t r = 0; r < rows; ++r) {
            y(r, c) = x(r, c) / norms[c];
        }
    }
    Matrix y_copy = y;
    return a.graph->apply(std::move(y), {a},
                          [y = std::move(y_copy), norms = std::move(norms)](const Matrix& g) {
                              // dx = (g - y (y . g)) / ||x||
                              Matrix d(g.rows(), g.cols());
                              for (std::size_t c = 0; c < g.cols(); ++c) {
                                  if (norms[c] < kColumnNormFloor) {
                                      continue;
                                  }
                                  double proj = 0.0;
                                  for (std::size_t r = 0; r < g.rows(); ++r) {
                                      proj += y(r, c) * g(r, c);
                                  }
                                  for (std::size_t r = 0; r < g.rows(); ++r) {
                                      d(r, c) = (g(r, c) - y(r, c) * proj) / norms[c];
                                  }
                              }
                              return std::vector<Matrix>{std::move(d)};
                          },
                          "normalize_columns");
}

Var mean_of(std::span<const Var> parts) {
    if (parts.empty()) {
        throw EmptySet("mean_of needs at least one operand");
    }
    Matrix acc = parts.front().value();
    for (std::size_t i = 1; i < parts.size(); ++i) {
        require_same_shape(parts.front(), parts[i], "mean_of");
        acc += parts[i].value();
    }
    const double inv = 1.0 / static_cast<double>(parts.size());
    acc *= inv;
    const std::size_t count = parts.size();
    return parts.front().graph->apply(std::move(acc), std::vector<Var>(parts.begin(), parts.end()),
                                      [count, inv](const Matrix& g) {
                                          return std::vector<Matrix>(count, g * inv);
                                      },
                                      "mean_of");
}

Var hcat(std::span<const Var> parts) {
    if (parts.empty()) {
        throw EmptySet("hcat needs at least one operand");
    }
    std::vector<Matrix> values;
    std::vector<std::size_t> widths;
    values.reserve(parts.size());
    for (const Var& p : parts) {
        values.push_back(p.value());
        widths.push_back(p.cols());
    }
    return parts.front().graph->apply(rssl::hcat(values), std::vector<Var>(parts.begin(), parts.end()),
                                      [widths](const Matrix& g) {
                                          std::vector<Matrix> out;
                                          std::size_t at = 0;
                                          for (std::size_t w : widths) {
                                              out.push_back(g.col_block(at, w));
                                              at += w;
                                          }
                                          return out;
                                      },
                                      "hcat");
}

Var col_block(Var a, std::size_t first, std::size_t count) {
    const std::size_t rows = a.rows();
    const std::size_t cols = a.cols();
    return a.graph->apply(a.value().col_block(first, count), {a},
                          [rows, cols, first](const Matrix& g) {
                              Matrix d(rows, cols);
                              d.set_col_block(first, g);
                              return std::vector<Matrix>{std::move(d)};
                          },
                          "col_block");
}

Var cross_entropy_columns(Var logits, std::span<const std::size_t> targets, bool exclude_diagonal) {
    const Matrix& z = logits.value();
    const std::size_t k = z.rows();
    const std::size_t n = z.cols();
    if (targets.size() != n) {
        throw ShapeMismatch("cross_entropy_columns: one target per column required");
    }
    if (exclude_diagonal && k != n) {
        throw ShapeMismatch("cross_entropy_columns: diagonal exclusion needs a square matrix");
    }
    Matrix probs(k, n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (targets[j] >= k || (exclude_diagonal && targets[j] == j)) {
            throw ShapeMismatch("cross_entropy_columns: invalid target");
        }
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < k; ++i) {
            if (exclude_diagonal && i == j) {
                continue;
            }
            peak = std::max(peak, z(i, j));
        }
        double denom = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            if (exclude_diagonal && i == j) {
                continue;
            }
            const double e = std::exp(z(i, j) - peak);
            probs(i, j) = e;
            denom += e;
        }
        for (std::size_t i = 0; i < k; ++i) {
            probs(i, j) /= denom;
        }
        total += -(z(targets[j], j) - peak - std::log(denom));
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    std::vector<std::size_t> tg(targets.begin(), targets.end());
    return logits.graph->apply(Matrix(1, 1, total * inv_n), {logits},
                               [probs = std::move(probs), tg = std::move(tg), inv_n](const Matrix& g) {
                                   Matrix d = probs;
                                   for (std::size_t j = 0; j < tg.size(); ++j) {
                                       d(tg[j], j) -= 1.0;
                                   }
                                   d *= inv_n * g(0, 0);
                                   return std::vector<Matrix>{std::move(d)};
                               },
                               "cross_entropy_columns");
}

} // namespace rssl::ad
