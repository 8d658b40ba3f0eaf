#pragma once

// Define-then-run reverse-mode differentiation over dense f64 matrices.
//
// A Graph is built once (nodes are appended in topological order), then evaluated any number of
// times with `forward`, and differentiated with `backward` from any 1x1 node. The op set is the
// closure needed by the denoiser, the sampler and the losses.

#include "tailgen/autodiff/parameters.hpp"
#include "tailgen/common.hpp"

#include <map>
#include <string>
#include <vector>

namespace tailgen {

class GraphError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class OpKind {
    Input,
    Parameter,
    Constant,
    MatMul,
    Affine,  ///< W X + b, b broadcast over columns
    Add,
    Sub,
    Scale,
    Shift,
    SiLU,
    Dot,
    SquaredNorm,
    Norm,
    Cosine,
    Concat,  ///< vertical stack
    TimestepEmbed,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Input: return "input";
        case OpKind::Parameter: return "parameter";
        case OpKind::Constant: return "constant";
        case OpKind::MatMul: return "matmul";
        case OpKind::Affine: return "affine";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Scale: return "scale";
        case OpKind::Shift: return "shift";
        case OpKind::SiLU: return "silu";
        case OpKind::Dot: return "dot";
        case OpKind::SquaredNorm: return "squared_norm";
        case OpKind::Norm: return "norm";
        case OpKind::Cosine: return "cosine";
        case OpKind::Concat: return "concat";
        case OpKind::TimestepEmbed: return "timestep_embed";
    }
    return "?";
}

struct NodeId {
    std::size_t index = 0;
};

using Inputs = std::map<std::string, Matrix>;

/// Name lookup across several parameter sets (e.g. frozen network weights plus trial parameters).
class ParameterLookup {
public:
    ParameterLookup(const ParameterSet& only) : sets_{&only} {}  // NOLINT(google-explicit-constructor)
    ParameterLookup(std::initializer_list<const ParameterSet*> sets) : sets_(sets) {}

    const ParameterSet* owner(const std::string& name) const {
        for (const ParameterSet* s : sets_)
            if (s->contains(name)) return s;
        return nullptr;
    }

private:
    std::vector<const ParameterSet*> sets_;
};

class Graph {
public:
    struct Node {
        OpKind kind;
        std::vector<std::size_t> args;
        Eigen::Index rows = 0;
        Eigen::Index cols = 0;
        std::string name;  ///< input / parameter name
        double scalar = 0.0;
        Matrix payload;  ///< constant value
        Matrix value;
        Matrix adjoint;
    };

    NodeId input(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        Node n = leaf(OpKind::Input, rows, cols);
        n.name = name;
        return push(std::move(n));
    }

    NodeId parameter(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        Node n = leaf(OpKind::Parameter, rows, cols);
        n.name = name;
        return push(std::move(n));
    }

    NodeId constant(Matrix value) {
        Node n = leaf(OpKind::Constant, value.rows(), value.cols());
        n.payload = std::move(value);
        return push(std::move(n));
    }

    NodeId matmul(NodeId a, NodeId b) {
        if (cols(a) != rows(b)) throw DimensionError("matmul: inner dimensions differ");
        return push(op(OpKind::MatMul, {a, b}, rows(a), cols(b)));
    }

    NodeId affine(NodeId w, NodeId x, NodeId b) {
        if (cols(w) != rows(x)) throw DimensionError("affine: weight/input mismatch");
        if (rows(b) != rows(w) || cols(b) != 1) throw DimensionError("affine: bias must be a column of height rows(W)");
        return push(op(OpKind::Affine, {w, x, b}, rows(w), cols(x)));
    }

    NodeId add(NodeId a, NodeId b) { return push(op(OpKind::Add, {a, b}, same_shape(a, b, "add"), cols(a))); }
    NodeId sub(NodeId a, NodeId b) { return push(op(OpKind::Sub, {a, b}, same_shape(a, b, "sub"), cols(a))); }

    NodeId scale(NodeId a, double c) {
        Node n = op(OpKind::Scale, {a}, rows(a), cols(a));
        n.scalar = c;
        return push(std::move(n));
    }

    NodeId shift(NodeId a, double c) {
        Node n = op(OpKind::Shift, {a}, rows(a), cols(a));
        n.scalar = c;
        return push(std::move(n));
    }

    NodeId silu(NodeId a) { return push(op(OpKind::SiLU, {a}, rows(a), cols(a))); }

    NodeId dot(NodeId a, NodeId b) {
        same_shape(a, b, "dot");
        return push(op(OpKind::Dot, {a, b}, 1, 1));
    }

    NodeId squared_norm(NodeId a) { return push(op(OpKind::SquaredNorm, {a}, 1, 1)); }
    NodeId norm(NodeId a) { return push(op(OpKind::Norm, {a}, 1, 1)); }

    NodeId cosine(NodeId a, NodeId b) {
        same_shape(a, b, "cosine");
        return push(op(OpKind::Cosine, {a, b}, 1, 1));
    }

    NodeId concat(NodeId top, NodeId bottom) {
        if (cols(top) != cols(bottom)) throw DimensionError("concat: column counts differ");
        return push(op(OpKind::Concat, {top, bottom}, rows(top) + rows(bottom), cols(top)));
    }

    /// Gathers columns `steps` of an embedding table (dim x T). Not differentiable.
    NodeId timestep_embed(const Matrix& table, const std::vector<int>& steps) {
        Matrix gathered(table.rows(), static_cast<Eigen::Index>(steps.size()));
        for (std::size_t j = 0; j < steps.size(); ++j) {
            if (steps[j] < 0 || steps[j] >= table.cols()) throw DimensionError("timestep_embed: step out of range");
            gathered.col(static_cast<Eigen::Index>(j)) = table.col(steps[j]);
        }
        Node n = leaf(OpKind::TimestepEmbed, gathered.rows(), gathered.cols());
        n.payload = std::move(gathered);
        return push(std::move(n));
    }

    std::size_t size() const { return nodes_.size(); }
    const Node& node(NodeId id) const { return nodes_.at(id.index); }
    Eigen::Index rows(NodeId id) const { return nodes_.at(id.index).rows; }
    Eigen::Index cols(NodeId id) const { return nodes_.at(id.index).cols; }

    const Matrix& value(NodeId id) const {
        if (!evaluated_) throw GraphError("value requested before forward");
        return nodes_.at(id.index).value;
    }

    double scalar(NodeId id) const {
        const Matrix& v = value(id);
        if (v.size() != 1) throw DimensionError("scalar: node is not 1x1");
        return v(0, 0);
    }

    /// Evaluates every node. Throws GraphError naming the node on shape mismatch or non-finite values.
    void forward(const Inputs& inputs, const ParameterLookup& params) {
        evaluated_ = false;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            Node& n = nodes_[i];
            evaluate(i, n, inputs, params);
            if (!n.value.allFinite())
                throw GraphError("non-finite value at node " + std::to_string(i) + " (" + op_name(n.kind) + ")");
        }
        evaluated_ = true;
    }

    /// Reverse sweep from a 1x1 node. Returns a gradient for every parameter referenced by the graph;
    /// frozen parameters get zeros.
    Gradients backward(NodeId output, const ParameterLookup& params, double seed = 1.0) {
        if (!evaluated_) throw GraphError("backward called before forward");
        if (node(output).rows != 1 || node(output).cols != 1) throw GraphError("backward: output must be 1x1");
        for (auto& n : nodes_) n.adjoint.setZero(n.rows, n.cols);
        nodes_[output.index].adjoint(0, 0) = seed;

        Gradients grads;
        for (std::size_t i = output.index + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.kind == OpKind::Parameter) {
                auto [it, fresh] = grads.try_emplace(n.name, Matrix::Zero(n.rows, n.cols));
                const ParameterSet* owner = params.owner(n.name);
                if (owner && owner->trainable(n.name)) it->second += n.adjoint;
                continue;
            }
            if (n.args.empty()) continue;
            propagate(n);
        }
        for (const auto& n : nodes_) {
            if (n.kind == OpKind::Parameter) grads.try_emplace(n.name, Matrix::Zero(n.rows, n.cols));
        }
        return grads;
    }

private:
    static Node leaf(OpKind k, Eigen::Index r, Eigen::Index c) {
        Node n;
        n.kind = k;
        n.rows = r;
        n.cols = c;
        return n;
    }

    Node op(OpKind k, std::initializer_list<NodeId> args, Eigen::Index r, Eigen::Index c) const {
        Node n = leaf(k, r, c);
        for (NodeId a : args) {
            if (a.index >= nodes_.size()) throw GraphError("argument refers to a node that does not exist yet");
            n.args.push_back(a.index);
        }
        return n;
    }

    Eigen::Index same_shape(NodeId a, NodeId b, const char* what) const {
        if (rows(a) != rows(b) || cols(a) != cols(b)) throw DimensionError(std::string(what) + ": shape mismatch");
        return rows(a);
    }

    NodeId push(Node n) {
        evaluated_ = false;
        nodes_.push_back(std::move(n));
        return NodeId{nodes_.size() - 1};
    }

    const Matrix& arg(const Node& n, std::size_t k) const { return nodes_[n.args[k]].value; }

    static double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

    void evaluate(std::size_t i, Node& n, const Inputs& inputs, const ParameterLookup& params) {
        auto shape_check = [&](const Matrix& v, const char* what) {
            if (v.rows() != n.rows || v.cols() != n.cols)
                throw GraphError(std::string(what) + " '" + n.name + "' has the wrong shape at node " +
                                 std::to_string(i));
        };
        switch (n.kind) {
            case OpKind::Input: {
                auto it = inputs.find(n.name);
                if (it == inputs.end()) throw GraphError("missing input '" + n.name + "'");
                shape_check(it->second, "input");
                n.value = it->second;
                break;
            }
            case OpKind::Parameter: {
                const ParameterSet* owner = params.owner(n.name);
                if (!owner) throw GraphError("missing parameter '" + n.name + "'");
                const Matrix& v = owner->get(n.name);
                shape_check(v, "parameter");
                n.value = v;
                break;
            }
            case OpKind::Constant:
            case OpKind::TimestepEmbed: n.value = n.payload; break;
            case OpKind::MatMul: n.value.noalias() = arg(n, 0) * arg(n, 1); break;
            case OpKind::Affine:
                n.value.noalias() = arg(n, 0) * arg(n, 1);
                n.value.colwise() += arg(n, 2).col(0);
                break;
            case OpKind::Add: n.value = arg(n, 0) + arg(n, 1); break;
            case OpKind::Sub: n.value = arg(n, 0) - arg(n, 1); break;
            case OpKind::Scale: n.value = n.scalar * arg(n, 0); break;
            case OpKind::Shift: n.value = arg(n, 0).array() + n.scalar; break;
            case OpKind::SiLU: n.value = arg(n, 0).unaryExpr([](double x) { return x * sigmoid(x); }); break;
            case OpKind::Dot: n.value = Matrix::Constant(1, 1, arg(n, 0).cwiseProduct(arg(n, 1)).sum()); break;
            case OpKind::SquaredNorm: n.value = Matrix::Constant(1, 1, arg(n, 0).squaredNorm()); break;
            case OpKind::Norm: n.value = Matrix::Constant(1, 1, arg(n, 0).norm()); break;
            case OpKind::Cosine: {
                const double na = arg(n, 0).norm();
                const double nb = arg(n, 1).norm();
                if (!(na > 0.0) || !(nb > 0.0))
                    throw GraphError("cosine of a zero-norm operand at node " + std::to_string(i));
                n.value = Matrix::Constant(1, 1, arg(n, 0).cwiseProduct(arg(n, 1)).sum() / (na * nb));
                break;
            }
            case OpKind::Concat:
                n.value.resize(n.rows, n.cols);
                n.value.topRows(arg(n, 0).rows()) = arg(n, 0);
                n.value.bottomRows(arg(n, 1).rows()) = arg(n, 1);
                break;
        }
    }

    void propagate(const Node& n) {
        const Matrix& g = n.adjoint;
        auto adj = [&](std::size_t k) -> Matrix& { return nodes_[n.args[k]].adjoint; };
        switch (n.kind) {
            case OpKind::MatMul:
                adj(0).noalias() += g * arg(n, 1).transpose();
                adj(1).noalias() += arg(n, 0).transpose() * g;
                break;
            case OpKind::Affine:
                adj(0).noalias() += g * arg(n, 1).transpose();
                adj(1).noalias() += arg(n, 0).transpose() * g;
                adj(2) += g.rowwise().sum();
                break;
            case OpKind::Add:
                adj(0) += g;
                adj(1) += g;
                break;
            case OpKind::Sub:
                adj(0) += g;
                adj(1) -= g;
                break;
            case OpKind::Scale: adj(0) += n.scalar * g; break;
            case OpKind::Shift: adj(0) += g; break;
            case OpKind::SiLU:
                adj(0) += g.cwiseProduct(arg(n, 0).unaryExpr([](double x) {
                    const double s = sigmoid(x);
                    return s * (1.0 + x * (1.0 - s));
                }));
                break;
            case OpKind::Dot: {
                const double s = g(0, 0);
                adj(0) += s * arg(n, 1);
                adj(1) += s * arg(n, 0);
                break;
            }
            case OpKind::SquaredNorm: adj(0) += (2.0 * g(0, 0)) * arg(n, 0); break;
            case OpKind::Norm: {
                const double nv = n.value(0, 0);
                if (nv > 0.0) adj(0) += (g(0, 0) / nv) * arg(n, 0);
                break;
            }
            case OpKind::Cosine: {
                const Matrix& a = arg(n, 0);
                const Matrix& b = arg(n, 1);
                const double na = a.norm();
                const double nb = b.norm();
                const double c = n.value(0, 0);
                const double s = g(0, 0);
                adj(0) += s * (b / (na * nb) - (c / (na * na)) * a);
                adj(1) += s * (a / (na * nb) - (c / (nb * nb)) * b);
                break;
            }
            case OpKind::Concat: {
                const Eigen::Index top = arg(n, 0).rows();
                adj(0) += g.topRows(top);
                adj(1) += g.bottomRows(n.rows - top);
                break;
            }
            default: break;
        }
    }

    std::vector<Node> nodes_;
    bool evaluated_ = false;
};

}  // namespace tailgen
