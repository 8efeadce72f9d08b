#pragma once

#include "orthus/param_store.hpp"
#include "orthus/tensor.hpp"

#include <cmath>
#include <unordered_map>

namespace orthus {

// Closed set of primitive kernels. Everything the models need is composed
// from these, so gradient checking this list checks the whole system.
enum class Op {
    Input,
    Constant,
    Param,
    MatMul,
    Add,
    Mul,
    Scale,
    RowSoftmax,
    LayerNorm,
    Silu,
    Gelu,
    Gather,
    Concat,
    Slice,
    Sum,
    RowSum,
    Mean,
    CrossEntropy,
    Mse,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Constant: return "constant";
        case Op::Param: return "param";
        case Op::MatMul: return "matmul";
        case Op::Add: return "add";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::RowSoftmax: return "row_softmax";
        case Op::LayerNorm: return "layer_norm";
        case Op::Silu: return "silu";
        case Op::Gelu: return "gelu";
        case Op::Gather: return "gather";
        case Op::Concat: return "concat";
        case Op::Slice: return "slice";
        case Op::Sum: return "sum";
        case Op::RowSum: return "row_sum";
        case Op::Mean: return "mean";
        case Op::CrossEntropy: return "cross_entropy";
        case Op::Mse: return "mse";
    }
    return "?";
}

using NodeId = int;

// Reverse-mode tape over lazily evaluated nodes. Build declares shapes and
// checks them eagerly; forward() binds inputs and materialises values;
// backward() walks ids in strictly decreasing order, which fixes the gradient
// accumulation order and makes runs bit-reproducible.
template <class S>
class Graph {
  public:
    struct Node {
        Op op = Op::Input;
        std::vector<NodeId> args;
        Index rows = 0, cols = 0;  // inferred output shape
        bool requires_grad = false;
        std::string label;

        // op-specific attributes
        bool ta = false, tb = false;          // matmul transposes
        S alpha = S(0);                       // scale factor / layer_norm epsilon
        int axis = 0;                         // concat / slice
        Index start = 0, len = 0;             // slice
        std::vector<Index> indices;           // gather rows / cross-entropy targets
        std::string name;                     // input / param
        MatrixX<S> payload;                   // constant value

        MatrixX<S> value;
        MatrixX<S> grad;
        bool has_value = false;
        bool has_grad = false;
    };

    using Bindings = std::unordered_map<std::string, MatrixX<S>>;

    // --- leaves ---------------------------------------------------------

    NodeId input(const std::string& name, Index rows, Index cols, bool requires_grad = false,
                 const std::string& label = "") {
        Node n;
        n.op = Op::Input;
        n.name = name;
        n.rows = rows;
        n.cols = cols;
        n.requires_grad = requires_grad;
        n.label = label.empty() ? name : label;
        return push(std::move(n));
    }

    NodeId constant(MatrixX<S> value, const std::string& label = "") {
        Node n;
        n.op = Op::Constant;
        n.rows = value.rows();
        n.cols = value.cols();
        n.payload = std::move(value);
        n.label = label;
        return push(std::move(n));
    }

    NodeId scalar(S v, const std::string& label = "") {
        MatrixX<S> m(1, 1);
        m(0, 0) = v;
        return constant(std::move(m), label);
    }

    // Trainability is decided by the caller (it knows the stage); frozen
    // parameters never receive gradients, which enforces freezes structurally.
    NodeId param(const std::string& name, Index rows, Index cols, bool requires_grad = true) {
        Node n;
        n.op = Op::Param;
        n.name = name;
        n.rows = rows;
        n.cols = cols;
        n.requires_grad = requires_grad;
        n.label = name;
        return push(std::move(n));
    }

    // --- kernels --------------------------------------------------------

    NodeId matmul(NodeId a, NodeId b, bool ta = false, bool tb = false, const std::string& label = "") {
        const Node& A = at(a);
        const Node& B = at(b);
        Index am = ta ? A.cols : A.rows, ak = ta ? A.rows : A.cols;
        Index bk = tb ? B.cols : B.rows, bn = tb ? B.rows : B.cols;
        if (ak != bk)
            shape_fail("matmul", label, "inner dims ", am, 'x', ak, " vs ", bk, 'x', bn);
        Node n = make(Op::MatMul, {a, b}, am, bn, label);
        n.ta = ta;
        n.tb = tb;
        return push(std::move(n));
    }

    // b may equal a's shape or broadcast as a row (1xC), column (Rx1) or scalar.
    NodeId add(NodeId a, NodeId b, const std::string& label = "") {
        check_broadcast("add", a, b, label);
        return push(make(Op::Add, {a, b}, at(a).rows, at(a).cols, label));
    }

    NodeId mul(NodeId a, NodeId b, const std::string& label = "") {
        check_broadcast("mul", a, b, label);
        return push(make(Op::Mul, {a, b}, at(a).rows, at(a).cols, label));
    }

    NodeId scale(NodeId a, S alpha, const std::string& label = "") {
        Node n = make(Op::Scale, {a}, at(a).rows, at(a).cols, label);
        n.alpha = alpha;
        return push(std::move(n));
    }

    NodeId row_softmax(NodeId a, const std::string& label = "") {
        return push(make(Op::RowSoftmax, {a}, at(a).rows, at(a).cols, label));
    }

    // Per-row normalisation; gamma and beta are 1xC. Pass constants for a
    // non-affine layer norm.
    NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, S eps = S(1e-5), const std::string& label = "") {
        const Node& X = at(x);
        for (NodeId g : {gamma, beta})
            if (at(g).rows != 1 || at(g).cols != X.cols)
                shape_fail("layer_norm", label, "affine params must be 1x", X.cols, ", got ",
                           at(g).rows, 'x', at(g).cols);
        Node n = make(Op::LayerNorm, {x, gamma, beta}, X.rows, X.cols, label);
        n.alpha = eps;
        return push(std::move(n));
    }

    NodeId silu(NodeId a, const std::string& label = "") {
        return push(make(Op::Silu, {a}, at(a).rows, at(a).cols, label));
    }

    NodeId gelu(NodeId a, const std::string& label = "") {
        return push(make(Op::Gelu, {a}, at(a).rows, at(a).cols, label));
    }

    // Row lookup: out.row(i) = table.row(indices[i]).
    NodeId gather(NodeId table, std::vector<Index> indices, const std::string& label = "") {
        const Node& T = at(table);
        for (Index i : indices)
            if (i < 0 || i >= T.rows)
                shape_fail("gather", label, "index ", i, " out of range [0, ", T.rows, ')');
        Node n = make(Op::Gather, {table}, Index(indices.size()), T.cols, label);
        n.indices = std::move(indices);
        return push(std::move(n));
    }

    NodeId concat(const std::vector<NodeId>& parts, int axis, const std::string& label = "") {
        if (parts.empty()) shape_fail("concat", label, "no inputs");
        if (axis != 0 && axis != 1) shape_fail("concat", label, "axis must be 0 or 1");
        Index rows = at(parts[0]).rows, cols = at(parts[0]).cols;
        for (size_t i = 1; i < parts.size(); ++i) {
            const Node& P = at(parts[i]);
            if (axis == 0) {
                if (P.cols != cols) shape_fail("concat", label, "column mismatch ", P.cols, " vs ", cols);
                rows += P.rows;
            } else {
                if (P.rows != rows) shape_fail("concat", label, "row mismatch ", P.rows, " vs ", rows);
                cols += P.cols;
            }
        }
        Node n = make(Op::Concat, parts, rows, cols, label);
        n.axis = axis;
        return push(std::move(n));
    }

    NodeId slice(NodeId a, int axis, Index start, Index len, const std::string& label = "") {
        const Node& A = at(a);
        Index extent = axis == 0 ? A.rows : A.cols;
        if (axis != 0 && axis != 1) shape_fail("slice", label, "axis must be 0 or 1");
        if (start < 0 || len <= 0 || start + len > extent)
            shape_fail("slice", label, "range [", start, ", ", start + len, ") exceeds extent ", extent);
        Node n = make(Op::Slice, {a}, axis == 0 ? len : A.rows, axis == 1 ? len : A.cols, label);
        n.axis = axis;
        n.start = start;
        n.len = len;
        return push(std::move(n));
    }

    NodeId sum(NodeId a, const std::string& label = "") { return push(make(Op::Sum, {a}, 1, 1, label)); }

    NodeId row_sum(NodeId a, const std::string& label = "") {
        return push(make(Op::RowSum, {a}, at(a).rows, 1, label));
    }

    NodeId mean(NodeId a, const std::string& label = "") { return push(make(Op::Mean, {a}, 1, 1, label)); }

    // Per-row cross entropy against integer targets, computed from logits with
    // max-subtraction; output is Rx1 losses.
    NodeId cross_entropy(NodeId logits, std::vector<Index> targets, const std::string& label = "") {
        const Node& L = at(logits);
        if (Index(targets.size()) != L.rows)
            shape_fail("cross_entropy", label, "expected ", L.rows, " targets, got ", targets.size());
        for (Index t : targets)
            if (t < 0 || t >= L.cols)
                shape_fail("cross_entropy", label, "target ", t, " out of range [0, ", L.cols, ')');
        Node n = make(Op::CrossEntropy, {logits}, L.rows, 1, label);
        n.indices = std::move(targets);
        return push(std::move(n));
    }

    NodeId mse(NodeId a, NodeId b, const std::string& label = "") {
        const Node& A = at(a);
        const Node& B = at(b);
        if (A.rows != B.rows || A.cols != B.cols)
            shape_fail("mse", label, A.rows, 'x', A.cols, " vs ", B.rows, 'x', B.cols);
        return push(make(Op::Mse, {a, b}, 1, 1, label));
    }

    // --- execution ------------------------------------------------------

    void forward(const Bindings& bindings = {}, const ParamStore<S>* store = nullptr) {
        for (Node& n : nodes_) {
            eval(n, bindings, store);
            n.has_value = true;
            n.has_grad = false;
            if (check_finite_ && !n.value.allFinite())
                throw NumericError(std::string("non-finite values in ") + node_desc(n));
        }
    }

    // Seeds d(loss)/d(loss) = 1 and propagates in reverse id order. Gradients
    // exist only on nodes that require grad and are reachable from the loss.
    void backward(NodeId loss) {
        Node& L = at(loss);
        if (!L.has_value) fail("backward before forward");
        if (L.rows != 1 || L.cols != 1)
            throw ShapeError("backward needs a scalar loss, got " + std::to_string(L.rows) + "x" +
                             std::to_string(L.cols) + " at " + node_desc(L));
        for (Node& n : nodes_) n.has_grad = false;
        if (!L.requires_grad) return;
        ensure_grad(L).setOnes();
        for (NodeId id = loss; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.has_grad) continue;
            propagate(n);
        }
    }

    const MatrixX<S>& value(NodeId id) const {
        const Node& n = at(id);
        if (!n.has_value) fail("value() before forward on ", node_desc(n));
        return n.value;
    }

    // Null when the node holds no gradient (frozen or unreachable from loss).
    const MatrixX<S>* grad(NodeId id) const {
        const Node& n = at(id);
        return n.has_grad ? &n.grad : nullptr;
    }

    const Node& at(NodeId id) const { return nodes_.at(size_t(id)); }
    Node& at(NodeId id) { return nodes_.at(size_t(id)); }
    size_t size() const { return nodes_.size(); }

    // When set, forward() validates every node value and names the offender.
    void set_check_finite(bool on) { check_finite_ = on; }

  private:
    Node make(Op op, std::vector<NodeId> args, Index rows, Index cols, const std::string& label) {
        Node n;
        n.op = op;
        n.args = std::move(args);
        n.rows = rows;
        n.cols = cols;
        n.label = label;
        for (NodeId a : n.args) n.requires_grad |= at(a).requires_grad;
        return n;
    }

    NodeId push(Node n) {
        for (NodeId a : n.args)
            if (a < 0 || a >= NodeId(nodes_.size())) fail("argument id ", a, " out of range");
        nodes_.push_back(std::move(n));
        return NodeId(nodes_.size()) - 1;
    }

    std::string node_desc(const Node& n) const {
        std::string d = std::string(op_name(n.op)) + " node";
        if (!n.label.empty()) d += " \"" + n.label + "\"";
        return d;
    }

    template <class... Ts>
    [[noreturn]] void shape_fail(const char* op, const std::string& label, Ts&&... parts) const {
        std::ostringstream os;
        os << op << " node";
        if (!label.empty()) os << " \"" << label << '"';
        os << ": ";
        (os << ... << parts);
        throw ShapeError(os.str());
    }

    void check_broadcast(const char* op, NodeId a, NodeId b, const std::string& label) {
        const Node& A = at(a);
        const Node& B = at(b);
        bool ok = (B.rows == A.rows && B.cols == A.cols) || (B.rows == 1 && B.cols == A.cols) ||
                  (B.rows == A.rows && B.cols == 1) || (B.rows == 1 && B.cols == 1);
        if (!ok)
            shape_fail(op, label, A.rows, 'x', A.cols, " with ", B.rows, 'x', B.cols,
                       " (rhs must match or broadcast by row/column/scalar)");
    }

    MatrixX<S>& ensure_grad(Node& n) {
        if (!n.has_grad) {
            n.grad.setZero(n.rows, n.cols);
            n.has_grad = true;
        }
        return n.grad;
    }

    void add_grad(NodeId id, const MatrixX<S>& g) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return;
        ensure_grad(n) += g;
    }

    static MatrixX<S> apply_t(const MatrixX<S>& m, bool t) { return t ? m.transpose() : m; }

    void eval(Node& n, const Bindings& bindings, const ParamStore<S>* store) {
        switch (n.op) {
            case Op::Input: {
                auto it = bindings.find(n.name);
                if (it == bindings.end()) fail("no binding for ", node_desc(n));
                if (it->second.rows() != n.rows || it->second.cols() != n.cols)
                    throw ShapeError("binding for " + node_desc(n) + " is " +
                                     std::to_string(it->second.rows()) + "x" +
                                     std::to_string(it->second.cols()) + ", declared " +
                                     std::to_string(n.rows) + "x" + std::to_string(n.cols));
                n.value = it->second;
                return;
            }
            case Op::Constant:
                n.value = n.payload;
                return;
            case Op::Param: {
                if (!store) fail("no parameter store supplied for ", node_desc(n));
                const MatrixX<S>& p = store->at(n.name);
                if (p.rows() != n.rows || p.cols() != n.cols)
                    throw ShapeError("parameter " + n.name + " is " + std::to_string(p.rows()) + "x" +
                                     std::to_string(p.cols()) + ", declared " + std::to_string(n.rows) +
                                     "x" + std::to_string(n.cols));
                n.value = p;
                return;
            }
            case Op::MatMul:
                n.value.noalias() = apply_t(val(n, 0), n.ta) * apply_t(val(n, 1), n.tb);
                return;
            case Op::Add: {
                const MatrixX<S>& a = val(n, 0);
                const MatrixX<S>& b = val(n, 1);
                if (same_dims(a, b)) n.value = a + b;
                else if (b.rows() == 1 && b.cols() == 1) n.value = a.array() + b(0, 0);
                else if (b.rows() == 1) n.value = a.rowwise() + b.row(0);
                else n.value = a.colwise() + b.col(0);
                return;
            }
            case Op::Mul: {
                const MatrixX<S>& a = val(n, 0);
                const MatrixX<S>& b = val(n, 1);
                if (same_dims(a, b)) n.value = a.cwiseProduct(b);
                else if (b.rows() == 1 && b.cols() == 1) n.value = a * b(0, 0);
                else if (b.rows() == 1) n.value = a.array().rowwise() * b.row(0).array();
                else n.value = a.array().colwise() * b.col(0).array();
                return;
            }
            case Op::Scale:
                n.value = val(n, 0) * n.alpha;
                return;
            case Op::RowSoftmax: {
                const MatrixX<S>& a = val(n, 0);
                n.value.resize(a.rows(), a.cols());
                for (Index i = 0; i < a.rows(); ++i) {
                    auto row = a.row(i).array();
                    Eigen::Array<S, 1, Eigen::Dynamic> e = (row - row.maxCoeff()).exp();
                    n.value.row(i) = e / e.sum();
                }
                return;
            }
            case Op::LayerNorm: {
                const MatrixX<S>& x = val(n, 0);
                const MatrixX<S>& gamma = val(n, 1);
                const MatrixX<S>& beta = val(n, 2);
                n.value.resize(x.rows(), x.cols());
                for (Index i = 0; i < x.rows(); ++i) {
                    auto row = x.row(i).array();
                    S mu = row.mean();
                    S var = (row - mu).square().mean();
                    S inv = S(1) / std::sqrt(var + n.alpha);
                    n.value.row(i) =
                        ((row - mu) * inv) * gamma.row(0).array() + beta.row(0).array();
                }
                return;
            }
            case Op::Silu: {
                auto x = val(n, 0).array();
                n.value = x / (S(1) + (-x).exp());
                return;
            }
            case Op::Gelu: {
                n.value = val(n, 0).unaryExpr(
                    [](S x) { return x * S(0.5) * (S(1) + S(std::erf(double(x) * M_SQRT1_2))); });
                return;
            }
            case Op::Gather: {
                const MatrixX<S>& t = val(n, 0);
                n.value.resize(Index(n.indices.size()), t.cols());
                for (size_t i = 0; i < n.indices.size(); ++i) n.value.row(Index(i)) = t.row(n.indices[i]);
                return;
            }
            case Op::Concat: {
                n.value.resize(n.rows, n.cols);
                Index off = 0;
                for (NodeId a : n.args) {
                    const MatrixX<S>& p = at(a).value;
                    if (n.axis == 0) n.value.middleRows(off, p.rows()) = p;
                    else n.value.middleCols(off, p.cols()) = p;
                    off += n.axis == 0 ? p.rows() : p.cols();
                }
                return;
            }
            case Op::Slice: {
                const MatrixX<S>& a = val(n, 0);
                if (n.axis == 0) n.value = a.middleRows(n.start, n.len);
                else n.value = a.middleCols(n.start, n.len);
                return;
            }
            case Op::Sum:
                n.value.resize(1, 1);
                n.value(0, 0) = val(n, 0).sum();
                return;
            case Op::RowSum:
                n.value = val(n, 0).rowwise().sum();
                return;
            case Op::Mean:
                n.value.resize(1, 1);
                n.value(0, 0) = val(n, 0).mean();
                return;
            case Op::CrossEntropy: {
                const MatrixX<S>& z = val(n, 0);
                n.value.resize(z.rows(), 1);
                for (Index i = 0; i < z.rows(); ++i) {
                    auto row = z.row(i).array();
                    S m = row.maxCoeff();
                    S lse = m + std::log((row - m).exp().sum());
                    n.value(i, 0) = lse - z(i, n.indices[size_t(i)]);
                }
                return;
            }
            case Op::Mse: {
                const MatrixX<S>& a = val(n, 0);
                const MatrixX<S>& b = val(n, 1);
                n.value.resize(1, 1);
                n.value(0, 0) = (a - b).array().square().sum() / S(a.size());
                return;
            }
        }
        fail("unhandled op in eval");
    }

    const MatrixX<S>& val(const Node& n, size_t i) { return nodes_[n.args[i]].value; }

    void propagate(Node& n) {
        const MatrixX<S>& g = n.grad;
        switch (n.op) {
            case Op::Input:
            case Op::Constant:
            case Op::Param:
                return;
            case Op::MatMul: {
                const MatrixX<S>& a = val(n, 0);
                const MatrixX<S>& b = val(n, 1);
                if (arg_grad(n, 0)) {
                    MatrixX<S> da = g * apply_t(b, !n.tb);
                    add_grad(n.args[0], n.ta ? MatrixX<S>(da.transpose()) : da);
                }
                if (arg_grad(n, 1)) {
                    MatrixX<S> db = apply_t(a, !n.ta) * g;
                    add_grad(n.args[1], n.tb ? MatrixX<S>(db.transpose()) : db);
                }
                return;
            }
            case Op::Add: {
                if (arg_grad(n, 0)) add_grad(n.args[0], g);
                if (arg_grad(n, 1)) add_grad(n.args[1], reduce_to(g, at(n.args[1])));
                return;
            }
            case Op::Mul: {
                const MatrixX<S>& a = val(n, 0);
                const MatrixX<S>& b = val(n, 1);
                if (arg_grad(n, 0)) add_grad(n.args[0], expand_mul(g, b));
                if (arg_grad(n, 1)) add_grad(n.args[1], reduce_to(MatrixX<S>(g.cwiseProduct(a)), at(n.args[1])));
                return;
            }
            case Op::Scale:
                if (arg_grad(n, 0)) add_grad(n.args[0], MatrixX<S>(g * n.alpha));
                return;
            case Op::RowSoftmax: {
                if (!arg_grad(n, 0)) return;
                const MatrixX<S>& y = n.value;
                MatrixX<S> dx(y.rows(), y.cols());
                for (Index i = 0; i < y.rows(); ++i) {
                    S dot = g.row(i).dot(y.row(i));
                    dx.row(i) = (g.row(i).array() - dot) * y.row(i).array();
                }
                add_grad(n.args[0], dx);
                return;
            }
            case Op::LayerNorm: {
                const MatrixX<S>& x = val(n, 0);
                const MatrixX<S>& gamma = val(n, 1);
                MatrixX<S> dx(x.rows(), x.cols());
                MatrixX<S> dgamma = MatrixX<S>::Zero(1, x.cols());
                MatrixX<S> dbeta = MatrixX<S>::Zero(1, x.cols());
                for (Index i = 0; i < x.rows(); ++i) {
                    auto row = x.row(i).array();
                    S mu = row.mean();
                    S var = (row - mu).square().mean();
                    S inv = S(1) / std::sqrt(var + n.alpha);
                    Eigen::Array<S, 1, Eigen::Dynamic> xhat = (row - mu) * inv;
                    Eigen::Array<S, 1, Eigen::Dynamic> dy = g.row(i).array();
                    dgamma.row(0).array() += dy * xhat;
                    dbeta.row(0).array() += dy;
                    Eigen::Array<S, 1, Eigen::Dynamic> dxh = dy * gamma.row(0).array();
                    S m1 = dxh.mean();
                    S m2 = (dxh * xhat).mean();
                    dx.row(i) = (dxh - m1 - xhat * m2) * inv;
                }
                if (arg_grad(n, 0)) add_grad(n.args[0], dx);
                if (arg_grad(n, 1)) add_grad(n.args[1], dgamma);
                if (arg_grad(n, 2)) add_grad(n.args[2], dbeta);
                return;
            }
            case Op::Silu: {
                if (!arg_grad(n, 0)) return;
                auto x = val(n, 0).array();
                auto sig = S(1) / (S(1) + (-x).exp());
                add_grad(n.args[0], MatrixX<S>(g.array() * sig * (S(1) + x * (S(1) - sig))));
                return;
            }
            case Op::Gelu: {
                if (!arg_grad(n, 0)) return;
                MatrixX<S> local = val(n, 0).unaryExpr([](S x) {
                    S cdf = S(0.5) * (S(1) + S(std::erf(double(x) * M_SQRT1_2)));
                    S pdf = std::exp(x * x * S(-0.5)) * S(1.0 / std::sqrt(2.0 * M_PI));
                    return cdf + x * pdf;
                });
                add_grad(n.args[0], MatrixX<S>(g.cwiseProduct(local)));
                return;
            }
            case Op::Gather: {
                if (!arg_grad(n, 0)) return;
                const Node& t = at(n.args[0]);
                MatrixX<S> dt = MatrixX<S>::Zero(t.rows, t.cols);
                // ascending scatter-add keeps duplicate-index accumulation deterministic
                for (size_t i = 0; i < n.indices.size(); ++i) dt.row(n.indices[i]) += g.row(Index(i));
                add_grad(n.args[0], dt);
                return;
            }
            case Op::Concat: {
                Index off = 0;
                for (NodeId a : n.args) {
                    const Node& p = at(a);
                    Index ext = n.axis == 0 ? p.rows : p.cols;
                    if (p.requires_grad)
                        add_grad(a, n.axis == 0 ? MatrixX<S>(g.middleRows(off, ext))
                                                : MatrixX<S>(g.middleCols(off, ext)));
                    off += ext;
                }
                return;
            }
            case Op::Slice: {
                if (!arg_grad(n, 0)) return;
                const Node& a = at(n.args[0]);
                MatrixX<S> da = MatrixX<S>::Zero(a.rows, a.cols);
                if (n.axis == 0) da.middleRows(n.start, n.len) = g;
                else da.middleCols(n.start, n.len) = g;
                add_grad(n.args[0], da);
                return;
            }
            case Op::Sum:
                if (arg_grad(n, 0))
                    add_grad(n.args[0], MatrixX<S>(MatrixX<S>::Constant(at(n.args[0]).rows,
                                                                        at(n.args[0]).cols, g(0, 0))));
                return;
            case Op::RowSum: {
                if (!arg_grad(n, 0)) return;
                const Node& a = at(n.args[0]);
                MatrixX<S> da(a.rows, a.cols);
                for (Index i = 0; i < a.rows; ++i) da.row(i).setConstant(g(i, 0));
                add_grad(n.args[0], da);
                return;
            }
            case Op::Mean:
                if (arg_grad(n, 0)) {
                    const Node& a = at(n.args[0]);
                    add_grad(n.args[0],
                             MatrixX<S>(MatrixX<S>::Constant(a.rows, a.cols, g(0, 0) / S(a.rows * a.cols))));
                }
                return;
            case Op::CrossEntropy: {
                if (!arg_grad(n, 0)) return;
                const MatrixX<S>& z = val(n, 0);
                MatrixX<S> dz(z.rows(), z.cols());
                for (Index i = 0; i < z.rows(); ++i) {
                    auto row = z.row(i).array();
                    Eigen::Array<S, 1, Eigen::Dynamic> e = (row - row.maxCoeff()).exp();
                    dz.row(i) = (e / e.sum()) * g(i, 0);
                    dz(i, n.indices[size_t(i)]) -= g(i, 0);
                }
                add_grad(n.args[0], dz);
                return;
            }
            case Op::Mse: {
                const MatrixX<S>& a = val(n, 0);
                const MatrixX<S>& b = val(n, 1);
                MatrixX<S> d = (a - b) * (S(2) * g(0, 0) / S(a.size()));
                if (arg_grad(n, 0)) add_grad(n.args[0], d);
                if (arg_grad(n, 1)) add_grad(n.args[1], MatrixX<S>(-d));
                return;
            }
        }
        fail("unhandled op in propagate");
    }

    bool arg_grad(const Node& n, size_t i) const { return at(n.args[i]).requires_grad; }

    // Sum g down to the (possibly broadcast) shape of target.
    MatrixX<S> reduce_to(const MatrixX<S>& g, const Node& target) {
        if (target.rows == g.rows() && target.cols == g.cols()) return g;
        if (target.rows == 1 && target.cols == 1) {
            MatrixX<S> r(1, 1);
            r(0, 0) = g.sum();
            return r;
        }
        if (target.rows == 1) return g.colwise().sum();
        return g.rowwise().sum();
    }

    // Expand b to g's shape and multiply elementwise (Mul VJP wrt lhs).
    MatrixX<S> expand_mul(const MatrixX<S>& g, const MatrixX<S>& b) {
        if (same_dims(g, b)) return g.cwiseProduct(b);
        if (b.rows() == 1 && b.cols() == 1) return g * b(0, 0);
        if (b.rows() == 1) return g.array().rowwise() * b.row(0).array();
        return g.array().colwise() * b.col(0).array();
    }

    std::vector<Node> nodes_;
    bool check_finite_ = false;
};

}  // namespace orthus
