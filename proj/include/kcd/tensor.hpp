#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "kcd/error.hpp"

namespace kcd {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Index = Eigen::Index;

inline std::string shape_str(Index rows, Index cols) {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

inline std::string shape_str(const Matrix& m) { return shape_str(m.rows(), m.cols()); }

/// A learnable matrix and its gradient buffer. The gradient always has the
/// value's shape and is accumulated into by every tape that uses the parameter.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

    Index rows() const { return value.rows(); }
    Index cols() const { return value.cols(); }
    Index size() const { return value.size(); }
    void zero_grad() { grad.setZero(); }
};

namespace ad {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;

    const Matrix& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Records operations in execution order and replays them backwards.
///
/// A node's inputs are always recorded before it, so reverse insertion
/// order is a valid topological order. Nodes whose inputs are all
/// constants carry no backward closure. A tape supports exactly one
/// backward pass; build a new tape for the next forward.
class Tape {
public:
    using BackwardFn = std::function<void(const Matrix& grad_out, const Matrix& out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value) {
        check_finite("constant", value);
        nodes_.push_back(Node{std::move(value), {}, nullptr, false, false, {}});
        return Var(this, static_cast<int>(nodes_.size()) - 1);
    }

    /// Leaf bound to a parameter. Repeated calls return the same node.
    Var param(Parameter& p) {
        if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
        if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols())
            p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
        check_finite(p.name, p.value);
        nodes_.push_back(Node{Matrix(), {}, &p, true, false, {}});
        int id = static_cast<int>(nodes_.size()) - 1;
        param_nodes_.emplace(&p, id);
        return Var(this, id);
    }

    /// Appends an op result. `make_backward` is only invoked when some
    /// input needs a gradient.
    template <class MakeBackward>
    Var record(std::string_view op, Matrix value, std::initializer_list<Var> inputs, MakeBackward&& make_backward) {
        bool needs = false;
        for (const Var& in : inputs) {
            check_owner(op, in);
            needs = needs || nodes_[in.id_].requires_grad;
        }
        return push(op, std::move(value), needs, needs ? BackwardFn(make_backward()) : BackwardFn{});
    }

    /// Variant for ops over a variable number of inputs.
    template <class MakeBackward>
    Var record_n(std::string_view op, Matrix value, const std::vector<Var>& inputs, MakeBackward&& make_backward) {
        bool needs = false;
        for (const Var& in : inputs) {
            check_owner(op, in);
            needs = needs || nodes_[in.id_].requires_grad;
        }
        return push(op, std::move(value), needs, needs ? BackwardFn(make_backward()) : BackwardFn{});
    }

    const Matrix& value(Var v) const {
        const Node& n = nodes_.at(static_cast<std::size_t>(v.id_));
        return n.param ? n.param->value : n.value;
    }

    bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id_)).requires_grad; }

    /// Gradient buffer of `v` to accumulate into, or nullptr when `v`
    /// does not need one. Buffers are zero-initialised on first use.
    Matrix* grad_sink(Var v) {
        Node& n = nodes_[static_cast<std::size_t>(v.id_)];
        if (!n.requires_grad) return nullptr;
        if (n.param) return &n.param->grad;
        if (!n.has_grad) {
            n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
            n.has_grad = true;
        }
        return &n.grad;
    }

    /// Propagates d(loss)/d(node) to every parameter reachable from `loss`.
    /// Parameter gradients are accumulated, not overwritten.
    void backward(Var loss) {
        check_owner("backward", loss);
        if (backward_done_) throw Error("backward: tape already consumed; re-run the forward pass");
        const Matrix& lv = value(loss);
        if (lv.rows() != 1 || lv.cols() != 1)
            throw ShapeError("backward: loss must be scalar (1x1), got " + shape_str(lv));
        backward_done_ = true;
        if (!nodes_[loss.id_].requires_grad) return;
        grad_sink(loss)->array() += 1.0;
        for (int i = loss.id_; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.backward || !n.has_grad) continue;
            n.backward(n.grad, n.value);
            n.backward = nullptr;
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Parameter* param = nullptr;
        bool requires_grad = false;
        bool has_grad = false;
        BackwardFn backward;
    };

    static void check_finite(std::string_view op, const Matrix& m) {
        if (!m.allFinite()) throw NumericError(std::string(op) + ": non-finite value produced");
    }

    void check_owner(std::string_view op, const Var& v) const {
        if (v.tape_ != this || v.id_ < 0 || static_cast<std::size_t>(v.id_) >= nodes_.size())
            throw Error(std::string(op) + ": operand does not belong to this tape");
    }

    Var push(std::string_view op, Matrix value, bool needs, BackwardFn fn) {
        check_finite(op, value);
        nodes_.push_back(Node{std::move(value), {}, nullptr, needs, false, std::move(fn)});
        return Var(this, static_cast<int>(nodes_.size()) - 1);
    }

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, int> param_nodes_;
    bool backward_done_ = false;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

} // namespace ad
} // namespace kcd
