#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kcd/tensor.hpp"

// Differentiable operations over ad::Var. Every op validates shapes,
// records its result on the operands' tape and, when any operand needs a
// gradient, a closure that accumulates the vector-Jacobian product.

namespace kcd::ad {

namespace detail {

[[noreturn]] inline void shape_mismatch(std::string_view op, const Matrix& a, const Matrix& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline void require_same_shape(std::string_view op, const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) shape_mismatch(op, a, b);
}

inline Tape& tape_of(std::string_view op, const Var& a) {
    if (!a.valid()) throw Error(std::string(op) + ": uninitialised operand");
    return *a.tape();
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace detail

inline Var matmul(Var a, Var b) {
    Tape& t = detail::tape_of("matmul", a);
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.cols() != bv.rows()) detail::shape_mismatch("matmul", av, bv);
    Matrix out(av.rows(), bv.cols());
    out.noalias() = av * bv;
    return t.record("matmul", std::move(out), {a, b}, [&t, a, b] {
        return [&t, a, b](const Matrix& g, const Matrix&) {
            if (Matrix* ga = t.grad_sink(a)) ga->noalias() += g * b.value().transpose();
            if (Matrix* gb = t.grad_sink(b)) gb->noalias() += a.value().transpose() * g;
        };
    });
}

/// a · bᵀ
inline Var matmul_nt(Var a, Var b) {
    Tape& t = detail::tape_of("matmul_nt", a);
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.cols() != bv.cols()) detail::shape_mismatch("matmul_nt", av, bv);
    Matrix out(av.rows(), bv.rows());
    out.noalias() = av * bv.transpose();
    return t.record("matmul_nt", std::move(out), {a, b}, [&t, a, b] {
        return [&t, a, b](const Matrix& g, const Matrix&) {
            if (Matrix* ga = t.grad_sink(a)) ga->noalias() += g * b.value();
            if (Matrix* gb = t.grad_sink(b)) gb->noalias() += g.transpose() * a.value();
        };
    });
}

inline Var add(Var a, Var b) {
    Tape& t = detail::tape_of("add", a);
    detail::require_same_shape("add", a.value(), b.value());
    Matrix out = a.value() + b.value();
    return t.record("add", std::move(out), {a, b}, [&t, a, b] {
        return [&t, a, b](const Matrix& g, const Matrix&) {
            if (Matrix* ga = t.grad_sink(a)) *ga += g;
            if (Matrix* gb = t.grad_sink(b)) *gb += g;
        };
    });
}

inline Var sub(Var a, Var b) {
    Tape& t = detail::tape_of("sub", a);
    detail::require_same_shape("sub", a.value(), b.value());
    Matrix out = a.value() - b.value();
    return t.record("sub", std::move(out), {a, b}, [&t, a, b] {
        return [&t, a, b](const Matrix& g, const Matrix&) {
            if (Matrix* ga = t.grad_sink(a)) *ga += g;
            if (Matrix* gb = t.grad_sink(b)) *gb -= g;
        };
    });
}

/// Adds a 1×c row vector to every row of `a`. The only broadcast supported.
inline Var add_row(Var a, Var row) {
    Tape& t = detail::tape_of("add_row", a);
    const Matrix& av = a.value();
    const Matrix& rv = row.value();
    if (rv.rows() != 1 || rv.cols() != av.cols()) detail::shape_mismatch("add_row", av, rv);
    Matrix out = av.rowwise() + rv.row(0);
    return t.record("add_row", std::move(out), {a, row}, [&t, a, row] {
        return [&t, a, row](const Matrix& g, const Matrix&) {
            if (Matrix* ga = t.grad_sink(a)) *ga += g;
            if (Matrix* gr = t.grad_sink(row)) *gr += g.colwise().sum();
        };
    });
}

/// Elementwise (Hadamard) product.
inline Var mul(Var a, Var b) {
    Tape& t = detail::tape_of("mul", a);
    detail::require_same_shape("mul", a.value(), b.value());
    Matrix out = a.value().cwiseProduct(b.value());
    return t.record("mul", std::move(out), {a, b}, [&t, a, b] {
        return [&t, a, b](const Matrix& g, const Matrix&) {
            if (Matrix* ga = t.grad_sink(a)) *ga += g.cwiseProduct(b.value());
            if (Matrix* gb = t.grad_sink(b)) *gb += g.cwiseProduct(a.value());
        };
    });
}

inline Var scale(Var a, double s) {
    Tape& t = detail::tape_of("scale", a);
    Matrix out = a.value() * s;
    return t.record("scale", std::move(out), {a}, [&t, a, s] {
        return [&t, a, s](const Matrix& g, const Matrix&) {
            if (Matrix* ga = t.grad_sink(a)) *ga += g * s;
        };
    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no operands");
    Tape& t = detail::tape_of("concat_rows", parts.front());
    Index cols = parts.front().cols();
    Index rows = 0;
    for (const Var& p : parts) {
        if (p.cols() != cols) detail::shape_mismatch("concat_rows", parts.front().value(), p.value());
        rows += p.rows();
    }
    Matrix out(rows, cols);
    Index r = 0;
    for (const Var& p : parts) {
        out.middleRows(r, p.rows()) = p.value();
        r += p.rows();
    }
    return t.record_n("concat_rows", std::move(out), parts, [&t, parts] {
        return [&t, parts](const Matrix& g, const Matrix&) {
            Index offset = 0;
            for (const Var& p : parts) {
                Index n = p.rows();
                if (Matrix* gp = t.grad_sink(p)) *gp += g.middleRows(offset, n);
                offset += n;
            }
        };
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no operands");
    Tape& t = detail::tape_of("concat_cols", parts.front());
    Index rows = parts.front().rows();
    Index cols = 0;
    for (const Var& p : parts) {
        if (p.rows() != rows) detail::shape_mismatch("concat_cols", parts.front().value(), p.value());
        cols += p.cols();
    }
    Matrix out(rows, cols);
    Index c = 0;
    for (const Var& p : parts) {
        out.middleCols(c, p.cols()) = p.value();
        c += p.cols();
    }
    return t.record_n("concat_cols", std::move(out), parts, [&t, parts] {
        return [&t, parts](const Matrix& g, const Matrix&) {
            Index offset = 0;
            for (const Var& p : parts) {
                Index n = p.cols();
                if (Matrix* gp = t.grad_sink(p)) *gp += g.middleCols(offset, n);
                offset += n;
            }
        };
    });
}

inline Var col_slice(Var a, Index start, Index count) {
    Tape& t = detail::tape_of("col_slice", a);
    const Matrix& av = a.value();
    if (start < 0 || count < 0 || start + count > av.cols())
        throw ShapeError("col_slice: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_str(av));
    Matrix out = av.middleCols(start, count);
    return t.record("col_slice", std::move(out), {a}, [&t, a, start, count] {
        return [&t, a, start, count](const Matrix& g, const Matrix&) {
            if (Matrix* ga = t.grad_sink(a)) ga->middleCols(start, count) += g;
        };
    });
}

/// Constant sparse matrix times a variable: s · a. Covers row gathers,
/// scatters, and weighted means over row subsets.
inline Var spmm(const SparseMatrix& s, Var a) {
    Tape& t = detail::tape_of("spmm", a);
    const Matrix& av = a.value();
    if (s.cols() != av.rows())
        throw ShapeError("spmm: shape mismatch " + shape_str(s.rows(), s.cols()) + " vs " + shape_str(av));
    Matrix out = s * av;
    return t.record("spmm", std::move(out), {a}, [&t, s, a] {
        return [&t, s, a](const Matrix& g, const Matrix&) {
            if (Matrix* ga = t.grad_sink(a)) ga->noalias() += s.transpose() * g;
        };
    });
}

/// Mean of the listed rows, as a 1×c row.
inline Var mean_rows(Var a, std::span<const int> rows) {
    Tape& t = detail::tape_of("mean_rows", a);
    const Matrix& av = a.value();
    if (rows.empty()) throw ShapeError("mean_rows: empty row subset");
    for (int r : rows)
        if (r < 0 || r >= av.rows())
            throw ShapeError("mean_rows: row " + std::to_string(r) + " out of range for " + shape_str(av));
    std::vector<int> idx(rows.begin(), rows.end());
    double w = 1.0 / static_cast<double>(idx.size());
    Matrix out = Matrix::Zero(1, av.cols());
    for (int r : idx) out += av.row(r);
    out *= w;
    return t.record("mean_rows", std::move(out), {a}, [&t, a, idx = std::move(idx), w] {
        return [&t, a, idx, w](const Matrix& g, const Matrix&) {
            if (Matrix* ga = t.grad_sink(a))
                for (int r : idx) ga->row(r) += w * g.row(0);
        };
    });
}

/// Sum of each row, r×1.
inline Var row_sum(Var a) {
    Tape& t = detail::tape_of("row_sum", a);
    Matrix out = a.value().rowwise().sum();
    return t.record("row_sum", std::move(out), {a}, [&t, a] {
        return [&t, a](const Matrix& g, const Matrix&) {
            if (Matrix* ga = t.grad_sink(a)) *ga += g.col(0).replicate(1, ga->cols());
        };
    });
}

/// Sum of all entries, 1×1.
inline Var sum(Var a) {
    Tape& t = detail::tape_of("sum", a);
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return t.record("sum", std::move(out), {a}, [&t, a] {
        return [&t, a](const Matrix& g, const Matrix&) {
            if (Matrix* ga = t.grad_sink(a)) ga->array() += g(0, 0);
        };
    });
}

/// Multiplies row i of `a` by w(i, 0).
inline Var scale_rows(Var a, Var w) {
    Tape& t = detail::tape_of("scale_rows", a);
    const Matrix& av = a.value();
    const Matrix& wv = w.value();
    if (wv.cols() != 1 || wv.rows() != av.rows()) detail::shape_mismatch("scale_rows", av, wv);
    Matrix out = av.array().colwise() * wv.col(0).array();
    return t.record("scale_rows", std::move(out), {a, w}, [&t, a, w] {
        return [&t, a, w](const Matrix& g, const Matrix&) {
            if (Matrix* ga = t.grad_sink(a)) ga->array() += g.array().colwise() * w.value().col(0).array();
            if (Matrix* gw = t.grad_sink(w)) gw->col(0) += g.cwiseProduct(a.value()).rowwise().sum();
        };
    });
}

namespace detail {

inline void softmax_backward(Matrix& ga, const Matrix& y, const Matrix& g) {
    Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    ga.array() += y.array() * (g.array().colwise() - dot.array());
}

} // namespace detail

/// Numerically stable softmax of each row (row max subtracted first).
inline Var row_softmax(Var a) {
    Tape& t = detail::tape_of("row_softmax", a);
    const Matrix& av = a.value();
    Matrix out(av.rows(), av.cols());
    for (Index i = 0; i < av.rows(); ++i) {
        double mx = av.row(i).maxCoeff();
        out.row(i) = (av.row(i).array() - mx).exp().matrix();
        out.row(i) /= out.row(i).sum();
    }
    return t.record("row_softmax", std::move(out), {a}, [&t, a] {
        return [&t, a](const Matrix& g, const Matrix& y) {
            if (Matrix* ga = t.grad_sink(a)) detail::softmax_backward(*ga, y, g);
        };
    });
}

/// Row softmax of a square score matrix restricted to columns whose group
/// equals the row's group; entries outside the group are exactly zero.
/// Runs independent attention for several sequences stacked in one batch.
inline Var row_softmax_grouped(Var a, std::span<const int> groups) {
    Tape& t = detail::tape_of("row_softmax_grouped", a);
    const Matrix& av = a.value();
    if (av.rows() != av.cols() || static_cast<Index>(groups.size()) != av.rows())
        throw ShapeError("row_softmax_grouped: expected square scores with one group per row, got " + shape_str(av) +
                         " and " + std::to_string(groups.size()) + " groups");
    Matrix out = Matrix::Zero(av.rows(), av.cols());
    for (Index i = 0; i < av.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Index j = 0; j < av.cols(); ++j)
            if (groups[j] == groups[i]) mx = std::max(mx, av(i, j));
        double total = 0.0;
        for (Index j = 0; j < av.cols(); ++j)
            if (groups[j] == groups[i]) total += out(i, j) = std::exp(av(i, j) - mx);
        out.row(i) /= total;
    }
    return t.record("row_softmax_grouped", std::move(out), {a}, [&t, a] {
        return [&t, a](const Matrix& g, const Matrix& y) {
            if (Matrix* ga = t.grad_sink(a)) detail::softmax_backward(*ga, y, g);
        };
    });
}

/// Softmax over the entries of an r×1 column within each segment.
inline Var segment_softmax(Var a, std::span<const int> segments) {
    Tape& t = detail::tape_of("segment_softmax", a);
    const Matrix& av = a.value();
    if (av.cols() != 1 || static_cast<Index>(segments.size()) != av.rows())
        throw ShapeError("segment_softmax: expected a column with one segment id per row, got " + shape_str(av) +
                         " and " + std::to_string(segments.size()) + " ids");
    std::vector<int> seg(segments.begin(), segments.end());
    int nseg = seg.empty() ? 0 : *std::max_element(seg.begin(), seg.end()) + 1;
    std::vector<double> mx(static_cast<std::size_t>(nseg), -std::numeric_limits<double>::infinity());
    std::vector<double> total(static_cast<std::size_t>(nseg), 0.0);
    for (Index i = 0; i < av.rows(); ++i) mx[seg[i]] = std::max(mx[seg[i]], av(i, 0));
    Matrix out(av.rows(), 1);
    for (Index i = 0; i < av.rows(); ++i) total[seg[i]] += out(i, 0) = std::exp(av(i, 0) - mx[seg[i]]);
    for (Index i = 0; i < av.rows(); ++i) out(i, 0) /= total[seg[i]];
    return t.record("segment_softmax", std::move(out), {a}, [&t, a, seg = std::move(seg), nseg] {
        return [&t, a, seg, nseg](const Matrix& g, const Matrix& y) {
            Matrix* ga = t.grad_sink(a);
            if (!ga) return;
            std::vector<double> dot(static_cast<std::size_t>(nseg), 0.0);
            for (Index i = 0; i < y.rows(); ++i) dot[seg[i]] += g(i, 0) * y(i, 0);
            for (Index i = 0; i < y.rows(); ++i) (*ga)(i, 0) += y(i, 0) * (g(i, 0) - dot[seg[i]]);
        };
    });
}

/// Elementwise max over the rows of each segment; empty segments give zero rows.
inline Var segment_max(Var a, std::span<const int> segments, Index num_segments) {
    Tape& t = detail::tape_of("segment_max", a);
    const Matrix& av = a.value();
    if (static_cast<Index>(segments.size()) != av.rows())
        throw ShapeError("segment_max: " + std::to_string(segments.size()) + " segment ids for " + shape_str(av));
    Matrix out = Matrix::Zero(num_segments, av.cols());
    std::vector<Index> arg(static_cast<std::size_t>(num_segments * av.cols()), -1);
    for (Index i = 0; i < av.rows(); ++i) {
        Index s = segments[i];
        if (s < 0 || s >= num_segments) throw ShapeError("segment_max: segment id out of range");
        for (Index c = 0; c < av.cols(); ++c) {
            Index& k = arg[s * av.cols() + c];
            if (k < 0 || av(i, c) > out(s, c)) {
                k = i;
                out(s, c) = av(i, c);
            }
        }
    }
    return t.record("segment_max", std::move(out), {a}, [&t, a, arg = std::move(arg)] {
        return [&t, a, arg](const Matrix& g, const Matrix&) {
            Matrix* ga = t.grad_sink(a);
            if (!ga) return;
            for (Index s = 0; s < g.rows(); ++s)
                for (Index c = 0; c < g.cols(); ++c)
                    if (Index k = arg[s * g.cols() + c]; k >= 0) (*ga)(k, c) += g(s, c);
        };
    });
}

inline Var leaky_relu(Var a, double slope) {
    Tape& t = detail::tape_of("leaky_relu", a);
    Matrix out = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
    return t.record("leaky_relu", std::move(out), {a}, [&t, a, slope] {
        return [&t, a, slope](const Matrix& g, const Matrix&) {
            if (Matrix* ga = t.grad_sink(a))
                *ga += g.binaryExpr(a.value(), [slope](double gi, double x) { return x > 0.0 ? gi : slope * gi; });
        };
    });
}

inline Var tanh(Var a) {
    Tape& t = detail::tape_of("tanh", a);
    Matrix out = a.value().array().tanh().matrix();
    return t.record("tanh", std::move(out), {a}, [&t, a] {
        return [&t, a](const Matrix& g, const Matrix& y) {
            if (Matrix* ga = t.grad_sink(a)) ga->array() += g.array() * (1.0 - y.array().square());
        };
    });
}

inline Var sigmoid(Var a) {
    Tape& t = detail::tape_of("sigmoid", a);
    Matrix out = a.value().unaryExpr([](double x) { return detail::stable_sigmoid(x); });
    return t.record("sigmoid", std::move(out), {a}, [&t, a] {
        return [&t, a](const Matrix& g, const Matrix& y) {
            if (Matrix* ga = t.grad_sink(a)) ga->array() += g.array() * y.array() * (1.0 - y.array());
        };
    });
}

/// a ⊙ mask. The mask comes from the caller (already scaled by 1/(1-p)),
/// so the op itself is deterministic.
inline Var dropout(Var a, const Matrix& mask) {
    Tape& t = detail::tape_of("dropout", a);
    detail::require_same_shape("dropout", a.value(), mask);
    Matrix out = a.value().cwiseProduct(mask);
    return t.record("dropout", std::move(out), {a}, [&t, a, mask] {
        return [&t, a, mask](const Matrix& g, const Matrix&) {
            if (Matrix* ga = t.grad_sink(a)) *ga += g.cwiseProduct(mask);
        };
    });
}

/// Inverted-dropout mask: each entry is 0 with probability p, else 1/(1-p).
template <class Engine>
Matrix dropout_mask(Index rows, Index cols, double p, Engine& rng) {
    if (p <= 0.0) return Matrix::Ones(rows, cols);
    if (p >= 1.0) return Matrix::Zero(rows, cols);
    std::bernoulli_distribution keep(1.0 - p);
    double s = 1.0 / (1.0 - p);
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = keep(rng) ? s : 0.0;
    return m;
}

/// Mean softmax cross-entropy of logits (B×C) against integer labels, 1×1.
inline Var cross_entropy_logits(Var logits, std::span<const int> labels) {
    Tape& t = detail::tape_of("cross_entropy_logits", logits);
    const Matrix& z = logits.value();
    if (z.rows() != static_cast<Index>(labels.size()) || z.rows() == 0)
        throw ShapeError("cross_entropy_logits: " + std::to_string(labels.size()) + " labels for logits " + shape_str(z));
    Matrix prob(z.rows(), z.cols());
    double total = 0.0;
    for (Index i = 0; i < z.rows(); ++i) {
        int y = labels[i];
        if (y < 0 || y >= z.cols())
            throw ShapeError("cross_entropy_logits: label " + std::to_string(y) + " out of range for " + shape_str(z));
        double mx = z.row(i).maxCoeff();
        prob.row(i) = (z.row(i).array() - mx).exp().matrix();
        double s = prob.row(i).sum();
        prob.row(i) /= s;
        total += -(z(i, y) - mx - std::log(s));
    }
    Matrix out(1, 1);
    out(0, 0) = total / static_cast<double>(z.rows());
    std::vector<int> ys(labels.begin(), labels.end());
    return t.record("cross_entropy_logits", std::move(out), {logits}, [&t, logits, prob = std::move(prob), ys = std::move(ys)] {
        return [&t, logits, prob, ys](const Matrix& g, const Matrix&) {
            Matrix* gz = t.grad_sink(logits);
            if (!gz) return;
            double w = g(0, 0) / static_cast<double>(prob.rows());
            Matrix d = prob;
            for (Index i = 0; i < d.rows(); ++i) d(i, ys[i]) -= 1.0;
            *gz += w * d;
        };
    });
}

/// Squared Frobenius norm, 1×1.
inline Var l2_squared(Var a) {
    Tape& t = detail::tape_of("l2_squared", a);
    Matrix out(1, 1);
    out(0, 0) = a.value().squaredNorm();
    return t.record("l2_squared", std::move(out), {a}, [&t, a] {
        return [&t, a](const Matrix& g, const Matrix&) {
            if (Matrix* ga = t.grad_sink(a)) *ga += (2.0 * g(0, 0)) * a.value();
        };
    });
}

} // namespace kcd::ad
