#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "kcd/ops.hpp"
#include "kcd/random.hpp"

namespace kcd {

/// Semantic-guided walk selection: α = LeakyReLU(v_s·W + b).
struct WalkAttentionParams {
    Parameter weight;
    Parameter bias;
    double slope = 0.01;
};

/// Multi-head self-attention with input/output projections.
struct MultiHeadParams {
    Parameter wq, bq, wk, bk, wv, bv, wo, bo;
    int heads = 1;
};

struct InfusionParams {
    WalkAttentionParams walk;
    MultiHeadParams attention;
};

enum class WalkAggregation { Attention, MaxPool, AvgPool };

inline const char* to_string(WalkAggregation a) {
    switch (a) {
    case WalkAggregation::Attention: return "attention";
    case WalkAggregation::MaxPool: return "max";
    case WalkAggregation::AvgPool: return "avg";
    }
    return "?";
}

inline WalkAggregation parse_walk_aggregation(const std::string& s) {
    if (s == "attention" || s == "attn") return WalkAggregation::Attention;
    if (s == "max" || s == "mp") return WalkAggregation::MaxPool;
    if (s == "avg" || s == "ap") return WalkAggregation::AvgPool;
    throw ConfigError("unknown walk aggregation '" + s + "' (expected attention, max or avg)");
}

namespace detail {

inline Matrix glorot(Index rows, Index cols, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

} // namespace detail

inline InfusionParams init_infusion(int dim, int heads, double slope, Rng& rng) {
    if (heads < 1 || dim % heads != 0)
        throw ConfigError("attention heads (" + std::to_string(heads) + ") must divide the embedding dimension (" +
                          std::to_string(dim) + ")");
    InfusionParams p;
    p.walk.weight = Parameter("walk_attention.weight", detail::glorot(dim, dim, rng));
    p.walk.bias = Parameter("walk_attention.bias", Matrix::Zero(1, dim));
    p.walk.slope = slope;
    auto& a = p.attention;
    a.heads = heads;
    a.wq = Parameter("infusion.wq", detail::glorot(dim, dim, rng));
    a.wk = Parameter("infusion.wk", detail::glorot(dim, dim, rng));
    a.wv = Parameter("infusion.wv", detail::glorot(dim, dim, rng));
    a.wo = Parameter("infusion.wo", detail::glorot(dim, dim, rng));
    a.bq = Parameter("infusion.bq", Matrix::Zero(1, dim));
    a.bk = Parameter("infusion.bk", Matrix::Zero(1, dim));
    a.bv = Parameter("infusion.bv", Matrix::Zero(1, dim));
    a.bo = Parameter("infusion.bo", Matrix::Zero(1, dim));
    return p;
}

inline std::vector<Parameter*> parameters(InfusionParams& p) {
    auto& a = p.attention;
    return {&p.walk.weight, &p.walk.bias, &a.wq, &a.bq, &a.wk, &a.bk, &a.wv, &a.bv, &a.wo, &a.bo};
}

/// Aggregated knowledge vectors, one row per paragraph.
struct WalkSummary {
    ad::Var knowledge;
    /// True for paragraphs without walks; their row is zero.
    std::vector<bool> no_walks;
};

namespace detail {

inline void check_owners(std::span<const int> owner, Index walks, Index paragraphs, const char* op) {
    if (static_cast<Index>(owner.size()) != walks)
        throw ShapeError(std::string(op) + ": " + std::to_string(owner.size()) + " owners for " + std::to_string(walks) + " walks");
    for (int o : owner)
        if (o < 0 || o >= paragraphs) throw ShapeError(std::string(op) + ": walk owner out of range");
}

inline SparseMatrix owner_matrix(std::span<const int> owner, Index paragraphs, bool average) {
    std::vector<int> count(static_cast<std::size_t>(paragraphs), 0);
    for (int o : owner) ++count[o];
    std::vector<Eigen::Triplet<double>> trips;
    for (std::size_t j = 0; j < owner.size(); ++j)
        trips.emplace_back(owner[j], static_cast<int>(j), average ? 1.0 / count[owner[j]] : 1.0);
    SparseMatrix s(paragraphs, static_cast<Index>(owner.size()));
    s.setFromTriplets(trips.begin(), trips.end());
    return s;
}

inline std::vector<bool> empty_paragraphs(std::span<const int> owner, Index paragraphs) {
    std::vector<bool> empty(static_cast<std::size_t>(paragraphs), true);
    for (int o : owner) empty[o] = false;
    return empty;
}

} // namespace detail

/// Semantic-guided walk aggregation for a batch of paragraphs.
///
/// For paragraph i with walks w_1..w_m: α_i = LeakyReLU(v_i W + b),
/// weights = softmax_j(α_i · w_j), v_p = Σ_j weight_j w_j.
/// `walk_owner[j]` names the paragraph (row of `paragraphs`) of walk j.
inline WalkSummary aggregate_walks(ad::Var paragraphs, ad::Var walks, std::span<const int> walk_owner,
                                   WalkAttentionParams& params) {
    ad::Tape& t = *paragraphs.tape();
    const Index n = paragraphs.rows();
    if (walks.rows() > 0 && walks.cols() != paragraphs.cols())
        throw ShapeError("aggregate_walks: walk dimension " + std::to_string(walks.cols()) + " vs paragraph dimension " +
                         std::to_string(paragraphs.cols()));
    detail::check_owners(walk_owner, walks.rows(), n, "aggregate_walks");
    WalkSummary out{{}, detail::empty_paragraphs(walk_owner, n)};
    if (walks.rows() == 0) {
        out.knowledge = t.constant(Matrix::Zero(n, paragraphs.cols()));
        return out;
    }
    ad::Var alpha = ad::leaky_relu(ad::add_row(ad::matmul(paragraphs, t.param(params.weight)), t.param(params.bias)), params.slope);
    ad::Var alpha_per_walk = ad::spmm(detail::owner_matrix(walk_owner, n, false).transpose(), alpha);
    ad::Var logits = ad::row_sum(ad::mul(alpha_per_walk, walks));
    ad::Var weights = ad::segment_softmax(logits, walk_owner);
    out.knowledge = ad::spmm(detail::owner_matrix(walk_owner, n, false), ad::scale_rows(walks, weights));
    return out;
}

/// Elementwise max or mean over each paragraph's walks.
inline WalkSummary pool_walks(ad::Var walks, std::span<const int> walk_owner, Index paragraphs, WalkAggregation mode, Index dim) {
    ad::Tape& t = *walks.tape();
    detail::check_owners(walk_owner, walks.rows(), paragraphs, "pool_walks");
    WalkSummary out{{}, detail::empty_paragraphs(walk_owner, paragraphs)};
    if (walks.rows() == 0) {
        out.knowledge = t.constant(Matrix::Zero(paragraphs, dim));
        return out;
    }
    switch (mode) {
    case WalkAggregation::MaxPool: out.knowledge = ad::segment_max(walks, walk_owner, paragraphs); break;
    case WalkAggregation::AvgPool: out.knowledge = ad::spmm(detail::owner_matrix(walk_owner, paragraphs, true), walks); break;
    case WalkAggregation::Attention: throw ConfigError("pool_walks: attention is not a pooling mode");
    }
    return out;
}

/// Scaled dot-product multi-head self-attention over `sequence` (L×d).
/// Rows only attend to rows with the same `group` id, so several
/// documents can share one call without interacting.
inline ad::Var multi_head_self_attention(ad::Var sequence, std::span<const int> group, MultiHeadParams& p) {
    ad::Tape& t = *sequence.tape();
    const Index d = sequence.cols();
    if (p.heads < 1 || d % p.heads != 0)
        throw ConfigError("attention heads (" + std::to_string(p.heads) + ") must divide dimension " + std::to_string(d));
    const Index dh = d / p.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    ad::Var q = ad::add_row(ad::matmul(sequence, t.param(p.wq)), t.param(p.bq));
    ad::Var k = ad::add_row(ad::matmul(sequence, t.param(p.wk)), t.param(p.bk));
    ad::Var v = ad::add_row(ad::matmul(sequence, t.param(p.wv)), t.param(p.bv));
    std::vector<ad::Var> heads;
    heads.reserve(static_cast<std::size_t>(p.heads));
    for (int h = 0; h < p.heads; ++h) {
        ad::Var qh = ad::col_slice(q, h * dh, dh);
        ad::Var kh = ad::col_slice(k, h * dh, dh);
        ad::Var vh = ad::col_slice(v, h * dh, dh);
        ad::Var attn = ad::row_softmax_grouped(ad::scale(ad::matmul_nt(qh, kh), scale), group);
        heads.push_back(ad::matmul(attn, vh));
    }
    ad::Var joined = p.heads == 1 ? heads.front() : ad::concat_cols(heads);
    return ad::add_row(ad::matmul(joined, t.param(p.wo)), t.param(p.bo));
}

struct InfusedParagraphs {
    /// Knowledge-enriched paragraph vectors, one row per paragraph.
    ad::Var paragraphs;
    /// Infused knowledge vectors, one row per paragraph.
    ad::Var knowledge;
};

/// Document-level knowledge infusion. Paragraph rows of the same document
/// must be contiguous; `paragraph_doc[i]` is the document of row i. Each
/// document is attended as [v1s, v1p, v2s, v2p, ...] and split back.
inline InfusedParagraphs infuse(ad::Var paragraphs, ad::Var knowledge, std::span<const int> paragraph_doc, MultiHeadParams& p) {
    const Index n = paragraphs.rows();
    if (knowledge.rows() != n || knowledge.cols() != paragraphs.cols())
        throw ShapeError("infuse: paragraph matrix " + shape_str(paragraphs.value()) + " vs knowledge matrix " +
                         shape_str(knowledge.value()));
    if (static_cast<Index>(paragraph_doc.size()) != n) throw ShapeError("infuse: one document id per paragraph required");
    if (n == 0) throw ShapeError("infuse: no paragraphs");
    std::vector<Eigen::Triplet<double>> even, odd;
    std::vector<int> group(static_cast<std::size_t>(2 * n));
    for (Index i = 0; i < n; ++i) {
        even.emplace_back(static_cast<int>(2 * i), static_cast<int>(i), 1.0);
        odd.emplace_back(static_cast<int>(2 * i + 1), static_cast<int>(i), 1.0);
        group[2 * i] = group[2 * i + 1] = paragraph_doc[i];
    }
    SparseMatrix place_s(2 * n, n), place_p(2 * n, n);
    place_s.setFromTriplets(even.begin(), even.end());
    place_p.setFromTriplets(odd.begin(), odd.end());
    ad::Var sequence = ad::add(ad::spmm(place_s, paragraphs), ad::spmm(place_p, knowledge));
    ad::Var out = multi_head_self_attention(sequence, group, p);
    SparseMatrix take_s = place_s.transpose();
    SparseMatrix take_p = place_p.transpose();
    return {ad::spmm(take_s, out), ad::spmm(take_p, out)};
}

} // namespace kcd
