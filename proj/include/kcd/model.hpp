#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kcd/hin.hpp"
#include "kcd/infusion.hpp"
#include "kcd/io.hpp"
#include "kcd/ops.hpp"

namespace kcd {

/// Graph-level pooling: paragraph (PA), cue (CA) or global (GA) average.
enum class Readout { Paragraph, Cue, Global };

inline const char* to_string(Readout r) {
    switch (r) {
    case Readout::Paragraph: return "PA";
    case Readout::Cue: return "CA";
    case Readout::Global: return "GA";
    }
    return "?";
}

inline Readout parse_readout(const std::string& s) {
    if (s == "PA" || s == "pa") return Readout::Paragraph;
    if (s == "CA" || s == "ca") return Readout::Cue;
    if (s == "GA" || s == "ga") return Readout::Global;
    throw ConfigError("unknown readout '" + s + "' (expected PA, CA or GA)");
}

/// Each HIN relation is used in both directions inside the model.
inline constexpr int kInternalRelations = 2 * kRelationCount;

struct ModelConfig {
    int input_dim = 768;
    int hidden_dim = 512;
    int layers = 2;
    int heads = 8;
    int num_classes = 2;
    double dropout = 0.6;
    double leaky_slope = 0.01;
    WalkAggregation walk_aggregation = WalkAggregation::Attention;
    Readout readout = Readout::Paragraph;
};

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"input_dim", c.input_dim},     {"hidden_dim", c.hidden_dim}, {"layers", c.layers},
            {"heads", c.heads},             {"num_classes", c.num_classes}, {"dropout", c.dropout},
            {"leaky_slope", c.leaky_slope}, {"walk_aggregation", to_string(c.walk_aggregation)},
            {"readout", to_string(c.readout)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.input_dim = j.value("input_dim", c.input_dim);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.dropout = j.value("dropout", c.dropout);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.walk_aggregation = parse_walk_aggregation(j.value("walk_aggregation", std::string("attention")));
    c.readout = parse_readout(j.value("readout", std::string("PA")));
    return c;
}

/// One gated relational layer:
///   u_v = h_v W_0 + Σ_ρ mean_{u ∈ N_ρ(v)} h_u W_ρ
///   z_v = σ(u_v W_z + h_v U_z + b_z)
///   h'_v = z_v ⊙ tanh(u_v) + (1 − z_v) ⊙ h_v P
/// where P is a learned map when the width changes and the identity otherwise.
struct GatedLayerParams {
    std::vector<Parameter> relation;
    Parameter self;
    Parameter gate_candidate;
    Parameter gate_state;
    Parameter gate_bias;
    std::optional<Parameter> skip;

    Index in_dim() const { return self.rows(); }
    Index out_dim() const { return self.cols(); }
};

struct ModelState {
    ModelConfig config;
    InfusionParams infusion;
    Parameter sentiment_slots;
    Parameter tense_slots;
    Parameter quotation_slots;
    std::vector<GatedLayerParams> layers;
    Parameter out_weight;
    Parameter out_bias;

    /// Every learnable tensor, in a fixed order.
    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out = kcd::parameters(infusion);
        out.insert(out.end(), {&sentiment_slots, &tense_slots, &quotation_slots});
        for (auto& l : layers) {
            for (auto& r : l.relation) out.push_back(&r);
            out.insert(out.end(), {&l.self, &l.gate_candidate, &l.gate_state, &l.gate_bias});
            if (l.skip) out.push_back(&*l.skip);
        }
        out.insert(out.end(), {&out_weight, &out_bias});
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto* p : parameters()) n += static_cast<std::size_t>(p->size());
        return n;
    }

    void zero_grad() {
        for (auto* p : parameters()) p->zero_grad();
    }
};

inline void validate(const ModelConfig& c) {
    if (c.input_dim < 1 || c.hidden_dim < 1 || c.layers < 0 || c.num_classes < 2)
        throw ConfigError("model: dimensions must be positive and at least 2 classes are required");
    if (c.heads < 1 || c.input_dim % c.heads != 0)
        throw ConfigError("model: attention heads (" + std::to_string(c.heads) + ") must divide the input dimension (" +
                          std::to_string(c.input_dim) + ")");
    if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("model: dropout must lie in [0, 1)");
}

inline ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
    validate(config);
    Rng rng(derive_seed(seed, "model-init"));
    ModelState m;
    m.config = config;
    const int d = config.input_dim;
    m.infusion = init_infusion(d, config.heads, config.leaky_slope, rng);
    std::normal_distribution<double> slot_init(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    auto slots = [&](const char* name, int n) {
        Matrix v(n, d);
        for (Index i = 0; i < v.size(); ++i) v.data()[i] = slot_init(rng);
        return Parameter(name, std::move(v));
    };
    m.sentiment_slots = slots("cue.sentiment", kSentimentSlots);
    m.tense_slots = slots("cue.tense", kTenseCount);
    m.quotation_slots = slots("cue.quotation", kQuotationSlots);
    Index in = d;
    for (int l = 0; l < config.layers; ++l) {
        const Index out = config.hidden_dim;
        const std::string prefix = "gnn" + std::to_string(l) + ".";
        GatedLayerParams layer;
        for (int r = 0; r < kInternalRelations; ++r)
            layer.relation.emplace_back(prefix + "relation" + std::to_string(r), detail::glorot(in, out, rng));
        layer.self = Parameter(prefix + "self", detail::glorot(in, out, rng));
        layer.gate_candidate = Parameter(prefix + "gate_candidate", detail::glorot(out, out, rng));
        layer.gate_state = Parameter(prefix + "gate_state", detail::glorot(in, out, rng));
        layer.gate_bias = Parameter(prefix + "gate_bias", Matrix::Zero(1, out));
        if (in != out) layer.skip = Parameter(prefix + "skip", detail::glorot(in, out, rng));
        m.layers.push_back(std::move(layer));
        in = out;
    }
    m.out_weight = Parameter("classifier.weight", detail::glorot(in, config.num_classes, rng));
    m.out_bias = Parameter("classifier.bias", Matrix::Zero(1, config.num_classes));
    return m;
}

inline std::vector<Matrix> snapshot(ModelState& m) {
    std::vector<Matrix> out;
    for (auto* p : m.parameters()) out.push_back(p->value);
    return out;
}

inline void restore(ModelState& m, const std::vector<Matrix>& values) {
    auto params = m.parameters();
    if (params.size() != values.size()) throw Error("restore: snapshot does not match model");
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

// ---------------------------------------------------------------------------
// Inputs and batching

/// Everything the model needs for one document besides parameters.
struct DocumentInputs {
    HinGraph graph;
    /// One encoder embedding per paragraph (n×d).
    Matrix paragraphs;
    /// Walk-sentence embeddings (m×d); `walk_owner[j]` is walk j's paragraph.
    Matrix walks;
    std::vector<int> walk_owner;
};

/// Lookup tables for non-learnable cue node features.
struct FeatureTables {
    const EmbeddingMatrix* topics = nullptr;
    const EmbeddingMatrix* entities = nullptr;
};

/// Mean aggregation for one internal relation, restricted to receiving nodes.
struct RelationBlock {
    /// R×N: row k averages the neighbours of receiving node k.
    SparseMatrix gather;
    /// N×R: places row k back at its node.
    SparseMatrix scatter;

    Index receivers() const { return gather.rows(); }
};

/// Disjoint union of several document graphs.
struct GraphBatch {
    Index graphs = 0;
    Index nodes = 0;
    Matrix paragraphs;
    Matrix walks;
    std::vector<int> walk_owner;
    std::vector<int> paragraph_doc;
    SparseMatrix place_paragraphs;
    SparseMatrix sentiment_select;
    SparseMatrix tense_select;
    SparseMatrix quotation_select;
    Matrix constant_features;
    std::vector<RelationBlock> relations;
    std::vector<int> node_graph;
    std::vector<bool> node_is_paragraph;
    std::vector<int> labels;
};

namespace detail {

inline SparseMatrix sparse(Index rows, Index cols, const std::vector<Eigen::Triplet<double>>& t) {
    SparseMatrix s(rows, cols);
    s.setFromTriplets(t.begin(), t.end());
    return s;
}

} // namespace detail

inline GraphBatch make_batch(std::span<const DocumentInputs* const> docs, const FeatureTables& tables) {
    if (docs.empty()) throw ValidationError("make_batch: empty batch");
    GraphBatch b;
    b.graphs = static_cast<Index>(docs.size());
    const Index d = docs.front()->paragraphs.cols();
    Index P = 0, M = 0;
    for (const auto* doc : docs) {
        if (doc->paragraphs.cols() != d || (doc->walks.rows() > 0 && doc->walks.cols() != d))
            throw ShapeError("make_batch: document '" + doc->graph.doc_id + "' has embedding dimension mismatch");
        if (static_cast<Index>(doc->walk_owner.size()) != doc->walks.rows())
            throw ShapeError("make_batch: walk owner list does not match walk rows");
        P += doc->paragraphs.rows();
        M += doc->walks.rows();
        b.nodes += static_cast<Index>(doc->graph.nodes.size());
    }
    b.paragraphs.resize(P, d);
    b.walks.resize(M, d);
    b.constant_features = Matrix::Zero(b.nodes, d);
    std::vector<Eigen::Triplet<double>> place, sent, tense, quote;
    std::vector<std::vector<std::vector<int>>> nbrs(kInternalRelations, std::vector<std::vector<int>>(static_cast<std::size_t>(b.nodes)));

    Index p0 = 0, m0 = 0, n0 = 0;
    for (std::size_t gi = 0; gi < docs.size(); ++gi) {
        const DocumentInputs& doc = *docs[gi];
        const HinGraph& g = doc.graph;
        const Index n = doc.paragraphs.rows();
        b.paragraphs.middleRows(p0, n) = doc.paragraphs;
        if (doc.walks.rows() > 0) b.walks.middleRows(m0, doc.walks.rows()) = doc.walks;
        for (int o : doc.walk_owner) {
            if (o < 0 || o >= n) throw ShapeError("make_batch: walk owner out of range");
            b.walk_owner.push_back(static_cast<int>(p0 + o));
        }
        for (Index i = 0; i < n; ++i) b.paragraph_doc.push_back(static_cast<int>(gi));
        for (std::size_t k = 0; k < g.nodes.size(); ++k) {
            const HinNode& node = g.nodes[k];
            const int row = static_cast<int>(n0 + static_cast<Index>(k));
            b.node_graph.push_back(static_cast<int>(gi));
            b.node_is_paragraph.push_back(node.type == NodeType::Paragraph);
            const auto& f = node.feature;
            switch (f.kind) {
            case FeatureSource::Kind::InfusedParagraph:
                if (f.index < 0 || f.index >= n) throw ValidationError("graph '" + g.doc_id + "': paragraph index out of range");
                place.emplace_back(row, static_cast<int>(p0 + f.index), 1.0);
                break;
            case FeatureSource::Kind::TopicEmbedding:
                if (!tables.topics) throw ValidationError("make_batch: no topic embedding table");
                b.constant_features.row(row) = tables.topics->row(f.key);
                break;
            case FeatureSource::Kind::EntityEmbedding:
                if (!tables.entities) throw ValidationError("make_batch: no entity embedding table");
                b.constant_features.row(row) = tables.entities->row(f.key);
                break;
            case FeatureSource::Kind::SharedSlot:
                if (node.type == NodeType::Sentiment)
                    sent.emplace_back(row, f.index, 1.0);
                else if (node.type == NodeType::Tense)
                    tense.emplace_back(row, f.index, 1.0);
                else if (node.type == NodeType::Quotation)
                    quote.emplace_back(row, f.index, 1.0);
                else
                    throw ValidationError("graph '" + g.doc_id + "': shared slot on a " + to_string(node.type) + " node");
                break;
            }
        }
        for (const HinEdge& e : g.edges) {
            const int r = static_cast<int>(e.relation);
            const int src = static_cast<int>(n0 + e.src), dst = static_cast<int>(n0 + e.dst);
            nbrs[2 * r][dst].push_back(src);
            nbrs[2 * r + 1][src].push_back(dst);
        }
        b.labels.push_back(g.label);
        p0 += n;
        m0 += doc.walks.rows();
        n0 += static_cast<Index>(g.nodes.size());
    }
    if (tables.topics && tables.topics->dim() != d) throw ShapeError("make_batch: topic embedding dimension mismatch");
    if (tables.entities && tables.entities->dim() != d) throw ShapeError("make_batch: entity embedding dimension mismatch");

    b.place_paragraphs = detail::sparse(b.nodes, P, place);
    b.sentiment_select = detail::sparse(b.nodes, kSentimentSlots, sent);
    b.tense_select = detail::sparse(b.nodes, kTenseCount, tense);
    b.quotation_select = detail::sparse(b.nodes, kQuotationSlots, quote);
    for (int r = 0; r < kInternalRelations; ++r) {
        std::vector<Eigen::Triplet<double>> gather, scatter;
        int k = 0;
        for (Index v = 0; v < b.nodes; ++v) {
            const auto& list = nbrs[r][v];
            if (list.empty()) continue;
            for (int u : list) gather.emplace_back(k, u, 1.0 / static_cast<double>(list.size()));
            scatter.emplace_back(static_cast<int>(v), k, 1.0);
            ++k;
        }
        b.relations.push_back({detail::sparse(k, b.nodes, gather), detail::sparse(b.nodes, k, scatter)});
    }
    return b;
}

// ---------------------------------------------------------------------------
// Forward pass

/// Initial node features: infused paragraph vectors for V1, shared learnable
/// slots for sentiment/tense/quotation, fixed embeddings for topics/entities.
inline ad::Var node_features(ad::Tape& t, ModelState& m, const GraphBatch& b, ad::Var infused_paragraphs) {
    ad::Var x = ad::add(ad::spmm(b.place_paragraphs, infused_paragraphs), t.constant(b.constant_features));
    if (b.sentiment_select.nonZeros() > 0) x = ad::add(x, ad::spmm(b.sentiment_select, t.param(m.sentiment_slots)));
    if (b.tense_select.nonZeros() > 0) x = ad::add(x, ad::spmm(b.tense_select, t.param(m.tense_slots)));
    if (b.quotation_select.nonZeros() > 0) x = ad::add(x, ad::spmm(b.quotation_select, t.param(m.quotation_slots)));
    return x;
}

inline ad::Var grgcn_layer(ad::Tape& t, std::span<const RelationBlock> relations, ad::Var h, GatedLayerParams& p,
                           const Matrix* dropout_mask = nullptr) {
    if (h.cols() != p.in_dim())
        throw ShapeError("grgcn_layer: node features have dimension " + std::to_string(h.cols()) + ", layer expects " +
                         std::to_string(p.in_dim()));
    if (relations.size() != p.relation.size()) throw ShapeError("grgcn_layer: relation count mismatch");
    ad::Var u = ad::matmul(h, t.param(p.self));
    for (std::size_t r = 0; r < relations.size(); ++r) {
        const RelationBlock& block = relations[r];
        if (block.receivers() == 0) continue;
        if (block.gather.cols() != h.rows()) throw ShapeError("grgcn_layer: relation block does not match node count");
        ad::Var msg = ad::matmul(ad::spmm(block.gather, h), t.param(p.relation[r]));
        u = ad::add(u, ad::spmm(block.scatter, msg));
    }
    ad::Var z = ad::sigmoid(
        ad::add_row(ad::add(ad::matmul(u, t.param(p.gate_candidate)), ad::matmul(h, t.param(p.gate_state))), t.param(p.gate_bias)));
    ad::Var carried = p.skip ? ad::matmul(h, t.param(*p.skip)) : h;
    ad::Var out = ad::add(ad::mul(z, ad::tanh(u)), ad::sub(carried, ad::mul(z, carried)));
    if (dropout_mask) out = ad::dropout(out, *dropout_mask);
    return out;
}

/// Graph-level vectors (graphs × width) averaged over the readout's node set.
inline ad::Var readout(const GraphBatch& b, ad::Var h, Readout mode) {
    std::vector<int> count(static_cast<std::size_t>(b.graphs), 0);
    auto included = [&](Index v) {
        switch (mode) {
        case Readout::Paragraph: return bool(b.node_is_paragraph[v]);
        case Readout::Cue: return !b.node_is_paragraph[v];
        case Readout::Global: return true;
        }
        return false;
    };
    for (Index v = 0; v < b.nodes; ++v)
        if (included(v)) ++count[b.node_graph[v]];
    for (Index g = 0; g < b.graphs; ++g)
        if (count[g] == 0)
            throw ValidationError(std::string("readout ") + to_string(mode) + ": graph " + std::to_string(g) +
                                  " has no nodes in the readout set" +
                                  (mode == Readout::Cue ? "; use PA or GA for graphs without cue nodes" : ""));
    std::vector<Eigen::Triplet<double>> trips;
    for (Index v = 0; v < b.nodes; ++v)
        if (included(v)) trips.emplace_back(b.node_graph[v], static_cast<int>(v), 1.0 / count[b.node_graph[v]]);
    return ad::spmm(detail::sparse(b.graphs, b.nodes, trips), h);
}

/// Class logits W_o·v_g + b_o; apply row softmax for probabilities.
inline ad::Var classify(ad::Var graph_vectors, Parameter& weight, Parameter& bias) {
    ad::Tape& t = *graph_vectors.tape();
    return ad::add_row(ad::matmul(graph_vectors, t.param(weight)), t.param(bias));
}

/// Mean cross-entropy plus λ·Σ‖θ‖² over `params`.
inline ad::Var loss(ad::Var logits, std::span<const int> labels, double lambda, std::span<Parameter* const> params) {
    ad::Tape& t = *logits.tape();
    ad::Var total = ad::cross_entropy_logits(logits, labels);
    if (lambda != 0.0 && !params.empty()) {
        std::vector<ad::Var> norms;
        for (Parameter* p : params) norms.push_back(ad::l2_squared(t.param(*p)));
        ad::Var reg = ad::sum(ad::concat_rows(norms));
        total = ad::add(total, ad::scale(reg, lambda));
    }
    return total;
}

struct ForwardOptions {
    bool training = false;
    /// Source of dropout masks; required when training with dropout > 0.
    Rng* rng = nullptr;
    /// Stop after this many gated layers (defaults to all).
    std::optional<int> layer_limit;
};

struct ForwardOutput {
    ad::Var knowledge;
    ad::Var infused;
    ad::Var node_features;
    ad::Var node_states;
    ad::Var graph_vectors;
    ad::Var logits;
    std::vector<bool> no_walks;
};

inline ForwardOutput forward(ad::Tape& t, ModelState& m, const GraphBatch& b, const ForwardOptions& opt = {}) {
    const ModelConfig& c = m.config;
    if (b.paragraphs.cols() != c.input_dim)
        throw ShapeError("forward: embeddings have dimension " + std::to_string(b.paragraphs.cols()) + ", model expects " +
                         std::to_string(c.input_dim));
    ForwardOutput out;
    ad::Var paragraphs = t.constant(b.paragraphs);
    ad::Var walks = t.constant(b.walks);
    const Index P = b.paragraphs.rows();
    WalkSummary summary = c.walk_aggregation == WalkAggregation::Attention
                              ? aggregate_walks(paragraphs, walks, b.walk_owner, m.infusion.walk)
                              : pool_walks(walks, b.walk_owner, P, c.walk_aggregation, c.input_dim);
    out.knowledge = summary.knowledge;
    out.no_walks = std::move(summary.no_walks);
    InfusedParagraphs infused = infuse(paragraphs, out.knowledge, b.paragraph_doc, m.infusion.attention);
    out.infused = infused.paragraphs;
    ad::Var h = node_features(t, m, b, infused.paragraphs);
    out.node_features = h;
    const bool use_dropout = opt.training && c.dropout > 0.0;
    if (use_dropout && !opt.rng) throw ConfigError("forward: training with dropout needs a random generator");
    const int layers = opt.layer_limit ? std::min(*opt.layer_limit, c.layers) : c.layers;
    for (int l = 0; l < layers; ++l) {
        GatedLayerParams& p = m.layers[static_cast<std::size_t>(l)];
        std::optional<Matrix> mask;
        if (use_dropout) mask = ad::dropout_mask(b.nodes, p.out_dim(), c.dropout, *opt.rng);
        h = grgcn_layer(t, b.relations, h, p, mask ? &*mask : nullptr);
    }
    out.node_states = h;
    out.graph_vectors = readout(b, h, c.readout);
    out.logits = classify(out.graph_vectors, m.out_weight, m.out_bias);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kCheckpointMagic = "kcd-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Header line, config line, then one section per parameter:
/// `[name]`, `rows cols`, and rows as `index v1 ... vcols`.
inline void save_checkpoint(const std::string& path, ModelState& m) {
    auto out = text::open_output(path);
    auto params = m.parameters();
    out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
    out << "config " << to_json(m.config).dump() << '\n';
    out << "parameters " << params.size() << '\n';
    for (Parameter* p : params) {
        out << '[' << p->name << "]\n" << p->rows() << ' ' << p->cols() << '\n';
        for (Index i = 0; i < p->rows(); ++i) {
            out << i;
            for (Index j = 0; j < p->cols(); ++j) out << ' ' << text::format_double(p->value(i, j));
            out << '\n';
        }
    }
}

inline ModelState load_checkpoint(const std::string& path) {
    auto in = text::open_input(path);
    std::string line;
    std::size_t lineno = 0;
    auto next = [&]() {
        if (!std::getline(in, line)) throw FormatError(path, lineno + 1, "unexpected end of checkpoint");
        ++lineno;
        return std::string(text::chomp(line));
    };
    std::string header = next();
    if (header != std::string(kCheckpointMagic) + " " + std::to_string(kCheckpointVersion))
        throw FormatError(path, lineno, "not a version " + std::to_string(kCheckpointVersion) + " checkpoint");
    std::string cfg = next();
    if (cfg.rfind("config ", 0) != 0) throw FormatError(path, lineno, "missing config line");
    ModelConfig config;
    try {
        config = model_config_from_json(nlohmann::json::parse(cfg.substr(7)));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path, lineno, std::string("invalid config: ") + e.what());
    }
    ModelState m = init_model(config, 0);
    auto params = m.parameters();
    std::string count_line = next();
    if (count_line != "parameters " + std::to_string(params.size()))
        throw FormatError(path, lineno, "parameter count does not match the configured model");
    for (Parameter* p : params) {
        if (next() != "[" + p->name + "]") throw FormatError(path, lineno, "expected section [" + p->name + "]");
        std::string dims_line = next();
        auto dims = text::split_ws(dims_line);
        long r = 0, c = 0;
        if (dims.size() != 2 || !text::parse_int(dims[0], r) || !text::parse_int(dims[1], c) || r != p->rows() || c != p->cols())
            throw FormatError(path, lineno, "shape of " + p->name + " must be " + shape_str(p->value));
        for (Index i = 0; i < p->rows(); ++i) {
            std::string row = next();
            auto fields = text::split_ws(row);
            if (static_cast<Index>(fields.size()) != p->cols() + 1) throw FormatError(path, lineno, "row has wrong length");
            for (Index j = 0; j < p->cols(); ++j)
                if (!text::parse_double(fields[j + 1], p->value(i, j)) || !std::isfinite(p->value(i, j)))
                    throw FormatError(path, lineno, "invalid number");
        }
    }
    return m;
}

} // namespace kcd
