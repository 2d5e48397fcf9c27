#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kcd/io.hpp"
#include "kcd/kg.hpp"
#include "kcd/log.hpp"
#include "kcd/random.hpp"

namespace kcd {

/// Alternating entity/relation chain e0 r01 e1 ... eK' sampled from a KG.
struct KnowledgeWalk {
    std::vector<int> entities;
    std::vector<int> relations;
    int paragraph = -1;

    std::size_t hops() const { return relations.size(); }
    friend bool operator==(const KnowledgeWalk&, const KnowledgeWalk&) = default;
};

/// Relation importance p(r), indexed like the KG's relations.
using WalkImportance = std::vector<double>;

inline WalkImportance importance_of(const KnowledgeGraph& kg) { return kg.importances(); }

struct StepOption {
    Edge edge;
    double probability = 0.0;
};

/// Raised when a walk asks for the next step of a sink entity.
class EmptyDistributionError : public Error {
public:
    using Error::Error;
};

/// Softmax over the entity's outgoing edges with logits p(relation).
/// Edges sharing a relation each get the same mass, so a relation with
/// several tails is chosen proportionally more often and its tails uniformly.
inline std::vector<StepOption> step_distribution(const KnowledgeGraph& kg, int entity, const WalkImportance& importance) {
    auto edges = kg.neighbors(entity);
    if (edges.empty()) throw EmptyDistributionError("entity '" + kg.entity_id(entity) + "' has no outgoing edges");
    if (importance.size() != static_cast<std::size_t>(kg.relation_count()))
        throw ValidationError("importance vector has " + std::to_string(importance.size()) + " entries for " +
                              std::to_string(kg.relation_count()) + " relations");
    double mx = -INFINITY;
    for (const Edge& e : edges) mx = std::max(mx, importance[e.relation]);
    std::vector<StepOption> out;
    out.reserve(edges.size());
    double total = 0.0;
    for (const Edge& e : edges) {
        double w = std::exp(importance[e.relation] - mx);
        out.push_back({e, w});
        total += w;
    }
    for (auto& o : out) o.probability /= total;
    return out;
}

namespace detail {

inline Edge sample_edge(const std::vector<StepOption>& dist, Rng& rng) {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0.0;
    for (const auto& o : dist) {
        acc += o.probability;
        if (u < acc) return o.edge;
    }
    return dist.back().edge;
}

} // namespace detail

/// Samples up to `max_hops` steps from `start`; stops early at a sink.
inline KnowledgeWalk generate_walk(const KnowledgeGraph& kg, int start, int max_hops, const WalkImportance& importance,
                                   std::uint64_t seed) {
    if (start < 0 || start >= kg.entity_count()) throw ValidationError("generate_walk: unknown start entity");
    if (max_hops < 1) throw ConfigError("generate_walk: walk length must be >= 1");
    Rng rng(seed);
    KnowledgeWalk walk;
    walk.entities.push_back(start);
    int current = start;
    for (int step = 0; step < max_hops; ++step) {
        if (kg.neighbors(current).empty()) break;
        const Edge e = detail::sample_edge(step_distribution(kg, current, importance), rng);
        walk.relations.push_back(e.relation);
        walk.entities.push_back(e.tail);
        current = e.tail;
    }
    return walk;
}

inline KnowledgeWalk generate_walk(const KnowledgeGraph& kg, std::string_view start, int max_hops,
                                   const WalkImportance& importance, std::uint64_t seed) {
    return generate_walk(kg, kg.entity(start), max_hops, importance, seed);
}

/// `walks_per_entity` walks from each mentioned entity, in mention order.
/// Walk j from entity e is seeded from (seed, e, j) only, so dropping a
/// mention never changes the walks of the others. Unknown mentions are
/// skipped with a warning.
inline std::vector<KnowledgeWalk> generate_walks_for_paragraph(const KnowledgeGraph& kg,
                                                               std::span<const std::string> mentioned_entities,
                                                               int max_hops, int walks_per_entity,
                                                               const WalkImportance& importance, std::uint64_t seed) {
    std::vector<KnowledgeWalk> walks;
    for (const std::string& mention : mentioned_entities) {
        auto start = kg.find_entity(mention);
        if (!start) {
            log::warn("entity '" + mention + "' not in knowledge graph; no walks generated from it");
            continue;
        }
        for (int j = 0; j < walks_per_entity; ++j)
            walks.push_back(generate_walk(kg, *start, max_hops, importance, derive_seed(seed, mention + "#" + std::to_string(j))));
    }
    return walks;
}

/// Descriptions of e0, r01, e1, ... joined by single spaces.
inline std::string walk_to_sentence(const KnowledgeGraph& kg, const KnowledgeWalk& walk) {
    if (walk.entities.size() != walk.relations.size() + 1) throw ValidationError("walk_to_sentence: malformed walk");
    auto piece = [](const std::string& desc, const std::string& id) -> const std::string& {
        if (desc.empty()) throw ValidationError("walk_to_sentence: no description for '" + id + "'");
        return desc;
    };
    std::string out = piece(kg.entity_description(walk.entities[0]), kg.entity_id(walk.entities[0]));
    for (std::size_t i = 0; i < walk.relations.size(); ++i) {
        out += ' ';
        out += piece(kg.relation_description(walk.relations[i]), kg.relation_id(walk.relations[i]));
        out += ' ';
        out += piece(kg.entity_description(walk.entities[i + 1]), kg.entity_id(walk.entities[i + 1]));
    }
    return out;
}

/// Every step is a KG triple and the walk only stops short of `max_hops` at a sink.
inline bool verify_walk(const KnowledgeGraph& kg, const KnowledgeWalk& walk, int max_hops) {
    if (walk.entities.size() != walk.relations.size() + 1 || walk.hops() > static_cast<std::size_t>(max_hops)) return false;
    for (std::size_t i = 0; i < walk.relations.size(); ++i)
        if (!kg.has_triple(walk.entities[i], walk.relations[i], walk.entities[i + 1])) return false;
    if (walk.hops() < static_cast<std::size_t>(max_hops) && !kg.neighbors(walk.entities.back()).empty()) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Corpus-level walks and the walk file

struct WalkRecord {
    std::string doc_id;
    int paragraph = 0;
    KnowledgeWalk walk;
    std::string sentence;

    friend bool operator==(const WalkRecord&, const WalkRecord&) = default;
};

struct WalkOptions {
    int max_hops = 8;
    int walks_per_entity = 1;
    std::uint64_t seed = 0;
};

/// Walks for every paragraph of every document, in corpus order. Each
/// paragraph's stream is seeded from (seed, paragraph key).
inline std::vector<WalkRecord> generate_corpus_walks(const KnowledgeGraph& kg, const std::vector<DocumentRecord>& docs,
                                                     const WalkImportance& importance, const WalkOptions& opt) {
    std::vector<WalkRecord> out;
    for (const auto& d : docs) {
        for (std::size_t i = 0; i < d.paragraphs.size(); ++i) {
            std::uint64_t s = derive_seed(opt.seed, paragraph_key(d.doc_id, i));
            for (auto& w : generate_walks_for_paragraph(kg, d.paragraphs[i].entity_ids, opt.max_hops, opt.walks_per_entity,
                                                        importance, s)) {
                w.paragraph = static_cast<int>(i);
                std::string sentence = walk_to_sentence(kg, w);
                out.push_back({d.doc_id, static_cast<int>(i), std::move(w), std::move(sentence)});
            }
        }
    }
    return out;
}

/// `doc_id<TAB>para_idx<TAB>e0 r01 e1 ...<TAB>sentence`, one walk per line.
inline void write_walks(const std::string& path, const KnowledgeGraph& kg, const std::vector<WalkRecord>& walks) {
    auto out = text::open_output(path);
    for (const auto& w : walks) {
        out << w.doc_id << '\t' << w.paragraph << '\t' << kg.entity_id(w.walk.entities[0]);
        for (std::size_t i = 0; i < w.walk.relations.size(); ++i)
            out << ' ' << kg.relation_id(w.walk.relations[i]) << ' ' << kg.entity_id(w.walk.entities[i + 1]);
        out << '\t' << w.sentence << '\n';
    }
}

inline std::vector<WalkRecord> read_walks(const std::string& path, const KnowledgeGraph& kg) {
    std::vector<WalkRecord> out;
    detail::for_each_tsv_line(path, 4, [&](auto& f, std::size_t) {
        WalkRecord w;
        w.doc_id = std::string(f[0]);
        if (!text::parse_int(f[1], w.paragraph) || w.paragraph < 0)
            throw ValidationError("invalid paragraph index '" + std::string(f[1]) + "'");
        auto ids = text::split_ws(f[2]);
        if (ids.empty() || ids.size() % 2 == 0) throw ValidationError("walk must alternate entity and relation ids");
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (i % 2 == 0)
                w.walk.entities.push_back(kg.entity(ids[i]));
            else
                w.walk.relations.push_back(kg.relation(ids[i]));
        }
        for (std::size_t i = 0; i < w.walk.relations.size(); ++i)
            if (!kg.has_triple(w.walk.entities[i], w.walk.relations[i], w.walk.entities[i + 1]))
                throw ValidationError("walk step " + std::to_string(i) + " is not a knowledge graph triple");
        w.walk.paragraph = w.paragraph;
        w.sentence = std::string(f[3]);
        out.push_back(std::move(w));
    });
    return out;
}

} // namespace kcd
