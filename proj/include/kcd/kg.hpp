#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <set>
#include <vector>

#include "kcd/error.hpp"
#include "kcd/text.hpp"

namespace kcd {

struct Triple {
    int head = 0;
    int relation = 0;
    int tail = 0;

    friend bool operator==(const Triple&, const Triple&) = default;
};

/// Outgoing edge of an entity.
struct Edge {
    int relation = 0;
    int tail = 0;

    friend bool operator==(const Edge&, const Edge&) = default;
};

/// Directed multi-relational graph with textual descriptions.
///
/// Entities and relations are addressed by dense indices in insertion order;
/// string ids are kept for I/O. Distinct triples may share (head, relation)
/// with different tails. Exact duplicates are rejected.
class KnowledgeGraph {
public:
    /// Importance assigned to relations without an explicit score.
    static constexpr double kDefaultImportance = 1.0;

    int add_entity(std::string id, std::string description) {
        check_id("entity", id);
        if (entity_index_.contains(id)) throw ValidationError("duplicate entity id '" + id + "'");
        int idx = static_cast<int>(entity_ids_.size());
        entity_index_.emplace(id, idx);
        entity_ids_.push_back(std::move(id));
        entity_desc_.push_back(std::move(description));
        adjacency_.emplace_back();
        return idx;
    }

    int add_relation(std::string id, std::string description, double importance = kDefaultImportance) {
        check_id("relation", id);
        if (relation_index_.contains(id)) throw ValidationError("duplicate relation id '" + id + "'");
        int idx = static_cast<int>(relation_ids_.size());
        relation_index_.emplace(id, idx);
        relation_ids_.push_back(std::move(id));
        relation_desc_.push_back(std::move(description));
        importance_.push_back(importance);
        return idx;
    }

    void add_triple(int head, int relation, int tail) {
        if (head < 0 || head >= entity_count() || tail < 0 || tail >= entity_count())
            throw ValidationError("triple references an unknown entity index");
        if (relation < 0 || relation >= relation_count())
            throw ValidationError("triple references an unknown relation index");
        if (!triple_keys_.insert(key(head, relation, tail)).second)
            throw ValidationError("duplicate triple (" + entity_ids_[head] + ", " + relation_ids_[relation] + ", " +
                                  entity_ids_[tail] + ")");
        triples_.push_back({head, relation, tail});
        adjacency_[head].push_back({relation, tail});
    }

    int entity_count() const { return static_cast<int>(entity_ids_.size()); }
    int relation_count() const { return static_cast<int>(relation_ids_.size()); }
    const std::vector<Triple>& triples() const { return triples_; }

    std::optional<int> find_entity(std::string_view id) const {
        auto it = entity_index_.find(std::string(id));
        if (it == entity_index_.end()) return std::nullopt;
        return it->second;
    }

    std::optional<int> find_relation(std::string_view id) const {
        auto it = relation_index_.find(std::string(id));
        if (it == relation_index_.end()) return std::nullopt;
        return it->second;
    }

    int entity(std::string_view id) const {
        if (auto e = find_entity(id)) return *e;
        throw ValidationError("unknown entity '" + std::string(id) + "'");
    }

    int relation(std::string_view id) const {
        if (auto r = find_relation(id)) return *r;
        throw ValidationError("unknown relation '" + std::string(id) + "'");
    }

    const std::string& entity_id(int e) const { return entity_ids_.at(e); }
    const std::string& entity_description(int e) const { return entity_desc_.at(e); }
    const std::string& relation_id(int r) const { return relation_ids_.at(r); }
    const std::string& relation_description(int r) const { return relation_desc_.at(r); }

    double importance(int r) const { return importance_.at(r); }
    const std::vector<double>& importances() const { return importance_; }
    void set_importance(int r, double p) { importance_.at(r) = p; }

    /// Outgoing edges in insertion order; empty for sinks.
    std::span<const Edge> neighbors(int entity) const { return adjacency_.at(entity); }
    std::span<const Edge> neighbors(std::string_view entity_id) const { return neighbors(entity(entity_id)); }

    bool has_triple(int head, int relation, int tail) const { return triple_keys_.contains(key(head, relation, tail)); }

    friend bool operator==(const KnowledgeGraph& a, const KnowledgeGraph& b) {
        return a.entity_ids_ == b.entity_ids_ && a.entity_desc_ == b.entity_desc_ && a.relation_ids_ == b.relation_ids_ &&
               a.relation_desc_ == b.relation_desc_ && a.importance_ == b.importance_ && a.triples_ == b.triples_;
    }

private:
    static std::array<int, 3> key(int h, int r, int t) { return {h, r, t}; }

    static void check_id(std::string_view kind, const std::string& id) {
        if (id.empty() || text::has_whitespace(id))
            throw ValidationError(std::string(kind) + " id must be non-empty without whitespace: '" + id + "'");
    }

    std::vector<std::string> entity_ids_;
    std::vector<std::string> entity_desc_;
    std::unordered_map<std::string, int> entity_index_;
    std::vector<std::string> relation_ids_;
    std::vector<std::string> relation_desc_;
    std::vector<double> importance_;
    std::unordered_map<std::string, int> relation_index_;
    std::vector<Triple> triples_;
    std::set<std::array<int, 3>> triple_keys_;
    std::vector<std::vector<Edge>> adjacency_;
};

namespace detail {

template <class Fn>
void for_each_tsv_line(const std::string& path, std::size_t expected_fields, Fn&& fn) {
    auto in = text::open_input(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view v = text::chomp(line);
        if (v.empty()) continue;
        auto fields = text::split(v, '\t');
        if (fields.size() != expected_fields)
            throw FormatError(path, lineno,
                              "expected " + std::to_string(expected_fields) + " tab-separated fields, got " +
                                  std::to_string(fields.size()));
        try {
            fn(fields, lineno);
        } catch (const FormatError&) {
            throw;
        } catch (const ValidationError& e) {
            throw FormatError(path, lineno, e.what());
        }
    }
}

} // namespace detail

/// Loads a graph from tab-separated files. Relations absent from the
/// importance file (or all of them, when no file is given) get
/// KnowledgeGraph::kDefaultImportance.
inline KnowledgeGraph load_kg(const std::string& triples_path, const std::string& entity_desc_path,
                              const std::string& relation_desc_path,
                              const std::optional<std::string>& importance_path = std::nullopt) {
    KnowledgeGraph kg;
    detail::for_each_tsv_line(entity_desc_path, 2, [&](auto& f, std::size_t) {
        kg.add_entity(std::string(f[0]), std::string(f[1]));
    });
    detail::for_each_tsv_line(relation_desc_path, 2, [&](auto& f, std::size_t) {
        kg.add_relation(std::string(f[0]), std::string(f[1]));
    });
    if (importance_path) {
        detail::for_each_tsv_line(*importance_path, 2, [&](auto& f, std::size_t) {
            double p = 0.0;
            if (!text::parse_double(f[1], p) || !std::isfinite(p))
                throw ValidationError("invalid importance value '" + std::string(f[1]) + "'");
            kg.set_importance(kg.relation(f[0]), p);
        });
    }
    detail::for_each_tsv_line(triples_path, 3, [&](auto& f, std::size_t) {
        kg.add_triple(kg.entity(f[0]), kg.relation(f[1]), kg.entity(f[2]));
    });
    return kg;
}

struct KgPaths {
    std::string triples;
    std::string entities;
    std::string relations;
    std::string importance;

    static KgPaths in(const std::filesystem::path& dir) {
        return {(dir / "triples.tsv").string(), (dir / "entities.tsv").string(), (dir / "relations.tsv").string(),
                (dir / "importance.tsv").string()};
    }
};

/// Loads triples.tsv, entities.tsv, relations.tsv and, when present,
/// importance.tsv from `dir`. An explicit importance file overrides it.
inline KnowledgeGraph load_kg_dir(const std::filesystem::path& dir,
                                  const std::optional<std::string>& importance_override = std::nullopt) {
    KgPaths p = KgPaths::in(dir);
    std::optional<std::string> importance = importance_override;
    if (!importance && std::filesystem::exists(p.importance)) importance = p.importance;
    return load_kg(p.triples, p.entities, p.relations, importance);
}

inline void save_kg_dir(const KnowledgeGraph& kg, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    KgPaths p = KgPaths::in(dir);
    auto ent = text::open_output(p.entities);
    for (int e = 0; e < kg.entity_count(); ++e) ent << kg.entity_id(e) << '\t' << kg.entity_description(e) << '\n';
    auto rel = text::open_output(p.relations);
    auto imp = text::open_output(p.importance);
    for (int r = 0; r < kg.relation_count(); ++r) {
        rel << kg.relation_id(r) << '\t' << kg.relation_description(r) << '\n';
        imp << kg.relation_id(r) << '\t' << text::format_double(kg.importance(r)) << '\n';
    }
    auto tri = text::open_output(p.triples);
    for (const Triple& t : kg.triples())
        tri << kg.entity_id(t.head) << '\t' << kg.relation_id(t.relation) << '\t' << kg.entity_id(t.tail) << '\n';
}

} // namespace kcd
