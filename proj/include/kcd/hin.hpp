#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kcd/io.hpp"
#include "kcd/kg.hpp"
#include "kcd/random.hpp"

namespace kcd {

/// Node sets V1..V6 of the news graph.
enum class NodeType { Paragraph = 0, Topic = 1, Sentiment = 2, Tense = 3, Quotation = 4, Entity = 5 };

/// Edge sets R1..R6. R1 joins consecutive paragraphs; Rk (k ≥ 2) joins a
/// paragraph to a node of type V_k.
enum class Relation { Adjacent = 0, Topic = 1, Sentiment = 2, Tense = 3, Quotation = 4, Entity = 5 };

inline constexpr int kNodeTypeCount = 6;
inline constexpr int kRelationCount = 6;

inline constexpr NodeType cue_type(Relation r) { return static_cast<NodeType>(static_cast<int>(r)); }

inline const char* to_string(NodeType t) {
    static constexpr std::array<const char*, kNodeTypeCount> names{"paragraph", "topic", "sentiment", "tense", "quotation", "entity"};
    return names[static_cast<int>(t)];
}

/// "R1".."R6".
inline std::string to_string(Relation r) { return "R" + std::to_string(static_cast<int>(r) + 1); }

inline Relation parse_relation(std::string_view s) {
    if (s.size() == 2 && (s[0] == 'R' || s[0] == 'r') && s[1] >= '1' && s[1] <= '6') return static_cast<Relation>(s[1] - '1');
    static const std::map<std::string, Relation, std::less<>> names{{"adjacent", Relation::Adjacent}, {"topic", Relation::Topic},
                                                                    {"sentiment", Relation::Sentiment}, {"tense", Relation::Tense},
                                                                    {"quotation", Relation::Quotation}, {"entity", Relation::Entity}};
    if (auto it = names.find(s); it != names.end()) return it->second;
    throw ConfigError("unknown relation '" + std::string(s) + "' (expected R1..R6 or a cue name)");
}

/// Where a node's initial feature vector comes from.
struct FeatureSource {
    enum class Kind { InfusedParagraph, TopicEmbedding, SharedSlot, EntityEmbedding };
    Kind kind = Kind::InfusedParagraph;
    /// Paragraph index for InfusedParagraph, slot value for SharedSlot.
    int index = 0;
    /// Topic or entity id for the embedding kinds.
    std::string key;

    friend bool operator==(const FeatureSource&, const FeatureSource&) = default;
};

struct HinNode {
    NodeType type = NodeType::Paragraph;
    FeatureSource feature;

    friend bool operator==(const HinNode&, const HinNode&) = default;
};

/// Directed edge src → dst. For R1 src precedes dst; otherwise src is the
/// paragraph and dst the cue node.
struct HinEdge {
    Relation relation = Relation::Adjacent;
    int src = 0;
    int dst = 0;

    friend bool operator==(const HinEdge&, const HinEdge&) = default;
};

struct HinGraph {
    std::string doc_id;
    int label = 0;
    std::vector<HinNode> nodes;
    std::vector<HinEdge> edges;

    std::size_t count(NodeType t) const {
        return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [t](const HinNode& n) { return n.type == t; }));
    }

    std::size_t count(Relation r) const {
        return static_cast<std::size_t>(std::count_if(edges.begin(), edges.end(), [r](const HinEdge& e) { return e.relation == r; }));
    }

    friend bool operator==(const HinGraph&, const HinGraph&) = default;
};

/// Slot layout of the shared learnable cue features.
inline constexpr int kSentimentSlots = 2;
inline constexpr int kQuotationSlots = 2;

/// Throws ValidationError if any structural invariant is violated.
inline void validate_hin(const HinGraph& g) {
    auto fail = [&](const std::string& msg) { throw ValidationError("graph '" + g.doc_id + "': " + msg); };
    std::vector<int> paragraph_rows;
    for (std::size_t i = 0; i < g.nodes.size(); ++i)
        if (g.nodes[i].type == NodeType::Paragraph) paragraph_rows.push_back(static_cast<int>(i));
    if (paragraph_rows.empty()) fail("no paragraph nodes");
    std::vector<int> degree(g.nodes.size(), 0);
    std::set<std::pair<int, int>> adjacent;
    for (const auto& e : g.edges) {
        if (e.src < 0 || e.dst < 0 || e.src >= static_cast<int>(g.nodes.size()) || e.dst >= static_cast<int>(g.nodes.size()))
            fail("edge endpoint out of range");
        if (g.nodes[e.src].type != NodeType::Paragraph) fail(to_string(e.relation) + " edge must start at a paragraph node");
        if (g.nodes[e.dst].type != (e.relation == Relation::Adjacent ? NodeType::Paragraph : cue_type(e.relation)))
            fail(to_string(e.relation) + " edge ends at a " + to_string(g.nodes[e.dst].type) + " node");
        if (e.relation == Relation::Adjacent) adjacent.emplace(g.nodes[e.src].feature.index, g.nodes[e.dst].feature.index);
        ++degree[e.src];
        ++degree[e.dst];
    }
    if (adjacent.size() != paragraph_rows.size() - 1 || g.count(Relation::Adjacent) != adjacent.size()) fail("R1 must join exactly the consecutive paragraph pairs");
    for (const auto& [a, b] : adjacent)
        if (b != a + 1) fail("R1 joins non-consecutive paragraphs");
    for (std::size_t i = 0; i < g.nodes.size(); ++i)
        if (g.nodes[i].type != NodeType::Paragraph && degree[i] == 0) fail("isolated cue node");
    if (g.count(NodeType::Sentiment) > static_cast<std::size_t>(kSentimentSlots)) fail("more than 2 sentiment nodes");
    if (g.count(NodeType::Tense) > static_cast<std::size_t>(kTenseCount)) fail("more than 17 tense nodes");
    if (g.count(NodeType::Quotation) > static_cast<std::size_t>(kQuotationSlots)) fail("more than 2 quotation nodes");
}

/// Builds the typed graph of one document. Only cue values the document
/// references get a node. Node order: paragraphs, then topic, sentiment,
/// tense, quotation and entity nodes, each in order of first reference.
inline HinGraph build_hin(const DocumentRecord& doc, const EmbeddingMatrix& topic_embeddings,
                          const EmbeddingMatrix& entity_embeddings) {
    HinGraph g;
    g.doc_id = doc.doc_id;
    g.label = doc.label;
    const int n = static_cast<int>(doc.paragraphs.size());
    if (n == 0) throw ValidationError("doc '" + doc.doc_id + "' has no paragraphs");
    for (int i = 0; i < n; ++i) g.nodes.push_back({NodeType::Paragraph, {FeatureSource::Kind::InfusedParagraph, i, {}}});
    for (int i = 0; i + 1 < n; ++i) g.edges.push_back({Relation::Adjacent, i, i + 1});

    auto add_cue = [&](Relation rel, std::map<std::string, int>& seen, std::vector<std::pair<int, std::string>> links,
                       FeatureSource::Kind kind) {
        for (auto& [para, key] : links) {
            auto it = seen.find(key);
            if (it == seen.end()) {
                int slot = kind == FeatureSource::Kind::SharedSlot ? std::stoi(key) : 0;
                g.nodes.push_back({cue_type(rel), {kind, slot, kind == FeatureSource::Kind::SharedSlot ? std::string() : key}});
                it = seen.emplace(key, static_cast<int>(g.nodes.size()) - 1).first;
            }
            g.edges.push_back({rel, para, it->second});
        }
    };

    std::vector<std::pair<int, std::string>> topics, sentiments, tenses, quotes, entities;
    for (int i = 0; i < n; ++i) {
        const Paragraph& p = doc.paragraphs[i];
        if (!topic_embeddings.contains(p.topic_id))
            throw ValidationError("doc '" + doc.doc_id + "' paragraph " + std::to_string(i) + ": unknown topic '" + p.topic_id + "'");
        if (p.tense_id < 0 || p.tense_id >= kTenseCount)
            throw ValidationError("doc '" + doc.doc_id + "' paragraph " + std::to_string(i) + ": tense id out of range");
        topics.emplace_back(i, p.topic_id);
        sentiments.emplace_back(i, std::to_string(static_cast<int>(p.sentiment)));
        tenses.emplace_back(i, std::to_string(p.tense_id));
        quotes.emplace_back(i, p.quotation ? "1" : "0");
        std::set<std::string> once;
        for (const auto& e : p.entity_ids) {
            if (!entity_embeddings.contains(e))
                throw ValidationError("doc '" + doc.doc_id + "' paragraph " + std::to_string(i) + ": unknown entity '" + e + "'");
            if (once.insert(e).second) entities.emplace_back(i, e);
        }
    }
    std::map<std::string, int> seen_topic, seen_sent, seen_tense, seen_quote, seen_entity;
    add_cue(Relation::Topic, seen_topic, topics, FeatureSource::Kind::TopicEmbedding);
    add_cue(Relation::Sentiment, seen_sent, sentiments, FeatureSource::Kind::SharedSlot);
    add_cue(Relation::Tense, seen_tense, tenses, FeatureSource::Kind::SharedSlot);
    add_cue(Relation::Quotation, seen_quote, quotes, FeatureSource::Kind::SharedSlot);
    add_cue(Relation::Entity, seen_entity, entities, FeatureSource::Kind::EntityEmbedding);
    return g;
}

/// Removes cue nodes without edges and renumbers the rest in order.
inline HinGraph prune_isolated_cues(HinGraph g) {
    std::vector<int> degree(g.nodes.size(), 0);
    for (const auto& e : g.edges) {
        ++degree[e.src];
        ++degree[e.dst];
    }
    std::vector<int> remap(g.nodes.size(), -1);
    std::vector<HinNode> kept;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        if (g.nodes[i].type != NodeType::Paragraph && degree[i] == 0) continue;
        remap[i] = static_cast<int>(kept.size());
        kept.push_back(std::move(g.nodes[i]));
    }
    g.nodes = std::move(kept);
    for (auto& e : g.edges) {
        e.src = remap[e.src];
        e.dst = remap[e.dst];
    }
    return g;
}

/// Independently removes each edge of the given cue relations with
/// probability p, then prunes cue nodes left isolated. p = 0 is the identity.
inline HinGraph drop_cues(const HinGraph& g, std::span<const Relation> relations, double p, std::uint64_t seed) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("drop_cues: probability must lie in [0, 1]");
    for (Relation r : relations)
        if (r == Relation::Adjacent) throw ConfigError("drop_cues: R1 is structural, not a cue relation");
    if (p == 0.0 || relations.empty()) return g;
    Rng rng(derive_seed(seed, "drop_cues:" + g.doc_id));
    std::bernoulli_distribution drop(p);
    HinGraph out = g;
    out.edges.clear();
    for (const auto& e : g.edges) {
        bool targeted = std::find(relations.begin(), relations.end(), e.relation) != relations.end();
        if (targeted && drop(rng)) continue;
        out.edges.push_back(e);
    }
    return prune_isolated_cues(std::move(out));
}

inline HinGraph drop_cues(const HinGraph& g, Relation relation, double p, std::uint64_t seed) {
    std::array<Relation, 1> rs{relation};
    return drop_cues(g, rs, p, seed);
}

/// Same graph with node i renumbered to perm[i].
inline HinGraph permute_nodes(const HinGraph& g, std::span<const int> perm) {
    if (perm.size() != g.nodes.size()) throw ValidationError("permute_nodes: permutation size mismatch");
    HinGraph out = g;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) out.nodes.at(static_cast<std::size_t>(perm[i])) = g.nodes[i];
    for (auto& e : out.edges) {
        e.src = perm[e.src];
        e.dst = perm[e.dst];
    }
    return out;
}

/// Text dump: a header line, one `node <i> <type> <source>` line per node
/// and one `edge <relation> <src> <dst>` line per edge.
inline void dump_hin(std::ostream& out, const HinGraph& g) {
    out << "hin " << g.doc_id << " label " << g.label << " nodes " << g.nodes.size() << " edges " << g.edges.size() << '\n';
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const auto& n = g.nodes[i];
        out << "node " << i << ' ' << to_string(n.type) << ' ';
        switch (n.feature.kind) {
        case FeatureSource::Kind::InfusedParagraph: out << "infused-paragraph:" << n.feature.index; break;
        case FeatureSource::Kind::TopicEmbedding: out << "topic-embedding:" << n.feature.key; break;
        case FeatureSource::Kind::SharedSlot: out << "shared-slot:" << to_string(n.type) << ':' << n.feature.index; break;
        case FeatureSource::Kind::EntityEmbedding: out << "transe-entity:" << n.feature.key; break;
        }
        out << '\n';
    }
    for (const auto& e : g.edges) out << "edge " << to_string(e.relation) << ' ' << e.src << ' ' << e.dst << '\n';
}

// ---------------------------------------------------------------------------
// Cue extraction helpers

/// Default quotation marks: straight double quote and curly double quotes.
inline const std::vector<std::string>& default_quotation_marks() {
    static const std::vector<std::string> marks{"\"", "“", "”"};
    return marks;
}

inline bool detect_quotation(std::string_view text, const std::vector<std::string>& marks = default_quotation_marks()) {
    return std::any_of(marks.begin(), marks.end(), [&](const std::string& m) { return !m.empty() && text.find(m) != std::string_view::npos; });
}

/// Case-insensitive longest match of entity descriptions against the text,
/// anchored at word boundaries. Scanning left to right, the longest
/// description starting at a word is taken and scanning resumes after it.
/// Each entity is reported once, in order of first occurrence; when several
/// entities share a description the first in KG order wins.
class EntityLinker {
public:
    explicit EntityLinker(const KnowledgeGraph& kg) {
        for (int e = 0; e < kg.entity_count(); ++e) {
            std::string d = lower(kg.entity_description(e));
            if (d.empty()) continue;
            if (by_desc_.emplace(d, kg.entity_id(e)).second) {
                std::size_t w = 0;
                while (w < d.size() && is_word(d[w])) ++w;
                if (w > 0) by_first_word_[d.substr(0, w)].push_back(d);
            }
        }
        for (auto& [w, list] : by_first_word_)
            std::stable_sort(list.begin(), list.end(), [](const std::string& a, const std::string& b) { return a.size() > b.size(); });
    }

    std::vector<std::string> link(std::string_view text) const {
        std::string t = lower(text);
        std::vector<std::string> out;
        std::set<std::string> seen;
        std::size_t i = 0;
        while (i < t.size()) {
            if (!is_word(t[i]) || (i > 0 && is_word(t[i - 1]))) {
                ++i;
                continue;
            }
            std::size_t w = i;
            while (w < t.size() && is_word(t[w])) ++w;
            std::size_t matched = 0;
            if (auto it = by_first_word_.find(t.substr(i, w - i)); it != by_first_word_.end()) {
                for (const auto& d : it->second) {
                    if (t.compare(i, d.size(), d) == 0 && (i + d.size() == t.size() || !is_word(t[i + d.size()]))) {
                        matched = d.size();
                        const std::string& id = by_desc_.at(d);
                        if (seen.insert(id).second) out.push_back(id);
                        break;
                    }
                }
            }
            i += matched > 0 ? matched : w - i;
        }
        return out;
    }

private:
    static bool is_word(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || static_cast<unsigned char>(c) >= 0x80; }

    static std::string lower(std::string_view s) {
        std::string out(s);
        for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return out;
    }

    std::map<std::string, std::string> by_desc_;
    std::unordered_map<std::string, std::vector<std::string>> by_first_word_;
};

inline std::vector<std::string> link_entities_naive(std::string_view text, const KnowledgeGraph& kg) {
    return EntityLinker(kg).link(text);
}

} // namespace kcd
