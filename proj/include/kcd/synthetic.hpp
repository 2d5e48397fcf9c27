#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kcd/io.hpp"
#include "kcd/kg.hpp"
#include "kcd/random.hpp"
#include "kcd/train.hpp"
#include "kcd/transe.hpp"

namespace kcd {

/// Cue-separable toy corpus: a document's label fixes the sentiment of
/// every paragraph (label % 2) and puts the class anchor entity in one
/// paragraph. Paragraph embeddings are noise; topics, tenses, quotes and
/// the remaining entities are drawn independently of the label.
struct SyntheticOptions {
    int documents = 200;
    int classes = 2;
    int folds = 5;
    int dim = 768;
    int entities = 40;
    int relations = 6;
    int triples = 120;
    int topics = 8;
    int min_paragraphs = 2;
    int max_paragraphs = 4;
    int transe_epochs = 100;
    std::uint64_t seed = 0;
};

struct SyntheticData {
    KnowledgeGraph kg;
    std::vector<DocumentRecord> docs;
    EmbeddingMatrix paragraphs;
    EmbeddingMatrix topics;
    EmbeddingMatrix entities;
};

namespace detail {

inline std::string number_word(int n) {
    static const char* digits[] = {"zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"};
    std::string s = std::to_string(n), out;
    for (char c : s) {
        if (!out.empty()) out += '-';
        out += digits[c - '0'];
    }
    return out;
}

} // namespace detail

inline std::string anchor_entity(int label) { return "anchor" + std::to_string(label); }

inline SyntheticData make_synthetic(const SyntheticOptions& o) {
    if (o.documents < o.classes || o.classes < 2 || o.folds < 1 || o.dim < 1 || o.entities < 2 || o.relations < 1 ||
        o.topics < 1 || o.min_paragraphs < 1 || o.max_paragraphs < o.min_paragraphs)
        throw ConfigError("synthetic: invalid options");
    Rng rng(derive_seed(o.seed, "synthetic"));
    SyntheticData s;

    for (int c = 0; c < o.classes; ++c) s.kg.add_entity(anchor_entity(c), "anchor " + detail::number_word(c));
    for (int e = 0; e < o.entities; ++e) s.kg.add_entity("e" + std::to_string(e), "concept " + detail::number_word(e));
    for (int r = 0; r < o.relations; ++r) s.kg.add_relation("r" + std::to_string(r), "relates via " + detail::number_word(r));
    // The last quarter of plain entities never gets outgoing edges, so walks
    // also exercise truncation at sinks.
    const int n_ent = s.kg.entity_count();
    const int sinks = std::max(1, o.entities / 4);
    std::uniform_int_distribution<int> head_pick(0, n_ent - 1 - sinks), tail_pick(0, n_ent - 1), rel_pick(0, o.relations - 1);
    for (int c = 0; c < o.classes; ++c) s.kg.add_triple(c, rel_pick(rng), o.classes + c % o.entities);
    int attempts = 0;
    while (static_cast<int>(s.kg.triples().size()) < o.triples && attempts++ < 100 * o.triples) {
        int h = head_pick(rng), r = rel_pick(rng), t = tail_pick(rng);
        if (h == t || s.kg.has_triple(h, r, t)) continue;
        s.kg.add_triple(h, r, t);
    }

    std::uniform_int_distribution<int> n_par(o.min_paragraphs, o.max_paragraphs), topic(0, o.topics - 1), tense(0, kTenseCount - 1),
        plain(0, o.entities - 1), extra(0, 2);
    std::bernoulli_distribution quote(0.4);
    for (int i = 0; i < o.documents; ++i) {
        DocumentRecord d;
        d.doc_id = "doc" + std::to_string(i);
        d.label = i % o.classes;
        d.fold = i % o.folds;
        const int n = n_par(rng);
        const int anchor_at = std::uniform_int_distribution<int>(0, n - 1)(rng);
        for (int p = 0; p < n; ++p) {
            Paragraph para;
            para.topic_id = "t" + std::to_string(topic(rng));
            para.sentiment = d.label % 2 == 0 ? Sentiment::Positive : Sentiment::Negative;
            para.tense_id = tense(rng);
            para.quotation = quote(rng);
            if (p == anchor_at) para.entity_ids.push_back(anchor_entity(d.label));
            for (int k = extra(rng); k > 0; --k) {
                std::string e = "e" + std::to_string(plain(rng));
                if (std::find(para.entity_ids.begin(), para.entity_ids.end(), e) == para.entity_ids.end()) para.entity_ids.push_back(e);
            }
            std::string text = "Paragraph " + detail::number_word(p) + " of document " + detail::number_word(i) + " mentions";
            for (const auto& e : para.entity_ids) text += " " + s.kg.entity_description(s.kg.entity(e)) + ",";
            if (para.quotation) text += " and someone said \"this matters\"";
            text += ".";
            para.text = std::move(text);
            d.paragraphs.push_back(std::move(para));
        }
        s.docs.push_back(std::move(d));
    }

    const std::uint64_t emb_seed = derive_seed(o.seed, "synthetic-embeddings");
    s.paragraphs = EmbeddingMatrix(o.dim);
    for (const auto& d : s.docs)
        for (std::size_t p = 0; p < d.paragraphs.size(); ++p) {
            std::string key = paragraph_key(d.doc_id, p);
            s.paragraphs.append(key, synthetic_embedding(key, o.dim, emb_seed).transpose());
        }
    s.topics = EmbeddingMatrix(o.dim);
    for (int t = 0; t < o.topics; ++t) {
        std::string key = "t" + std::to_string(t);
        s.topics.append(key, synthetic_embedding("topic:" + key, o.dim, emb_seed).transpose());
    }
    TransEOptions to;
    to.dim = o.dim;
    to.epochs = o.transe_epochs;
    to.seed = derive_seed(o.seed, "synthetic-transe");
    s.entities = train_transe(s.kg, to).entities;
    return s;
}

inline Dataset to_dataset(const SyntheticData& s) {
    Dataset d;
    d.docs = s.docs;
    d.kg = s.kg;
    d.paragraphs = s.paragraphs;
    d.topics = s.topics;
    d.entities = s.entities;
    return d;
}

/// Writes every input file plus a `config.json` whose "data" block points
/// at them, so `kcd train --config <dir>/config.json` runs directly.
inline void write_synthetic(const std::filesystem::path& dir, const SyntheticData& s, const TrainConfig& config) {
    std::filesystem::create_directories(dir);
    save_kg_dir(s.kg, dir / "kg");
    write_corpus((dir / "corpus.jsonl").string(), s.docs);
    write_embedding_matrix((dir / "paragraphs.emb").string(), s.paragraphs);
    write_embedding_matrix((dir / "topics.emb").string(), s.topics);
    write_embedding_matrix((dir / "entities.emb").string(), s.entities);
    nlohmann::json j = to_json(config);
    j["data"] = {{"corpus", "corpus.jsonl"},
                 {"kg_dir", "kg"},
                 {"paragraph_embeddings", "paragraphs.emb"},
                 {"topic_embeddings", "topics.emb"},
                 {"entity_embeddings", "entities.emb"}};
    auto out = text::open_output((dir / "config.json").string());
    out << j.dump(2) << '\n';
}

} // namespace kcd
