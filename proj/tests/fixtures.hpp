#pragma once

#include <random>
#include <string>
#include <vector>

#include "kcd/model.hpp"
#include "testing.hpp"

namespace kcd::testing {

/// Random documents over a small topic/entity vocabulary, with their HINs,
/// random paragraph vectors and random walk vectors.
struct ToyCorpus {
    EmbeddingMatrix topics;
    EmbeddingMatrix entities;
    std::vector<DocumentRecord> records;
    std::vector<DocumentInputs> docs;

    FeatureTables tables() const { return {&topics, &entities}; }

    std::vector<const DocumentInputs*> pointers() const {
        std::vector<const DocumentInputs*> out;
        for (const auto& d : docs) out.push_back(&d);
        return out;
    }
};

struct ToyOptions {
    int documents = 1;
    Index dim = 8;
    int min_paragraphs = 2;
    int max_paragraphs = 2;
    int topics = 3;
    int entities = 5;
    /// Probability that a paragraph links no entity.
    double no_entity = 0.0;
    int max_walks = 2;
};

inline ToyCorpus make_toy(const ToyOptions& o, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ToyCorpus c;
    c.topics = EmbeddingMatrix(o.dim);
    c.entities = EmbeddingMatrix(o.dim);
    for (int t = 0; t < o.topics; ++t) c.topics.append("t" + std::to_string(t), random_matrix(1, o.dim, rng).row(0));
    for (int e = 0; e < o.entities; ++e) c.entities.append("e" + std::to_string(e), random_matrix(1, o.dim, rng).row(0));
    std::uniform_int_distribution<int> n_par(o.min_paragraphs, o.max_paragraphs), topic(0, o.topics - 1), ent(0, o.entities - 1),
        tense(0, kTenseCount - 1), walks(1, o.max_walks), n_ent(1, 3);
    std::bernoulli_distribution coin(0.5), empty(o.no_entity);
    for (int i = 0; i < o.documents; ++i) {
        DocumentRecord r{"doc" + std::to_string(i), i % 2, 0, {}};
        DocumentInputs in;
        const int n = n_par(rng);
        std::vector<int> owner;
        for (int p = 0; p < n; ++p) {
            Paragraph para{"text", "t" + std::to_string(topic(rng)), coin(rng) ? Sentiment::Positive : Sentiment::Negative, tense(rng),
                           coin(rng), {}};
            if (!empty(rng)) {
                for (int k = n_ent(rng); k > 0; --k) para.entity_ids.push_back("e" + std::to_string(ent(rng)));
                for (int w = walks(rng); w > 0; --w) owner.push_back(p);
            }
            r.paragraphs.push_back(std::move(para));
        }
        in.graph = build_hin(r, c.topics, c.entities);
        in.paragraphs = random_matrix(n, o.dim, rng);
        in.walks = random_matrix(static_cast<Index>(owner.size()), o.dim, rng);
        in.walk_owner = owner;
        c.records.push_back(std::move(r));
        c.docs.push_back(std::move(in));
    }
    return c;
}

/// Two paragraphs, three walks, and every node type present.
inline ToyCorpus full_toy(Index dim, std::uint64_t seed) {
    ToyCorpus c = make_toy({1, dim, 2, 2, 2, 3, 0.0, 1}, seed);
    DocumentRecord& r = c.records[0];
    r.paragraphs[0].quotation = true;
    r.paragraphs[0].entity_ids = {"e0", "e1"};
    r.paragraphs[1].entity_ids = {"e1", "e2"};
    std::mt19937_64 rng(seed + 1);
    DocumentInputs& in = c.docs[0];
    in.graph = build_hin(r, c.topics, c.entities);
    in.walks = random_matrix(3, dim, rng);
    in.walk_owner = {0, 0, 1};
    return c;
}

inline ModelConfig small_config(int dim = 8, int hidden = 6, int heads = 2) {
    ModelConfig c;
    c.input_dim = dim;
    c.hidden_dim = hidden;
    c.heads = heads;
    c.layers = 2;
    return c;
}

} // namespace kcd::testing
