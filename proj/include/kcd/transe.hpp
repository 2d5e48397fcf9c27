#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "kcd/io.hpp"
#include "kcd/kg.hpp"
#include "kcd/random.hpp"

namespace kcd {

struct TransEOptions {
    int dim = 768;
    int epochs = 1000;
    double margin = 1.0;
    double lr = 0.01;
    int negatives_per_positive = 1;
    std::uint64_t seed = 0;
    /// Also record the exact expected loss over every corruption after each
    /// epoch. Costs O(triples · entities · dim) per epoch.
    bool track_expected_loss = false;
};

struct EmbeddingTable {
    EmbeddingMatrix entities;
    EmbeddingMatrix relations;
    /// Summed hinge loss of the sampled negatives, per epoch.
    std::vector<double> epoch_loss;
    /// Mean hinge loss over all head and tail corruptions, per epoch
    /// (only with TransEOptions::track_expected_loss).
    std::vector<double> expected_loss;
};

/// Sampling-free training objective: for each triple, the hinge loss
/// averaged over every head corruption and every tail corruption, each
/// side weighted 1/2; summed over triples.
inline double transe_expected_loss(const KnowledgeGraph& kg, const Matrix& ent, const Matrix& rel, double margin) {
    const int n = kg.entity_count();
    if (n < 2) return 0.0;
    double total = 0.0;
    for (const Triple& tr : kg.triples()) {
        Eigen::RowVectorXd hr = ent.row(tr.head) + rel.row(tr.relation);
        const double dp = (hr - ent.row(tr.tail)).norm();
        double head_side = 0.0, tail_side = 0.0;
        for (int e = 0; e < n; ++e) {
            if (e != tr.tail) tail_side += std::max(0.0, margin + dp - (hr - ent.row(e)).norm());
            if (e != tr.head)
                head_side += std::max(0.0, margin + dp - (ent.row(e) + rel.row(tr.relation) - ent.row(tr.tail)).norm());
        }
        total += 0.5 * (head_side + tail_side) / static_cast<double>(n - 1);
    }
    return total;
}

/// ‖h + r − t‖₂; lower is more plausible.
inline double transe_distance(const Eigen::Ref<const Eigen::RowVectorXd>& h, const Eigen::Ref<const Eigen::RowVectorXd>& r,
                              const Eigen::Ref<const Eigen::RowVectorXd>& t) {
    if (h.size() != r.size() || h.size() != t.size()) throw ShapeError("transe_distance: dimension mismatch");
    return (h + r - t).norm();
}

inline double transe_score(const EmbeddingTable& emb, const std::string& head, const std::string& rel, const std::string& tail) {
    return transe_distance(emb.entities.row(head), emb.relations.row(rel), emb.entities.row(tail));
}

/// TransE with the margin ranking loss and SGD.
///
/// Each positive is paired with `negatives_per_positive` corruptions that
/// replace the head or the tail (each with probability 1/2) by a uniformly
/// drawn different entity. Entity vectors are renormalised to unit length
/// at the start of every epoch.
inline EmbeddingTable train_transe(const KnowledgeGraph& kg, const TransEOptions& opt) {
    if (kg.entity_count() == 0 || kg.triples().empty()) throw ValidationError("train_transe: knowledge graph is empty");
    if (opt.dim < 1) throw ConfigError("train_transe: dim must be >= 1");
    if (opt.epochs < 0 || opt.negatives_per_positive < 1) throw ConfigError("train_transe: invalid epochs or negatives");

    Rng rng(derive_seed(opt.seed, "transe"));
    const double bound = 6.0 / std::sqrt(static_cast<double>(opt.dim));
    std::uniform_real_distribution<double> init(-bound, bound);
    Matrix ent(kg.entity_count(), opt.dim);
    Matrix rel(kg.relation_count(), opt.dim);
    for (Index i = 0; i < ent.size(); ++i) ent.data()[i] = init(rng);
    for (Index i = 0; i < rel.size(); ++i) rel.data()[i] = init(rng);
    for (Index r = 0; r < rel.rows(); ++r) rel.row(r).normalize();

    std::vector<std::size_t> order(kg.triples().size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::uniform_int_distribution<int> pick_entity(0, kg.entity_count() - 1);
    std::bernoulli_distribution corrupt_head(0.5);

    EmbeddingTable result;
    result.epoch_loss.reserve(static_cast<std::size_t>(opt.epochs));
    Eigen::RowVectorXd pos_diff(opt.dim), neg_diff(opt.dim);
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        for (Index e = 0; e < ent.rows(); ++e) {
            double n = ent.row(e).norm();
            if (n > 0.0) ent.row(e) /= n;
        }
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t idx : order) {
            const Triple& tr = kg.triples()[idx];
            for (int k = 0; k < opt.negatives_per_positive; ++k) {
                int h2 = tr.head, t2 = tr.tail;
                bool head_side = corrupt_head(rng);
                if (kg.entity_count() > 1) {
                    int& slot = head_side ? h2 : t2;
                    int original = slot;
                    while (slot == original) slot = pick_entity(rng);
                }
                pos_diff = ent.row(tr.head) + rel.row(tr.relation) - ent.row(tr.tail);
                neg_diff = ent.row(h2) + rel.row(tr.relation) - ent.row(t2);
                double dp = pos_diff.norm();
                double dn = neg_diff.norm();
                double loss = opt.margin + dp - dn;
                if (loss <= 0.0) continue;
                total += loss;
                // ∂‖x‖/∂x = x/‖x‖; a zero difference contributes no gradient.
                Eigen::RowVectorXd gp = dp > 0.0 ? Eigen::RowVectorXd(pos_diff / dp) : Eigen::RowVectorXd::Zero(opt.dim);
                Eigen::RowVectorXd gn = dn > 0.0 ? Eigen::RowVectorXd(neg_diff / dn) : Eigen::RowVectorXd::Zero(opt.dim);
                ent.row(tr.head) -= opt.lr * gp;
                ent.row(tr.tail) += opt.lr * gp;
                rel.row(tr.relation) -= opt.lr * (gp - gn);
                ent.row(h2) += opt.lr * gn;
                ent.row(t2) -= opt.lr * gn;
            }
        }
        result.epoch_loss.push_back(total);
        if (opt.track_expected_loss) result.expected_loss.push_back(transe_expected_loss(kg, ent, rel, opt.margin));
    }

    std::vector<std::string> ekeys, rkeys;
    for (int e = 0; e < kg.entity_count(); ++e) ekeys.push_back(kg.entity_id(e));
    for (int r = 0; r < kg.relation_count(); ++r) rkeys.push_back(kg.relation_id(r));
    result.entities = EmbeddingMatrix(std::move(ekeys), std::move(ent));
    result.relations = EmbeddingMatrix(std::move(rkeys), std::move(rel));
    return result;
}

} // namespace kcd
