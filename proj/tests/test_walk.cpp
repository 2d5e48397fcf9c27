#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "kcd/log.hpp"
#include "kcd/walk.hpp"

using namespace kcd;

namespace {

KnowledgeGraph chain() {
    KnowledgeGraph kg;
    kg.add_entity("e0", "Zero");
    kg.add_entity("e1", "One");
    kg.add_entity("e2", "Two");
    kg.add_relation("r", "then");
    kg.add_triple(0, 0, 1);
    kg.add_triple(1, 0, 2);
    return kg;
}

// Hub with 5 outgoing edges: relations with p = 1 (a, b) and p = 0 (c, d, e).
KnowledgeGraph star5() {
    KnowledgeGraph kg;
    kg.add_entity("hub", "Hub");
    for (int i = 0; i < 5; ++i) {
        kg.add_entity("t" + std::to_string(i), "Tail " + std::to_string(i));
        kg.add_relation("r" + std::to_string(i), "rel " + std::to_string(i), i < 2 ? 1.0 : 0.0);
        kg.add_triple(0, i, i + 1);
    }
    return kg;
}

KnowledgeGraph random_kg(std::uint64_t seed) {
    Rng rng(seed);
    KnowledgeGraph kg;
    for (int e = 0; e < 30; ++e) kg.add_entity("e" + std::to_string(e), "entity " + std::to_string(e));
    for (int r = 0; r < 4; ++r) kg.add_relation("r" + std::to_string(r), "rel " + std::to_string(r), 0.5 * r);
    std::uniform_int_distribution<int> head(0, 23), tail(0, 29), rel(0, 3);
    while (kg.triples().size() < 80) {
        int h = head(rng), r = rel(rng), t = tail(rng);
        if (h != t && !kg.has_triple(h, r, t)) kg.add_triple(h, r, t);
    }
    return kg;
}

} // namespace

TEST(StepDistribution, Examples) {
    KnowledgeGraph kg;
    kg.add_entity("a", "A");
    kg.add_entity("b", "B");
    kg.add_entity("c", "C");
    kg.add_relation("r1", "one");
    kg.add_relation("r2", "two");
    kg.add_triple(0, 0, 1);
    kg.add_triple(0, 1, 2);
    auto d = step_distribution(kg, 0, {0.0, 0.0});
    EXPECT_DOUBLE_EQ(d[0].probability, 0.5);
    EXPECT_DOUBLE_EQ(d[1].probability, 0.5);
    d = step_distribution(kg, 0, {1.0, 0.0});
    EXPECT_NEAR(d[0].probability, 0.73106, 1e-5);
    EXPECT_NEAR(d[1].probability, 0.26894, 1e-5);
    kg.add_triple(0, 0, 2);
    d = step_distribution(kg, 0, {0.0, 0.0});
    ASSERT_EQ(d.size(), 3u);
    double r1 = 0.0;
    for (const auto& o : d) {
        EXPECT_NEAR(o.probability, 1.0 / 3.0, 1e-15);
        if (o.edge.relation == 0) r1 += o.probability;
    }
    EXPECT_NEAR(r1, 2.0 / 3.0, 1e-15);
    EXPECT_THROW(step_distribution(kg, 1, {0.0, 0.0}), EmptyDistributionError);
}

TEST(StepDistribution, SumsToOneAndShiftInvariant) {
    KnowledgeGraph kg = random_kg(4);
    WalkImportance imp = importance_of(kg), shifted = imp;
    for (double& p : shifted) p += 3.0;
    for (int e = 0; e < kg.entity_count(); ++e) {
        if (kg.neighbors(e).empty()) continue;
        auto a = step_distribution(kg, e, imp), b = step_distribution(kg, e, shifted);
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            s += a[i].probability;
            EXPECT_NEAR(a[i].probability, b[i].probability, 1e-12);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
    // Constant importance gives the uniform distribution.
    WalkImportance flat(static_cast<std::size_t>(kg.relation_count()), 1.0);
    for (int e = 0; e < kg.entity_count(); ++e) {
        if (kg.neighbors(e).empty()) continue;
        for (const auto& o : step_distribution(kg, e, flat)) EXPECT_NEAR(o.probability, 1.0 / kg.neighbors(e).size(), 1e-15);
    }
}

TEST(GenerateWalk, ChainAndTruncation) {
    KnowledgeGraph kg = chain();
    KnowledgeWalk w = generate_walk(kg, "e0", 2, importance_of(kg), 1);
    EXPECT_EQ(w.entities, (std::vector<int>{0, 1, 2}));
    EXPECT_EQ(w.hops(), 2u);
    KnowledgeWalk t = generate_walk(kg, "e1", 5, importance_of(kg), 1);
    EXPECT_EQ(t.hops(), 1u);
    EXPECT_TRUE(verify_walk(kg, t, 5));
    EXPECT_THROW(generate_walk(kg, "nope", 2, importance_of(kg), 1), ValidationError);
    EXPECT_THROW(generate_walk(kg, "e0", 0, importance_of(kg), 1), ConfigError);
}

TEST(GenerateWalk, MonteCarloMatchesSoftmax) {
    KnowledgeGraph kg;
    kg.add_entity("hub", "Hub");
    kg.add_entity("a", "A");
    kg.add_entity("b", "B");
    kg.add_relation("r1", "one", 1.0);
    kg.add_relation("r2", "two", 0.0);
    kg.add_triple(0, 0, 1);
    kg.add_triple(0, 1, 2);
    int hits = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) hits += generate_walk(kg, 0, 1, importance_of(kg), derive_seed(42, std::to_string(i))).entities[1] == 1;
    EXPECT_NEAR(static_cast<double>(hits) / n, 0.731, 0.01);
}

TEST(GenerateWalk, FiveEdgeFrequenciesWithinL1) {
    KnowledgeGraph kg = star5();
    auto dist = step_distribution(kg, 0, importance_of(kg));
    std::vector<double> freq(5, 0.0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) freq[generate_walk(kg, 0, 1, importance_of(kg), derive_seed(1, std::to_string(i))).relations[0]] += 1.0 / n;
    double l1 = 0.0;
    for (int i = 0; i < 5; ++i) l1 += std::abs(freq[i] - dist[i].probability);
    EXPECT_LE(l1, 0.02);
}

TEST(GenerateWalk, DeterministicAndValid) {
    KnowledgeGraph kg = random_kg(9);
    for (int i = 0; i < 500; ++i) {
        auto w = generate_walk(kg, i % 24, 6, importance_of(kg), derive_seed(3, std::to_string(i)));
        EXPECT_TRUE(verify_walk(kg, w, 6));
        EXPECT_EQ(w, generate_walk(kg, i % 24, 6, importance_of(kg), derive_seed(3, std::to_string(i))));
    }
}

TEST(VerifyWalk, RejectsBrokenWalks) {
    KnowledgeGraph kg = chain();
    KnowledgeWalk w{{0, 2}, {0}, 0};
    EXPECT_FALSE(verify_walk(kg, w, 3));
    KnowledgeWalk early{{0, 1}, {0}, 0};  // e1 is not a sink
    EXPECT_FALSE(verify_walk(kg, early, 3));
    EXPECT_TRUE(verify_walk(kg, early, 1));
}

TEST(WalksForParagraph, CountingAndIsolation) {
    KnowledgeGraph kg = random_kg(5);
    std::vector<std::string> two{"e0", "e1"};
    EXPECT_EQ(generate_walks_for_paragraph(kg, two, 4, 3, importance_of(kg), 8).size(), 6u);
    EXPECT_TRUE(generate_walks_for_paragraph(kg, {}, 4, 3, importance_of(kg), 8).empty());
    long before = log::warning_count();
    std::vector<std::string> with_unknown{"e0", "ghost", "e1"};
    auto a = generate_walks_for_paragraph(kg, two, 4, 3, importance_of(kg), 8);
    auto b = generate_walks_for_paragraph(kg, with_unknown, 4, 3, importance_of(kg), 8);
    EXPECT_EQ(a, b);
    EXPECT_EQ(log::warning_count(), before + 1);
}

TEST(WalkSentence, Examples) {
    KnowledgeGraph kg;
    kg.add_entity("DonaldTrump", "Donald Trump");
    kg.add_entity("RepublicanParty", "Republican Party");
    kg.add_relation("memberOf", "member of");
    kg.add_triple(0, 0, 1);
    KnowledgeWalk w{{0, 1}, {0}, 0};
    EXPECT_EQ(walk_to_sentence(kg, w), "Donald Trump member of Republican Party");
    EXPECT_EQ(walk_to_sentence(kg, KnowledgeWalk{{0}, {}, 0}), "Donald Trump");
    KnowledgeGraph c = chain();
    EXPECT_EQ(walk_to_sentence(c, KnowledgeWalk{{0, 1, 2}, {0, 0}, 0}), "Zero then One then Two");
    KnowledgeGraph blank;
    blank.add_entity("x", "");
    EXPECT_THROW(walk_to_sentence(blank, KnowledgeWalk{{0}, {}, 0}), ValidationError);
}

TEST(WalkFile, RoundTrip) {
    KnowledgeGraph kg = random_kg(6);
    DocumentRecord d{"d1", 0, 0, {}};
    Paragraph p;
    p.entity_ids = {"e1", "e2"};
    d.paragraphs = {p, p};
    auto walks = generate_corpus_walks(kg, {d}, importance_of(kg), {5, 2, 11});
    EXPECT_EQ(walks.size(), 8u);
    auto path = (std::filesystem::temp_directory_path() / "kcd_walks_rt.tsv").string();
    write_walks(path, kg, walks);
    EXPECT_EQ(read_walks(path, kg), walks);
}
