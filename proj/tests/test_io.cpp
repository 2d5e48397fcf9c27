#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "kcd/io.hpp"
#include "kcd/log.hpp"
#include "kcd/random.hpp"

using namespace kcd;
namespace fs = std::filesystem;

namespace {

std::string tmp(const std::string& name) { return (fs::temp_directory_path() / ("kcd_io_" + name)).string(); }

void write(const std::string& p, const std::string& text) { std::ofstream(p) << text; }

DocumentRecord doc(const std::string& id, int label, int tense = 3) {
    Paragraph p{"Some text.", "t1", Sentiment::Negative, tense, false, {"e1"}};
    return {id, label, 0, {p}};
}

} // namespace

TEST(EmbeddingMatrixFile, ParsesHeaderAndRows) {
    write(tmp("a.emb"), "2 3\nk1 1 2 3\nk2 4 5 6\n");
    auto m = read_embedding_matrix(tmp("a.emb"));
    EXPECT_EQ(m.rows(), 2);
    EXPECT_EQ(m.dim(), 3);
    EXPECT_EQ(m.row("k2")(1), 5.0);
}

TEST(EmbeddingMatrixFile, ShortRowIsErrorAtThatRow) {
    write(tmp("b.emb"), "2 3\nk1 1 2 3\nk2 4 5\n");
    try {
        read_embedding_matrix(tmp("b.emb"));
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
    write(tmp("c.emb"), "2 1\nk 1\nk 2\n");
    EXPECT_THROW(read_embedding_matrix(tmp("c.emb")), FormatError);
}

TEST(EmbeddingMatrixFile, RoundTripIsExact) {
    Rng rng(1);
    std::normal_distribution<double> n(0.0, 1e3);
    Matrix v(4, 5);
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = n(rng) / 7.0;
    EmbeddingMatrix m({"a", "b", "c", "d"}, v);
    write_embedding_matrix(tmp("rt.emb"), m);
    EXPECT_EQ(read_embedding_matrix(tmp("rt.emb")), m);
}

TEST(Corpus, ImbalancedFixtureSummary) {
    std::vector<DocumentRecord> docs;
    for (int i = 0; i < 645; ++i) docs.push_back(doc("d" + std::to_string(i), i < 407 ? 0 : 1));
    write_corpus(tmp("big.jsonl"), docs);
    auto loaded = load_corpus(tmp("big.jsonl"), 2);
    auto s = summarize(loaded);
    EXPECT_EQ(s.documents, 645u);
    EXPECT_EQ(s.class_counts.at(0), 407u);
    EXPECT_EQ(s.class_counts.at(1), 238u);
    EXPECT_EQ(loaded, docs);
}

TEST(Corpus, TenseOutOfRangeIsError) {
    write_corpus(tmp("tense.jsonl"), {doc("x", 0, 17)});
    EXPECT_THROW(load_corpus(tmp("tense.jsonl")), ValidationError);
}

TEST(Corpus, MissingFieldNamesDocAndField) {
    write(tmp("miss.jsonl"), R"({"doc_id":"d7","label":0,"fold":0,"paragraphs":[{"text":"x","topic_id":"t","sentiment":"positive","quotation":false,"entity_ids":[]}]})"
                             "\n");
    try {
        load_corpus(tmp("miss.jsonl"));
        FAIL();
    } catch (const ValidationError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("d7"), std::string::npos);
        EXPECT_NE(msg.find("tense_id"), std::string::npos);
    }
}

TEST(Corpus, EmptyFileWarns) {
    write(tmp("empty.jsonl"), "");
    long before = log::warning_count();
    EXPECT_TRUE(load_corpus(tmp("empty.jsonl")).empty());
    EXPECT_EQ(log::warning_count(), before + 1);
}

TEST(Corpus, LabelBoundAndDuplicateIds) {
    write_corpus(tmp("lab.jsonl"), {doc("a", 2)});
    EXPECT_THROW(load_corpus(tmp("lab.jsonl"), 2), ValidationError);
    write_corpus(tmp("dup.jsonl"), {doc("a", 0), doc("a", 1)});
    EXPECT_THROW(load_corpus(tmp("dup.jsonl")), ValidationError);
}

TEST(Corpus, ParagraphEmbeddingIntegrity) {
    std::vector<DocumentRecord> docs{doc("a", 0)};
    EmbeddingMatrix ok(2);
    ok.append(paragraph_key("a", 0), Eigen::RowVector2d(1, 0));
    EXPECT_NO_THROW(check_paragraph_embeddings(docs, ok));
    EmbeddingMatrix extra = ok;
    extra.append("b:0", Eigen::RowVector2d(0, 1));
    EXPECT_THROW(check_paragraph_embeddings(docs, extra), ValidationError);
    EXPECT_THROW(check_paragraph_embeddings(docs, EmbeddingMatrix(2)), ValidationError);
}

TEST(SyntheticEmbedding, DeterministicUnitNorm) {
    auto a = synthetic_embedding("key", 16, 5), b = synthetic_embedding("key", 16, 5), c = synthetic_embedding("other", 16, 5);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    EXPECT_NEAR(a.norm(), 1.0, 1e-12);
    EXPECT_NEAR(synthetic_sentence_embedding("a b c", 16, 5).norm(), 1.0, 1e-12);
}
