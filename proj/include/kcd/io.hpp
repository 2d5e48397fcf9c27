#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "kcd/error.hpp"
#include "kcd/log.hpp"
#include "kcd/random.hpp"
#include "kcd/tensor.hpp"
#include "kcd/text.hpp"

namespace kcd {

/// n×d matrix of finite reals with one unique string key per row.
class EmbeddingMatrix {
public:
    EmbeddingMatrix() = default;

    explicit EmbeddingMatrix(int dim) : values_(0, dim) {}

    EmbeddingMatrix(std::vector<std::string> keys, Matrix values) : keys_(std::move(keys)), values_(std::move(values)) {
        if (static_cast<Index>(keys_.size()) != values_.rows())
            throw ValidationError("embedding matrix: " + std::to_string(keys_.size()) + " keys for " +
                                  std::to_string(values_.rows()) + " rows");
        if (!values_.allFinite()) throw ValidationError("embedding matrix: non-finite value");
        for (std::size_t i = 0; i < keys_.size(); ++i)
            if (!index_.emplace(keys_[i], static_cast<int>(i)).second)
                throw ValidationError("embedding matrix: duplicate key '" + keys_[i] + "'");
    }

    int rows() const { return static_cast<int>(keys_.size()); }
    int dim() const { return static_cast<int>(values_.cols()); }
    const std::vector<std::string>& keys() const { return keys_; }
    const Matrix& values() const { return values_; }

    bool contains(const std::string& key) const { return index_.contains(key); }

    std::optional<int> find(const std::string& key) const {
        auto it = index_.find(key);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    auto row(const std::string& key) const {
        auto it = index_.find(key);
        if (it == index_.end()) throw ValidationError("no embedding for key '" + key + "'");
        return values_.row(it->second);
    }

    auto row(int i) const { return values_.row(i); }

    /// Appends a row; throws on duplicate key or dimension mismatch.
    void append(std::string key, const Eigen::Ref<const Eigen::RowVectorXd>& v) {
        if (values_.cols() == 0 && values_.rows() == 0) values_.resize(0, v.size());
        if (v.size() != values_.cols())
            throw ValidationError("embedding for '" + key + "' has dimension " + std::to_string(v.size()) + ", expected " +
                                  std::to_string(values_.cols()));
        if (!v.allFinite()) throw ValidationError("embedding for '" + key + "' is not finite");
        if (!index_.emplace(key, rows()).second) throw ValidationError("duplicate embedding key '" + key + "'");
        keys_.push_back(std::move(key));
        values_.conservativeResize(values_.rows() + 1, Eigen::NoChange);
        values_.row(values_.rows() - 1) = v;
    }

    friend bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
        return a.keys_ == b.keys_ && a.values_.rows() == b.values_.rows() && a.values_.cols() == b.values_.cols() &&
               a.values_ == b.values_;
    }

private:
    std::vector<std::string> keys_;
    Matrix values_;
    std::unordered_map<std::string, int> index_;
};

/// Reads `n d` followed by n lines `key v1 ... vd`.
inline EmbeddingMatrix read_embedding_matrix(const std::string& path) {
    auto in = text::open_input(path);
    std::string line;
    std::size_t lineno = 0;
    auto next_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++lineno;
            if (!text::chomp(line).empty()) return true;
        }
        return false;
    };
    if (!next_line()) throw FormatError(path, 1, "missing header 'n d'");
    auto header = text::split_ws(text::chomp(line));
    long n = 0, d = 0;
    if (header.size() != 2 || !text::parse_int(header[0], n) || !text::parse_int(header[1], d) || n < 0 || d < 1)
        throw FormatError(path, lineno, "malformed header, expected 'n d'");
    std::vector<std::string> keys;
    keys.reserve(static_cast<std::size_t>(n));
    Matrix values(n, d);
    std::set<std::string, std::less<>> seen;
    for (long i = 0; i < n; ++i) {
        if (!next_line()) throw FormatError(path, lineno + 1, "expected " + std::to_string(n) + " rows, file ended after " + std::to_string(i));
        auto fields = text::split_ws(text::chomp(line));
        if (static_cast<long>(fields.size()) != d + 1)
            throw FormatError(path, lineno,
                              "row " + std::to_string(i + 1) + " has " + std::to_string(fields.empty() ? 0 : fields.size() - 1) +
                                  " values, expected " + std::to_string(d));
        if (!seen.emplace(fields[0]).second) throw FormatError(path, lineno, "duplicate key '" + std::string(fields[0]) + "'");
        keys.emplace_back(fields[0]);
        for (long j = 0; j < d; ++j) {
            double v = 0.0;
            if (!text::parse_double(fields[j + 1], v) || !std::isfinite(v))
                throw FormatError(path, lineno, "invalid number '" + std::string(fields[j + 1]) + "'");
            values(i, j) = v;
        }
    }
    if (next_line()) throw FormatError(path, lineno, "more rows than the header declares");
    return EmbeddingMatrix(std::move(keys), std::move(values));
}

inline void write_embedding_matrix(std::ostream& out, const EmbeddingMatrix& m) {
    out << m.rows() << ' ' << m.dim() << '\n';
    for (int i = 0; i < m.rows(); ++i) {
        out << m.keys()[i];
        for (int j = 0; j < m.dim(); ++j) out << ' ' << text::format_double(m.values()(i, j));
        out << '\n';
    }
}

inline void write_embedding_matrix(const std::string& path, const EmbeddingMatrix& m) {
    auto out = text::open_output(path);
    write_embedding_matrix(out, m);
}

// ---------------------------------------------------------------------------
// Corpus

enum class Sentiment { Positive = 0, Negative = 1 };

inline const char* to_string(Sentiment s) { return s == Sentiment::Positive ? "positive" : "negative"; }

/// Number of tense categories a paragraph can be annotated with.
inline constexpr int kTenseCount = 17;

struct Paragraph {
    std::string text;
    std::string topic_id;
    Sentiment sentiment = Sentiment::Positive;
    int tense_id = 0;
    bool quotation = false;
    std::vector<std::string> entity_ids;

    friend bool operator==(const Paragraph&, const Paragraph&) = default;
};

struct DocumentRecord {
    std::string doc_id;
    int label = 0;
    int fold = 0;
    std::vector<Paragraph> paragraphs;

    friend bool operator==(const DocumentRecord&, const DocumentRecord&) = default;
};

/// Embedding-file key of paragraph `index` of document `doc_id`.
inline std::string paragraph_key(const std::string& doc_id, std::size_t index) {
    return doc_id + ":" + std::to_string(index);
}

/// Embedding-file key of walk `walk` generated for a paragraph.
inline std::string walk_key(const std::string& doc_id, std::size_t paragraph, std::size_t walk) {
    return paragraph_key(doc_id, paragraph) + ":" + std::to_string(walk);
}

struct CorpusSummary {
    std::size_t documents = 0;
    std::size_t paragraphs = 0;
    std::map<int, std::size_t> class_counts;
    std::set<int> folds;
};

inline CorpusSummary summarize(const std::vector<DocumentRecord>& docs) {
    CorpusSummary s;
    s.documents = docs.size();
    for (const auto& d : docs) {
        s.paragraphs += d.paragraphs.size();
        ++s.class_counts[d.label];
        s.folds.insert(d.fold);
    }
    return s;
}

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& obj, const char* field, const std::string& where) {
    if (!obj.is_object() || !obj.contains(field)) throw ValidationError(where + ": missing field '" + field + "'");
    return obj.at(field);
}

inline Paragraph paragraph_from_json(const nlohmann::json& j, const std::string& where) {
    Paragraph p;
    try {
        p.text = require_field(j, "text", where).get<std::string>();
        p.topic_id = require_field(j, "topic_id", where).get<std::string>();
        std::string s = require_field(j, "sentiment", where).get<std::string>();
        if (s == "positive")
            p.sentiment = Sentiment::Positive;
        else if (s == "negative")
            p.sentiment = Sentiment::Negative;
        else
            throw ValidationError(where + ": sentiment must be 'positive' or 'negative', got '" + s + "'");
        p.tense_id = require_field(j, "tense_id", where).get<int>();
        if (p.tense_id < 0 || p.tense_id >= kTenseCount)
            throw ValidationError(where + ": tense_id " + std::to_string(p.tense_id) + " outside 0.." +
                                  std::to_string(kTenseCount - 1));
        p.quotation = require_field(j, "quotation", where).get<bool>();
        p.entity_ids = require_field(j, "entity_ids", where).get<std::vector<std::string>>();
    } catch (const nlohmann::json::type_error& e) {
        throw ValidationError(where + ": wrong field type (" + e.what() + ")");
    }
    return p;
}

} // namespace detail

inline nlohmann::json to_json(const DocumentRecord& d) {
    nlohmann::json paras = nlohmann::json::array();
    for (const auto& p : d.paragraphs)
        paras.push_back({{"text", p.text},
                         {"topic_id", p.topic_id},
                         {"sentiment", to_string(p.sentiment)},
                         {"tense_id", p.tense_id},
                         {"quotation", p.quotation},
                         {"entity_ids", p.entity_ids}});
    return {{"doc_id", d.doc_id}, {"label", d.label}, {"fold", d.fold}, {"paragraphs", std::move(paras)}};
}

inline DocumentRecord document_from_json(const nlohmann::json& j, const std::string& where) {
    DocumentRecord d;
    try {
        d.doc_id = detail::require_field(j, "doc_id", where).get<std::string>();
        std::string at = where + " (doc '" + d.doc_id + "')";
        d.label = detail::require_field(j, "label", at).get<int>();
        d.fold = detail::require_field(j, "fold", at).get<int>();
        const auto& paras = detail::require_field(j, "paragraphs", at);
        if (!paras.is_array() || paras.empty()) throw ValidationError(at + ": 'paragraphs' must be a non-empty array");
        for (std::size_t i = 0; i < paras.size(); ++i)
            d.paragraphs.push_back(detail::paragraph_from_json(paras[i], at + " paragraphs[" + std::to_string(i) + "]"));
        if (d.label < 0) throw ValidationError(at + ": negative label");
        if (d.doc_id.empty() || text::has_whitespace(d.doc_id) || d.doc_id.find(':') != std::string::npos)
            throw ValidationError(at + ": doc_id must be non-empty without whitespace or ':'");
    } catch (const nlohmann::json::type_error& e) {
        throw ValidationError(where + ": wrong field type (" + e.what() + ")");
    }
    return d;
}

/// Loads one JSON document record per line. `num_classes`, when given,
/// bounds the labels.
inline std::vector<DocumentRecord> load_corpus(const std::string& path, std::optional<int> num_classes = std::nullopt) {
    auto in = text::open_input(path);
    std::vector<DocumentRecord> docs;
    std::set<std::string, std::less<>> ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::chomp(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError(path, lineno, std::string("invalid JSON: ") + e.what());
        }
        try {
            DocumentRecord d = document_from_json(j, "record");
            if (num_classes && d.label >= *num_classes)
                throw ValidationError("doc '" + d.doc_id + "': label " + std::to_string(d.label) + " >= class count " +
                                      std::to_string(*num_classes));
            if (!ids.insert(d.doc_id).second) throw ValidationError("duplicate doc_id '" + d.doc_id + "'");
            docs.push_back(std::move(d));
        } catch (const FormatError&) {
            throw;
        } catch (const ValidationError& e) {
            throw FormatError(path, lineno, e.what());
        }
    }
    if (docs.empty()) log::warn("corpus " + path + " is empty");
    return docs;
}

inline void write_corpus(const std::string& path, const std::vector<DocumentRecord>& docs) {
    auto out = text::open_output(path);
    for (const auto& d : docs) out << to_json(d).dump() << '\n';
}

/// Paragraph embeddings must cover exactly the corpus paragraphs.
inline void check_paragraph_embeddings(const std::vector<DocumentRecord>& docs, const EmbeddingMatrix& emb) {
    std::size_t expected = 0;
    for (const auto& d : docs)
        for (std::size_t i = 0; i < d.paragraphs.size(); ++i, ++expected)
            if (!emb.contains(paragraph_key(d.doc_id, i)))
                throw ValidationError("paragraph embeddings: missing key '" + paragraph_key(d.doc_id, i) + "'");
    if (static_cast<std::size_t>(emb.rows()) != expected) {
        std::set<std::string> known;
        for (const auto& d : docs)
            for (std::size_t i = 0; i < d.paragraphs.size(); ++i) known.insert(paragraph_key(d.doc_id, i));
        for (const auto& k : emb.keys())
            if (!known.contains(k)) throw ValidationError("paragraph embeddings: key '" + k + "' matches no corpus paragraph");
    }
}

} // namespace kcd
