#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "kcd/hin.hpp"
#include "kcd/io.hpp"
#include "kcd/kg.hpp"
#include "kcd/log.hpp"
#include "kcd/metrics.hpp"
#include "kcd/model.hpp"
#include "kcd/optim.hpp"
#include "kcd/walk.hpp"

namespace kcd {

// ---------------------------------------------------------------------------
// Configuration

/// Where walks come from: the dataset's walk file when one was given
/// (`Auto`), always regenerated from the KG (`Generate`), or the file only.
enum class WalkSource { Auto, Generate, File };

inline const char* to_string(WalkSource s) {
    switch (s) {
    case WalkSource::Auto: return "auto";
    case WalkSource::Generate: return "generate";
    case WalkSource::File: return "file";
    }
    return "?";
}

inline WalkSource parse_walk_source(const std::string& s) {
    if (s == "auto") return WalkSource::Auto;
    if (s == "generate") return WalkSource::Generate;
    if (s == "file") return WalkSource::File;
    throw ConfigError("unknown walk source '" + s + "' (expected auto, generate or file)");
}

struct TrainConfig {
    ModelConfig model;
    int epochs = 150;
    int batch_size = 16;
    double lr = 1e-3;
    int scheduler_patience = 20;
    double scheduler_factor = 0.1;
    int early_stop = 40;
    double l2 = 1e-4;
    double validation_fraction = 0.1;
    int walk_length = 8;
    int walks_per_entity = 1;
    WalkSource walk_source = WalkSource::Auto;
    std::uint64_t seed = 0;
    /// Folds to evaluate; empty means every fold in the corpus.
    std::vector<int> folds;
    /// Share of each fold's training split actually used.
    double train_fraction = 1.0;
    /// Cue-removal ablation: drop edges of these relations with this probability.
    std::vector<Relation> drop_relations;
    double drop_probability = 0.0;
};

inline void validate(const TrainConfig& c) {
    validate(c.model);
    if (c.epochs < 1 || c.batch_size < 1 || !(c.lr > 0.0) || c.scheduler_patience < 0 || !(c.scheduler_factor > 0.0) ||
        !(c.scheduler_factor < 1.0) || c.early_stop < 1 || c.l2 < 0.0)
        throw ConfigError("train config: epochs, batch size, lr and early-stop must be positive, scheduler factor in (0, 1)");
    if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0))
        throw ConfigError("train config: validation_fraction must lie in [0, 1)");
    if (c.walk_length < 1 || c.walks_per_entity < 0) throw ConfigError("train config: walk_length must be >= 1");
    if (!(c.train_fraction > 0.0 && c.train_fraction <= 1.0)) throw ConfigError("train config: train_fraction must lie in (0, 1]");
    if (!(c.drop_probability >= 0.0 && c.drop_probability <= 1.0))
        throw ConfigError("train config: drop_probability must lie in [0, 1]");
    for (Relation r : c.drop_relations)
        if (r == Relation::Adjacent) throw ConfigError("train config: R1 cannot be removed");
}

inline nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json drops = nlohmann::json::array();
    for (Relation r : c.drop_relations) drops.push_back(to_string(r));
    return {{"model", to_json(c.model)},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"scheduler_patience", c.scheduler_patience},
            {"scheduler_factor", c.scheduler_factor},
            {"early_stop", c.early_stop},
            {"l2", c.l2},
            {"validation_fraction", c.validation_fraction},
            {"walk_length", c.walk_length},
            {"walks_per_entity", c.walks_per_entity},
            {"walk_source", to_string(c.walk_source)},
            {"seed", c.seed},
            {"folds", c.folds},
            {"train_fraction", c.train_fraction},
            {"drop_relations", drops},
            {"drop_probability", c.drop_probability}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{"model",       "epochs",     "batch_size",       "lr",
                                             "scheduler_patience", "scheduler_factor", "early_stop", "l2",
                                             "validation_fraction", "walk_length", "walks_per_entity", "walk_source",
                                             "seed",        "folds",      "train_fraction",   "drop_relations",
                                             "drop_probability", "data"};
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.contains(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
    TrainConfig c;
    try {
        if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.lr = j.value("lr", c.lr);
        c.scheduler_patience = j.value("scheduler_patience", c.scheduler_patience);
        c.scheduler_factor = j.value("scheduler_factor", c.scheduler_factor);
        c.early_stop = j.value("early_stop", c.early_stop);
        c.l2 = j.value("l2", c.l2);
        c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
        c.walk_length = j.value("walk_length", c.walk_length);
        c.walks_per_entity = j.value("walks_per_entity", c.walks_per_entity);
        c.walk_source = parse_walk_source(j.value("walk_source", std::string("auto")));
        c.seed = j.value("seed", c.seed);
        c.folds = j.value("folds", c.folds);
        c.train_fraction = j.value("train_fraction", c.train_fraction);
        for (const auto& r : j.value("drop_relations", std::vector<std::string>{})) c.drop_relations.push_back(parse_relation(r));
        c.drop_probability = j.value("drop_probability", c.drop_probability);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    validate(c);
    return c;
}

/// 16 hex digits of FNV-1a over the canonical JSON form.
inline std::string config_hash(const TrainConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(c).dump())));
    return buf;
}

// ---------------------------------------------------------------------------
// Data

struct DataPaths {
    std::string corpus;
    std::string kg_dir;
    std::string importance;
    std::string paragraph_embeddings;
    std::string topic_embeddings;
    std::string entity_embeddings;
    std::string walks;
    std::string walk_embeddings;
};

/// Reads the "data" object of a config; relative paths resolve against `base`.
inline DataPaths data_paths_from_json(const nlohmann::json& j, const std::filesystem::path& base) {
    DataPaths p;
    auto get = [&](const char* key) -> std::string {
        if (!j.contains(key)) return {};
        std::filesystem::path v = j.at(key).get<std::string>();
        return v.is_absolute() || base.empty() ? v.string() : (base / v).string();
    };
    p.corpus = get("corpus");
    p.kg_dir = get("kg_dir");
    p.importance = get("importance");
    p.paragraph_embeddings = get("paragraph_embeddings");
    p.topic_embeddings = get("topic_embeddings");
    p.entity_embeddings = get("entity_embeddings");
    p.walks = get("walks");
    p.walk_embeddings = get("walk_embeddings");
    return p;
}

struct Dataset {
    std::vector<DocumentRecord> docs;
    KnowledgeGraph kg;
    EmbeddingMatrix paragraphs;
    EmbeddingMatrix topics;
    EmbeddingMatrix entities;
    std::optional<std::vector<WalkRecord>> walks;
    /// Keyed by walk_key(doc, paragraph, index within paragraph).
    std::optional<EmbeddingMatrix> walk_embeddings;
};

inline Dataset load_dataset(const DataPaths& p, std::optional<int> num_classes = std::nullopt) {
    auto need = [](const std::string& v, const char* what) {
        if (v.empty()) throw ConfigError(std::string("data: missing path for ") + what);
    };
    need(p.corpus, "corpus");
    need(p.kg_dir, "kg_dir");
    need(p.paragraph_embeddings, "paragraph_embeddings");
    need(p.topic_embeddings, "topic_embeddings");
    need(p.entity_embeddings, "entity_embeddings");
    Dataset d;
    d.docs = load_corpus(p.corpus, num_classes);
    d.kg = load_kg_dir(p.kg_dir, p.importance.empty() ? std::nullopt : std::optional<std::string>(p.importance));
    d.paragraphs = read_embedding_matrix(p.paragraph_embeddings);
    d.topics = read_embedding_matrix(p.topic_embeddings);
    d.entities = read_embedding_matrix(p.entity_embeddings);
    check_paragraph_embeddings(d.docs, d.paragraphs);
    if (!p.walks.empty()) d.walks = read_walks(p.walks, d.kg);
    if (!p.walk_embeddings.empty()) {
        if (!d.walks) throw ConfigError("data: walk_embeddings given without a walk file");
        d.walk_embeddings = read_embedding_matrix(p.walk_embeddings);
    }
    const int dim = d.paragraphs.dim();
    auto same_dim = [&](const EmbeddingMatrix& m, const char* what) {
        if (m.rows() > 0 && m.dim() != dim)
            throw ValidationError(std::string(what) + " have dimension " + std::to_string(m.dim()) + ", paragraphs have " +
                                  std::to_string(dim));
    };
    same_dim(d.topics, "topic embeddings");
    same_dim(d.entities, "entity embeddings");
    if (d.walk_embeddings) same_dim(*d.walk_embeddings, "walk embeddings");
    return d;
}

/// Stand-in sentence encoder for walks without precomputed embeddings.
/// Fixed seed so that equal sentences always map to equal vectors.
inline Eigen::RowVectorXd encode_walk_sentence(const std::string& sentence, int dim) {
    return synthetic_sentence_embedding(sentence, dim, 0x6b6364).transpose();
}

/// Per-document model inputs plus their fold ids, in corpus order.
struct PreparedCorpus {
    std::vector<DocumentInputs> inputs;
    std::vector<int> folds;
    std::vector<int> labels;
    int num_classes = 2;
};

inline PreparedCorpus prepare_inputs(const Dataset& data, const TrainConfig& config) {
    const int dim = data.paragraphs.dim();
    std::vector<WalkRecord> generated;
    const std::vector<WalkRecord>* walks = nullptr;
    bool from_file = false;
    if (config.walk_source == WalkSource::File && !data.walks) throw ConfigError("walk_source is 'file' but no walk file was given");
    if (config.walk_source != WalkSource::Generate && data.walks) {
        walks = &*data.walks;
        from_file = true;
    } else {
        WalkOptions wo{config.walk_length, config.walks_per_entity, derive_seed(config.seed, "walks")};
        generated = generate_corpus_walks(data.kg, data.docs, importance_of(data.kg), wo);
        walks = &generated;
    }
    std::map<std::string, std::vector<const WalkRecord*>> by_doc;
    for (const auto& w : *walks) by_doc[w.doc_id].push_back(&w);

    PreparedCorpus out;
    out.inputs.reserve(data.docs.size());
    int max_label = 1;
    for (const auto& doc : data.docs) {
        DocumentInputs in;
        in.graph = build_hin(doc, data.topics, data.entities);
        if (!config.drop_relations.empty() && config.drop_probability > 0.0)
            in.graph = drop_cues(in.graph, config.drop_relations, config.drop_probability, derive_seed(config.seed, "cue-removal"));
        const std::size_t n = doc.paragraphs.size();
        in.paragraphs.resize(static_cast<Index>(n), dim);
        for (std::size_t i = 0; i < n; ++i) in.paragraphs.row(static_cast<Index>(i)) = data.paragraphs.row(paragraph_key(doc.doc_id, i));
        std::vector<int> per_paragraph(n, 0);
        std::vector<Eigen::RowVectorXd> rows;
        if (auto it = by_doc.find(doc.doc_id); it != by_doc.end()) {
            for (const WalkRecord* w : it->second) {
                if (w->paragraph < 0 || static_cast<std::size_t>(w->paragraph) >= n)
                    throw ValidationError("walk for doc '" + doc.doc_id + "' names paragraph " + std::to_string(w->paragraph) +
                                          " of " + std::to_string(n));
                const auto p = static_cast<std::size_t>(w->paragraph);
                const int idx = per_paragraph[p]++;
                if (from_file && data.walk_embeddings)
                    rows.push_back(data.walk_embeddings->row(walk_key(doc.doc_id, p, static_cast<std::size_t>(idx))));
                else
                    rows.push_back(encode_walk_sentence(w->sentence, dim));
                in.walk_owner.push_back(w->paragraph);
            }
        }
        in.walks.resize(static_cast<Index>(rows.size()), dim);
        for (std::size_t j = 0; j < rows.size(); ++j) in.walks.row(static_cast<Index>(j)) = rows[j];
        out.folds.push_back(doc.fold);
        out.labels.push_back(doc.label);
        max_label = std::max(max_label, doc.label);
        out.inputs.push_back(std::move(in));
    }
    out.num_classes = max_label + 1;
    return out;
}

// ---------------------------------------------------------------------------
// Parallelism

/// Worker cap from KCD_THREADS, else the hardware concurrency.
inline int thread_budget() {
    if (const char* env = std::getenv("KCD_THREADS")) {
        int n = 0;
        if (text::parse_int(std::string_view(env), n) && n >= 1) return n;
        log::warn("ignoring invalid KCD_THREADS='" + std::string(env) + "'");
    }
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The first
/// exception by index is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    std::vector<std::exception_ptr> errors(n);
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t count = std::min<std::size_t>(n, static_cast<std::size_t>(threads));
    for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Evaluation

struct Predictions {
    std::vector<int> labels;
    std::vector<int> predicted;
    double mean_ce = 0.0;
};

inline Predictions predict(ModelState& model, std::span<const DocumentInputs* const> docs, const FeatureTables& tables,
                           std::size_t chunk = 64) {
    if (docs.empty()) throw ValidationError("evaluate: empty document set");
    Predictions out;
    double ce = 0.0;
    for (std::size_t start = 0; start < docs.size(); start += chunk) {
        auto part = docs.subspan(start, std::min(chunk, docs.size() - start));
        GraphBatch batch = make_batch(part, tables);
        ad::Tape tape;
        ForwardOutput f = forward(tape, model, batch);
        const Matrix& logits = f.logits.value();
        ce += ad::cross_entropy_logits(f.logits, batch.labels).value()(0, 0) * static_cast<double>(part.size());
        for (Index g = 0; g < logits.rows(); ++g) {
            Index best = 0;
            logits.row(g).maxCoeff(&best);
            out.predicted.push_back(static_cast<int>(best));
            out.labels.push_back(batch.labels[static_cast<std::size_t>(g)]);
        }
    }
    out.mean_ce = ce / static_cast<double>(docs.size());
    return out;
}

inline Metrics evaluate(ModelState& model, std::span<const DocumentInputs* const> docs, const FeatureTables& tables) {
    Predictions p = predict(model, docs, tables);
    return compute_metrics(p.labels, p.predicted, model.config.num_classes);
}

// ---------------------------------------------------------------------------
// Training

struct FoldReport {
    int fold = 0;
    std::size_t train_size = 0;
    std::size_t validation_size = 0;
    std::size_t test_size = 0;
    int epochs_run = 0;
    int best_epoch = -1;
    double final_lr = 0.0;
    Metrics train;
    Metrics test;
    std::vector<double> train_loss;
    std::vector<double> validation_loss;
};

struct EvalReport {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<FoldReport> folds;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double train_accuracy = 0.0;
};

inline nlohmann::json to_json(const Metrics& m) {
    return {{"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}, {"confusion", m.confusion.counts}};
}

inline nlohmann::json to_json(const FoldReport& f) {
    return {{"fold", f.fold},
            {"train_size", f.train_size},
            {"validation_size", f.validation_size},
            {"test_size", f.test_size},
            {"epochs_run", f.epochs_run},
            {"best_epoch", f.best_epoch},
            {"final_lr", f.final_lr},
            {"train", to_json(f.train)},
            {"test", to_json(f.test)},
            {"train_loss", f.train_loss},
            {"validation_loss", f.validation_loss}};
}

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : r.folds) folds.push_back(to_json(f));
    return {{"config_hash", r.config_hash}, {"seed", r.seed},         {"accuracy", r.accuracy},
            {"macro_f1", r.macro_f1},       {"train_accuracy", r.train_accuracy}, {"folds", folds}};
}

struct FoldSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

/// Test = documents of `fold`; the rest is shuffled and a validation share
/// held out. `train_fraction` then keeps a prefix of the remaining train set.
inline FoldSplit split_fold(const PreparedCorpus& corpus, int fold, const TrainConfig& config) {
    FoldSplit s;
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < corpus.folds.size(); ++i) (corpus.folds[i] == fold ? s.test : rest).push_back(i);
    if (s.test.empty()) throw ValidationError("fold " + std::to_string(fold) + " has no test documents");
    if (rest.empty()) throw ValidationError("fold " + std::to_string(fold) + " leaves no training documents");
    Rng rng(derive_seed(config.seed, "split:" + std::to_string(fold)));
    std::shuffle(rest.begin(), rest.end(), rng);
    std::size_t nval = static_cast<std::size_t>(std::llround(config.validation_fraction * static_cast<double>(rest.size())));
    if (config.validation_fraction > 0.0 && rest.size() >= 2) nval = std::clamp<std::size_t>(nval, 1, rest.size() - 1);
    else nval = 0;
    s.validation.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(nval));
    s.train.assign(rest.begin() + static_cast<std::ptrdiff_t>(nval), rest.end());
    if (config.train_fraction < 1.0) {
        auto keep = static_cast<std::size_t>(std::ceil(config.train_fraction * static_cast<double>(s.train.size()) - 1e-9));
        s.train.resize(std::max<std::size_t>(1, keep));
    }
    std::set<std::size_t> test_set(s.test.begin(), s.test.end());
    for (std::size_t i : s.train)
        if (test_set.contains(i)) throw Error("fold discipline violated: document in both train and test");
    for (std::size_t i : s.validation)
        if (test_set.contains(i)) throw Error("fold discipline violated: document in both validation and test");
    return s;
}

struct FoldResult {
    FoldReport report;
    ModelState model;
};

inline FoldResult train_fold(const PreparedCorpus& corpus, const FeatureTables& tables, const TrainConfig& config, int fold) {
    FoldSplit split = split_fold(corpus, fold, config);
    auto pointers = [&](const std::vector<std::size_t>& idx) {
        std::vector<const DocumentInputs*> out;
        for (std::size_t i : idx) out.push_back(&corpus.inputs[i]);
        return out;
    };
    const auto train_docs = pointers(split.train);
    const auto val_docs = pointers(split.validation);
    const auto test_docs = pointers(split.test);

    ModelConfig mc = config.model;
    mc.num_classes = std::max(mc.num_classes, corpus.num_classes);
    if (!corpus.inputs.empty()) mc.input_dim = static_cast<int>(corpus.inputs.front().paragraphs.cols());
    std::set<int> seen;
    for (std::size_t i : split.train) seen.insert(corpus.labels[i]);
    for (int c = 0; c < mc.num_classes; ++c)
        if (!seen.contains(c)) log::warn("fold " + std::to_string(fold) + ": class " + std::to_string(c) + " absent from training split");

    FoldResult result{{}, init_model(mc, derive_seed(config.seed, "init:" + std::to_string(fold)))};
    ModelState& model = result.model;
    FoldReport& rep = result.report;
    rep.fold = fold;
    rep.train_size = split.train.size();
    rep.validation_size = split.validation.size();
    rep.test_size = split.test.size();

    auto params = model.parameters();
    AdamState adam;
    AdamOptions adam_opt;
    adam_opt.lr = config.lr;
    ReduceLrOnPlateau scheduler(config.lr, config.scheduler_patience, config.scheduler_factor);
    EarlyStopping stopper(config.early_stop);
    std::vector<Matrix> best = snapshot(model);
    Rng order_rng(derive_seed(config.seed, "order:" + std::to_string(fold)));
    Rng dropout_rng(derive_seed(config.seed, "dropout:" + std::to_string(fold)));
    std::vector<const DocumentInputs*> order = train_docs;
    const std::size_t bs = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            std::span<const DocumentInputs* const> part(order.data() + start, std::min(bs, order.size() - start));
            GraphBatch batch = make_batch(part, tables);
            ad::Tape tape;
            ForwardOptions fo;
            fo.training = true;
            fo.rng = &dropout_rng;
            ForwardOutput f = forward(tape, model, batch, fo);
            ad::Var l = loss(f.logits, batch.labels, config.l2, params);
            model.zero_grad();
            tape.backward(l);
            adam_step(params, adam, adam_opt);
            epoch_loss += l.value()(0, 0) * static_cast<double>(part.size());
        }
        rep.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
        // Without a validation split the training loss is monitored instead.
        double monitored = val_docs.empty() ? rep.train_loss.back() : predict(model, val_docs, tables).mean_ce;
        rep.validation_loss.push_back(monitored);
        adam_opt.lr = scheduler.step(monitored);
        if (stopper.update(monitored, epoch)) best = snapshot(model);
        rep.epochs_run = epoch + 1;
        log::info("fold " + std::to_string(fold) + " epoch " + std::to_string(epoch + 1) + " train " +
                  text::format_double(rep.train_loss.back()) + " val " + text::format_double(monitored));
        if (stopper.should_stop(epoch)) break;
    }
    restore(model, best);
    rep.best_epoch = stopper.best_epoch();
    rep.final_lr = adam_opt.lr;
    rep.train = evaluate(model, train_docs, tables);
    rep.test = evaluate(model, test_docs, tables);
    return result;
}

struct TrainResult {
    EvalReport report;
    std::vector<ModelState> models;
};

inline std::vector<int> folds_to_run(const PreparedCorpus& corpus, const TrainConfig& config) {
    std::set<int> present(corpus.folds.begin(), corpus.folds.end());
    if (config.folds.empty()) return {present.begin(), present.end()};
    for (int f : config.folds)
        if (!present.contains(f)) throw ConfigError("fold " + std::to_string(f) + " does not occur in the corpus");
    return config.folds;
}

inline TrainResult train(const PreparedCorpus& corpus, const FeatureTables& tables, const TrainConfig& config,
                         int threads = thread_budget(), bool keep_models = true) {
    validate(config);
    if (corpus.inputs.empty()) throw ValidationError("train: empty corpus");
    const std::vector<int> folds = folds_to_run(corpus, config);
    std::vector<std::optional<FoldResult>> results(folds.size());
    parallel_for(folds.size(), threads, [&](std::size_t i) { results[i] = train_fold(corpus, tables, config, folds[i]); });
    TrainResult out;
    out.report.config_hash = config_hash(config);
    out.report.seed = config.seed;
    for (auto& r : results) {
        out.report.accuracy += r->report.test.accuracy;
        out.report.macro_f1 += r->report.test.macro_f1;
        out.report.train_accuracy += r->report.train.accuracy;
        out.report.folds.push_back(std::move(r->report));
        if (keep_models) out.models.push_back(std::move(r->model));
    }
    const double k = static_cast<double>(folds.size());
    out.report.accuracy /= k;
    out.report.macro_f1 /= k;
    out.report.train_accuracy /= k;
    return out;
}

inline TrainResult train(const Dataset& data, const TrainConfig& config, int threads = thread_budget()) {
    PreparedCorpus corpus = prepare_inputs(data, config);
    return train(corpus, {&data.topics, &data.entities}, config, threads);
}

// ---------------------------------------------------------------------------
// Ablations

enum class AblationKind { WalkLength, InfusionStrategy, CueRemoval, DataFraction };

inline const char* to_string(AblationKind k) {
    switch (k) {
    case AblationKind::WalkLength: return "walk-length";
    case AblationKind::InfusionStrategy: return "infusion-strategy";
    case AblationKind::CueRemoval: return "cue-removal";
    case AblationKind::DataFraction: return "data-fraction";
    }
    return "?";
}

inline AblationKind parse_ablation_kind(const std::string& s) {
    for (auto k : {AblationKind::WalkLength, AblationKind::InfusionStrategy, AblationKind::CueRemoval, AblationKind::DataFraction})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown ablation '" + s + "' (expected walk-length, infusion-strategy, cue-removal or data-fraction)");
}

/// Grid used when none is given on the command line.
inline std::vector<std::string> default_grid(AblationKind k) {
    switch (k) {
    case AblationKind::WalkLength: return {"1", "2", "3", "4", "5", "6", "7", "8", "9", "10"};
    case AblationKind::InfusionStrategy:
        return {"attention:8", "max:8", "avg:8", "attention:1", "attention:2", "attention:4"};
    case AblationKind::CueRemoval: return {"R2:1", "R3:1", "R4:1", "R5:1", "R6:1"};
    case AblationKind::DataFraction: return {"0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9", "1"};
    }
    return {};
}

/// Expands "a..b" integer ranges and splits on commas.
inline std::vector<std::string> parse_grid(const std::string& grid) {
    std::vector<std::string> out;
    for (auto item : text::split(grid, ',')) {
        std::string s(item);
        if (s.empty()) continue;
        if (auto dots = s.find(".."); dots != std::string::npos) {
            int a = 0, b = 0;
            if (!text::parse_int(std::string_view(s).substr(0, dots), a) || !text::parse_int(std::string_view(s).substr(dots + 2), b) || b < a)
                throw ConfigError("invalid grid range '" + s + "'");
            for (int v = a; v <= b; ++v) out.push_back(std::to_string(v));
        } else {
            out.push_back(s);
        }
    }
    if (out.empty()) throw ConfigError("empty ablation grid");
    return out;
}

/// Base config with one grid value applied. Seeds are not varied: every
/// grid point draws its streams from the base seed by purpose.
inline TrainConfig apply_grid_value(TrainConfig c, AblationKind kind, const std::string& value) {
    auto bad = [&]() { return ConfigError(std::string(to_string(kind)) + ": invalid grid value '" + value + "'"); };
    switch (kind) {
    case AblationKind::WalkLength: {
        int k = 0;
        if (!text::parse_int(std::string_view(value), k) || k < 1) throw bad();
        c.walk_length = k;
        c.walk_source = WalkSource::Generate;
        break;
    }
    case AblationKind::InfusionStrategy: {
        auto parts = text::split(value, ':');
        if (parts.empty() || parts.size() > 2) throw bad();
        c.model.walk_aggregation = parse_walk_aggregation(std::string(parts[0]));
        if (parts.size() == 2 && !text::parse_int(parts[1], c.model.heads)) throw bad();
        break;
    }
    case AblationKind::CueRemoval: {
        auto parts = text::split(value, ':');
        if (parts.size() != 2 || !text::parse_double(parts[1], c.drop_probability)) throw bad();
        c.drop_relations.clear();
        for (auto r : text::split(parts[0], '+')) c.drop_relations.push_back(parse_relation(r));
        break;
    }
    case AblationKind::DataFraction: {
        if (!text::parse_double(value, c.train_fraction)) throw bad();
        if (c.train_fraction > 1.0) c.train_fraction /= 100.0;
        break;
    }
    }
    validate(c);
    return c;
}

struct AblationRow {
    std::string value;
    EvalReport report;
};

inline std::vector<AblationRow> run_ablation(AblationKind kind, const std::vector<std::string>& grid, const Dataset& data,
                                             const TrainConfig& base, int threads = thread_budget()) {
    std::vector<TrainConfig> configs;
    for (const auto& v : grid) configs.push_back(apply_grid_value(base, kind, v));
    std::vector<AblationRow> rows(grid.size());
    const FeatureTables tables{&data.topics, &data.entities};
    // Inputs only depend on walk and cue settings; other kinds share one copy.
    std::optional<PreparedCorpus> shared;
    if (kind == AblationKind::InfusionStrategy || kind == AblationKind::DataFraction) shared = prepare_inputs(data, base);
    parallel_for(grid.size(), threads, [&](std::size_t i) {
        rows[i].value = grid[i];
        if (shared) {
            rows[i].report = train(*shared, tables, configs[i], 1, false).report;
        } else {
            PreparedCorpus own = prepare_inputs(data, configs[i]);
            rows[i].report = train(own, tables, configs[i], 1, false).report;
        }
    });
    return rows;
}

inline void write_ablation_table(std::ostream& out, AblationKind kind, const std::vector<AblationRow>& rows) {
    out << "kind\tvalue\taccuracy\tmacro_f1\ttrain_accuracy\tfolds\tconfig_hash\n";
    for (const auto& r : rows)
        out << to_string(kind) << '\t' << r.value << '\t' << text::format_double(r.report.accuracy) << '\t'
            << text::format_double(r.report.macro_f1) << '\t' << text::format_double(r.report.train_accuracy) << '\t'
            << r.report.folds.size() << '\t' << r.report.config_hash << '\n';
}

} // namespace kcd
