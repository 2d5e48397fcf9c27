// Acceptance criteria, one PASS/FAIL line each. Exit status is nonzero if
// any criterion fails. Pass criterion names as arguments to run a subset.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cli_runner.hpp"
#include "fixtures.hpp"
#include "kcd/kcd.hpp"

using namespace kcd;
using namespace kcd::testing;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
    std::ostringstream s;
    s << v;
    return s.str();
}

Outcome gradient_check() {
    auto t0 = std::chrono::steady_clock::now();
    ToyCorpus c = full_toy(8, 101);
    for (NodeType t : {NodeType::Paragraph, NodeType::Topic, NodeType::Sentiment, NodeType::Tense, NodeType::Quotation, NodeType::Entity})
        if (c.docs[0].graph.count(t) == 0) return {false, std::string("fixture lacks ") + to_string(t) + " nodes"};
    ModelConfig mc = small_config(8, 8, 2);
    mc.readout = Readout::Paragraph;
    ModelState m = init_model(mc, 102);
    GraphBatch b = make_batch(c.pointers(), c.tables());
    auto params = m.parameters();
    auto f = [&](ad::Tape& t) { return loss(forward(t, m, b).logits, b.labels, 1e-4, params); };
    auto checks = check_gradients(f, params);
    std::string worst;
    double err = 0.0;
    for (const auto& g : checks)
        if (g.rel_error >= err) err = g.rel_error, worst = g.name;
    double secs = seconds_since(t0);
    return {err <= 1e-3 && secs < 60.0, "max rel error " + fmt(err) + " (" + worst + "), " + fmt(checks.size()) + " parameter groups, " +
                                             fmt(secs) + " s"};
}

Outcome sampler_fidelity() {
    KnowledgeGraph kg;
    kg.add_entity("hub", "hub");
    for (int i = 0; i < 5; ++i) {
        kg.add_entity("t" + std::to_string(i), "tail " + std::to_string(i));
        kg.add_relation("r" + std::to_string(i), "rel " + std::to_string(i), i % 2 == 0 ? 1.0 : 0.0);
        kg.add_triple(0, i, i + 1);
    }
    auto dist = step_distribution(kg, 0, importance_of(kg));
    std::vector<double> freq(5, 0.0);
    const int n = 100000;
    Rng rng(derive_seed(7, "sampler"));
    for (int i = 0; i < n; ++i) freq[static_cast<std::size_t>(detail::sample_edge(dist, rng).relation)] += 1.0 / n;
    double l1 = 0.0;
    for (int i = 0; i < 5; ++i) l1 += std::abs(freq[i] - dist[i].probability);
    return {l1 <= 0.02, "L1 " + fmt(l1) + " over 1e5 draws"};
}

Outcome walk_validity() {
    SyntheticOptions o;
    o.dim = 8;
    o.transe_epochs = 1;
    SyntheticData s = make_synthetic(o);
    const int n = 10000, k = 8;
    int valid = 0, truncated = 0;
    for (int i = 0; i < n; ++i) {
        int start = i % s.kg.entity_count();
        KnowledgeWalk w = generate_walk(s.kg, start, k, importance_of(s.kg), derive_seed(11, std::to_string(i)));
        valid += verify_walk(s.kg, w, k);
        truncated += w.hops() < static_cast<std::size_t>(k);
    }
    return {valid == n, fmt(valid) + "/" + fmt(n) + " valid, " + fmt(truncated) + " truncated at sinks"};
}

Outcome transe_sanity() {
    auto t0 = std::chrono::steady_clock::now();
    KnowledgeGraph kg;
    int r = kg.add_relation("maps", "maps to");
    for (int i = 0; i < 10; ++i) {
        kg.add_entity("a" + std::to_string(i), "a " + std::to_string(i));
        kg.add_entity("b" + std::to_string(i), "b " + std::to_string(i));
    }
    for (int i = 0; i < 10; ++i) kg.add_triple(kg.entity("a" + std::to_string(i)), r, kg.entity("b" + std::to_string(i)));
    TransEOptions o;
    o.dim = 16;
    o.epochs = 500;
    EmbeddingTable emb = train_transe(kg, o);
    int first = 0;
    for (int i = 0; i < 10; ++i) {
        const std::string head = "a" + std::to_string(i), truth = "b" + std::to_string(i);
        const double best = transe_score(emb, head, "maps", truth);
        bool top = true;
        for (int e = 0; e < kg.entity_count(); ++e)
            if (kg.entity_id(e) != truth && transe_score(emb, head, "maps", kg.entity_id(e)) <= best) top = false;
        first += top;
    }
    double secs = seconds_since(t0);
    return {first >= 8 && secs < 120.0, fmt(first) + "/10 ranked first, " + fmt(secs) + " s"};
}

Outcome synthetic_end_to_end() {
    auto t0 = std::chrono::steady_clock::now();
    Dataset data = to_dataset(make_synthetic(SyntheticOptions{}));
    TrainConfig base;  // library defaults: 768/512, 8 heads, dropout 0.6, batch 16, lr 1e-3, 150 epochs
    base.folds = {0};
    PreparedCorpus corpus = prepare_inputs(data, base);
    const FeatureTables tables{&data.topics, &data.entities};
    bool pass = true;
    std::string detail;
    for (Readout mode : {Readout::Paragraph, Readout::Cue, Readout::Global}) {
        TrainConfig c = base;
        c.model.readout = mode;
        EvalReport r = train(corpus, tables, c, thread_budget(), false).report;
        const FoldReport& f = r.folds[0];
        bool ok = r.accuracy > 0.90;
        if (mode == Readout::Paragraph) ok = ok && r.train_accuracy == 1.0 && r.accuracy >= 0.95;
        pass = pass && ok;
        detail += std::string(to_string(mode)) + " train " + fmt(r.train_accuracy) + " test " + fmt(r.accuracy) + " (epochs " +
                  fmt(f.epochs_run) + ", best " + fmt(f.best_epoch + 1) + "); ";
    }
    return {pass, detail + fmt(seconds_since(t0)) + " s"};
}

Outcome readout_identity() {
    ToyCorpus c = make_toy({100, 6, 1, 6, 4, 8, 0.3, 3}, 201);
    ModelState m = init_model(small_config(6, 6, 2), 202);
    GraphBatch b = make_batch(c.pointers(), c.tables());
    ad::Tape t;
    Matrix h = forward(t, m, b).node_states.value();
    ad::Var hv = t.constant(h);
    Matrix pa = readout(b, hv, Readout::Paragraph).value(), ca = readout(b, hv, Readout::Cue).value(),
           ga = readout(b, hv, Readout::Global).value();
    double worst = 0.0;
    for (std::size_t g = 0; g < c.docs.size(); ++g) {
        const double n1 = static_cast<double>(c.docs[g].graph.count(NodeType::Paragraph));
        const double n = static_cast<double>(c.docs[g].graph.nodes.size());
        worst = std::max(worst, (n1 * pa.row(g) + (n - n1) * ca.row(g) - n * ga.row(g)).cwiseAbs().maxCoeff());
    }
    // Remove every cue relation to get paragraph-only graphs.
    ToyCorpus bare = c;
    const std::vector<Relation> cues{Relation::Topic, Relation::Sentiment, Relation::Tense, Relation::Quotation, Relation::Entity};
    for (auto& d : bare.docs) d.graph = drop_cues(d.graph, cues, 1.0, 0);
    GraphBatch bb = make_batch(bare.pointers(), bare.tables());
    ad::Tape t2;
    ad::Var h2 = forward(t2, m, bb).node_states;
    bool exact = readout(bb, h2, Readout::Paragraph).value() == readout(bb, h2, Readout::Global).value();
    return {worst <= 1e-10 && exact, "max identity residual " + fmt(worst) + " on 100 graphs; PA == GA on paragraph-only graphs: " +
                                         (exact ? "yes" : "no")};
}

Outcome ablation_integrity() {
    SyntheticOptions o;
    o.documents = 60;
    o.dim = 16;
    o.entities = 12;
    o.triples = 30;
    o.transe_epochs = 20;
    Dataset data = to_dataset(make_synthetic(o));
    TrainConfig base;
    base.model.input_dim = 16;
    base.model.hidden_dim = 8;
    base.model.heads = 2;
    base.epochs = 5;
    base.walk_length = 3;
    base.folds = {0};
    std::vector<std::string> problems;

    EvalReport plain = train(data, base, 1).report;
    auto cue = run_ablation(AblationKind::CueRemoval, {"R2:0", "R3:0", "R4:0", "R5:0", "R6:0"}, data, base, 1);
    // Everything but the config hash, which names the grid value.
    auto results = [](const EvalReport& r) {
        nlohmann::json j = to_json(r);
        j.erase("config_hash");
        return j.dump();
    };
    for (const auto& row : cue)
        if (results(row.report) != results(plain))
            problems.push_back("p=0 row " + row.value + " differs from the base run");

    for (Relation r : {Relation::Topic, Relation::Sentiment, Relation::Tense, Relation::Quotation, Relation::Entity}) {
        PreparedCorpus dropped = prepare_inputs(data, apply_grid_value(base, AblationKind::CueRemoval, to_string(r) + ":1"));
        for (const auto& d : dropped.inputs)
            if (d.graph.count(r) != 0) {
                problems.push_back("p=1 left " + to_string(r) + " edges");
                break;
            }
    }
    for (AblationKind kind : {AblationKind::WalkLength, AblationKind::DataFraction}) {
        auto rows = run_ablation(kind, default_grid(kind), data, base, 1);
        std::ostringstream table;
        write_ablation_table(table, kind, rows);
        std::string s = table.str();
        long lines = std::count(s.begin(), s.end(), '\n') - 1;
        if (lines != 10) problems.push_back(std::string(to_string(kind)) + " emitted " + fmt(lines) + " rows");
    }
    std::string detail = problems.empty() ? "p=0 bitwise equal to base, p=1 removes each relation, 10+10 rows" : "";
    for (const auto& p : problems) detail += p + "; ";
    return {problems.empty(), detail};
}

Outcome cli_determinism() {
    const fs::path a = fs::temp_directory_path() / "kcd_accept_a", b = fs::temp_directory_path() / "kcd_accept_b";
    if (auto failed = run_pipeline(a); !failed.empty()) return {false, "command failed: kcd " + failed};
    if (auto failed = run_pipeline(b); !failed.empty()) return {false, "command failed: kcd " + failed};
    auto ta = tree(a), tb = tree(b);
    std::vector<std::string> diff;
    for (const auto& [path, bytes] : ta)
        if (!tb.contains(path) || tb[path] != bytes) diff.push_back(path);
    if (ta.size() != tb.size()) diff.push_back("file count");
    std::string detail = fmt(ta.size()) + " files compared";
    for (const auto& d : diff) detail += "; differs: " + d;
    return {diff.empty(), detail};
}

} // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient-correctness", gradient_check},  {"sampler-fidelity", sampler_fidelity},
        {"walk-validity", walk_validity},          {"transe-sanity", transe_sanity},
        {"synthetic-end-to-end", synthetic_end_to_end}, {"readout-identity", readout_identity},
        {"ablation-integrity", ablation_integrity}, {"determinism", cli_determinism},
    };
    std::vector<std::string> only(argv + 1, argv + argc);
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
