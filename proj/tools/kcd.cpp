// kcd: command-line front end for the detection engine.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "kcd/kcd.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".";
    bool verbose = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_config) {
    if (with_config) cmd->add_option("--config", c.config, "JSON config (training settings plus a \"data\" block)")->required();
    cmd->add_option("--seed", c.seed, "Master seed; overrides the config");
    cmd->add_option("--out-dir", c.out_dir, "Output directory")->capture_default_str();
    cmd->add_flag("-v,--verbose", c.verbose, "Progress on stderr");
}

struct LoadedConfig {
    kcd::TrainConfig train;
    kcd::DataPaths data;
};

LoadedConfig load_config(const Common& c) {
    std::ifstream in(c.config);
    if (!in) throw kcd::ConfigError("cannot open config '" + c.config + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw kcd::ConfigError("config '" + c.config + "': " + e.what());
    }
    LoadedConfig out;
    out.train = kcd::train_config_from_json(j);
    if (c.seed) out.train.seed = *c.seed;
    if (j.contains("data")) out.data = kcd::data_paths_from_json(j.at("data"), fs::path(c.config).parent_path());
    return out;
}

fs::path out_path(const Common& c, const std::string& name) {
    fs::create_directories(c.out_dir);
    return fs::path(c.out_dir) / name;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    auto out = kcd::text::open_output(path.string());
    out << j.dump(2) << '\n';
}

void write_loss_curves(const fs::path& path, const kcd::EvalReport& r) {
    auto out = kcd::text::open_output(path.string());
    out << "fold\tepoch\ttrain_loss\tvalidation_loss\n";
    for (const auto& f : r.folds)
        for (std::size_t e = 0; e < f.train_loss.size(); ++e)
            out << f.fold << '\t' << e + 1 << '\t' << kcd::text::format_double(f.train_loss[e]) << '\t'
                << kcd::text::format_double(f.validation_loss[e]) << '\n';
}

void print_summary(const kcd::EvalReport& r) {
    for (const auto& f : r.folds)
        std::cout << "fold " << f.fold << "  acc " << f.test.accuracy << "  macro-F1 " << f.test.macro_f1 << "  (train acc "
                  << f.train.accuracy << ", " << f.epochs_run << " epochs, best " << f.best_epoch + 1 << ")\n";
    std::cout << "mean  acc " << r.accuracy << "  macro-F1 " << r.macro_f1 << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge-walk and textual-cue political perspective detection"};
    app.require_subcommand(1);

    // transe
    Common transe_c;
    std::string transe_kg, transe_importance;
    kcd::TransEOptions transe_opt;
    auto* transe = app.add_subcommand("transe", "Train TransE entity and relation embeddings");
    add_common(transe, transe_c, false);
    transe->add_option("--kg-dir", transe_kg, "Directory with triples.tsv, entities.tsv, relations.tsv")->required();
    transe->add_option("--importance-file", transe_importance, "Relation importance file");
    transe->add_option("--dim", transe_opt.dim)->capture_default_str();
    transe->add_option("--epochs", transe_opt.epochs)->capture_default_str();
    transe->add_option("--margin", transe_opt.margin)->capture_default_str();
    transe->add_option("--lr", transe_opt.lr)->capture_default_str();
    transe->add_option("--negatives", transe_opt.negatives_per_positive)->capture_default_str();

    // walks
    Common walks_c;
    std::string walks_kg, walks_corpus, walks_importance, walks_out;
    kcd::WalkOptions walk_opt;
    auto* walks = app.add_subcommand("walks", "Generate knowledge walks for every corpus paragraph");
    add_common(walks, walks_c, false);
    walks->add_option("--kg-dir", walks_kg)->required();
    walks->add_option("--corpus", walks_corpus)->required();
    walks->add_option("--importance-file", walks_importance);
    walks->add_option("--k", walk_opt.max_hops, "Walk length in hops")->capture_default_str();
    walks->add_option("--walks-per-entity", walk_opt.walks_per_entity)->capture_default_str();
    walks->add_option("--out", walks_out, "Walk file (default <out-dir>/walks.tsv)");

    // build-hin
    Common hin_c;
    std::string hin_corpus, hin_topics, hin_entities, hin_drop;
    auto* hin = app.add_subcommand("build-hin", "Build and dump per-document graphs");
    add_common(hin, hin_c, false);
    hin->add_option("--corpus", hin_corpus)->required();
    hin->add_option("--topic-embeddings", hin_topics)->required();
    hin->add_option("--entity-embeddings", hin_entities)->required();
    hin->add_option("--drop", hin_drop, "Cue removal, e.g. R6:0.5 or R2+R3:1");

    // train
    Common train_c;
    std::optional<int> train_epochs;
    std::vector<int> train_folds;
    bool no_checkpoints = false;
    auto* train = app.add_subcommand("train", "Train and evaluate over the configured folds");
    add_common(train, train_c, true);
    train->add_option("--epochs", train_epochs, "Override the epoch budget");
    train->add_option("--folds", train_folds, "Only run these folds");
    train->add_flag("--no-checkpoints", no_checkpoints, "Skip writing model checkpoints");

    // eval
    Common eval_c;
    std::string eval_checkpoint;
    std::optional<int> eval_fold;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    add_common(eval, eval_c, true);
    eval->add_option("--checkpoint", eval_checkpoint)->required();
    eval->add_option("--fold", eval_fold, "Evaluate only this fold's documents (default: whole corpus)");

    // ablate
    Common ablate_c;
    std::string ablate_kind, ablate_grid;
    std::optional<int> ablate_epochs;
    std::vector<int> ablate_folds;
    auto* ablate = app.add_subcommand("ablate", "Run an ablation grid and write a TSV table");
    add_common(ablate, ablate_c, true);
    ablate->add_option("--kind", ablate_kind, "walk-length, infusion-strategy, cue-removal or data-fraction")->required();
    ablate->add_option("--grid", ablate_grid, "Comma list; integer ranges as a..b");
    ablate->add_option("--epochs", ablate_epochs, "Override the epoch budget");
    ablate->add_option("--folds", ablate_folds, "Only run these folds");

    // synth
    Common synth_c;
    kcd::SyntheticOptions synth_opt;
    auto* synth = app.add_subcommand("synth", "Write a cue-separable synthetic dataset and config");
    add_common(synth, synth_c, false);
    synth->add_option("--documents", synth_opt.documents)->capture_default_str();
    synth->add_option("--classes", synth_opt.classes)->capture_default_str();
    synth->add_option("--folds", synth_opt.folds)->capture_default_str();
    synth->add_option("--dim", synth_opt.dim)->capture_default_str();
    synth->add_option("--entities", synth_opt.entities)->capture_default_str();
    synth->add_option("--triples", synth_opt.triples)->capture_default_str();
    synth->add_option("--transe-epochs", synth_opt.transe_epochs)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*transe) {
            kcd::log::verbose_flag() = transe_c.verbose;
            transe_opt.seed = transe_c.seed.value_or(0);
            auto kg = kcd::load_kg_dir(transe_kg, transe_importance.empty() ? std::nullopt : std::optional(transe_importance));
            auto table = kcd::train_transe(kg, transe_opt);
            kcd::write_embedding_matrix(out_path(transe_c, "entities.emb").string(), table.entities);
            kcd::write_embedding_matrix(out_path(transe_c, "relations.emb").string(), table.relations);
            auto loss = kcd::text::open_output(out_path(transe_c, "transe_loss.tsv").string());
            loss << "epoch\tloss\n";
            for (std::size_t e = 0; e < table.epoch_loss.size(); ++e)
                loss << e + 1 << '\t' << kcd::text::format_double(table.epoch_loss[e]) << '\n';
            std::cout << "trained " << table.entities.rows() << " entities, " << table.relations.rows() << " relations\n";
        } else if (*walks) {
            kcd::log::verbose_flag() = walks_c.verbose;
            walk_opt.seed = walks_c.seed.value_or(0);
            auto kg = kcd::load_kg_dir(walks_kg, walks_importance.empty() ? std::nullopt : std::optional(walks_importance));
            auto docs = kcd::load_corpus(walks_corpus);
            auto records = kcd::generate_corpus_walks(kg, docs, kcd::importance_of(kg), walk_opt);
            std::string path = walks_out.empty() ? out_path(walks_c, "walks.tsv").string() : walks_out;
            kcd::write_walks(path, kg, records);
            std::cout << "wrote " << records.size() << " walks to " << path << '\n';
        } else if (*hin) {
            kcd::log::verbose_flag() = hin_c.verbose;
            auto docs = kcd::load_corpus(hin_corpus);
            auto topics = kcd::read_embedding_matrix(hin_topics);
            auto entities = kcd::read_embedding_matrix(hin_entities);
            kcd::TrainConfig drop;
            if (!hin_drop.empty()) drop = kcd::apply_grid_value(drop, kcd::AblationKind::CueRemoval, hin_drop);
            const std::uint64_t seed = hin_c.seed.value_or(0);
            fs::create_directories(fs::path(hin_c.out_dir) / "hin");
            auto summary = kcd::text::open_output(out_path(hin_c, "hin_summary.tsv").string());
            summary << "doc_id\tnodes\tedges\tR1\tR2\tR3\tR4\tR5\tR6\n";
            for (const auto& d : docs) {
                auto g = kcd::build_hin(d, topics, entities);
                if (!drop.drop_relations.empty()) g = kcd::drop_cues(g, drop.drop_relations, drop.drop_probability, kcd::derive_seed(seed, "cue-removal"));
                kcd::validate_hin(g);
                auto out = kcd::text::open_output((fs::path(hin_c.out_dir) / "hin" / (d.doc_id + ".hin")).string());
                kcd::dump_hin(out, g);
                summary << d.doc_id << '\t' << g.nodes.size() << '\t' << g.edges.size();
                for (int r = 0; r < kcd::kRelationCount; ++r) summary << '\t' << g.count(static_cast<kcd::Relation>(r));
                summary << '\n';
            }
            std::cout << "wrote " << docs.size() << " graphs to " << (fs::path(hin_c.out_dir) / "hin").string() << '\n';
        } else if (*train) {
            kcd::log::verbose_flag() = train_c.verbose;
            auto cfg = load_config(train_c);
            if (train_epochs) cfg.train.epochs = *train_epochs;
            if (!train_folds.empty()) cfg.train.folds = train_folds;
            kcd::validate(cfg.train);
            auto data = kcd::load_dataset(cfg.data, cfg.train.model.num_classes);
            auto result = kcd::train(data, cfg.train);
            nlohmann::json report = kcd::to_json(result.report);
            report["config"] = kcd::to_json(cfg.train);
            write_json(out_path(train_c, "report.json"), report);
            write_loss_curves(out_path(train_c, "loss_curves.tsv"), result.report);
            if (!no_checkpoints)
                for (std::size_t i = 0; i < result.models.size(); ++i)
                    kcd::save_checkpoint(out_path(train_c, "fold" + std::to_string(result.report.folds[i].fold) + ".ckpt").string(),
                                         result.models[i]);
            print_summary(result.report);
        } else if (*eval) {
            kcd::log::verbose_flag() = eval_c.verbose;
            auto cfg = load_config(eval_c);
            auto model = kcd::load_checkpoint(eval_checkpoint);
            auto data = kcd::load_dataset(cfg.data, model.config.num_classes);
            auto corpus = kcd::prepare_inputs(data, cfg.train);
            std::vector<const kcd::DocumentInputs*> docs;
            for (std::size_t i = 0; i < corpus.inputs.size(); ++i)
                if (!eval_fold || corpus.folds[i] == *eval_fold) docs.push_back(&corpus.inputs[i]);
            auto metrics = kcd::evaluate(model, docs, {&data.topics, &data.entities});
            nlohmann::json j = kcd::to_json(metrics);
            j["documents"] = docs.size();
            if (eval_fold) j["fold"] = *eval_fold;
            j["checkpoint"] = fs::path(eval_checkpoint).filename().string();
            write_json(out_path(eval_c, "eval.json"), j);
            std::cout << "acc " << metrics.accuracy << "  macro-F1 " << metrics.macro_f1 << "  (" << docs.size() << " documents)\n";
        } else if (*ablate) {
            kcd::log::verbose_flag() = ablate_c.verbose;
            auto cfg = load_config(ablate_c);
            if (ablate_epochs) cfg.train.epochs = *ablate_epochs;
            if (!ablate_folds.empty()) cfg.train.folds = ablate_folds;
            kcd::validate(cfg.train);
            auto kind = kcd::parse_ablation_kind(ablate_kind);
            auto grid = ablate_grid.empty() ? kcd::default_grid(kind) : kcd::parse_grid(ablate_grid);
            auto data = kcd::load_dataset(cfg.data, cfg.train.model.num_classes);
            auto rows = kcd::run_ablation(kind, grid, data, cfg.train);
            auto path = out_path(ablate_c, std::string("ablation_") + kcd::to_string(kind) + ".tsv");
            auto out = kcd::text::open_output(path.string());
            kcd::write_ablation_table(out, kind, rows);
            kcd::write_ablation_table(std::cout, kind, rows);
        } else if (*synth) {
            kcd::log::verbose_flag() = synth_c.verbose;
            synth_opt.seed = synth_c.seed.value_or(0);
            auto data = kcd::make_synthetic(synth_opt);
            kcd::TrainConfig cfg;
            cfg.seed = synth_opt.seed;
            cfg.model.num_classes = synth_opt.classes;
            cfg.model.input_dim = synth_opt.dim;
            kcd::write_synthetic(synth_c.out_dir, data, cfg);
            std::cout << "wrote " << data.docs.size() << " documents to " << synth_c.out_dir << '\n';
        }
    } catch (const kcd::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
