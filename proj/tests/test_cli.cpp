#include <gtest/gtest.h>

#include "cli_runner.hpp"

using namespace kcd::testing;

namespace {

fs::path scratch(const std::string& name) { return fs::temp_directory_path() / ("kcd_cli_" + name); }

} // namespace

TEST(Cli, PipelineIsByteIdenticalAcrossRuns) {
    ASSERT_EQ(run_pipeline(scratch("a")), "");
    ASSERT_EQ(run_pipeline(scratch("b")), "");
    auto a = tree(scratch("a")), b = tree(scratch("b"));
    EXPECT_GT(a.size(), 10u);
    ASSERT_EQ(a.size(), b.size());
    for (const auto& [path, bytes] : a) EXPECT_EQ(bytes, b[path]) << path;
    for (const char* f : {"out/train/report.json", "out/train/loss_curves.tsv", "out/eval/eval.json", "out/ablate/ablation_walk-length.tsv",
                          "out/walks/walks.tsv", "out/transe/entities.emb", "out/hin/hin_summary.tsv"})
        EXPECT_TRUE(a.contains(f)) << f;
}

TEST(Cli, ExitCodes) {
    fs::path dir = scratch("codes");
    fs::remove_all(dir);
    fs::create_directories(dir);
    EXPECT_EQ(run_cli(dir, "train"), 2);
    EXPECT_EQ(run_cli(dir, "train --config missing.json"), 2);
    std::ofstream(dir / "bad.jsonl") << "{\"doc_id\": 3}\n";
    std::ofstream(dir / "t.emb") << "0 2\n";
    EXPECT_EQ(run_cli(dir, "build-hin --corpus bad.jsonl --topic-embeddings t.emb --entity-embeddings t.emb"), 2);
    EXPECT_EQ(run_cli(dir, "--help"), 0);
}
