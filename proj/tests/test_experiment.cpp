#include "doctest.h"

#include <sstream>

#include "taskgraph/error.hpp"
#include "taskgraph/experiment.hpp"
#include "test_util.hpp"

using namespace taskgraph;
using namespace taskgraph::experiment;

namespace {

RunConfig tiny() {
    RunConfig c;
    c.family_size = 1;
    c.corpus_size = 200;
    c.train_examples = 200;
    c.test_examples = 100;
    c.probe_examples = 200;
    c.likelihood_sequences = 50;
    c.model.hidden_dim = 8;
    c.model.ffn_dim = 16;
    c.pretrain.epochs = 1;
    c.pretrain.batches_per_epoch = 3;
    c.pretrain.batch_size = 8;
    c.finetune.epochs = 1;
    c.finetune.batches_per_epoch = 3;
    c.finetune.batch_size = 8;
    c.knife.num_modes = 2;
    c.knife.marginal_epochs = 1;
    c.knife.conditional_epochs = 1;
    c.knife.hidden_dim = 8;
    c.save_checkpoints = false;
    return c;
}

}  // namespace

TEST_CASE("default run config mirrors the reference settings") {
    RunConfig c;
    CHECK(c.family_size == 11);
    CHECK(c.model.hidden_dim == 100);
    CHECK(c.pretrain.learning_rate == doctest::Approx(2e-3));
    CHECK(c.finetune.learning_rate == doctest::Approx(2e-4));
    CHECK(c.pretrain.epochs == 100);
    CHECK(c.knife.num_modes == 8);
    CHECK(c.knife.marginal_lr == doctest::Approx(1e-4));
    CHECK(c.knife.conditional_lr == doctest::Approx(1e-3));
    CHECK(c.knife.hidden_dim == 128);
    c.validate();
}

TEST_CASE("run config JSON is strict") {
    const auto j = to_json(tiny());
    const auto back = run_config_from_json(j);
    CHECK(to_json(back) == j);
    auto bad = j;
    bad["famliy_size"] = 3;
    CHECK_THROWS_AS(run_config_from_json(bad), ValidationError);
    bad = j;
    bad["knife"]["unknown"] = 1;
    CHECK_THROWS_AS(run_config_from_json(bad), ValidationError);
    bad = j;
    bad["family_size"] = "3";
    CHECK_THROWS_AS(run_config_from_json(bad), ValidationError);
    bad = j;
    bad["family_size"] = 0;
    CHECK_THROWS_AS(run_config_from_json(bad), ValidationError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), IoError);
}

TEST_CASE("inclusion pattern checks") {
    analysis::IsMatrix m;
    m.tasks = {"F", "L", "FvL"};
    m.values.resize(3, 3);
    m.values << 3, 1, 2,  //
        1, 3, 2,          //
        2, 2, 3;
    CHECK(check_pattern(m).all());
    m.values(0, 1) = 2.5;  // F->L above FvL->L
    auto p = check_pattern(m);
    CHECK(p.diagonal_max);
    CHECK_FALSE(p.f_to_l);
    CHECK(p.l_to_f);
    m.values(2, 0) = 4;
    CHECK_FALSE(check_pattern(m).diagonal_max);
}

TEST_CASE("pearson correlation") {
    CHECK(pearson({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0));
    CHECK(pearson({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(pearson({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(0.8));
    CHECK_THROWS_AS(pearson({1, 1}, {1, 2}), ValidationError);
}

TEST_CASE("tiny end-to-end run writes every artifact deterministically") {
    testing::TempDir a("run-a"), b("run-b");
    std::ostringstream log;
    const auto r1 = run_synthetic_experiment(tiny(), a.path(), &log);
    const auto r2 = run_synthetic_experiment(tiny(), b.path());
    CHECK(r1.report_hash == r2.report_hash);
    CHECK(r1.report_hash == hash_reports(a.path()));
    REQUIRE(r1.datasets.size() == 1);
    CHECK(r1.mean.values.rows() == 3);
    for (const char* f : {"run-manifest.json", "config.json", "is_ledger.jsonl", "summary/report.json",
                          "summary/is_matrix.csv", "summary/heatmap.svg", "datasets/ds-00/hmm.json",
                          "datasets/ds-00/report.json"}) {
        INFO(f);
        CHECK(std::filesystem::exists(a.path() / f));
    }
    CHECK_FALSE(std::filesystem::exists(a.path() / "FAILED"));
    CHECK(log.str().find("ds-00") != std::string::npos);
    const auto manifest = nlohmann::json::parse(read_text(a.path() / "run-manifest.json"));
    CHECK(manifest.at("schema") == "taskgraph-run/1");
    CHECK(manifest.at("report_hash") == r1.report_hash);
}

TEST_CASE("a failing stage leaves a marker") {
    testing::TempDir dir("run-fail");
    auto c = tiny();
    c.knife.num_modes = 50;  // more modes than the probe split supports
    try {
        run_synthetic_experiment(c, dir.path());
        FAIL("expected a stage error");
    } catch (const StageError& e) {
        CHECK(e.stage() == "information-sufficiency");
        CHECK(e.kind() == "validation");
    }
    const auto marker = nlohmann::json::parse(read_text(dir.path() / "FAILED"));
    CHECK(marker.at("stage") == "information-sufficiency");
    CHECK(std::filesystem::exists(dir.path() / "datasets/ds-00/hmm.json"));
}
