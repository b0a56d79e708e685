#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "ahmood/errors.hpp"
#include "ahmood/harness.hpp"
#include "doctest.h"

using namespace ahmood;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.model.num_layers = 2;
    c.model.num_heads = 2;
    c.model.hidden = 16;
    c.model.ffn_width = 16;
    c.model.max_seq_len = 16;
    c.training.epochs = 4;
    c.training.batch_size = 8;
    c.seeds = {7};
    c.ahm.budget = 4;
    c.ahm.top_f = 2;
    c.ahm.neighbors = 3;
    c.scorer_options.knn_k = 3;
    c.data.num_classes = 4;
    c.data.docs_per_class = 24;
    c.data.text_vocab = 50;
    c.data.num_patch_features = 6;
    c.data.min_tokens = 2;
    c.data.max_tokens = 5;
    c.cross_data = c.data;
    c.cross_data.seed = 99;
    c.cross_data.id_prefix = "ext";
    c.ood_class = 3;
    c.output_dir = (fs::temp_directory_path() / "ahmood_harness_test").string();
    return c;
}

}  // namespace

TEST_CASE("config json round trip and hashing") {
    const auto c = tiny_config();
    const auto back = config_from_json(config_to_json(c));
    CHECK(config_to_json(back) == config_to_json(c));
    CHECK(config_hash(back) == config_hash(c));
    CHECK(config_hash(c).size() == 16);

    auto d = c;
    d.ahm.top_f = 3;
    CHECK(config_hash(d) != config_hash(c));
    d = c;
    d.data.patch_noise_std += 1e-9;
    CHECK(config_hash(d) != config_hash(c));
    d = c;
    d.scorers.pop_back();
    CHECK(config_hash(d) != config_hash(c));

    CHECK_THROWS_AS(config_from_json(json{{"scorers", {"nope"}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"protocols", {"sideways"}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"seeds", "zero"}}), ConfigError);
    const auto partial = config_from_json(json{{"seeds", {3}}});
    CHECK(partial.seeds == std::vector<std::uint64_t>{3});
    CHECK(partial.ahm.budget == 25);
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("config validation") {
    auto c = tiny_config();
    CHECK_NOTHROW(c.validate());
    c.seeds.clear();
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.ood_class = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.protocols = {Protocol::cross};
    c.cross_data.id_prefix = c.data.id_prefix;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("checkpoint selection") {
    const auto c = tiny_config();
    const auto split = with_contiguous_labels(build_split(c, Protocol::intra, 7));
    const auto mc = resolved_model_config(c, split);
    CHECK(mc.num_classes == 3);
    TrainConfig tc = c.training;
    tc.epochs = 3;
    auto ft = fine_tune(ModelParams::initialize(mc, 1), split.train, split.eval_id, tc);
    REQUIRE(ft.checkpoints.size() == 3);

    SUBCASE("checkpoints below the accuracy floor are skipped") {
        ft.checkpoints[0].eval_accuracy = 1.0;
        ft.checkpoints[1].eval_accuracy = 0.1;
        ft.checkpoints[2].eval_accuracy = 0.1;
        const auto choice = select_checkpoint(ft.checkpoints, split.eval_id, 0.9, -1.0);
        CHECK(choice.index == 0);
        CHECK(std::isnan(choice.silhouettes[1]));
        CHECK(std::isnan(choice.silhouettes[2]));
    }
    SUBCASE("highest silhouette wins") {
        for (auto& cp : ft.checkpoints) cp.eval_accuracy = 1.0;
        const auto choice = select_checkpoint(ft.checkpoints, split.eval_id, 0.9, -1.0);
        for (double s : choice.silhouettes) CHECK(s <= choice.silhouettes[choice.index]);
    }
    SUBCASE("an unreachable threshold is reported with the silhouettes") {
        try {
            select_checkpoint(ft.checkpoints, split.eval_id, 0.0, 2.0);
            FAIL("expected a failure");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()).find("silhouettes") != std::string::npos);
        }
    }
}

TEST_CASE("synthetic separability extremes") {
    auto c = tiny_config();
    c.data.class_vocab_overlap = 0.0;
    c.data.patch_mean_separation = 6.0;
    c.data.patch_noise_std = 0.05;
    const auto split = with_contiguous_labels(build_split(c, Protocol::intra, 1));
    const auto mc = resolved_model_config(c, split);
    TrainConfig tc = c.training;
    tc.epochs = 10;
    const auto ft = fine_tune(ModelParams::initialize(mc, 1), split.train, split.eval_id, tc);
    CHECK(classification_accuracy(ft.params, split.train) >= 0.99);
    const auto emb = extract_embeddings(ft.params, split.eval_id, AttentionHeadMask::all_ones(mc), Pooling::cls_last);
    CHECK(silhouette(emb.features, emb.labels) > 0.0);

    c.data.class_vocab_overlap = 1.0;
    c.data.patch_mean_separation = 0.0;
    c.data.patch_noise_std = 1.0;
    c.data.docs_per_class = 60;
    const auto flat = with_contiguous_labels(build_split(c, Protocol::intra, 1));
    const auto flat_ft = fine_tune(ModelParams::initialize(mc, 1), flat.train, flat.eval_id, tc);
    // Three indistinguishable classes: held-out accuracy stays near chance.
    CHECK(classification_accuracy(flat_ft.params, flat.test_id) < 1.0 / 3.0 + 0.2);
}

TEST_CASE("report rendering") {
    OodEvalReport empty;
    CHECK(render_report(empty, ReportFormat::csv) == "protocol,method,auroc_mean,auroc_std,fpr_mean,fpr_std,n_runs\n");
    CHECK_THROWS_AS(report_format_from_name("xml"), ConfigError);
    CHECK(report_format_from_name("md") == ReportFormat::markdown);

    OodEvalReport r;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Protocol p : {Protocol::intra, Protocol::cross})
        for (Method m : all_methods()) r.rows.push_back({p, m, {u(rng), u(rng) / 10, u(rng), u(rng) / 10, 5}});
    const auto rows = parse_report_csv(render_report(r, ReportFormat::csv));
    REQUIRE(rows.size() == r.rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].protocol == r.rows[i].protocol);
        CHECK(rows[i].method == r.rows[i].method);
        CHECK(rows[i].summary.auroc_mean == doctest::Approx(r.rows[i].summary.auroc_mean).epsilon(1e-6));
        CHECK(rows[i].summary.fpr_std == doctest::Approx(r.rows[i].summary.fpr_std).epsilon(1e-6));
        CHECK(rows[i].summary.n_runs == 5);
    }
    const auto md = render_report(r, ReportFormat::markdown);
    std::size_t lines = 0;
    for (char ch : md) lines += ch == '\n';
    CHECK(lines == 2 + all_methods().size() * 2);
}

TEST_CASE("end-to-end experiment") {
    auto c = tiny_config();
    c.protocols = {Protocol::intra, Protocol::cross};
    std::vector<RunResult> runs;
    const auto report = run_experiment(c, &runs);
    REQUIRE(runs.size() == 2);
    REQUIRE(report.rows.size() == 2 * all_methods().size());
    for (const auto& row : report.rows) {
        CHECK(row.summary.n_runs == 1);
        CHECK(row.summary.auroc_std == 0.0);
        CHECK(row.summary.fpr_std == 0.0);
        CHECK(row.summary.auroc_mean >= 0.0);
        CHECK(row.summary.auroc_mean <= 1.0);
    }
    CHECK(report.provenance.at("config_hash") == config_hash(c));
    CHECK(report.provenance.at("runs").size() == 2);
    CHECK(report.provenance.at("runs")[0].at("selected_masks").size() == 2);

    const auto again = run_experiment(c);
    CHECK(render_report(again, ReportFormat::csv) == render_report(report, ReportFormat::csv));

    write_outputs(c, report, runs, c.output_dir);
    const fs::path out(c.output_dir);
    for (const char* f : {"report.csv", "report.md", "report.json"}) CHECK(fs::exists(out / f));
    for (const char* f : {"ensemble.json", "scores.csv", "checkpoints.json", "checkpoint.json"}) {
        CHECK(fs::exists(out / "runs" / "intra_seed7" / f));
        CHECK(fs::exists(out / "runs" / "cross_seed7" / f));
    }
    const auto reloaded = ensemble_from_json(read_json_file((out / "runs" / "intra_seed7" / "ensemble.json").string()));
    CHECK(reloaded.selected_masks == runs[0].ensemble.selected_masks);
    CHECK(load_params((out / "runs" / "intra_seed7" / "checkpoint.json").string()) == runs[0].finetuned);
    fs::remove_all(out);
}
