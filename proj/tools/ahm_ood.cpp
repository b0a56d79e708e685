#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ahmood/errors.hpp"
#include "ahmood/harness.hpp"
#include "ahmood/parallel.hpp"

namespace fs = std::filesystem;
using namespace ahmood;

namespace {

struct CommonOptions {
    std::string config_path;
    std::vector<std::uint64_t> seeds;
    std::string out;
    std::size_t threads = 0;
    std::string protocol = "intra";
};

ExperimentConfig load_experiment(const CommonOptions& o) {
    ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
    if (!o.seeds.empty()) c.seeds = o.seeds;
    if (!o.out.empty()) c.output_dir = o.out;
    c.validate();
    return c;
}

std::uint64_t single_seed(const ExperimentConfig& c) {
    if (c.seeds.size() != 1) throw ConfigError("this command takes exactly one --seed");
    return c.seeds.front();
}

void write_text(const std::string& path, const std::string& text) {
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << text;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

int cmd_generate(const CommonOptions& o) {
    ExperimentConfig c = load_experiment(o);
    const auto seed = single_seed(c);
    const auto split = build_split(c, protocol_from_name(o.protocol), seed);
    const std::string path = o.out.empty() ? "split.jsonl" : o.out;
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    save_split(split, path);
    std::printf("wrote %s: train=%zu eval_id=%zu test_id=%zu test_ood=%zu\n", path.c_str(), split.train.size(),
                split.eval_id.size(), split.test_id.size(), split.test_ood.size());
    return 0;
}

int cmd_train(const CommonOptions& o, const std::string& data_path) {
    ExperimentConfig c = load_experiment(o);
    const auto seed = single_seed(c);
    const auto split = with_contiguous_labels(load_split(data_path));
    const ModelParams init = ModelParams::initialize(resolved_model_config(c, split), seed);
    TrainConfig tc = c.training;
    tc.seed = seed;
    FineTuneResult ft = fine_tune(init, split.train, split.eval_id, tc);
    const auto choice = select_checkpoint(ft.checkpoints, split.eval_id, c.accuracy_floor, c.silhouette_threshold);
    const fs::path dir = o.out.empty() ? fs::path("train_out") : fs::path(o.out);
    fs::create_directories(dir);
    save_params(init, (dir / "pretrained.json").string());
    save_params(ft.checkpoints[choice.index].params, (dir / "checkpoint.json").string());
    json manifest = json::array();
    for (std::size_t i = 0; i < ft.checkpoints.size(); ++i) {
        const auto& cp = ft.checkpoints[i];
        manifest.push_back({{"epoch", cp.epoch},
                            {"train_loss", cp.train_loss},
                            {"train_accuracy", cp.train_accuracy},
                            {"eval_accuracy", cp.eval_accuracy},
                            {"silhouette", std::isnan(choice.silhouettes[i]) ? json(nullptr)
                                                                             : json(choice.silhouettes[i])}});
    }
    write_json_file({{"selected_epoch", ft.checkpoints[choice.index].epoch},
                     {"config_hash", config_hash(c)},
                     {"checkpoints", std::move(manifest)}},
                    (dir / "checkpoints.json").string());
    std::printf("selected epoch %zu (eval accuracy %.4f); wrote %s\n", ft.checkpoints[choice.index].epoch,
                ft.checkpoints[choice.index].eval_accuracy, dir.string().c_str());
    return 0;
}

int cmd_search(const CommonOptions& o, const std::string& data_path, const std::string& checkpoint) {
    ExperimentConfig c = load_experiment(o);
    AhmConfig ahm = c.ahm;
    ahm.seed = single_seed(c);
    const auto split = with_contiguous_labels(load_split(data_path));
    const ModelParams params = load_params(checkpoint);
    const AhmEnsemble ens = run_search(params, split.train, split.eval_id, ahm);
    const std::string path = o.out.empty() ? "ensemble.json" : o.out;
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    write_json_file(ensemble_to_json(ens), path);
    std::printf("kept %zu of %zu masks; wrote %s\n", ens.selected_masks.size(), ens.trial_log.size(), path.c_str());
    return 0;
}

int cmd_score(const CommonOptions& o, const std::string& data_path, const std::string& checkpoint,
              const std::string& pretrained_path, const std::string& ensemble_path) {
    ExperimentConfig c = load_experiment(o);
    const auto split = with_contiguous_labels(load_split(data_path));
    const ModelParams finetuned = load_params(checkpoint);
    const ModelParams pretrained = load_params(pretrained_path);
    AhmEnsemble ens;
    const bool needs_ahm = std::any_of(c.scorers.begin(), c.scorers.end(), uses_ahm);
    if (needs_ahm) {
        if (ensemble_path.empty()) throw ConfigError("AHM scorers need --ensemble");
        ens = ensemble_from_json(read_json_file(ensemble_path));
    }
    RunResult r;
    r.protocol = split.protocol;
    evaluate_run(c, split, finetuned, pretrained, ens, r);
    const std::string path = o.out.empty() ? "scores.csv" : o.out;
    write_text(path, render_scores_csv(r));
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

// Recomputes metrics from one or more scores.csv files (one per run).
int cmd_evaluate(const CommonOptions& o, const std::vector<std::string>& score_files, const std::string& format) {
    const ReportFormat fmt = report_format_from_name(format);
    std::map<Method, std::pair<std::vector<double>, std::vector<double>>> per_method;
    std::vector<Method> order;
    for (const auto& file : score_files) {
        std::istringstream in(read_text(file));
        std::string line;
        std::getline(in, line);
        if (line != "doc_id,method,score,is_ood") throw ParseError(file + ": unexpected header", 1);
        std::map<Method, BinaryScoreSet> sets;
        std::size_t line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            std::vector<std::string> f;
            std::stringstream ls(line);
            for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
            if (f.size() != 4) throw ParseError(file + ": expected 4 fields", line_no);
            const Method m = method_from_name(f[1]);
            if (!sets.count(m) && std::find(order.begin(), order.end(), m) == order.end()) order.push_back(m);
            const double v = std::stod(f[2]);
            (f[3] == "1" ? sets[m].ood_scores : sets[m].id_scores).push_back(v);
        }
        for (const auto& [m, s] : sets) {
            per_method[m].first.push_back(auroc(s));
            per_method[m].second.push_back(fpr_at_tpr(s, 0.95));
        }
    }
    OodEvalReport report;
    const Protocol p = protocol_from_name(o.protocol);
    for (Method m : order)
        report.rows.push_back({p, m, aggregate_runs(per_method[m].first, per_method[m].second)});
    const std::string text = render_report(report, fmt);
    if (o.out.empty()) std::fputs(text.c_str(), stdout);
    else write_text(o.out, text);
    return 0;
}

int cmd_run_all(const CommonOptions& o, const std::string& format) {
    ExperimentConfig c = load_experiment(o);
    const auto start = std::chrono::steady_clock::now();
    std::vector<RunResult> runs;
    const OodEvalReport report = run_experiment(c, &runs);
    write_outputs(c, report, runs, c.output_dir);
    std::fputs(render_report(report, report_format_from_name(format)).c_str(), stdout);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "finished %zu runs in %.1fs; outputs in %s\n", runs.size(), secs, c.output_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Attention-head masking for out-of-distribution detection"};
    app.require_subcommand(1);
    CommonOptions opts;
    std::string data, checkpoint, pretrained, ensemble, format = "markdown";
    std::vector<std::string> score_files;

    auto add_common = [&](CLI::App* sub, bool with_seed) {
        sub->add_option("--config", opts.config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
        if (with_seed) sub->add_option("--seed", opts.seeds, "run seed (repeatable)");
        sub->add_option("--out", opts.out, "output file or directory");
        sub->add_option("--threads", opts.threads, "worker threads (0 = all cores)");
    };

    auto* gen = app.add_subcommand("generate", "write a synthetic dataset split as JSON Lines");
    add_common(gen, true);
    gen->add_option("--protocol", opts.protocol, "intra or cross");

    auto* train = app.add_subcommand("train", "fine-tune and keep the selected checkpoint");
    add_common(train, true);
    train->add_option("--data", data, "dataset split (JSON Lines)")->required()->check(CLI::ExistingFile);

    auto* search = app.add_subcommand("search", "run the attention-head mask search");
    add_common(search, true);
    search->add_option("--data", data, "dataset split")->required()->check(CLI::ExistingFile);
    search->add_option("--checkpoint", checkpoint, "fine-tuned parameters")->required()->check(CLI::ExistingFile);

    auto* score = app.add_subcommand("score", "score the test documents with every configured method");
    add_common(score, false);
    score->add_option("--data", data, "dataset split")->required()->check(CLI::ExistingFile);
    score->add_option("--checkpoint", checkpoint, "fine-tuned parameters")->required()->check(CLI::ExistingFile);
    score->add_option("--pretrained", pretrained, "pre-fine-tuning parameters")
        ->required()
        ->check(CLI::ExistingFile);
    score->add_option("--ensemble", ensemble, "mask ensemble from `search`")->check(CLI::ExistingFile);

    auto* evaluate = app.add_subcommand("evaluate", "aggregate AUROC and FPR@95 over scores.csv files");
    evaluate->add_option("--scores", score_files, "scores.csv (repeatable, one per run)")
        ->required()
        ->check(CLI::ExistingFile);
    evaluate->add_option("--out", opts.out, "report path (stdout if omitted)");
    evaluate->add_option("--protocol", opts.protocol, "protocol label for the report");
    evaluate->add_option("--format", format, "csv or markdown");

    auto* run_all = app.add_subcommand("run-all", "full experiment over every seed and protocol");
    add_common(run_all, true);
    run_all->add_option("--format", format, "stdout format: csv or markdown");

    CLI11_PARSE(app, argc, argv);
    try {
        set_num_threads(opts.threads);
        if (gen->parsed()) return cmd_generate(opts);
        if (train->parsed()) return cmd_train(opts, data);
        if (search->parsed()) return cmd_search(opts, data, checkpoint);
        if (score->parsed()) return cmd_score(opts, data, checkpoint, pretrained, ensemble);
        if (evaluate->parsed()) return cmd_evaluate(opts, score_files, format);
        if (run_all->parsed()) return cmd_run_all(opts, format);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "ahm-ood: %s\n", e.what());
        return 1;
    }
    return 2;
}
