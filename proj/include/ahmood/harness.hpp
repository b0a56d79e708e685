#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ahmood/ahm_search.hpp"
#include "ahmood/data.hpp"
#include "ahmood/json_io.hpp"
#include "ahmood/metrics.hpp"
#include "ahmood/model.hpp"
#include "ahmood/scorers.hpp"

namespace ahmood {

struct ExperimentConfig {
    ModelConfig model;  // text_vocab, num_patch_features and num_classes follow the data
    TrainConfig training;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    AhmConfig ahm;
    std::vector<Method> scorers = all_methods();
    ScorerOptions scorer_options;
    double silhouette_threshold = 0.0;
    double accuracy_floor = 0.9;  // fraction of the best checkpoint's eval accuracy
    SyntheticSpec data;
    SyntheticSpec cross_data{.seed = 1000, .id_prefix = "ext"};  // second corpus for the cross protocol
    int ood_class = 9;
    SplitRatios ratios;
    std::vector<Protocol> protocols{Protocol::intra};
    std::string output_dir = "ahm_out";

    void validate() const;
};

json config_to_json(const ExperimentConfig& config);
// Missing keys keep their defaults; unknown scorer or protocol names throw ConfigError.
ExperimentConfig config_from_json(const json& j);
ExperimentConfig load_config(const std::string& path);
// FNV-1a over the canonical JSON form, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

// The split a given run uses. The corpus is fixed by the data spec; the run
// seed only reshuffles the ID split.
DatasetSplit build_split(const ExperimentConfig& config, Protocol protocol, std::uint64_t seed);

// Model geometry with the data-dependent fields filled in.
ModelConfig resolved_model_config(const ExperimentConfig& config, const DatasetSplit& contiguous_split);

struct CheckpointChoice {
    std::size_t index = 0;          // into the checkpoint list
    std::vector<double> silhouettes;  // NaN for checkpoints below the accuracy floor
};

// Keeps checkpoints within accuracy_floor of the best eval accuracy, drops
// those whose eval silhouette is below the threshold, and picks the highest
// silhouette (earliest epoch on ties). Throws std::runtime_error listing the
// silhouettes when nothing survives.
CheckpointChoice select_checkpoint(const std::vector<Checkpoint>& checkpoints,
                                   const std::vector<DocumentInput>& eval_docs, double accuracy_floor,
                                   double silhouette_threshold);

struct MethodResult {
    double auroc = 0.0;
    double fpr = 0.0;
};

struct RunResult {
    std::uint64_t seed = 0;
    Protocol protocol = Protocol::intra;
    std::size_t selected_epoch = 0;
    CheckpointChoice checkpoint;
    std::vector<Checkpoint> checkpoints;  // parameters stripped after selection
    ModelParams finetuned;
    AhmEnsemble ensemble;
    std::map<Method, MethodResult> metrics;
    std::map<Method, BinaryScoreSet> scores;
    std::vector<std::string> id_doc_ids;
    std::vector<std::string> ood_doc_ids;
};

// Score and evaluate a fitted model on one split.
void evaluate_run(const ExperimentConfig& config, const DatasetSplit& contiguous_split,
                  const ModelParams& finetuned, const ModelParams& pretrained, const AhmEnsemble& ensemble,
                  RunResult& result);

RunResult run_single(const ExperimentConfig& config, Protocol protocol, std::uint64_t seed);

struct ReportRow {
    Protocol protocol;
    Method method;
    MetricSummary summary;
};

struct OodEvalReport {
    std::vector<ReportRow> rows;  // protocol-major, then config.scorers order
    json provenance;
};

OodEvalReport run_experiment(const ExperimentConfig& config, std::vector<RunResult>* runs = nullptr);

// Aggregates per-run metrics into report rows.
OodEvalReport assemble_report(const ExperimentConfig& config, const std::vector<RunResult>& runs);

enum class ReportFormat { csv, markdown };

ReportFormat report_format_from_name(const std::string& name);
std::string render_report(const OodEvalReport& report, ReportFormat format);
// Parses render_report(..., csv) output back into rows.
std::vector<ReportRow> parse_report_csv(const std::string& text);

// doc_id,method,score,is_ood
std::string render_scores_csv(const RunResult& run);

// Writes report.csv, report.md, report.json and one directory of artifacts per run.
void write_outputs(const ExperimentConfig& config, const OodEvalReport& report,
                   const std::vector<RunResult>& runs, const std::string& dir);

}  // namespace ahmood
