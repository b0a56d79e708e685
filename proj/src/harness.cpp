#include "ahmood/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <iomanip>
#include <limits>
#include <sstream>

#include "ahmood/errors.hpp"

namespace ahmood {

void ExperimentConfig::validate() const {
    model.validate();
    ahm.validate();
    ratios.validate();
    if (seeds.empty()) throw ConfigError("experiment config: seeds list is empty");
    if (protocols.empty()) throw ConfigError("experiment config: no protocol selected");
    if (accuracy_floor < 0.0 || accuracy_floor > 1.0)
        throw ConfigError("experiment config: accuracy_floor must be in [0, 1]");
    data.validate(model.max_seq_len);
    if (std::find(protocols.begin(), protocols.end(), Protocol::cross) != protocols.end()) {
        cross_data.validate(model.max_seq_len);
        if (cross_data.text_vocab > data.text_vocab || cross_data.num_patch_features != data.num_patch_features)
            throw ConfigError("cross corpus must share the primary corpus' vocabulary and patch width");
        if (cross_data.id_prefix == data.id_prefix)
            throw ConfigError("cross corpus needs a distinct id_prefix");
    }
    if (ood_class < 0 || static_cast<std::size_t>(ood_class) >= data.num_classes)
        throw ConfigError("experiment config: ood_class out of range");
}

namespace {

json spec_to_json(const SyntheticSpec& s) {
    return json{{"num_classes", s.num_classes},
                {"docs_per_class", s.docs_per_class},
                {"text_vocab", s.text_vocab},
                {"num_patch_features", s.num_patch_features},
                {"class_vocab_overlap", s.class_vocab_overlap},
                {"patch_mean_separation", s.patch_mean_separation},
                {"patch_noise_std", s.patch_noise_std},
                {"min_tokens", s.min_tokens},
                {"max_tokens", s.max_tokens},
                {"seed", s.seed},
                {"id_prefix", s.id_prefix}};
}

SyntheticSpec spec_from_json(const json& j, SyntheticSpec s) {
    s.num_classes = j.value("num_classes", s.num_classes);
    s.docs_per_class = j.value("docs_per_class", s.docs_per_class);
    s.text_vocab = j.value("text_vocab", s.text_vocab);
    s.num_patch_features = j.value("num_patch_features", s.num_patch_features);
    s.class_vocab_overlap = j.value("class_vocab_overlap", s.class_vocab_overlap);
    s.patch_mean_separation = j.value("patch_mean_separation", s.patch_mean_separation);
    s.patch_noise_std = j.value("patch_noise_std", s.patch_noise_std);
    s.min_tokens = j.value("min_tokens", s.min_tokens);
    s.max_tokens = j.value("max_tokens", s.max_tokens);
    s.seed = j.value("seed", s.seed);
    s.id_prefix = j.value("id_prefix", s.id_prefix);
    return s;
}

std::string metric_name(DistanceMetric m) { return m == DistanceMetric::cosine ? "cosine" : "euclidean"; }

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

json config_to_json(const ExperimentConfig& c) {
    json scorers = json::array();
    for (Method m : c.scorers) scorers.push_back(std::string(method_name(m)));
    json protocols = json::array();
    for (Protocol p : c.protocols) protocols.push_back(protocol_name(p));
    return json{
        {"model", c.model},
        {"training", c.training},
        {"seeds", c.seeds},
        {"ahm",
         {{"budget", c.ahm.budget},
          {"mask_percentages", c.ahm.mask_percentages},
          {"neighbors", c.ahm.neighbors},
          {"top_f", c.ahm.top_f},
          {"similarity_metric", metric_name(c.ahm.similarity_metric)}}},
        {"scorers", std::move(scorers)},
        {"scorer_options",
         {{"knn_k", c.scorer_options.knn_k},
          {"pca_dim", c.scorer_options.pca_dim ? json(*c.scorer_options.pca_dim) : json(nullptr)},
          {"regularization", c.scorer_options.regularization}}},
        {"silhouette_threshold", c.silhouette_threshold},
        {"accuracy_floor", c.accuracy_floor},
        {"data", spec_to_json(c.data)},
        {"cross_data", spec_to_json(c.cross_data)},
        {"ood_class", c.ood_class},
        {"ratios", {{"train", c.ratios.train}, {"eval", c.ratios.eval}, {"test", c.ratios.test}}},
        {"protocols", std::move(protocols)},
        {"output_dir", c.output_dir},
    };
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    try {
        if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
        if (j.contains("training")) c.training = j.at("training").get<TrainConfig>();
        if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (j.contains("ahm")) {
            const json& a = j.at("ahm");
            c.ahm.budget = a.value("budget", c.ahm.budget);
            c.ahm.mask_percentages = a.value("mask_percentages", c.ahm.mask_percentages);
            c.ahm.neighbors = a.value("neighbors", c.ahm.neighbors);
            c.ahm.top_f = a.value("top_f", c.ahm.top_f);
            const auto metric = a.value("similarity_metric", std::string("cosine"));
            if (metric == "cosine") c.ahm.similarity_metric = DistanceMetric::cosine;
            else if (metric == "euclidean") c.ahm.similarity_metric = DistanceMetric::euclidean;
            else throw ConfigError("unknown similarity metric '" + metric + "'");
        }
        if (j.contains("scorers")) {
            c.scorers.clear();
            for (const auto& s : j.at("scorers")) c.scorers.push_back(method_from_name(s.get<std::string>()));
        }
        if (j.contains("scorer_options")) {
            const json& s = j.at("scorer_options");
            c.scorer_options.knn_k = s.value("knn_k", c.scorer_options.knn_k);
            if (s.contains("pca_dim") && !s.at("pca_dim").is_null())
                c.scorer_options.pca_dim = s.at("pca_dim").get<std::size_t>();
            c.scorer_options.regularization = s.value("regularization", c.scorer_options.regularization);
        }
        c.silhouette_threshold = j.value("silhouette_threshold", c.silhouette_threshold);
        c.accuracy_floor = j.value("accuracy_floor", c.accuracy_floor);
        if (j.contains("data")) c.data = spec_from_json(j.at("data"), c.data);
        if (j.contains("cross_data")) c.cross_data = spec_from_json(j.at("cross_data"), c.cross_data);
        c.ood_class = j.value("ood_class", c.ood_class);
        if (j.contains("ratios")) {
            const json& r = j.at("ratios");
            c.ratios.train = r.value("train", c.ratios.train);
            c.ratios.eval = r.value("eval", c.ratios.eval);
            c.ratios.test = r.value("test", c.ratios.test);
        }
        if (j.contains("protocols")) {
            c.protocols.clear();
            for (const auto& p : j.at("protocols")) c.protocols.push_back(protocol_from_name(p.get<std::string>()));
        }
        c.output_dir = j.value("output_dir", c.output_dir);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    return c;
}

ExperimentConfig load_config(const std::string& path) { return config_from_json(read_json_file(path)); }

std::string config_hash(const ExperimentConfig& config) {
    const std::string canonical = config_to_json(config).dump();
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : canonical) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

DatasetSplit build_split(const ExperimentConfig& config, Protocol protocol, std::uint64_t seed) {
    const Corpus corpus = generate(config.data, config.model.max_seq_len);
    if (protocol == Protocol::intra) return make_intra_split(corpus, config.ood_class, config.ratios, seed);
    const Corpus other = generate(config.cross_data, config.model.max_seq_len);
    return make_cross_split(corpus, other, config.ratios, seed);
}

ModelConfig resolved_model_config(const ExperimentConfig& config, const DatasetSplit& split) {
    ModelConfig mc = config.model;
    mc.text_vocab = config.data.text_vocab;
    mc.num_patch_features = config.data.num_patch_features;
    mc.num_classes = train_label_set(split).size();
    mc.validate();
    return mc;
}

CheckpointChoice select_checkpoint(const std::vector<Checkpoint>& checkpoints,
                                   const std::vector<DocumentInput>& eval_docs, double accuracy_floor,
                                   double silhouette_threshold) {
    if (checkpoints.empty()) throw std::runtime_error("no checkpoints to select from");
    double best_acc = 0.0;
    for (const auto& cp : checkpoints) best_acc = std::max(best_acc, cp.eval_accuracy);
    const double floor = accuracy_floor * best_acc;

    CheckpointChoice choice;
    choice.silhouettes.assign(checkpoints.size(), std::numeric_limits<double>::quiet_NaN());
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
        if (checkpoints[i].eval_accuracy < floor) continue;
        const auto& params = checkpoints[i].params;
        const auto emb = extract_embeddings(params, eval_docs, AttentionHeadMask::all_ones(params.config),
                                            Pooling::cls_last);
        const double s = silhouette(emb.features, emb.labels);
        choice.silhouettes[i] = s;
        if (s < silhouette_threshold) continue;
        if (!best || s > choice.silhouettes[*best]) best = i;
    }
    if (!best) {
        std::ostringstream os;
        os << "every checkpoint was filtered out (silhouette threshold " << silhouette_threshold
           << "); silhouettes:";
        for (std::size_t i = 0; i < checkpoints.size(); ++i)
            os << " epoch " << checkpoints[i].epoch << "=" << choice.silhouettes[i];
        throw std::runtime_error(os.str());
    }
    choice.index = *best;
    return choice;
}

void evaluate_run(const ExperimentConfig& config, const DatasetSplit& split, const ModelParams& finetuned,
                  const ModelParams& pretrained, const AhmEnsemble& ensemble, RunResult& result) {
    const bool needs_ahm = std::any_of(config.scorers.begin(), config.scorers.end(), uses_ahm);
    const AhmEnsemble* ens = needs_ahm ? &ensemble : nullptr;
    const FeatureBank train = build_feature_bank(finetuned, pretrained, split.train, ens);
    const FeatureBank id = build_feature_bank(finetuned, pretrained, split.test_id, ens);
    const FeatureBank ood = build_feature_bank(finetuned, pretrained, split.test_ood, ens);
    const ScorerContext ctx = fit_scorer_context(train, finetuned.config.num_classes, finetuned.classifier_weight,
                                                 finetuned.classifier_bias, config.scorer_options);

    result.id_doc_ids.clear();
    result.ood_doc_ids.clear();
    for (const auto& d : split.test_id) result.id_doc_ids.push_back(d.id);
    for (const auto& d : split.test_ood) result.ood_doc_ids.push_back(d.id);

    for (Method m : config.scorers) {
        BinaryScoreSet s;
        for (const auto& v : score_dataset(m, id, ctx)) s.id_scores.push_back(v.value);
        for (const auto& v : score_dataset(m, ood, ctx)) s.ood_scores.push_back(v.value);
        result.metrics[m] = {auroc(s), fpr_at_tpr(s, 0.95)};
        result.scores[m] = std::move(s);
    }
}

RunResult run_single(const ExperimentConfig& config, Protocol protocol, std::uint64_t seed) {
    RunResult r;
    r.seed = seed;
    r.protocol = protocol;
    const DatasetSplit split = with_contiguous_labels(build_split(config, protocol, seed));
    const ModelConfig mc = resolved_model_config(config, split);

    const ModelParams init = ModelParams::initialize(mc, seed);
    const PretrainedSnapshot pretrained = snapshot_pretrained(init);
    TrainConfig tc = config.training;
    tc.seed = seed;
    FineTuneResult ft = fine_tune(init, split.train, split.eval_id, tc);

    r.checkpoint = select_checkpoint(ft.checkpoints, split.eval_id, config.accuracy_floor,
                                     config.silhouette_threshold);
    r.finetuned = ft.checkpoints[r.checkpoint.index].params;
    r.selected_epoch = ft.checkpoints[r.checkpoint.index].epoch;
    for (auto& cp : ft.checkpoints) cp.params = ModelParams{};
    r.checkpoints = std::move(ft.checkpoints);

    AhmConfig ahm = config.ahm;
    ahm.seed = seed;
    r.ensemble = run_search(r.finetuned, split.train, split.eval_id, ahm);

    evaluate_run(config, split, r.finetuned, *pretrained, r.ensemble, r);
    return r;
}

OodEvalReport assemble_report(const ExperimentConfig& config, const std::vector<RunResult>& runs) {
    OodEvalReport report;
    for (Protocol p : config.protocols) {
        for (Method m : config.scorers) {
            std::vector<double> aurocs, fprs;
            for (const auto& r : runs) {
                if (r.protocol != p) continue;
                auto it = r.metrics.find(m);
                if (it == r.metrics.end()) continue;
                aurocs.push_back(it->second.auroc);
                fprs.push_back(it->second.fpr);
            }
            if (aurocs.empty()) continue;
            report.rows.push_back({p, m, aggregate_runs(aurocs, fprs)});
        }
    }
    json runs_json = json::array();
    for (const auto& r : runs) {
        json masks = json::array();
        for (const auto& m : r.ensemble.selected_masks) masks.push_back(m.bitmap());
        json sil = json::array();
        for (double s : r.checkpoint.silhouettes) sil.push_back(std::isnan(s) ? json(nullptr) : json(s));
        runs_json.push_back({{"seed", r.seed},
                             {"protocol", protocol_name(r.protocol)},
                             {"selected_epoch", r.selected_epoch},
                             {"checkpoint_silhouettes", std::move(sil)},
                             {"selected_trials", r.ensemble.selected_indices()},
                             {"selected_masks", std::move(masks)}});
    }
    report.provenance = json{{"config_hash", config_hash(config)},
                             {"config", config_to_json(config)},
                             {"seeds", config.seeds},
                             {"runs", std::move(runs_json)}};
    return report;
}

OodEvalReport run_experiment(const ExperimentConfig& config, std::vector<RunResult>* runs_out) {
    config.validate();
    const std::string started = iso_timestamp();
    std::vector<RunResult> runs;
    std::vector<std::uint64_t> seeds = config.seeds;
    std::sort(seeds.begin(), seeds.end());
    for (Protocol p : config.protocols) {
        for (std::uint64_t seed : seeds) {
            try {
                runs.push_back(run_single(config, p, seed));
            } catch (const std::exception& e) {
                throw std::runtime_error("run failed (protocol " + protocol_name(p) + ", seed " +
                                         std::to_string(seed) + "): " + e.what());
            }
        }
    }
    OodEvalReport report = assemble_report(config, runs);
    report.provenance["started_at"] = started;
    report.provenance["finished_at"] = iso_timestamp();
    if (runs_out) *runs_out = std::move(runs);
    return report;
}

std::string render_scores_csv(const RunResult& run) {
    std::ostringstream os;
    os << "doc_id,method,score,is_ood\n";
    for (const auto& [method, s] : run.scores) {
        for (std::size_t i = 0; i < s.id_scores.size(); ++i)
            os << run.id_doc_ids[i] << ',' << method_name(method) << ',' << format_number(s.id_scores[i]) << ",0\n";
        for (std::size_t i = 0; i < s.ood_scores.size(); ++i)
            os << run.ood_doc_ids[i] << ',' << method_name(method) << ',' << format_number(s.ood_scores[i])
               << ",1\n";
    }
    return os.str();
}

}  // namespace ahmood
