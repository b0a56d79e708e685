#include "ahmood/ahm_search.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ahmood/errors.hpp"

namespace ahmood {

void AhmConfig::validate() const {
    if (top_f < 1 || budget < top_f)
        throw ContractError("AHM config requires budget >= top_f >= 1 (budget=" + std::to_string(budget) +
                            ", top_f=" + std::to_string(top_f) + ")");
    if (neighbors < 1) throw ContractError("AHM config requires neighbors >= 1");
    if (mask_percentages.empty()) throw ContractError("AHM config needs at least one mask percentage");
    for (double p : mask_percentages)
        if (!(p > 0.0 && p < 1.0))
            throw ContractError("mask percentage " + std::to_string(p) + " is outside (0, 1)");
}

std::vector<std::size_t> AhmEnsemble::selected_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < selected_masks.size() && i < trial_log.size(); ++i)
        out.push_back(trial_log[i].trial_index);
    return out;
}

std::size_t masked_heads_per_layer(std::size_t num_heads, double p) {
    if (!(p > 0.0 && p < 1.0)) throw ContractError("mask percentage must be in (0, 1)");
    const auto rounded = static_cast<std::size_t>(std::llround(p * static_cast<double>(num_heads)));
    const std::size_t m = std::max<std::size_t>(1, rounded);
    if (m >= num_heads)
        throw ContractError("masking " + std::to_string(m) + " of " + std::to_string(num_heads) +
                            " heads would silence a whole layer");
    return m;
}

AttentionHeadMask sample_mask(const ModelConfig& config, double p, std::mt19937_64& rng) {
    const std::size_t m = masked_heads_per_layer(config.num_heads, p);
    AttentionHeadMask mask = AttentionHeadMask::all_ones(config);
    std::vector<std::size_t> heads(config.num_heads);
    for (std::size_t layer = 0; layer < config.num_layers; ++layer) {
        std::iota(heads.begin(), heads.end(), 0);
        std::shuffle(heads.begin(), heads.end(), rng);
        for (std::size_t i = 0; i < m; ++i) mask.set(layer, heads[i], false);
    }
    return mask;
}

MaskTrialResult score_embeddings(const Matrix& embed_train, const Matrix& embed_eval, std::size_t k,
                                 DistanceMetric metric) {
    if (embed_train.rows() == 0 || embed_eval.rows() == 0)
        throw ContractError("similarity scoring needs non-empty train and eval sets");
    const Matrix dist = knn_distances(embed_eval, embed_train, k, metric);
    MaskTrialResult r;
    r.per_eval_scores.resize(embed_eval.rows());
    double total = 0.0;
    for (std::size_t i = 0; i < dist.rows(); ++i) {
        double s = 0.0;
        for (double d : dist.row(i)) s += metric == DistanceMetric::cosine ? 1.0 - d : -d;
        r.per_eval_scores[i] = s / static_cast<double>(k);
        total += r.per_eval_scores[i];
    }
    r.mean_similarity = total / static_cast<double>(embed_eval.rows());
    return r;
}

MaskTrialResult score_mask(const ModelParams& params, const AttentionHeadMask& mask,
                           const std::vector<DocumentInput>& train_set,
                           const std::vector<DocumentInput>& eval_set, std::size_t k,
                           DistanceMetric metric) {
    if (train_set.empty() || eval_set.empty())
        throw ContractError("score_mask needs non-empty train and eval sets");
    if (k > train_set.size())
        throw ContractError("K=" + std::to_string(k) + " exceeds the " + std::to_string(train_set.size()) +
                            " training documents");
    const auto train = extract_embeddings(params, train_set, mask, Pooling::cls_last);
    const auto eval = extract_embeddings(params, eval_set, mask, Pooling::cls_last);
    MaskTrialResult r = score_embeddings(train.features, eval.features, k, metric);
    r.mask = mask;
    return r;
}

AhmEnsemble select_top_masks(std::vector<MaskTrialResult> trials, const AhmConfig& config) {
    if (trials.size() < config.top_f)
        throw ContractError("fewer trials than masks to select");
    std::stable_sort(trials.begin(), trials.end(), [](const auto& a, const auto& b) {
        if (a.mean_similarity != b.mean_similarity) return a.mean_similarity > b.mean_similarity;
        return a.trial_index < b.trial_index;
    });
    AhmEnsemble e;
    e.config = config;
    for (std::size_t i = 0; i < config.top_f; ++i) e.selected_masks.push_back(trials[i].mask);
    e.trial_log = std::move(trials);
    return e;
}

AhmEnsemble run_search(const ModelParams& params, const std::vector<DocumentInput>& train_set,
                       const std::vector<DocumentInput>& eval_set, const AhmConfig& config) {
    config.validate();
    std::vector<MaskTrialResult> trials;
    trials.reserve(config.budget);
    for (std::size_t t = 0; t < config.budget; ++t) {
        std::seed_seq seq{static_cast<std::uint32_t>(config.seed),
                          static_cast<std::uint32_t>(config.seed >> 32),
                          static_cast<std::uint32_t>(t)};
        std::mt19937_64 rng(seq);
        const double p = config.mask_percentages[t % config.mask_percentages.size()];
        const AttentionHeadMask mask = sample_mask(params.config, p, rng);
        MaskTrialResult r = score_mask(params, mask, train_set, eval_set, config.neighbors,
                                       config.similarity_metric);
        r.trial_index = t;
        r.mask_percentage = p;
        trials.push_back(std::move(r));
    }
    AhmEnsemble e = select_top_masks(std::move(trials), config);
    e.extraction_passes = config.budget;
    return e;
}

FeatureSet ensemble_features(const ModelParams& params, const std::vector<DocumentInput>& docs,
                             const AhmEnsemble& ensemble) {
    if (ensemble.selected_masks.empty()) throw ContractError("ensemble has no selected masks");
    const std::size_t hid = params.config.hidden;
    FeatureSet sum{Matrix(docs.size(), hid), Matrix(docs.size(), hid),
                   Matrix(docs.size(), params.config.num_classes), {}};
    for (const auto& mask : ensemble.selected_masks) {
        FeatureSet fs = extract_features(params, docs, mask);
        for (std::size_t i = 0; i < sum.cls.size(); ++i) {
            sum.cls.values()[i] += fs.cls.values()[i];
            sum.avg_avg.values()[i] += fs.avg_avg.values()[i];
        }
        for (std::size_t i = 0; i < sum.logits.size(); ++i) sum.logits.values()[i] += fs.logits.values()[i];
        sum.labels = std::move(fs.labels);
    }
    const double n = static_cast<double>(ensemble.selected_masks.size());
    for (double& v : sum.cls.values()) v /= n;
    for (double& v : sum.avg_avg.values()) v /= n;
    for (double& v : sum.logits.values()) v /= n;
    return sum;
}

EmbeddingSet ensemble_embed(const ModelParams& params, const std::vector<DocumentInput>& docs,
                            const AhmEnsemble& ensemble, Pooling pooling) {
    FeatureSet fs = ensemble_features(params, docs, ensemble);
    return {pooling == Pooling::cls_last ? std::move(fs.cls) : std::move(fs.avg_avg),
            std::move(fs.labels)};
}

namespace {

std::string metric_name(DistanceMetric m) { return m == DistanceMetric::cosine ? "cosine" : "euclidean"; }

DistanceMetric metric_from_name(const std::string& s) {
    if (s == "cosine") return DistanceMetric::cosine;
    if (s == "euclidean") return DistanceMetric::euclidean;
    throw ConfigError("unknown similarity metric '" + s + "'");
}

}  // namespace

json ensemble_to_json(const AhmEnsemble& ensemble) {
    const auto& c = ensemble.config;
    json trials = json::array();
    for (const auto& t : ensemble.trial_log) {
        trials.push_back({{"trial", t.trial_index},
                          {"mask_percentage", t.mask_percentage},
                          {"num_layers", t.mask.num_layers()},
                          {"num_heads", t.mask.num_heads()},
                          {"mask", t.mask.bitmap()},
                          {"mean_similarity", t.mean_similarity}});
    }
    return json{{"config",
                 {{"budget", c.budget},
                  {"mask_percentages", c.mask_percentages},
                  {"neighbors", c.neighbors},
                  {"top_f", c.top_f},
                  {"similarity_metric", metric_name(c.similarity_metric)},
                  {"seed", c.seed}}},
                {"trials", std::move(trials)},
                {"selected", ensemble.selected_indices()},
                {"extraction_passes", ensemble.extraction_passes}};
}

AhmEnsemble ensemble_from_json(const json& j) {
    AhmEnsemble e;
    const json& c = j.at("config");
    e.config.budget = c.at("budget").get<std::size_t>();
    e.config.mask_percentages = c.at("mask_percentages").get<std::vector<double>>();
    e.config.neighbors = c.at("neighbors").get<std::size_t>();
    e.config.top_f = c.at("top_f").get<std::size_t>();
    e.config.similarity_metric = metric_from_name(c.at("similarity_metric").get<std::string>());
    e.config.seed = c.at("seed").get<std::uint64_t>();
    for (const auto& t : j.at("trials")) {
        MaskTrialResult r;
        r.trial_index = t.at("trial").get<std::size_t>();
        r.mask_percentage = t.at("mask_percentage").get<double>();
        r.mask = AttentionHeadMask::from_bitmap(t.at("mask").get<std::string>(),
                                                t.at("num_layers").get<std::size_t>(),
                                                t.at("num_heads").get<std::size_t>());
        r.mean_similarity = t.at("mean_similarity").get<double>();
        e.trial_log.push_back(std::move(r));
    }
    for (auto idx : j.at("selected").get<std::vector<std::size_t>>()) {
        auto it = std::find_if(e.trial_log.begin(), e.trial_log.end(),
                               [&](const auto& t) { return t.trial_index == idx; });
        if (it == e.trial_log.end())
            throw ParseError("selected trial " + std::to_string(idx) + " is not in the trial log", 0);
        e.selected_masks.push_back(it->mask);
    }
    e.extraction_passes = j.value("extraction_passes", std::size_t{0});
    return e;
}

}  // namespace ahmood
