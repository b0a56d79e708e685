#include "ahmood/scorers.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "ahmood/errors.hpp"

namespace ahmood {

namespace {

constexpr std::array<std::pair<Method, std::string_view>, 15> kMethodNames{{
    {Method::energy, "energy"},
    {Method::grad_norm, "gradNorm"},
    {Method::kl, "kl"},
    {Method::knn, "knn"},
    {Method::mahalanobis, "Mahalanobis"},
    {Method::mah_avg_avg, "mah_AvgAvg"},
    {Method::mah_gnome, "mah_Gnome"},
    {Method::max_logit, "maxLogit"},
    {Method::msp, "msp"},
    {Method::neco, "neco"},
    {Method::residual, "residual"},
    {Method::vim, "vim"},
    {Method::knn_ahm, "knn_AHM"},
    {Method::mah_ahm, "mah_AHM"},
    {Method::mah_avg_avg_ahm, "mah_AvgAvg_AHM"},
}};

}  // namespace

std::string_view method_name(Method m) {
    for (const auto& [method, name] : kMethodNames)
        if (method == m) return name;
    return "unknown";
}

Method method_from_name(std::string_view name) {
    for (const auto& [method, n] : kMethodNames)
        if (n == name) return method;
    throw ConfigError("unknown scorer '" + std::string(name) + "'");
}

const std::vector<Method>& all_methods() {
    static const std::vector<Method> methods = [] {
        std::vector<Method> v;
        for (const auto& entry : kMethodNames) v.push_back(entry.first);
        return v;
    }();
    return methods;
}

bool uses_ahm(Method m) {
    return m == Method::knn_ahm || m == Method::mah_ahm || m == Method::mah_avg_avg_ahm;
}

double msp(std::span<const double> logits) {
    const Vector p = softmax(logits);
    return *std::max_element(p.begin(), p.end());
}

double max_logit(std::span<const double> logits) {
    if (logits.empty()) throw ContractError("max_logit of empty vector");
    return *std::max_element(logits.begin(), logits.end());
}

double energy(std::span<const double> logits, double temperature) {
    Vector scaled(logits.begin(), logits.end());
    for (double& z : scaled) z /= temperature;
    return temperature * logsumexp(scaled);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw ShapeError("kl_divergence: length mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        kl += p[i] * std::log(p[i] / std::max(q[i], kKlTemplateFloor));
    }
    return kl;
}

double kl_matching(std::span<const double> logits, const Matrix& templates) {
    const Vector p = softmax(logits);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < templates.rows(); ++k) best = std::min(best, kl_divergence(p, templates.row(k)));
    return -best;
}

double grad_norm(std::span<const double> pooled_embedding, std::span<const double> logits) {
    const Vector p = softmax(logits);
    const double uniform = 1.0 / static_cast<double>(p.size());
    double prob_l1 = 0.0;
    for (double v : p) prob_l1 += std::abs(v - uniform);
    double emb_l1 = 0.0;
    for (double v : pooled_embedding) emb_l1 += std::abs(v);
    return prob_l1 * emb_l1;
}

double mahalanobis_score(std::span<const double> feature, const GaussianStats& gaussian) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& mu : gaussian.class_means)
        best = std::max(best, -mahalanobis_sq(feature, mu, gaussian.precision));
    return best;
}

double knn_score(std::span<const double> feature, const Matrix& normalized_reference, std::size_t k) {
    if (k < 1) throw ContractError("knn_score: k must be >= 1");
    const Matrix query = l2_normalize_rows(Matrix::row_vector(feature));
    const Matrix d = knn_distances(query, normalized_reference, k, DistanceMetric::euclidean);
    return -d(0, k - 1);
}

VimFit fit_vim(const Matrix& train_features, const Matrix& classifier_weight,
               const Matrix& classifier_bias, std::size_t pca_dim) {
    VimFit fit;
    fit.pca = fit_pca(train_features, pca_dim);
    const Matrix logits = matmul(train_features, classifier_weight);
    double logit_sum = 0.0;
    double residual_sum = 0.0;
    for (std::size_t i = 0; i < train_features.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < logits.cols(); ++j) mx = std::max(mx, logits(i, j) + classifier_bias(0, j));
        logit_sum += mx;
        residual_sum += pca_residual_norm(fit.pca, train_features.row(i));
    }
    // Residuals of features lying in the subspace are pure rounding noise.
    double scale = 0.0;
    for (double v : train_features.values()) scale = std::max(scale, std::abs(v));
    const double noise_floor = 1e-9 * std::max(scale, 1.0) * static_cast<double>(train_features.rows());
    if (residual_sum <= noise_floor)
        throw DegenerateSubspaceError("training features lie in the principal subspace; ViM alpha is undefined");
    fit.alpha = logit_sum / residual_sum;
    return fit;
}

double vim_score(std::span<const double> feature, std::span<const double> logits, const PcaBasis& pca,
                 double alpha) {
    return logsumexp(logits) - alpha * pca_residual_norm(pca, feature);
}

double residual_score(std::span<const double> feature, const PcaBasis& pca) {
    return -pca_residual_norm(pca, feature);
}

double neco_score(std::span<const double> feature, std::span<const double> logits, const PcaBasis& pca) {
    Vector centered(feature.size());
    for (std::size_t i = 0; i < feature.size(); ++i) centered[i] = feature[i] - pca.mean[i];
    const double full = norm2(centered);
    if (full == 0.0) return 0.0;
    const double projected = norm2(pca_project(pca, feature));
    return projected / full * max_logit(logits);
}

ZNormalizer fit_normalizer(std::span<const double> values) {
    if (values.empty()) throw InsufficientDataError("cannot fit a normalizer on no values");
    ZNormalizer z;
    for (double v : values) z.mean += v;
    z.mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - z.mean) * (v - z.mean);
    var /= static_cast<double>(values.size());
    z.stddev = std::sqrt(var);
    if (z.stddev == 0.0) {
        z.stddev = 1.0;
        z.degenerate = true;
    }
    return z;
}

double gnome_score(std::span<const double> feature_finetuned, std::span<const double> feature_pretrained,
                   const GaussianStats& gaussian_finetuned, const GaussianStats& gaussian_pretrained,
                   const ZNormalizer& norm_finetuned, const ZNormalizer& norm_pretrained) {
    return norm_finetuned.apply(mahalanobis_score(feature_finetuned, gaussian_finetuned)) +
           norm_pretrained.apply(mahalanobis_score(feature_pretrained, gaussian_pretrained));
}

FeatureBank build_feature_bank(const ModelParams& params, const ModelParams& pretrained,
                               const std::vector<DocumentInput>& docs, const AhmEnsemble* ensemble) {
    FeatureBank bank;
    FeatureSet plain = extract_features(params, docs, AttentionHeadMask::all_ones(params.config));
    bank.cls = std::move(plain.cls);
    bank.avg_avg = std::move(plain.avg_avg);
    bank.logits = std::move(plain.logits);
    bank.labels = std::move(plain.labels);
    bank.pretrained_cls =
        extract_embeddings(pretrained, docs, AttentionHeadMask::all_ones(pretrained.config), Pooling::cls_last)
            .features;
    if (ensemble) {
        FeatureSet ahm = ensemble_features(params, docs, *ensemble);
        bank.ahm_cls = std::move(ahm.cls);
        bank.ahm_avg_avg = std::move(ahm.avg_avg);
    }
    return bank;
}

namespace {

std::vector<double> mahalanobis_scores(const Matrix& features, const GaussianStats& g) {
    std::vector<double> out(features.rows());
    for (std::size_t i = 0; i < features.rows(); ++i) out[i] = mahalanobis_score(features.row(i), g);
    return out;
}

}  // namespace

ScorerContext fit_scorer_context(const FeatureBank& train, std::size_t num_classes,
                                 const Matrix& classifier_weight, const Matrix& classifier_bias,
                                 const ScorerOptions& options) {
    const std::size_t hid = train.cls.cols();
    ScorerContext ctx;
    ctx.knn_k = options.knn_k;
    ctx.classifier_weight = classifier_weight;
    ctx.classifier_bias = classifier_bias;
    ctx.gaussian = fit_gaussian_stats(train.cls, train.labels, num_classes, options.regularization);
    ctx.gaussian_avg_avg = fit_gaussian_stats(train.avg_avg, train.labels, num_classes, options.regularization);
    ctx.knn_reference = l2_normalize_rows(train.cls);

    const std::size_t d = options.pca_dim.value_or(
        std::clamp<std::size_t>(num_classes, 1, hid > 1 ? hid - 1 : 1));
    const VimFit vim = fit_vim(train.cls, classifier_weight, classifier_bias, d);
    ctx.pca = vim.pca;
    ctx.vim_alpha = vim.alpha;

    ctx.kl_templates = Matrix(num_classes, train.logits.cols());
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t i = 0; i < train.size(); ++i) {
        const Vector p = softmax(train.logits.row(i));
        const auto c = static_cast<std::size_t>(train.labels[i]);
        ++counts[c];
        for (std::size_t j = 0; j < p.size(); ++j) ctx.kl_templates(c, j) += p[j];
    }
    for (std::size_t c = 0; c < num_classes; ++c)
        for (double& v : ctx.kl_templates.row(c)) v /= static_cast<double>(counts[c]);

    ctx.pretrained_gaussian =
        fit_gaussian_stats(train.pretrained_cls, train.labels, num_classes, options.regularization);
    ctx.gnome_finetuned = fit_normalizer(mahalanobis_scores(train.cls, ctx.gaussian));
    ctx.gnome_pretrained = fit_normalizer(mahalanobis_scores(train.pretrained_cls, ctx.pretrained_gaussian));

    if (train.ahm_cls && train.ahm_avg_avg) {
        ctx.ahm_gaussian = fit_gaussian_stats(*train.ahm_cls, train.labels, num_classes, options.regularization);
        ctx.ahm_gaussian_avg_avg =
            fit_gaussian_stats(*train.ahm_avg_avg, train.labels, num_classes, options.regularization);
        ctx.ahm_knn_reference = l2_normalize_rows(*train.ahm_cls);
    }
    return ctx;
}

std::vector<OodScore> score_dataset(Method method, const FeatureBank& bank, const ScorerContext& ctx) {
    if (uses_ahm(method) && (!bank.ahm_cls || !bank.ahm_avg_avg || !ctx.ahm_gaussian))
        throw ConfigError(std::string(method_name(method)) + " requires an AHM ensemble");

    std::vector<OodScore> out(bank.size(), OodScore{method, 0.0});
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const auto cls = bank.cls.row(i);
        const auto logits = bank.logits.row(i);
        double v = 0.0;
        switch (method) {
            case Method::energy: v = energy(logits); break;
            case Method::grad_norm: v = grad_norm(cls, logits); break;
            case Method::kl: v = kl_matching(logits, ctx.kl_templates); break;
            case Method::knn: v = knn_score(cls, ctx.knn_reference, ctx.knn_k); break;
            case Method::mahalanobis: v = mahalanobis_score(cls, ctx.gaussian); break;
            case Method::mah_avg_avg: v = mahalanobis_score(bank.avg_avg.row(i), ctx.gaussian_avg_avg); break;
            case Method::mah_gnome:
                v = gnome_score(cls, bank.pretrained_cls.row(i), ctx.gaussian, ctx.pretrained_gaussian,
                                ctx.gnome_finetuned, ctx.gnome_pretrained);
                break;
            case Method::max_logit: v = max_logit(logits); break;
            case Method::msp: v = msp(logits); break;
            case Method::neco: v = neco_score(cls, logits, ctx.pca); break;
            case Method::residual: v = residual_score(cls, ctx.pca); break;
            case Method::vim: v = vim_score(cls, logits, ctx.pca, ctx.vim_alpha); break;
            case Method::knn_ahm: v = knn_score(bank.ahm_cls->row(i), *ctx.ahm_knn_reference, ctx.knn_k); break;
            case Method::mah_ahm: v = mahalanobis_score(bank.ahm_cls->row(i), *ctx.ahm_gaussian); break;
            case Method::mah_avg_avg_ahm:
                v = mahalanobis_score(bank.ahm_avg_avg->row(i), *ctx.ahm_gaussian_avg_avg);
                break;
        }
        out[i].value = v;
    }
    return out;
}

std::vector<OodScore> score_dataset(Method method, const std::vector<DocumentInput>& docs,
                                    const ModelParams& params, const ModelParams& pretrained,
                                    const ScorerContext& context, const AhmEnsemble* ensemble) {
    if (uses_ahm(method) && !ensemble)
        throw ConfigError(std::string(method_name(method)) + " requires an AHM ensemble");
    return score_dataset(method, build_feature_bank(params, pretrained, docs, ensemble), context);
}

}  // namespace ahmood
