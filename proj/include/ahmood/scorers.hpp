#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ahmood/ahm_search.hpp"
#include "ahmood/linalg.hpp"
#include "ahmood/model.hpp"

namespace ahmood {

// Every scorer maps a document to a scalar where higher means more in-distribution.
enum class Method {
    energy,
    grad_norm,
    kl,
    knn,
    mahalanobis,
    mah_avg_avg,
    mah_gnome,
    max_logit,
    msp,
    neco,
    residual,
    vim,
    knn_ahm,
    mah_ahm,
    mah_avg_avg_ahm,
};

std::string_view method_name(Method m);
// Accepts the names produced by method_name; throws ConfigError otherwise.
Method method_from_name(std::string_view name);
const std::vector<Method>& all_methods();
bool uses_ahm(Method m);

struct OodScore {
    Method method;
    double value;
};

double msp(std::span<const double> logits);
double max_logit(std::span<const double> logits);
double energy(std::span<const double> logits, double temperature = 1.0);

inline constexpr double kKlTemplateFloor = 1e-12;

// KL(p ‖ q) with q clamped at kKlTemplateFloor and 0·ln(0/q) = 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);
// −min_k KL(softmax(logits) ‖ templates.row(k)).
double kl_matching(std::span<const double> logits, const Matrix& templates);

// ‖softmax(logits) − uniform‖₁ · ‖embedding‖₁: the L1 norm of the gradient of
// KL(uniform ‖ softmax) w.r.t. the classifier weights. Larger for confident,
// in-distribution inputs.
double grad_norm(std::span<const double> pooled_embedding, std::span<const double> logits);

double mahalanobis_score(std::span<const double> feature, const GaussianStats& gaussian);

// −(distance from the normalized feature to its k-th nearest row of
// `normalized_reference`).
double knn_score(std::span<const double> feature, const Matrix& normalized_reference, std::size_t k);

struct VimFit {
    PcaBasis pca;
    double alpha = 0.0;
};

// Throws DegenerateSubspaceError when every training residual is zero.
VimFit fit_vim(const Matrix& train_features, const Matrix& classifier_weight,
               const Matrix& classifier_bias, std::size_t pca_dim);
double vim_score(std::span<const double> feature, std::span<const double> logits,
                 const PcaBasis& pca, double alpha);
double residual_score(std::span<const double> feature, const PcaBasis& pca);
double neco_score(std::span<const double> feature, std::span<const double> logits, const PcaBasis& pca);

struct ZNormalizer {
    double mean = 0.0;
    double stddev = 1.0;
    bool degenerate = false;  // stddev was 0 and has been replaced by 1

    double apply(double raw) const { return (raw - mean) / stddev; }
};

ZNormalizer fit_normalizer(std::span<const double> values);

double gnome_score(std::span<const double> feature_finetuned, std::span<const double> feature_pretrained,
                   const GaussianStats& gaussian_finetuned, const GaussianStats& gaussian_pretrained,
                   const ZNormalizer& norm_finetuned, const ZNormalizer& norm_pretrained);

// Everything a scorer reads about one dataset, one row per document.
struct FeatureBank {
    Matrix cls;
    Matrix avg_avg;
    Matrix logits;
    Matrix pretrained_cls;
    std::optional<Matrix> ahm_cls;
    std::optional<Matrix> ahm_avg_avg;
    std::vector<int> labels;

    std::size_t size() const { return cls.rows(); }
};

// Runs the fine-tuned model (unmasked and, if given, under the ensemble) and
// the pretrained snapshot over `docs`.
FeatureBank build_feature_bank(const ModelParams& params, const ModelParams& pretrained,
                               const std::vector<DocumentInput>& docs, const AhmEnsemble* ensemble);

struct ScorerOptions {
    std::size_t knn_k = 10;
    std::optional<std::size_t> pca_dim;  // default: num_classes clamped to [1, hidden − 1]
    double regularization = kDefaultCovarianceRegularization;
};

struct ScorerContext {
    GaussianStats gaussian;
    GaussianStats gaussian_avg_avg;
    Matrix knn_reference;  // L2-normalized train features
    PcaBasis pca;
    double vim_alpha = 0.0;
    Matrix classifier_weight;
    Matrix classifier_bias;
    Matrix kl_templates;  // per-class mean softmax of the training set
    GaussianStats pretrained_gaussian;
    ZNormalizer gnome_finetuned;
    ZNormalizer gnome_pretrained;
    // Statistics refit on ensembled train features; present when the train
    // bank carries AHM features.
    std::optional<GaussianStats> ahm_gaussian;
    std::optional<GaussianStats> ahm_gaussian_avg_avg;
    std::optional<Matrix> ahm_knn_reference;
    std::size_t knn_k = 10;
};

ScorerContext fit_scorer_context(const FeatureBank& train, std::size_t num_classes,
                                 const Matrix& classifier_weight, const Matrix& classifier_bias,
                                 const ScorerOptions& options = {});

// Throws ConfigError when an AHM method is requested but the bank or the
// context has no ensemble features.
std::vector<OodScore> score_dataset(Method method, const FeatureBank& bank, const ScorerContext& context);

std::vector<OodScore> score_dataset(Method method, const std::vector<DocumentInput>& docs,
                                    const ModelParams& params, const ModelParams& pretrained,
                                    const ScorerContext& context, const AhmEnsemble* ensemble);

}  // namespace ahmood
