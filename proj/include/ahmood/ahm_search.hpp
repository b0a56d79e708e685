#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "ahmood/json_io.hpp"
#include "ahmood/linalg.hpp"
#include "ahmood/model.hpp"

namespace ahmood {

struct AhmConfig {
    std::size_t budget = 25;                          // T
    std::vector<double> mask_percentages{0.1, 0.2};   // p, assigned round-robin over trials
    std::size_t neighbors = 10;                       // K
    std::size_t top_f = 5;                            // F
    DistanceMetric similarity_metric = DistanceMetric::cosine;
    std::uint64_t seed = 0;

    void validate() const;
};

struct MaskTrialResult {
    std::size_t trial_index = 0;
    double mask_percentage = 0.0;
    AttentionHeadMask mask;
    double mean_similarity = 0.0;  // (1/Q)·Σ S_i
    Vector per_eval_scores;        // S_i
};

struct AhmEnsemble {
    AhmConfig config;
    std::vector<AttentionHeadMask> selected_masks;
    std::vector<MaskTrialResult> trial_log;  // sorted by mean_similarity, descending
    std::size_t extraction_passes = 0;       // masked passes over each of train and eval

    // trial_index of each selected mask, in selection order.
    std::vector<std::size_t> selected_indices() const;
};

// Heads silenced per layer: max(1, round(p·H)).
std::size_t masked_heads_per_layer(std::size_t num_heads, double p);

// Silences exactly masked_heads_per_layer(H, p) distinct heads in every layer.
AttentionHeadMask sample_mask(const ModelConfig& config, double p, std::mt19937_64& rng);

// Similarity of each eval row to its K nearest train rows. Cosine similarity
// for the cosine metric, negative euclidean distance otherwise.
MaskTrialResult score_embeddings(const Matrix& embed_train, const Matrix& embed_eval,
                                 std::size_t k, DistanceMetric metric);

MaskTrialResult score_mask(const ModelParams& params, const AttentionHeadMask& mask,
                           const std::vector<DocumentInput>& train_set,
                           const std::vector<DocumentInput>& eval_set, std::size_t k,
                           DistanceMetric metric);

// Sorts trials by mean similarity (earlier trial wins ties) and keeps the top F.
AhmEnsemble select_top_masks(std::vector<MaskTrialResult> trials, const AhmConfig& config);

AhmEnsemble run_search(const ModelParams& params, const std::vector<DocumentInput>& train_set,
                       const std::vector<DocumentInput>& eval_set, const AhmConfig& config);

// Per document, the mean of the embeddings produced under each selected mask.
EmbeddingSet ensemble_embed(const ModelParams& params, const std::vector<DocumentInput>& docs,
                            const AhmEnsemble& ensemble, Pooling pooling);
// Both poolings at once; logits are averaged the same way.
FeatureSet ensemble_features(const ModelParams& params, const std::vector<DocumentInput>& docs,
                             const AhmEnsemble& ensemble);

json ensemble_to_json(const AhmEnsemble& ensemble);
AhmEnsemble ensemble_from_json(const json& j);

}  // namespace ahmood
