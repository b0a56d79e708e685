#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ahmood/linalg.hpp"

namespace ahmood {

struct ModelConfig {
    std::size_t num_layers = 4;
    std::size_t num_heads = 4;
    std::size_t hidden = 64;
    std::size_t ffn_width = 128;
    std::size_t text_vocab = 220;
    std::size_t num_patch_features = 16;
    std::size_t max_seq_len = 64;
    std::size_t num_classes = 9;

    std::size_t head_dim() const { return hidden / num_heads; }
    // Throws ContractError on zero counts or hidden % num_heads != 0.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Pre-norm encoder block. Vectors are stored as 1×n matrices.
struct LayerParams {
    Matrix ln1_gamma, ln1_beta;
    Matrix w_query, w_key, w_value, w_output;
    Matrix ln2_gamma, ln2_beta;
    Matrix ffn_in_weight, ffn_in_bias;
    Matrix ffn_out_weight, ffn_out_bias;

    friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct ModelParams {
    ModelConfig config;
    Matrix token_embedding;     // text_vocab × hidden
    Matrix patch_projection;    // num_patch_features × hidden
    Matrix position_embedding;  // max_seq_len × hidden
    Matrix cls_embedding;       // 1 × hidden
    std::vector<LayerParams> layers;
    Matrix classifier_weight;   // hidden × num_classes
    Matrix classifier_bias;     // 1 × num_classes

    // Zero-filled tensors with the shapes implied by `config`.
    static ModelParams zeros(const ModelConfig& config);
    // Random initialisation, deterministic in `seed`.
    static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);

    std::size_t parameter_count() const;
    bool all_finite() const;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

using TensorVisitor = std::function<void(std::string_view name, Matrix& tensor)>;
using ConstTensorVisitor = std::function<void(std::string_view name, const Matrix& tensor)>;

// Visits every tensor in a fixed order with a stable name such as "layers.2.w_query".
void for_each_tensor(ModelParams& params, const TensorVisitor& fn);
void for_each_tensor(const ModelParams& params, const ConstTensorVisitor& fn);

// Binary N×H gate over attention heads; 1 keeps a head, 0 silences it.
class AttentionHeadMask {
public:
    AttentionHeadMask() = default;
    // Throws ContractError if any entry is not exactly 0 or 1.
    explicit AttentionHeadMask(Matrix gates);

    static AttentionHeadMask all_ones(std::size_t num_layers, std::size_t num_heads);
    static AttentionHeadMask all_ones(const ModelConfig& config) {
        return all_ones(config.num_layers, config.num_heads);
    }
    // Parses the row-major "0101…" bitmap produced by bitmap().
    static AttentionHeadMask from_bitmap(std::string_view bits, std::size_t num_layers,
                                         std::size_t num_heads);

    std::size_t num_layers() const { return gates_.rows(); }
    std::size_t num_heads() const { return gates_.cols(); }
    double gate(std::size_t layer, std::size_t head) const { return gates_(layer, head); }
    void set(std::size_t layer, std::size_t head, bool keep);
    std::size_t zeros_in_layer(std::size_t layer) const;
    std::size_t total_zeros() const;
    std::string bitmap() const;
    const Matrix& gates() const { return gates_; }

    friend bool operator==(const AttentionHeadMask&, const AttentionHeadMask&) = default;

private:
    Matrix gates_;
};

// One document: [CLS] + text tokens + projected patch vectors.
struct DocumentInput {
    std::string id;
    std::vector<int> text_token_ids;
    std::vector<Vector> patch_vectors;
    std::optional<int> label;

    std::size_t sequence_length() const { return 1 + text_token_ids.size() + patch_vectors.size(); }

    friend bool operator==(const DocumentInput&, const DocumentInput&) = default;
};

struct ForwardTrace {
    Matrix input_states;               // embeddings fed to layer 0
    std::vector<Matrix> layer_states;  // output of each encoder layer, seq × hidden
    Vector pooled;                     // final-layer CLS state
    Vector avg_embedding;              // mean over layers and positions
    Vector logits;
};

ForwardTrace forward(const ModelParams& params, const DocumentInput& input,
                     const AttentionHeadMask& mask);

// Building blocks of forward(), exposed for reference implementations in tests.
inline constexpr double kLayerNormEpsilon = 1e-5;
double gelu(double x);
Matrix layer_norm_rows(const Matrix& x, const Matrix& gamma, const Matrix& beta);
// Sequence embeddings: token/patch/CLS vectors plus positional embeddings.
Matrix embed_input(const ModelParams& params, const DocumentInput& input);
Matrix slice_cols(const Matrix& m, std::size_t first, std::size_t count);

struct Gradients {
    double loss = 0.0;
    Vector logits;
    ModelParams grads;  // same layout as the parameters
};

// Cross-entropy gradients for every parameter, with all heads active.
Gradients backward(const ModelParams& params, const DocumentInput& input, int target_class);

enum class Pooling { cls_last, avg_avg };

struct EmbeddingSet {
    Matrix features;          // one row per document, dataset order
    std::vector<int> labels;  // -1 when the document has no label
};

EmbeddingSet extract_embeddings(const ModelParams& params, const std::vector<DocumentInput>& docs,
                                const AttentionHeadMask& mask, Pooling pooling);

// Both poolings plus logits from a single forward pass per document.
struct FeatureSet {
    Matrix cls;
    Matrix avg_avg;
    Matrix logits;
    std::vector<int> labels;
};

FeatureSet extract_features(const ModelParams& params, const std::vector<DocumentInput>& docs,
                            const AttentionHeadMask& mask);

struct TrainConfig {
    std::size_t epochs = 15;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double max_grad_norm = 1.0;
    std::uint64_t seed = 0;
};

struct Checkpoint {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double eval_accuracy = 0.0;
    ModelParams params;
};

struct FineTuneResult {
    ModelParams params;
    std::vector<Checkpoint> checkpoints;
};

// Mini-batch Adam with global gradient-norm clipping. Labels must lie in
// [0, num_classes). Throws TrainingError when the loss stops being finite.
FineTuneResult fine_tune(const ModelParams& initial, const std::vector<DocumentInput>& train,
                         const std::vector<DocumentInput>& eval, const TrainConfig& config);

double classification_accuracy(const ModelParams& params, const std::vector<DocumentInput>& docs);

using PretrainedSnapshot = std::shared_ptr<const ModelParams>;

PretrainedSnapshot snapshot_pretrained(const ModelParams& params);

// Checkpoint files: JSON with the config and every tensor, row-major with shapes.
void save_params(const ModelParams& params, const std::string& path);
ModelParams load_params(const std::string& path);

}  // namespace ahmood
