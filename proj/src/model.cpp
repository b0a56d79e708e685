#include "ahmood/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "ahmood/errors.hpp"
#include "ahmood/parallel.hpp"

namespace ahmood {

void ModelConfig::validate() const {
    if (num_layers == 0 || num_heads == 0 || hidden == 0 || ffn_width == 0 || text_vocab == 0 ||
        num_patch_features == 0 || max_seq_len == 0 || num_classes == 0)
        throw ContractError("model config: every count must be >= 1");
    if (hidden % num_heads != 0)
        throw ContractError("model config: hidden=" + std::to_string(hidden) +
                            " is not divisible by num_heads=" + std::to_string(num_heads));
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
    config.validate();
    const std::size_t h = config.hidden;
    ModelParams p;
    p.config = config;
    p.token_embedding = Matrix(config.text_vocab, h);
    p.patch_projection = Matrix(config.num_patch_features, h);
    p.position_embedding = Matrix(config.max_seq_len, h);
    p.cls_embedding = Matrix(1, h);
    p.layers.resize(config.num_layers);
    for (auto& l : p.layers) {
        l.ln1_gamma = Matrix(1, h);
        l.ln1_beta = Matrix(1, h);
        l.w_query = Matrix(h, h);
        l.w_key = Matrix(h, h);
        l.w_value = Matrix(h, h);
        l.w_output = Matrix(h, h);
        l.ln2_gamma = Matrix(1, h);
        l.ln2_beta = Matrix(1, h);
        l.ffn_in_weight = Matrix(h, config.ffn_width);
        l.ffn_in_bias = Matrix(1, config.ffn_width);
        l.ffn_out_weight = Matrix(config.ffn_width, h);
        l.ffn_out_bias = Matrix(1, h);
    }
    p.classifier_weight = Matrix(h, config.num_classes);
    p.classifier_bias = Matrix(1, config.num_classes);
    return p;
}

ModelParams ModelParams::initialize(const ModelConfig& config, std::uint64_t seed) {
    ModelParams p = zeros(config);
    std::mt19937_64 rng(seed);
    auto gaussian = [&](Matrix& m, double stddev) {
        std::normal_distribution<double> dist(0.0, stddev);
        for (double& v : m.values()) v = dist(rng);
    };
    const double hid = static_cast<double>(config.hidden);
    gaussian(p.token_embedding, 0.5);
    gaussian(p.patch_projection, 1.0 / std::sqrt(static_cast<double>(config.num_patch_features)));
    gaussian(p.position_embedding, 0.5);
    gaussian(p.cls_embedding, 0.5);
    for (auto& l : p.layers) {
        l.ln1_gamma.fill(1.0);
        l.ln2_gamma.fill(1.0);
        gaussian(l.w_query, 1.0 / std::sqrt(hid));
        gaussian(l.w_key, 1.0 / std::sqrt(hid));
        gaussian(l.w_value, 1.0 / std::sqrt(hid));
        gaussian(l.w_output, 1.0 / std::sqrt(hid));
        gaussian(l.ffn_in_weight, 1.0 / std::sqrt(hid));
        gaussian(l.ffn_out_weight, 1.0 / std::sqrt(static_cast<double>(config.ffn_width)));
    }
    gaussian(p.classifier_weight, 1.0 / std::sqrt(hid));
    return p;
}

namespace {

template <typename Params, typename Fn>
void visit_tensors(Params& p, Fn&& fn) {
    fn("token_embedding", p.token_embedding);
    fn("patch_projection", p.patch_projection);
    fn("position_embedding", p.position_embedding);
    fn("cls_embedding", p.cls_embedding);
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        auto& l = p.layers[i];
        const std::string prefix = "layers." + std::to_string(i) + ".";
        fn(prefix + "ln1_gamma", l.ln1_gamma);
        fn(prefix + "ln1_beta", l.ln1_beta);
        fn(prefix + "w_query", l.w_query);
        fn(prefix + "w_key", l.w_key);
        fn(prefix + "w_value", l.w_value);
        fn(prefix + "w_output", l.w_output);
        fn(prefix + "ln2_gamma", l.ln2_gamma);
        fn(prefix + "ln2_beta", l.ln2_beta);
        fn(prefix + "ffn_in_weight", l.ffn_in_weight);
        fn(prefix + "ffn_in_bias", l.ffn_in_bias);
        fn(prefix + "ffn_out_weight", l.ffn_out_weight);
        fn(prefix + "ffn_out_bias", l.ffn_out_bias);
    }
    fn("classifier_weight", p.classifier_weight);
    fn("classifier_bias", p.classifier_bias);
}

}  // namespace

void for_each_tensor(ModelParams& params, const TensorVisitor& fn) {
    visit_tensors(params, [&](const std::string& name, Matrix& m) { fn(name, m); });
}

void for_each_tensor(const ModelParams& params, const ConstTensorVisitor& fn) {
    visit_tensors(params, [&](const std::string& name, const Matrix& m) { fn(name, m); });
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for_each_tensor(*this, [&](std::string_view, const Matrix& m) { n += m.size(); });
    return n;
}

bool ModelParams::all_finite() const {
    bool ok = true;
    for_each_tensor(*this, [&](std::string_view, const Matrix& m) { ok = ok && m.all_finite(); });
    return ok;
}

// ---------------------------------------------------------------------------
// Attention head mask

AttentionHeadMask::AttentionHeadMask(Matrix gates) : gates_(std::move(gates)) {
    for (double v : gates_.values())
        if (v != 0.0 && v != 1.0) throw ContractError("attention head mask entries must be 0 or 1");
}

AttentionHeadMask AttentionHeadMask::all_ones(std::size_t num_layers, std::size_t num_heads) {
    return AttentionHeadMask(Matrix(num_layers, num_heads, 1.0));
}

AttentionHeadMask AttentionHeadMask::from_bitmap(std::string_view bits, std::size_t num_layers,
                                                 std::size_t num_heads) {
    if (bits.size() != num_layers * num_heads)
        throw ContractError("mask bitmap has " + std::to_string(bits.size()) + " entries, expected " +
                            std::to_string(num_layers * num_heads));
    Matrix g(num_layers, num_heads);
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] != '0' && bits[i] != '1')
            throw ContractError("mask bitmap may only contain '0' and '1'");
        g.values()[i] = bits[i] == '1' ? 1.0 : 0.0;
    }
    return AttentionHeadMask(std::move(g));
}

void AttentionHeadMask::set(std::size_t layer, std::size_t head, bool keep) {
    gates_(layer, head) = keep ? 1.0 : 0.0;
}

std::size_t AttentionHeadMask::zeros_in_layer(std::size_t layer) const {
    auto row = gates_.row(layer);
    return static_cast<std::size_t>(std::count(row.begin(), row.end(), 0.0));
}

std::size_t AttentionHeadMask::total_zeros() const {
    return static_cast<std::size_t>(std::count(gates_.values().begin(), gates_.values().end(), 0.0));
}

std::string AttentionHeadMask::bitmap() const {
    std::string s;
    s.reserve(gates_.size());
    for (double v : gates_.values()) s.push_back(v == 1.0 ? '1' : '0');
    return s;
}

// ---------------------------------------------------------------------------
// Forward

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

namespace {

double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

struct LayerNormCache {
    Matrix normalized;  // x̂
    Vector rstd;
};

Matrix layer_norm_forward(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                          LayerNormCache* cache) {
    const std::size_t n = x.cols();
    Matrix out(x.rows(), n);
    if (cache) {
        cache->normalized = Matrix(x.rows(), n);
        cache->rstd.assign(x.rows(), 0.0);
    }
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        double mean = 0.0;
        for (double v : in) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : in) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEpsilon);
        auto o = out.row(r);
        for (std::size_t c = 0; c < n; ++c) {
            const double xhat = (in[c] - mean) * rstd;
            if (cache) cache->normalized(r, c) = xhat;
            o[c] = gamma(0, c) * xhat + beta(0, c);
        }
        if (cache) cache->rstd[r] = rstd;
    }
    return out;
}

void check_input(const ModelParams& params, const DocumentInput& input) {
    const auto& cfg = params.config;
    if (input.sequence_length() > cfg.max_seq_len)
        throw ContractError("document '" + input.id + "' has sequence length " +
                            std::to_string(input.sequence_length()) + " > max_seq_len " +
                            std::to_string(cfg.max_seq_len));
    for (int t : input.text_token_ids)
        if (t < 0 || static_cast<std::size_t>(t) >= cfg.text_vocab)
            throw ContractError("token id " + std::to_string(t) + " outside vocabulary");
    for (const auto& p : input.patch_vectors)
        if (p.size() != cfg.num_patch_features)
            throw ShapeError("patch vector has " + std::to_string(p.size()) + " features, expected " +
                             std::to_string(cfg.num_patch_features));
}

void add_bias(Matrix& m, const Matrix& bias) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias(0, c);
    }
}

void write_cols(Matrix& dst, const Matrix& src, std::size_t first) {
    for (std::size_t r = 0; r < src.rows(); ++r)
        for (std::size_t c = 0; c < src.cols(); ++c) dst(r, first + c) = src(r, c);
}

void add_in_place(Matrix& dst, const Matrix& src) {
    auto d = dst.values();
    auto s = src.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

Matrix column_sums(const Matrix& m) {
    Matrix out(1, m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) out(0, c) += row[c];
    }
    return out;
}

struct LayerCache {
    Matrix input;
    LayerNormCache ln1;
    Matrix ln1_out;
    Matrix query, key, value;
    std::vector<Matrix> probs;  // per head, before gating
    Matrix context;             // gated heads concatenated, before w_output
    Matrix mid;                 // input + attention block
    LayerNormCache ln2;
    Matrix ln2_out;
    Matrix ffn_pre;
    Matrix ffn_act;
};

Matrix layer_forward(const LayerParams& lp, const ModelConfig& cfg, const Matrix& x,
                     const AttentionHeadMask& mask, std::size_t layer, LayerCache* cache) {
    const std::size_t dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    LayerNormCache ln1;
    Matrix a = layer_norm_forward(x, lp.ln1_gamma, lp.ln1_beta, cache ? &ln1 : nullptr);
    Matrix q = matmul(a, lp.w_query);
    Matrix k = matmul(a, lp.w_key);
    Matrix v = matmul(a, lp.w_value);

    Matrix context(x.rows(), cfg.hidden);
    std::vector<Matrix> probs;
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        const Matrix qh = slice_cols(q, h * dh, dh);
        const Matrix kh = slice_cols(k, h * dh, dh);
        const Matrix vh = slice_cols(v, h * dh, dh);
        Matrix scores = matmul_bt(qh, kh);
        for (double& s : scores.values()) s *= scale;
        Matrix p = softmax_rows(scores);
        Matrix gated = p;
        const double g = mask.gate(layer, h);
        for (double& s : gated.values()) s *= g;
        write_cols(context, matmul(gated, vh), h * dh);
        if (cache) probs.push_back(std::move(p));
    }

    Matrix mid = x;
    add_in_place(mid, matmul(context, lp.w_output));

    LayerNormCache ln2;
    Matrix b = layer_norm_forward(mid, lp.ln2_gamma, lp.ln2_beta, cache ? &ln2 : nullptr);
    Matrix u = matmul(b, lp.ffn_in_weight);
    add_bias(u, lp.ffn_in_bias);
    Matrix g(u.rows(), u.cols());
    for (std::size_t i = 0; i < u.size(); ++i) g.values()[i] = gelu(u.values()[i]);
    Matrix f = matmul(g, lp.ffn_out_weight);
    add_bias(f, lp.ffn_out_bias);

    Matrix out = mid;
    add_in_place(out, f);

    if (cache) {
        cache->input = x;
        cache->ln1 = std::move(ln1);
        cache->ln1_out = std::move(a);
        cache->query = std::move(q);
        cache->key = std::move(k);
        cache->value = std::move(v);
        cache->probs = std::move(probs);
        cache->context = std::move(context);
        cache->mid = std::move(mid);
        cache->ln2 = std::move(ln2);
        cache->ln2_out = std::move(b);
        cache->ffn_pre = std::move(u);
        cache->ffn_act = std::move(g);
    }
    return out;
}

Vector classify(const ModelParams& params, std::span<const double> pooled) {
    const std::size_t c = params.config.num_classes;
    Vector logits(c);
    for (std::size_t j = 0; j < c; ++j) {
        double s = params.classifier_bias(0, j);
        for (std::size_t i = 0; i < pooled.size(); ++i) s += pooled[i] * params.classifier_weight(i, j);
        logits[j] = s;
    }
    return logits;
}

void check_mask(const ModelParams& params, const AttentionHeadMask& mask) {
    if (mask.num_layers() != params.config.num_layers || mask.num_heads() != params.config.num_heads)
        throw ContractError("attention head mask is " + std::to_string(mask.num_layers()) + "x" +
                            std::to_string(mask.num_heads()) + ", model expects " +
                            std::to_string(params.config.num_layers) + "x" +
                            std::to_string(params.config.num_heads));
}

}  // namespace

Matrix layer_norm_rows(const Matrix& x, const Matrix& gamma, const Matrix& beta) {
    return layer_norm_forward(x, gamma, beta, nullptr);
}

Matrix slice_cols(const Matrix& m, std::size_t first, std::size_t count) {
    Matrix out(m.rows(), count);
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) out(r, c) = m(r, first + c);
    return out;
}

Matrix embed_input(const ModelParams& params, const DocumentInput& input) {
    check_input(params, input);
    const std::size_t hid = params.config.hidden;
    Matrix x(input.sequence_length(), hid);
    std::size_t pos = 0;
    for (std::size_t c = 0; c < hid; ++c) x(pos, c) = params.cls_embedding(0, c);
    ++pos;
    for (int t : input.text_token_ids) {
        auto e = params.token_embedding.row(static_cast<std::size_t>(t));
        std::copy(e.begin(), e.end(), x.row(pos).begin());
        ++pos;
    }
    for (const auto& patch : input.patch_vectors) {
        auto row = x.row(pos);
        for (std::size_t f = 0; f < patch.size(); ++f) {
            auto proj = params.patch_projection.row(f);
            for (std::size_t c = 0; c < hid; ++c) row[c] += patch[f] * proj[c];
        }
        ++pos;
    }
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        auto pe = params.position_embedding.row(r);
        for (std::size_t c = 0; c < hid; ++c) row[c] += pe[c];
    }
    return x;
}

ForwardTrace forward(const ModelParams& params, const DocumentInput& input,
                     const AttentionHeadMask& mask) {
    check_mask(params, mask);
    ForwardTrace trace;
    trace.input_states = embed_input(params, input);
    const Matrix* x = &trace.input_states;
    trace.layer_states.reserve(params.layers.size());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        trace.layer_states.push_back(layer_forward(params.layers[l], params.config, *x, mask, l, nullptr));
        x = &trace.layer_states.back();
    }
    const auto cls = x->row(0);
    trace.pooled.assign(cls.begin(), cls.end());

    const std::size_t hid = params.config.hidden;
    trace.avg_embedding.assign(hid, 0.0);
    std::size_t count = 0;
    for (const auto& states : trace.layer_states) {
        for (std::size_t r = 0; r < states.rows(); ++r) {
            auto row = states.row(r);
            for (std::size_t c = 0; c < hid; ++c) trace.avg_embedding[c] += row[c];
            ++count;
        }
    }
    for (double& v : trace.avg_embedding) v /= static_cast<double>(count);

    trace.logits = classify(params, trace.pooled);
    return trace;
}

// ---------------------------------------------------------------------------
// Backward

namespace {

Matrix layer_norm_backward(const Matrix& dy, const Matrix& gamma, const LayerNormCache& cache,
                           Matrix& dgamma, Matrix& dbeta) {
    const std::size_t n = dy.cols();
    Matrix dx(dy.rows(), n);
    Vector dxhat(n);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
        auto g = dy.row(r);
        auto xhat = cache.normalized.row(r);
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            dgamma(0, c) += g[c] * xhat[c];
            dbeta(0, c) += g[c];
            dxhat[c] = g[c] * gamma(0, c);
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * xhat[c];
        }
        mean_dxhat /= static_cast<double>(n);
        mean_dxhat_xhat /= static_cast<double>(n);
        auto o = dx.row(r);
        for (std::size_t c = 0; c < n; ++c)
            o[c] = cache.rstd[r] * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
    }
    return dx;
}

// Returns d(loss)/d(layer input); parameter gradients are accumulated into `grads`.
Matrix layer_backward(const LayerParams& lp, const ModelConfig& cfg, const LayerCache& cache,
                      const AttentionHeadMask& mask, std::size_t layer, const Matrix& dout,
                      LayerParams& grads) {
    const std::size_t dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::size_t seq = dout.rows();

    // Feed-forward branch.
    add_in_place(grads.ffn_out_bias, column_sums(dout));
    add_in_place(grads.ffn_out_weight, matmul_at(cache.ffn_act, dout));
    Matrix du = matmul_bt(dout, lp.ffn_out_weight);
    for (std::size_t i = 0; i < du.size(); ++i) du.values()[i] *= gelu_derivative(cache.ffn_pre.values()[i]);
    add_in_place(grads.ffn_in_bias, column_sums(du));
    add_in_place(grads.ffn_in_weight, matmul_at(cache.ln2_out, du));
    const Matrix dln2_out = matmul_bt(du, lp.ffn_in_weight);
    Matrix dmid = dout;
    add_in_place(dmid, layer_norm_backward(dln2_out, lp.ln2_gamma, cache.ln2, grads.ln2_gamma, grads.ln2_beta));

    // Attention branch.
    add_in_place(grads.w_output, matmul_at(cache.context, dmid));
    const Matrix dcontext = matmul_bt(dmid, lp.w_output);
    Matrix dq(seq, cfg.hidden), dk(seq, cfg.hidden), dv(seq, cfg.hidden);
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        const double gate = mask.gate(layer, h);
        const Matrix& p = cache.probs[h];
        const Matrix qh = slice_cols(cache.query, h * dh, dh);
        const Matrix kh = slice_cols(cache.key, h * dh, dh);
        const Matrix vh = slice_cols(cache.value, h * dh, dh);
        const Matrix dctx_h = slice_cols(dcontext, h * dh, dh);

        Matrix gated = p;
        for (double& s : gated.values()) s *= gate;
        write_cols(dv, matmul_at(gated, dctx_h), h * dh);

        Matrix dp = matmul_bt(dctx_h, vh);
        for (double& s : dp.values()) s *= gate;
        Matrix dscores(seq, seq);
        for (std::size_t i = 0; i < seq; ++i) {
            const double inner = dot(dp.row(i), p.row(i));
            for (std::size_t j = 0; j < seq; ++j) dscores(i, j) = p(i, j) * (dp(i, j) - inner) * scale;
        }
        write_cols(dq, matmul(dscores, kh), h * dh);
        write_cols(dk, matmul_at(dscores, qh), h * dh);
    }
    add_in_place(grads.w_query, matmul_at(cache.ln1_out, dq));
    add_in_place(grads.w_key, matmul_at(cache.ln1_out, dk));
    add_in_place(grads.w_value, matmul_at(cache.ln1_out, dv));
    Matrix dln1_out = matmul_bt(dq, lp.w_query);
    add_in_place(dln1_out, matmul_bt(dk, lp.w_key));
    add_in_place(dln1_out, matmul_bt(dv, lp.w_value));

    Matrix dx = dmid;
    add_in_place(dx, layer_norm_backward(dln1_out, lp.ln1_gamma, cache.ln1, grads.ln1_gamma, grads.ln1_beta));
    return dx;
}

// Adds the cross-entropy gradients for one document into `grads`; returns the loss.
double accumulate_gradients(const ModelParams& params, const DocumentInput& input, int target,
                            ModelParams& grads, Vector* logits_out) {
    const auto& cfg = params.config;
    if (target < 0 || static_cast<std::size_t>(target) >= cfg.num_classes)
        throw ContractError("target class " + std::to_string(target) + " out of range");
    const AttentionHeadMask mask = AttentionHeadMask::all_ones(cfg);

    std::vector<LayerCache> caches(params.layers.size());
    Matrix x = embed_input(params, input);
    for (std::size_t l = 0; l < params.layers.size(); ++l)
        x = layer_forward(params.layers[l], cfg, x, mask, l, &caches[l]);

    const auto pooled = x.row(0);
    const Vector logits = classify(params, pooled);
    const Vector prob = softmax(logits);
    const double loss = logsumexp(logits) - logits[static_cast<std::size_t>(target)];

    Vector dlogits = prob;
    dlogits[static_cast<std::size_t>(target)] -= 1.0;
    Matrix dx(x.rows(), cfg.hidden);
    for (std::size_t j = 0; j < cfg.num_classes; ++j) {
        grads.classifier_bias(0, j) += dlogits[j];
        for (std::size_t i = 0; i < cfg.hidden; ++i) {
            grads.classifier_weight(i, j) += pooled[i] * dlogits[j];
            dx(0, i) += params.classifier_weight(i, j) * dlogits[j];
        }
    }

    for (std::size_t l = params.layers.size(); l-- > 0;)
        dx = layer_backward(params.layers[l], cfg, caches[l], mask, l, dx, grads.layers[l]);

    // Embedding layer.
    for (std::size_t r = 0; r < dx.rows(); ++r) {
        auto g = dx.row(r);
        auto pe = grads.position_embedding.row(r);
        for (std::size_t c = 0; c < cfg.hidden; ++c) pe[c] += g[c];
    }
    for (std::size_t c = 0; c < cfg.hidden; ++c) grads.cls_embedding(0, c) += dx(0, c);
    std::size_t pos = 1;
    for (int t : input.text_token_ids) {
        auto e = grads.token_embedding.row(static_cast<std::size_t>(t));
        auto g = dx.row(pos++);
        for (std::size_t c = 0; c < cfg.hidden; ++c) e[c] += g[c];
    }
    for (const auto& patch : input.patch_vectors) {
        auto g = dx.row(pos++);
        for (std::size_t f = 0; f < patch.size(); ++f) {
            auto proj = grads.patch_projection.row(f);
            for (std::size_t c = 0; c < cfg.hidden; ++c) proj[c] += patch[f] * g[c];
        }
    }
    if (logits_out) *logits_out = logits;
    return loss;
}

}  // namespace

Gradients backward(const ModelParams& params, const DocumentInput& input, int target_class) {
    Gradients out;
    out.grads = ModelParams::zeros(params.config);
    out.loss = accumulate_gradients(params, input, target_class, out.grads, &out.logits);
    return out;
}

// ---------------------------------------------------------------------------
// Embedding extraction

FeatureSet extract_features(const ModelParams& params, const std::vector<DocumentInput>& docs,
                            const AttentionHeadMask& mask) {
    check_mask(params, mask);
    const std::size_t hid = params.config.hidden;
    FeatureSet fs{Matrix(docs.size(), hid), Matrix(docs.size(), hid),
                  Matrix(docs.size(), params.config.num_classes), std::vector<int>(docs.size(), -1)};
    parallel_for(docs.size(), [&](std::size_t i) {
        const ForwardTrace t = forward(params, docs[i], mask);
        std::copy(t.pooled.begin(), t.pooled.end(), fs.cls.row(i).begin());
        std::copy(t.avg_embedding.begin(), t.avg_embedding.end(), fs.avg_avg.row(i).begin());
        std::copy(t.logits.begin(), t.logits.end(), fs.logits.row(i).begin());
        fs.labels[i] = docs[i].label.value_or(-1);
    });
    return fs;
}

EmbeddingSet extract_embeddings(const ModelParams& params, const std::vector<DocumentInput>& docs,
                                const AttentionHeadMask& mask, Pooling pooling) {
    FeatureSet fs = extract_features(params, docs, mask);
    return {pooling == Pooling::cls_last ? std::move(fs.cls) : std::move(fs.avg_avg),
            std::move(fs.labels)};
}

// ---------------------------------------------------------------------------
// Fine-tuning

double classification_accuracy(const ModelParams& params, const std::vector<DocumentInput>& docs) {
    if (docs.empty()) return 0.0;
    const FeatureSet fs = extract_features(params, docs, AttentionHeadMask::all_ones(params.config));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        auto row = fs.logits.row(i);
        const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
        if (docs[i].label && *docs[i].label == pred) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(docs.size());
}

namespace {

struct AdamState {
    ModelParams m;
    ModelParams v;
    std::size_t step = 0;
};

}  // namespace

FineTuneResult fine_tune(const ModelParams& initial, const std::vector<DocumentInput>& train,
                         const std::vector<DocumentInput>& eval, const TrainConfig& config) {
    if (train.empty()) throw ContractError("fine_tune: empty training set");
    if (config.batch_size == 0) throw ContractError("fine_tune: batch_size must be >= 1");
    for (const auto& d : train)
        if (!d.label) throw ContractError("fine_tune: training document '" + d.id + "' has no label");

    FineTuneResult result{initial, {}};
    ModelParams& params = result.params;
    AdamState adam{ModelParams::zeros(params.config), ModelParams::zeros(params.config), 0};
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<ModelParams> per_example(std::min(config.batch_size, train.size()),
                                         ModelParams::zeros(params.config));
    std::vector<double> losses(per_example.size());

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t n = std::min(config.batch_size, order.size() - start);
            parallel_for(n, [&](std::size_t b) {
                for_each_tensor(per_example[b], [](std::string_view, Matrix& m) { m.fill(0.0); });
                const auto& doc = train[order[start + b]];
                losses[b] = accumulate_gradients(params, doc, *doc.label, per_example[b], nullptr);
            });

            ModelParams grad = std::move(per_example[0]);
            for (std::size_t b = 1; b < n; ++b) {
                std::vector<Matrix*> dst;
                for_each_tensor(grad, [&](std::string_view, Matrix& m) { dst.push_back(&m); });
                std::size_t i = 0;
                for_each_tensor(per_example[b], [&](std::string_view, Matrix& m) { add_in_place(*dst[i++], m); });
            }
            double batch_loss = 0.0;
            for (std::size_t b = 0; b < n; ++b) batch_loss += losses[b];
            if (!std::isfinite(batch_loss))
                throw TrainingError("training diverged (non-finite loss) in epoch " + std::to_string(epoch),
                                    static_cast<int>(epoch));
            epoch_loss += batch_loss;

            const double inv_n = 1.0 / static_cast<double>(n);
            double sq_norm = 0.0;
            for_each_tensor(grad, [&](std::string_view, Matrix& m) {
                for (double& g : m.values()) {
                    g *= inv_n;
                    sq_norm += g * g;
                }
            });
            const double grad_norm = std::sqrt(sq_norm);
            const double clip = grad_norm > config.max_grad_norm
                                    ? config.max_grad_norm / (grad_norm + 1e-6)
                                    : 1.0;

            ++adam.step;
            const double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(adam.step));
            const double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(adam.step));
            std::vector<Matrix*> gs, ms, vs;
            for_each_tensor(grad, [&](std::string_view, Matrix& m) { gs.push_back(&m); });
            for_each_tensor(adam.m, [&](std::string_view, Matrix& m) { ms.push_back(&m); });
            for_each_tensor(adam.v, [&](std::string_view, Matrix& m) { vs.push_back(&m); });
            std::size_t t = 0;
            for_each_tensor(params, [&](std::string_view, Matrix& w) {
                auto wv = w.values();
                auto gv = gs[t]->values();
                auto mv = ms[t]->values();
                auto vv = vs[t]->values();
                for (std::size_t i = 0; i < wv.size(); ++i) {
                    const double g = gv[i] * clip;
                    mv[i] = config.adam_beta1 * mv[i] + (1.0 - config.adam_beta1) * g;
                    vv[i] = config.adam_beta2 * vv[i] + (1.0 - config.adam_beta2) * g * g;
                    const double mhat = mv[i] / bc1;
                    const double vhat = vv[i] / bc2;
                    wv[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.adam_epsilon);
                }
                ++t;
            });
            per_example[0] = std::move(grad);
        }
        if (!params.all_finite())
            throw TrainingError("parameters became non-finite in epoch " + std::to_string(epoch),
                                static_cast<int>(epoch));

        Checkpoint cp;
        cp.epoch = epoch;
        cp.train_loss = epoch_loss / static_cast<double>(train.size());
        cp.train_accuracy = classification_accuracy(params, train);
        cp.eval_accuracy = classification_accuracy(params, eval);
        cp.params = params;
        result.checkpoints.push_back(std::move(cp));
    }
    return result;
}

PretrainedSnapshot snapshot_pretrained(const ModelParams& params) {
    return std::make_shared<const ModelParams>(params);
}

}  // namespace ahmood
