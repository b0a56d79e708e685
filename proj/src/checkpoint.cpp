#include <fstream>
#include <string>

#include "ahmood/errors.hpp"
#include "ahmood/json_io.hpp"

namespace ahmood {

void to_json(json& j, const ModelConfig& c) {
    j = json{{"num_layers", c.num_layers},     {"num_heads", c.num_heads},
             {"hidden", c.hidden},             {"ffn_width", c.ffn_width},
             {"text_vocab", c.text_vocab},     {"num_patch_features", c.num_patch_features},
             {"max_seq_len", c.max_seq_len},   {"num_classes", c.num_classes}};
}

void from_json(const json& j, ModelConfig& c) {
    ModelConfig d;
    c.num_layers = j.value("num_layers", d.num_layers);
    c.num_heads = j.value("num_heads", d.num_heads);
    c.hidden = j.value("hidden", d.hidden);
    c.ffn_width = j.value("ffn_width", d.ffn_width);
    c.text_vocab = j.value("text_vocab", d.text_vocab);
    c.num_patch_features = j.value("num_patch_features", d.num_patch_features);
    c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
    c.num_classes = j.value("num_classes", d.num_classes);
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"epochs", c.epochs},
             {"learning_rate", c.learning_rate},
             {"batch_size", c.batch_size},
             {"adam_beta1", c.adam_beta1},
             {"adam_beta2", c.adam_beta2},
             {"adam_epsilon", c.adam_epsilon},
             {"max_grad_norm", c.max_grad_norm},
             {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
    TrainConfig d;
    c.epochs = j.value("epochs", d.epochs);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
    c.adam_epsilon = j.value("adam_epsilon", d.adam_epsilon);
    c.max_grad_norm = j.value("max_grad_norm", d.max_grad_norm);
    c.seed = j.value("seed", d.seed);
}

json matrix_to_json(const Matrix& m) {
    return json{{"shape", {m.rows(), m.cols()}},
                {"data", std::vector<double>(m.values().begin(), m.values().end())}};
}

Matrix matrix_from_json(const json& j) {
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw ShapeError("tensor shape must have two entries");
    return Matrix(shape[0], shape[1], j.at("data").get<std::vector<double>>());
}

json params_to_json(const ModelParams& params) {
    json tensors = json::object();
    for_each_tensor(params, [&](std::string_view name, const Matrix& m) {
        tensors[std::string(name)] = matrix_to_json(m);
    });
    return json{{"format", "ahmood-checkpoint"}, {"version", 1}, {"config", params.config},
                {"tensors", std::move(tensors)}};
}

ModelParams params_from_json(const json& j) {
    if (j.value("format", "") != "ahmood-checkpoint")
        throw ParseError("not an ahmood checkpoint document", 0);
    ModelParams params = ModelParams::zeros(j.at("config").get<ModelConfig>());
    const json& tensors = j.at("tensors");
    for_each_tensor(params, [&](std::string_view name, Matrix& m) {
        const std::string key(name);
        if (!tensors.contains(key)) throw ParseError("checkpoint is missing tensor '" + key + "'", 0);
        Matrix loaded = matrix_from_json(tensors.at(key));
        if (loaded.rows() != m.rows() || loaded.cols() != m.cols())
            throw ShapeError("checkpoint tensor '" + key + "' has the wrong shape");
        m = std::move(loaded);
    });
    return params;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("'" + path + "': " + e.what(), 0);
    }
}

void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << j.dump(1) << '\n';
}

void save_params(const ModelParams& params, const std::string& path) {
    write_json_file(params_to_json(params), path);
}

ModelParams load_params(const std::string& path) { return params_from_json(read_json_file(path)); }

}  // namespace ahmood
