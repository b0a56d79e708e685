#pragma once

#include <json.hpp>

#include "ahmood/linalg.hpp"
#include "ahmood/model.hpp"

namespace ahmood {

using json = nlohmann::json;

void to_json(json& j, const ModelConfig& c);
void from_json(const json& j, ModelConfig& c);
void to_json(json& j, const TrainConfig& c);
void from_json(const json& j, TrainConfig& c);

// {"shape": [rows, cols], "data": [...]} with row-major data.
json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const json& j);

json params_to_json(const ModelParams& params);
ModelParams params_from_json(const json& j);

json read_json_file(const std::string& path);
void write_json_file(const json& j, const std::string& path);

}  // namespace ahmood
