#include "swinseg/config.hpp"

#include <json.hpp>

#include "swinseg/errors.hpp"

namespace swinseg {

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.img_size = 64;
    c.stage_dims = {8, 16, 16, 32};
    c.depths = {1, 1, 2, 1};
    c.num_heads = {2, 2, 2, 4};
    c.window_size = 4;
    c.embed_dim_out = 32;
    c.toy = true;
    return c;
}

void ModelConfig::validate() const {
    if (img_size < 16 || img_size % 16 != 0)
        throw ContractError("config: img_size must be a positive multiple of 16");
    for (int i = 0; i < 4; ++i) {
        if (stage_dims[i] <= 0 || depths[i] <= 0 || num_heads[i] <= 0)
            throw ContractError("config: stage dims/depths/heads must be positive");
        if (stage_dims[i] % num_heads[i] != 0)
            throw ContractError("config: stage_dims[" + std::to_string(i) +
                                "] not divisible by num_heads[" + std::to_string(i) + "]");
    }
    if (window_size < 2) throw ContractError("config: window_size must be at least 2");
    if (window_size % 2 != 0) throw ContractError("config: window_size must be even");
    if (embed_dim_out % 32 != 0 || embed_dim_out < 32)
        throw ContractError("config: embed_dim_out must be a positive multiple of 32");
    if (stage_dims[0] % 2 != 0) throw ContractError("config: stage_dims[0] must be even");
}

std::string ModelConfig::to_json() const {
    nlohmann::json j;
    j["img_size"] = img_size;
    j["stage_dims"] = stage_dims;
    j["depths"] = depths;
    j["num_heads"] = num_heads;
    j["window_size"] = window_size;
    j["embed_dim_out"] = embed_dim_out;
    j["toy"] = toy;
    return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("config: invalid JSON: ") + e.what());
    }
    ModelConfig c;
    try {
        if (j.contains("img_size")) c.img_size = j.at("img_size").get<int>();
        if (j.contains("stage_dims")) c.stage_dims = j.at("stage_dims").get<std::array<int, 4>>();
        if (j.contains("depths")) c.depths = j.at("depths").get<std::array<int, 4>>();
        if (j.contains("num_heads")) c.num_heads = j.at("num_heads").get<std::array<int, 4>>();
        if (j.contains("window_size")) c.window_size = j.at("window_size").get<int>();
        if (j.contains("embed_dim_out")) c.embed_dim_out = j.at("embed_dim_out").get<int>();
        if (j.contains("toy")) c.toy = j.at("toy").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("config: bad field: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace swinseg
