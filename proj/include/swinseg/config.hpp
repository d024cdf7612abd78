#pragma once

// Model hyperparameters shared by the encoder, prompt encoder, and decoder.

#include <array>
#include <cstdint>
#include <string>

namespace swinseg {

struct ModelConfig {
    int img_size = 256;
    std::array<int, 4> stage_dims{64, 128, 160, 320};
    std::array<int, 4> depths{2, 2, 6, 2};
    std::array<int, 4> num_heads{2, 4, 5, 10};
    int window_size = 8;
    int embed_dim_out = 256;
    bool toy = false;

    // Feature-map side lengths follow the /4, /8, /16, /16 schedule.
    int stage_res(int stage) const {
        const int div[4] = {4, 8, 16, 16};
        return img_size / div[stage];
    }
    int grid() const { return img_size / 16; }

    static ModelConfig full();
    static ModelConfig tiny();  // toy configuration for CPU end-to-end runs

    // Throws ContractError when invariants are violated.
    void validate() const;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);

    bool operator==(const ModelConfig&) const = default;
};

}  // namespace swinseg
