#pragma once

// Analytic parameter and FLOP budgets for one forward pass at the config's
// image size. Parameters are counted exactly from the declarations; FLOPs
// count 2*MACs for convolutions and matrix multiplies only.

#include <cstdint>
#include <string>

#include "swinseg/config.hpp"

namespace swinseg {

struct Profile {
    int64_t encoder_params = 0, promptenc_params = 0, decoder_params = 0, total_params = 0;
    int64_t encoder_flops = 0, promptenc_flops = 0, decoder_flops = 0, total_flops = 0;
};

Profile profile_model(const ModelConfig& cfg);

std::string profile_report(const ModelConfig& cfg);

}  // namespace swinseg
