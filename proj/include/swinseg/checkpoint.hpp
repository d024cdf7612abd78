#pragma once

// Checkpoint container: every declared tensor (params + buffers) as f32
// arrays, optional optimizer moments, scalar training metadata, and the model
// config as a raw JSON entry.

#include <cstdint>
#include <limits>
#include <string>

#include "swinseg/optim.hpp"
#include "swinseg/params.hpp"

namespace swinseg {

struct CheckpointMeta {
    int64_t step = 0;
    double lr = 0.0;
    double plateau_best = std::numeric_limits<double>::infinity();
    int64_t plateau_bad = 0;
    bool has_optimizer = false;  // set by load_checkpoint
};

void save_checkpoint(const std::string& path, const ParamStore<float>& store, const AdamW* opt,
                     const CheckpointMeta& meta);

// Reads config from the archive, rebuilds the store, and validates that every
// declared tensor is present with the right shape (CheckpointError listing
// missing names otherwise). Optimizer state is restored only when `opt` is
// non-null and the archive carries it.
CheckpointMeta load_checkpoint(const std::string& path, ParamStore<float>& store, AdamW* opt);

ModelConfig checkpoint_config(const std::string& path);

}  // namespace swinseg
