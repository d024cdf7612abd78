#pragma once

// End-to-end forward: encoder -> prompt encoding -> mask decoder.

#include "swinseg/decoder.hpp"
#include "swinseg/encoder.hpp"
#include "swinseg/promptenc.hpp"

namespace swinseg {

// Which prompt kinds feed the decoder; the box corners are always present.
struct PromptUse {
    bool points = true;
    bool scribble = true;
};

inline PromptUse prompt_use_from_mode(const std::string& mode) {
    if (mode == "box") return PromptUse{false, false};
    if (mode == "box+points") return PromptUse{true, false};
    if (mode == "box+points+scribble") return PromptUse{true, true};
    throw ValidationError("unknown prompt mode: " + mode +
                          " (expected box|box+points|box+points+scribble)");
}

template <typename T>
Tensor<T> image_tensor(const PreparedInput& prep) {
    const int64_t s = prep.img_size;
    auto t = make_tensor<T>({3, s, s});
    for (size_t i = 0; i < prep.image.size(); ++i) t->data[i] = static_cast<T>(prep.image[i]);
    return t;
}

template <typename T>
struct ModelOutput {
    EncoderOutput<T> enc;
    DecoderOutput<T> dec;
};

template <typename T>
ModelOutput<T> model_forward(Graph<T>& g, const ParamStore<T>& ps, const Tensor<T>& img,
                             const PromptSet& prompts, PromptUse use, bool training) {
    ModelOutput<T> out;
    out.enc = encoder_forward(g, ps, img, training);
    auto sparse = encode_sparse(g, ps, prompts, use.points);
    const std::vector<uint8_t> empty_mask =
        use.scribble ? prompts.scribble
                     : std::vector<uint8_t>(static_cast<size_t>(ps.config().img_size) *
                                            ps.config().img_size);
    auto dense = encode_dense(g, ps, empty_mask);
    auto pos = pe_grid<T>(ps);
    out.dec = decode_masks(g, ps, out.enc, sparse, dense, pos);
    return out;
}

}  // namespace swinseg
