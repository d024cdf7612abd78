#pragma once

// Prompt encoder: random-Fourier positional encoding plus learned type
// embeddings for sparse tokens (points, box corners), and a small conv net
// mapping the scribble mask onto the embedding grid (dense path).

#include <cmath>
#include <numbers>

#include "swinseg/config.hpp"
#include "swinseg/ops.hpp"
#include "swinseg/params.hpp"
#include "swinseg/prompts.hpp"

namespace swinseg {

// [sin, cos] of (2*coord01 - 1) projected by the fixed Gaussian matrix.
// Constant w.r.t. trainable parameters, so it is returned as plain data.
template <typename T>
std::vector<T> positional_encode(const ParamStore<T>& ps, double x, double y) {
    const ModelConfig& cfg = ps.config();
    const int64_t e = cfg.embed_dim_out, half = e / 2;
    const Tensor<T>& gauss = ps.at("pe.gauss");  // (2, E/2)
    const double cx = 2.0 * (x / cfg.img_size) - 1.0;
    const double cy = 2.0 * (y / cfg.img_size) - 1.0;
    std::vector<T> out(static_cast<size_t>(e));
    for (int64_t i = 0; i < half; ++i) {
        const double proj = 2.0 * std::numbers::pi *
                            (cx * gauss->data[i] + cy * gauss->data[half + i]);
        out[i] = static_cast<T>(std::sin(proj));
        out[half + i] = static_cast<T>(std::cos(proj));
    }
    return out;
}

// Positional encodings of the embedding grid's cell centers, (E, g, g) leaf.
template <typename T>
Tensor<T> pe_grid(const ParamStore<T>& ps) {
    const ModelConfig& cfg = ps.config();
    const int64_t grid = cfg.grid(), e = cfg.embed_dim_out;
    auto out = make_tensor<T>({e, grid, grid});
    const double cell = static_cast<double>(cfg.img_size) / static_cast<double>(grid);
    for (int64_t i = 0; i < grid; ++i)
        for (int64_t j = 0; j < grid; ++j) {
            const auto v = positional_encode(ps, (static_cast<double>(j) + 0.5) * cell,
                                             (static_cast<double>(i) + 0.5) * cell);
            for (int64_t ch = 0; ch < e; ++ch) out->data[(ch * grid + i) * grid + j] = v[ch];
        }
    return out;
}

// Sparse tokens: optional 4 interior points plus the 2 corners, each
// positional encoding + learned type embedding. (N, E) with N = 2 or 6.
template <typename T>
Tensor<T> encode_sparse(Graph<T>& g, const ParamStore<T>& ps, const PromptSet& prompts,
                        bool include_points) {
    const int64_t e = ps.config().embed_dim_out;
    auto token = [&](const PromptPoint& pt) {
        auto pe = make_tensor<T>({1, e}, positional_encode(ps, pt.x, pt.y));
        const char* type = pt.label == 2   ? "pt_embed.corner_tl"
                           : pt.label == 3 ? "pt_embed.corner_br"
                                           : "pt_embed.point";
        return add(g, pe, reshape(g, ps.at(type), {1, e}));
    };
    std::vector<Tensor<T>> rows;
    if (include_points)
        for (const PromptPoint& pt : prompts.points) rows.push_back(token(pt));
    rows.push_back(token(prompts.corners[0]));
    rows.push_back(token(prompts.corners[1]));
    return concat_rows(g, rows);
}

// Dense path: scribble mask (S,S) -> (E, g, g) via two stride-2 convs, 4x4
// average pooling, and a 1x1 conv. An all-zero mask broadcasts the learned
// no-scribble embedding instead.
template <typename T>
Tensor<T> encode_dense(Graph<T>& g, const ParamStore<T>& ps,
                       const std::vector<uint8_t>& scribble) {
    const ModelConfig& cfg = ps.config();
    const int64_t s = cfg.img_size, e = cfg.embed_dim_out;
    if (static_cast<int64_t>(scribble.size()) != s * s)
        throw DimError("encode_dense: scribble mask size mismatch");
    bool any = false;
    for (uint8_t v : scribble) {
        if (v > 1) throw ContractError("encode_dense: scribble mask must be binary");
        any = any || v;
    }
    if (!any) return broadcast_vec_grid(g, ps.at("no_scribble"), cfg.grid());

    auto x = make_tensor<T>({1, s, s});
    for (int64_t i = 0; i < s * s; ++i) x->data[i] = static_cast<T>(scribble[i]);
    x = conv2d(g, x, ps.at("dense.conv1.w"), ps.at("dense.conv1.b"), 2, 0);
    x = layer_norm_chw(g, x, ps.at("dense.ln1.gamma"), ps.at("dense.ln1.beta"));
    x = gelu(g, x);
    x = conv2d(g, x, ps.at("dense.conv2.w"), ps.at("dense.conv2.b"), 2, 0);
    x = layer_norm_chw(g, x, ps.at("dense.ln2.gamma"), ps.at("dense.ln2.beta"));
    x = gelu(g, x);
    x = avgpool2d(g, x, 4);
    return conv2d(g, x, ps.at("dense.conv3.w"), ps.at("dense.conv3.b"), 1, 0);
}

}  // namespace swinseg
