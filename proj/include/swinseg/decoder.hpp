#pragma once

// Mask decoder: two-way transformer over [iou, mask] ++ sparse tokens and the
// image embedding, skip fusion from stages 2-4, a two-step transposed-conv
// upscale joined with stage 1, and hypernetwork mask prediction plus an IoU
// regression head.

#include <cmath>

#include "swinseg/encoder.hpp"
#include "swinseg/ops.hpp"
#include "swinseg/params.hpp"
#include "swinseg/preprocess.hpp"

namespace swinseg {

template <typename T>
struct DecoderOutput {
    Tensor<T> mask_logits;  // (1, S, S)
    Tensor<T> iou_pred;     // (1,), sigmoid output
};

namespace dec_detail {

inline int64_t decoder_heads(const ModelConfig& cfg) {
    return std::max<int64_t>(1, cfg.embed_dim_out / 32);
}

// Standard multi-head attention, internal width from the projections.
template <typename T>
Tensor<T> attention(Graph<T>& g, const ParamStore<T>& ps, const std::string& p,
                    const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                    int64_t heads) {
    const int64_t nq = q_in->shape[0], nk = k_in->shape[0];
    auto q = linear(g, q_in, ps.at(p + ".q.w"), ps.at(p + ".q.b"));
    auto k = linear(g, k_in, ps.at(p + ".k.w"), ps.at(p + ".k.b"));
    auto v = linear(g, v_in, ps.at(p + ".v.w"), ps.at(p + ".v.b"));
    const int64_t d = q->shape[1], dh = d / heads;

    auto split = [&](Tensor<T> t, int64_t n) {
        t = reshape(g, t, {n, heads, dh});
        return permute(g, t, {1, 0, 2});  // (heads, n, dh)
    };
    q = mul_scalar(g, split(q, nq), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    k = split(k, nk);
    v = split(v, nk);
    auto attn = softmax(g, bmm(g, q, k, /*transpose_b=*/true));  // (heads, nq, nk)
    auto out = bmm(g, attn, v);                                  // (heads, nq, dh)
    out = reshape(g, permute(g, out, {1, 0, 2}), {nq, d});
    return linear(g, out, ps.at(p + ".out.w"), ps.at(p + ".out.b"));
}

template <typename T>
Tensor<T> row_slice(Graph<T>& g, const Tensor<T>& x, int64_t row) {
    auto t = permute(g, x, {1, 0});
    t = slice_lastdim(g, t, row, 1);
    return permute(g, t, {1, 0});  // (1, cols)
}

template <typename T>
Tensor<T> token_norm(Graph<T>& g, const ParamStore<T>& ps, const std::string& p,
                     const Tensor<T>& x) {
    return layer_norm(g, x, ps.at(p + ".gamma"), ps.at(p + ".beta"));
}

}  // namespace dec_detail

// Two rounds of {token self-attention, token->image cross-attention, MLP,
// image->token cross-attention} with positional re-injection, then a final
// token->image attention. Returns evolved tokens (M,E) and image tokens
// (g^2, E).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> two_way_transformer(Graph<T>& g, const ParamStore<T>& ps,
                                                    const Tensor<T>& img_emb,
                                                    const Tensor<T>& dense,
                                                    const Tensor<T>& sparse,
                                                    const Tensor<T>& pos_grid) {
    using dec_detail::attention;
    using dec_detail::token_norm;
    const ModelConfig& cfg = ps.config();
    const int64_t e = cfg.embed_dim_out, grid = cfg.grid();
    const int64_t heads = dec_detail::decoder_heads(cfg);

    auto src = add(g, img_emb, dense);
    auto keys = reshape(g, permute(g, src, {1, 2, 0}), {grid * grid, e});
    auto pos_src = reshape(g, permute(g, pos_grid, {1, 2, 0}), {grid * grid, e});

    auto query_pe = concat_rows(
        g, {reshape(g, ps.at("dec.iou_token"), {1, e}), reshape(g, ps.at("dec.mask_token"), {1, e}),
            sparse});
    auto queries = query_pe;

    for (int l = 0; l < 2; ++l) {
        const std::string p = "dec.layer" + std::to_string(l);
        // Self-attention (layer 0 runs on raw queries; later layers re-inject
        // the token positional content).
        if (l == 0) {
            queries = add(g, queries, attention(g, ps, p + ".self_attn", queries, queries,
                                                queries, heads));
        } else {
            auto qp = add(g, queries, query_pe);
            queries = add(g, queries, attention(g, ps, p + ".self_attn", qp, qp, queries, heads));
        }
        queries = token_norm(g, ps, p + ".norm1", queries);

        auto qi = add(g, queries, query_pe);
        auto ki = add(g, keys, pos_src);
        queries = add(g, queries, attention(g, ps, p + ".cross_t2i", qi, ki, keys, heads));
        queries = token_norm(g, ps, p + ".norm2", queries);

        auto h = linear(g, queries, ps.at(p + ".mlp.fc1.w"), ps.at(p + ".mlp.fc1.b"));
        h = gelu(g, h);
        h = linear(g, h, ps.at(p + ".mlp.fc2.w"), ps.at(p + ".mlp.fc2.b"));
        queries = token_norm(g, ps, p + ".norm3", add(g, queries, h));

        qi = add(g, queries, query_pe);
        ki = add(g, keys, pos_src);
        keys = add(g, keys, attention(g, ps, p + ".cross_i2t", ki, qi, queries, heads));
        keys = token_norm(g, ps, p + ".norm4", keys);
    }

    auto qf = add(g, queries, query_pe);
    auto kf = add(g, keys, pos_src);
    queries = add(g, queries, attention(g, ps, "dec.final_t2i", qf, kf, keys, heads));
    queries = token_norm(g, ps, "dec.norm_final", queries);
    return {queries, keys};
}

// s2 downsampled to the grid, concatenated with s3 and s4, fused by two 3x3
// convs into (E, g, g).
template <typename T>
Tensor<T> fuse_skips(Graph<T>& g, const ParamStore<T>& ps, const Tensor<T>& s2,
                     const Tensor<T>& s3, const Tensor<T>& s4) {
    const int64_t grid = ps.config().grid();
    auto s2d = bilinear_resize(g, s2, grid, grid);
    auto x = concat_channels(g, {s2d, s3, s4});
    x = conv2d(g, x, ps.at("fuse.conv1.w"), ps.at("fuse.conv1.b"), 1, 1);
    x = layer_norm_chw(g, x, ps.at("fuse.ln.gamma"), ps.at("fuse.ln.beta"));
    x = gelu(g, x);
    return conv2d(g, x, ps.at("fuse.conv2.w"), ps.at("fuse.conv2.b"), 1, 1);
}

template <typename T>
DecoderOutput<T> decode_masks(Graph<T>& g, const ParamStore<T>& ps,
                              const EncoderOutput<T>& enc, const Tensor<T>& sparse,
                              const Tensor<T>& dense, const Tensor<T>& pos_grid) {
    const ModelConfig& cfg = ps.config();
    const int64_t e = cfg.embed_dim_out, grid = cfg.grid(), s = cfg.img_size;

    auto [tokens, keys] = two_way_transformer(g, ps, enc.embedding, dense, sparse, pos_grid);
    auto img = permute(g, reshape(g, keys, {grid, grid, e}), {2, 0, 1});
    auto h = add(g, img, fuse_skips(g, ps, enc.s2, enc.s3, enc.s4));

    h = conv_transpose2d_k2s2(g, h, ps.at("up1.convt.w"), ps.at("up1.convt.b"));
    h = layer_norm_chw(g, h, ps.at("up1.ln.gamma"), ps.at("up1.ln.beta"));
    h = gelu(g, h);
    h = conv_transpose2d_k2s2(g, h, ps.at("up2.convt.w"), ps.at("up2.convt.b"));
    h = gelu(g, h);
    h = concat_channels(g, {h, enc.s1});
    h = conv2d(g, h, ps.at("s1cat.conv.w"), ps.at("s1cat.conv.b"), 1, 1);
    h = gelu(g, h);
    h = bilinear_resize(g, h, s, s);  // (E/8, S, S)

    auto mask_tok = dec_detail::row_slice(g, tokens, 1);
    auto w = linear(g, mask_tok, ps.at("hyper.fc1.w"), ps.at("hyper.fc1.b"));
    w = gelu(g, w);
    w = linear(g, w, ps.at("hyper.fc2.w"), ps.at("hyper.fc2.b"));
    w = gelu(g, w);
    w = linear(g, w, ps.at("hyper.fc3.w"), ps.at("hyper.fc3.b"));  // (1, E/8)

    auto flat = reshape(g, h, {e / 8, s * s});
    auto logits = reshape(g, matmul(g, w, flat), {1, s, s});

    auto iou_tok = dec_detail::row_slice(g, tokens, 0);
    auto u = linear(g, iou_tok, ps.at("iou.fc1.w"), ps.at("iou.fc1.b"));
    u = gelu(g, u);
    u = linear(g, u, ps.at("iou.fc2.w"), ps.at("iou.fc2.b"));
    u = gelu(g, u);
    u = linear(g, u, ps.at("iou.fc3.w"), ps.at("iou.fc3.b"));  // (1,1)
    auto iou = reshape(g, sigmoid(g, u), {1});

    return DecoderOutput<T>{logits, iou};
}

// sigmoid -> drop right/bottom padding -> bilinear to the original size ->
// threshold. Thresholding happens after the resize so sub-pixel boundaries
// survive the upsampling.
inline std::vector<uint8_t> postprocess_mask(const Tensor<float>& logits,
                                             const PreparedInput& prep,
                                             double threshold = 0.5) {
    const int64_t s = prep.img_size;
    if (logits->shape != Shape{1, s, s})
        throw DimError("postprocess_mask: logits shape " + shape_str(logits->shape));
    const int64_t vh = s - prep.pad_bottom, vw = s - prep.pad_right;
    std::vector<float> probs(static_cast<size_t>(vh) * vw);
    for (int64_t i = 0; i < vh; ++i)
        for (int64_t j = 0; j < vw; ++j) {
            const float v = logits->data[i * s + j];
            probs[i * vw + j] =
                v >= 0 ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
        }
    const std::vector<float> up =
        resize_bilinear_chw(probs, 1, vh, vw, prep.orig_h, prep.orig_w);
    std::vector<uint8_t> mask(up.size());
    for (size_t i = 0; i < up.size(); ++i) mask[i] = up[i] > threshold ? 1 : 0;
    return mask;
}

}  // namespace swinseg
