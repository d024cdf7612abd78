#pragma once

// Image encoder: conv stem (stride 4), four stages of windowed-attention
// blocks with a conv+batchnorm insert, patch merging between stages 1-2 and
// 2-3, a pointwise projection into stage 4, and a conv neck producing the
// embedding grid.

#include <cmath>
#include <map>
#include <memory>
#include <string>

#include "swinseg/config.hpp"
#include "swinseg/ops.hpp"
#include "swinseg/params.hpp"

namespace swinseg {

template <typename T>
struct EncoderOutput {
    // Stage features in (C,H,W) layout at /4, /8, /16, /16 resolution.
    Tensor<T> s1, s2, s3, s4;
    Tensor<T> embedding;  // (embed_dim_out, img/16, img/16)
};

namespace enc_detail {

// token (dy,dx) offset -> flattened relative-position-bias table index, for
// all m^2 x m^2 token pairs of one window.
inline std::shared_ptr<std::vector<int64_t>> rel_index_map(int win) {
    static std::map<int, std::shared_ptr<std::vector<int64_t>>> cache;
    auto it = cache.find(win);
    if (it != cache.end()) return it->second;
    const int m = win * win;
    auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(m) * m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const int dy = i / win - j / win + win - 1;
            const int dx = i % win - j % win + win - 1;
            (*idx)[static_cast<size_t>(i) * m + j] = dy * (2 * win - 1) + dx;
        }
    cache[win] = idx;
    return idx;
}

// Multi-head windowed self-attention over x (H,W,C); H,W multiples of win.
template <typename T>
Tensor<T> window_attention(Graph<T>& g, const ParamStore<T>& ps, const std::string& p,
                           const Tensor<T>& x, int64_t heads, int64_t win) {
    const int64_t h = x->shape[0], w = x->shape[1], c = x->shape[2];
    const int64_t m = win * win, nw = (h / win) * (w / win), dh = c / heads;

    auto wins = window_partition(g, x, win);                    // (nW, win, win, C)
    auto tok = reshape(g, wins, {nw * m, c});                   // (nW*m, C)
    auto qkv = linear(g, tok, ps.at(p + ".qkv.w"), ps.at(p + ".qkv.b"));
    auto split = [&](int64_t k) {
        auto t = slice_lastdim(g, qkv, k * c, c);               // (nW*m, C)
        t = reshape(g, t, {nw, m, heads, dh});
        t = permute(g, t, {0, 2, 1, 3});                        // (nW, heads, m, dh)
        return reshape(g, t, {nw * heads, m, dh});
    };
    auto q = mul_scalar(g, split(0), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    auto k = split(1);
    auto v = split(2);

    auto attn = bmm(g, q, k, /*transpose_b=*/true);             // (nW*heads, m, m)
    auto bias = attn_bias_gather(g, ps.at(p + ".rel_bias"), rel_index_map(static_cast<int>(win)),
                                 m);
    attn = softmax(g, add_window_bias(g, attn, bias));
    auto out = bmm(g, attn, v);                                 // (nW*heads, m, dh)
    out = reshape(g, out, {nw, heads, m, dh});
    out = permute(g, out, {0, 2, 1, 3});                        // (nW, m, heads, dh)
    out = reshape(g, out, {nw * m, c});
    out = linear(g, out, ps.at(p + ".proj.w"), ps.at(p + ".proj.b"));
    return window_reverse(g, reshape(g, out, {nw, win, win, c}), win, h, w);
}

// One block: x += W-MSA(LN(x)) [cyclic shift when shifted]; x += ConvBN(x);
// x += MLP(LN(x)).
template <typename T>
Tensor<T> swin_block(Graph<T>& g, const ParamStore<T>& ps, const std::string& p,
                     const Tensor<T>& x, int64_t heads, int64_t win, bool shifted,
                     bool training) {
    const int64_t h = x->shape[0], w = x->shape[1], c = x->shape[2];

    auto t = reshape(g, x, {h * w, c});
    t = layer_norm(g, t, ps.at(p + ".ln1.gamma"), ps.at(p + ".ln1.beta"));
    auto a = reshape(g, t, {h, w, c});
    const int64_t shift = shifted ? win / 2 : 0;
    if (shift) a = roll_hw(g, a, -shift, -shift);
    const int64_t ph = (win - h % win) % win, pw = (win - w % win) % win;
    if (ph || pw) a = pad_hw(g, a, ph, pw);
    a = window_attention(g, ps, p + ".attn", a, heads, win);
    if (ph || pw) a = crop_hw(g, a, h, w);
    if (shift) a = roll_hw(g, a, shift, shift);
    auto x1 = add(g, x, a);

    auto cv = permute(g, x1, {2, 0, 1});  // (C,H,W)
    cv = conv2d(g, cv, ps.at(p + ".conv.w"), ps.at(p + ".conv.b"), 1, 1);
    cv = batch_norm2d(g, cv, ps.at(p + ".bn.gamma"), ps.at(p + ".bn.beta"),
                      ps.at(p + ".bn.running_mean"), ps.at(p + ".bn.running_var"), training);
    auto x2 = add(g, x1, permute(g, cv, {1, 2, 0}));

    auto u = reshape(g, x2, {h * w, c});
    u = layer_norm(g, u, ps.at(p + ".ln2.gamma"), ps.at(p + ".ln2.beta"));
    u = linear(g, u, ps.at(p + ".mlp.fc1.w"), ps.at(p + ".mlp.fc1.b"));
    u = gelu(g, u);
    u = linear(g, u, ps.at(p + ".mlp.fc2.w"), ps.at(p + ".mlp.fc2.b"));
    return add(g, x2, reshape(g, u, {h, w, c}));
}

// 2x2 space-to-depth + LN + linear (no bias): (H,W,C) -> (H/2,W/2,C').
template <typename T>
Tensor<T> patch_merge(Graph<T>& g, const ParamStore<T>& ps, const std::string& p,
                      const Tensor<T>& x, int64_t c_out) {
    auto m = space_to_depth2(g, x);
    const int64_t h = m->shape[0], w = m->shape[1], c4 = m->shape[2];
    auto t = reshape(g, m, {h * w, c4});
    t = layer_norm(g, t, ps.at(p + ".ln.gamma"), ps.at(p + ".ln.beta"));
    t = matmul(g, t, ps.at(p + ".linear.w"));
    return reshape(g, t, {h, w, c_out});
}

}  // namespace enc_detail

// Conv stem: 3 -> C0/2 -> C0 with two stride-2 convs, BN+GELU after each.
template <typename T>
Tensor<T> stem_forward(Graph<T>& g, const ParamStore<T>& ps, const Tensor<T>& img,
                       bool training) {
    const ModelConfig& cfg = ps.config();
    if (img->shape != Shape{3, cfg.img_size, cfg.img_size})
        throw DimError("stem_forward: expected (3," + std::to_string(cfg.img_size) + "," +
                       std::to_string(cfg.img_size) + "), got " + shape_str(img->shape));
    auto x = conv2d(g, img, ps.at("stem.conv1.w"), ps.at("stem.conv1.b"), 2, 1);
    x = batch_norm2d(g, x, ps.at("stem.bn1.gamma"), ps.at("stem.bn1.beta"),
                     ps.at("stem.bn1.running_mean"), ps.at("stem.bn1.running_var"), training);
    x = gelu(g, x);
    x = conv2d(g, x, ps.at("stem.conv2.w"), ps.at("stem.conv2.b"), 2, 1);
    x = batch_norm2d(g, x, ps.at("stem.bn2.gamma"), ps.at("stem.bn2.beta"),
                     ps.at("stem.bn2.running_mean"), ps.at("stem.bn2.running_var"), training);
    return gelu(g, x);
}

template <typename T>
Tensor<T> neck_forward(Graph<T>& g, const ParamStore<T>& ps, const Tensor<T>& s4_chw) {
    auto x = conv2d(g, s4_chw, ps.at("neck.conv1.w"), Tensor<T>{}, 1, 0);
    x = layer_norm_chw(g, x, ps.at("neck.ln1.gamma"), ps.at("neck.ln1.beta"));
    x = conv2d(g, x, ps.at("neck.conv2.w"), Tensor<T>{}, 1, 1);
    return layer_norm_chw(g, x, ps.at("neck.ln2.gamma"), ps.at("neck.ln2.beta"));
}

template <typename T>
EncoderOutput<T> encoder_forward(Graph<T>& g, const ParamStore<T>& ps, const Tensor<T>& img,
                                 bool training) {
    const ModelConfig& cfg = ps.config();
    auto run_stage = [&](Tensor<T> x, int s) {
        for (int b = 0; b < cfg.depths[s]; ++b)
            x = enc_detail::swin_block(g, ps,
                                       "stage" + std::to_string(s) + ".block" + std::to_string(b),
                                       x, cfg.num_heads[s], cfg.window_size, b % 2 == 1,
                                       training);
        return x;
    };

    auto x = permute(g, stem_forward(g, ps, img, training), {1, 2, 0});  // (H,W,C0)
    x = run_stage(x, 0);
    auto s1 = x;
    x = enc_detail::patch_merge(g, ps, "merge1", x, cfg.stage_dims[1]);
    x = run_stage(x, 1);
    auto s2 = x;
    x = enc_detail::patch_merge(g, ps, "merge2", x, cfg.stage_dims[2]);
    x = run_stage(x, 2);
    auto s3 = x;
    {
        const int64_t h = x->shape[0], w = x->shape[1];
        auto t = reshape(g, x, {h * w, cfg.stage_dims[2]});
        t = layer_norm(g, t, ps.at("proj34.ln.gamma"), ps.at("proj34.ln.beta"));
        t = linear(g, t, ps.at("proj34.linear.w"), ps.at("proj34.linear.b"));
        x = reshape(g, t, {h, w, cfg.stage_dims[3]});
    }
    x = run_stage(x, 3);
    auto s4 = x;

    EncoderOutput<T> out;
    out.s1 = permute(g, s1, {2, 0, 1});
    out.s2 = permute(g, s2, {2, 0, 1});
    out.s3 = permute(g, s3, {2, 0, 1});
    out.s4 = permute(g, s4, {2, 0, 1});
    out.embedding = neck_forward(g, ps, out.s4);
    return out;
}

}  // namespace swinseg
