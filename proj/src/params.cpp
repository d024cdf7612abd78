#include "swinseg/params.hpp"

namespace swinseg {

namespace {

void add(std::vector<ParamDecl>& out, std::string name, Shape shape,
         InitKind init = InitKind::TruncNormal, bool buffer = false) {
    out.push_back(ParamDecl{std::move(name), std::move(shape), init, buffer});
}

void add_layer_norm(std::vector<ParamDecl>& out, const std::string& prefix, int64_t c) {
    add(out, prefix + ".gamma", {c}, InitKind::Ones);
    add(out, prefix + ".beta", {c}, InitKind::Zeros);
}

void add_batch_norm(std::vector<ParamDecl>& out, const std::string& prefix, int64_t c) {
    add(out, prefix + ".gamma", {c}, InitKind::Ones);
    add(out, prefix + ".beta", {c}, InitKind::Zeros);
    add(out, prefix + ".running_mean", {c}, InitKind::Zeros, true);
    add(out, prefix + ".running_var", {c}, InitKind::Ones, true);
}

void add_linear(std::vector<ParamDecl>& out, const std::string& prefix, int64_t in, int64_t o,
                bool bias = true) {
    add(out, prefix + ".w", {in, o});
    if (bias) add(out, prefix + ".b", {o}, InitKind::Zeros);
}

void add_conv(std::vector<ParamDecl>& out, const std::string& prefix, int64_t in, int64_t o,
              int64_t k, bool bias = true) {
    add(out, prefix + ".w", {o, in, k, k});
    if (bias) add(out, prefix + ".b", {o}, InitKind::Zeros);
}

// Attention with query/key/value/output projections; internal width d.
void add_attention(std::vector<ParamDecl>& out, const std::string& prefix, int64_t e, int64_t d) {
    add_linear(out, prefix + ".q", e, d);
    add_linear(out, prefix + ".k", e, d);
    add_linear(out, prefix + ".v", e, d);
    add_linear(out, prefix + ".out", d, e);
}

}  // namespace

std::vector<ParamDecl> declare_model(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<ParamDecl> out;
    const int64_t e = cfg.embed_dim_out;
    const int64_t m = cfg.window_size;

    // ----- encoder -----
    const int64_t stem_mid = cfg.stage_dims[0] / 2;
    add_conv(out, "stem.conv1", 3, stem_mid, 3);
    add_batch_norm(out, "stem.bn1", stem_mid);
    add_conv(out, "stem.conv2", stem_mid, cfg.stage_dims[0], 3);
    add_batch_norm(out, "stem.bn2", cfg.stage_dims[0]);

    for (int s = 0; s < 4; ++s) {
        const int64_t c = cfg.stage_dims[s];
        const int64_t heads = cfg.num_heads[s];
        for (int b = 0; b < cfg.depths[s]; ++b) {
            const std::string p = "stage" + std::to_string(s) + ".block" + std::to_string(b);
            add_layer_norm(out, p + ".ln1", c);
            add_linear(out, p + ".attn.qkv", c, 3 * c);
            add_linear(out, p + ".attn.proj", c, c);
            add(out, p + ".attn.rel_bias", {heads, (2 * m - 1) * (2 * m - 1)});
            add_conv(out, p + ".conv", c, c, 3);
            add_batch_norm(out, p + ".bn", c);
            add_layer_norm(out, p + ".ln2", c);
            add_linear(out, p + ".mlp.fc1", c, 4 * c);
            add_linear(out, p + ".mlp.fc2", 4 * c, c);
        }
    }
    add_layer_norm(out, "merge1.ln", 4 * cfg.stage_dims[0]);
    add_linear(out, "merge1.linear", 4 * cfg.stage_dims[0], cfg.stage_dims[1], false);
    add_layer_norm(out, "merge2.ln", 4 * cfg.stage_dims[1]);
    add_linear(out, "merge2.linear", 4 * cfg.stage_dims[1], cfg.stage_dims[2], false);
    add_layer_norm(out, "proj34.ln", cfg.stage_dims[2]);
    add_linear(out, "proj34.linear", cfg.stage_dims[2], cfg.stage_dims[3]);
    add_conv(out, "neck.conv1", cfg.stage_dims[3], e, 1, false);
    add_layer_norm(out, "neck.ln1", e);
    add_conv(out, "neck.conv2", e, e, 3, false);
    add_layer_norm(out, "neck.ln2", e);

    // ----- prompt encoder -----
    add(out, "pe.gauss", {2, e / 2}, InitKind::Normal, true);
    add(out, "pt_embed.point", {e});
    add(out, "pt_embed.corner_tl", {e});
    add(out, "pt_embed.corner_br", {e});
    add(out, "no_scribble", {e});
    add_conv(out, "dense.conv1", 1, e / 8, 2);
    add_layer_norm(out, "dense.ln1", e / 8);
    add_conv(out, "dense.conv2", e / 8, e / 4, 2);
    add_layer_norm(out, "dense.ln2", e / 4);
    add_conv(out, "dense.conv3", e / 4, e, 1);

    // ----- decoder -----
    add(out, "dec.iou_token", {e});
    add(out, "dec.mask_token", {e});
    for (int l = 0; l < 2; ++l) {
        const std::string p = "dec.layer" + std::to_string(l);
        add_attention(out, p + ".self_attn", e, e);
        add_layer_norm(out, p + ".norm1", e);
        add_attention(out, p + ".cross_t2i", e, e / 2);
        add_layer_norm(out, p + ".norm2", e);
        add_linear(out, p + ".mlp.fc1", e, 8 * e);
        add_linear(out, p + ".mlp.fc2", 8 * e, e);
        add_layer_norm(out, p + ".norm3", e);
        add_attention(out, p + ".cross_i2t", e, e / 2);
        add_layer_norm(out, p + ".norm4", e);
    }
    add_attention(out, "dec.final_t2i", e, e / 2);
    add_layer_norm(out, "dec.norm_final", e);

    const int64_t skip_c = cfg.stage_dims[1] + cfg.stage_dims[2] + cfg.stage_dims[3];
    add_conv(out, "fuse.conv1", skip_c, e, 3);
    add_layer_norm(out, "fuse.ln", e);
    add_conv(out, "fuse.conv2", e, e, 3);

    add(out, "up1.convt.w", {e, e / 4, 2, 2});
    add(out, "up1.convt.b", {e / 4}, InitKind::Zeros);
    add_layer_norm(out, "up1.ln", e / 4);
    add(out, "up2.convt.w", {e / 4, e / 8, 2, 2});
    add(out, "up2.convt.b", {e / 8}, InitKind::Zeros);
    add_conv(out, "s1cat.conv", e / 8 + cfg.stage_dims[0], e / 8, 3);

    add_linear(out, "hyper.fc1", e, e);
    add_linear(out, "hyper.fc2", e, e);
    add_linear(out, "hyper.fc3", e, e / 8);
    add_linear(out, "iou.fc1", e, e);
    add_linear(out, "iou.fc2", e, e);
    add_linear(out, "iou.fc3", e, 1);
    return out;
}

ParamGroup param_group(const std::string& name) {
    auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
    if (starts("stem.") || starts("stage") || starts("merge") || starts("proj34.") ||
        starts("neck."))
        return ParamGroup::Encoder;
    if (starts("pe.") || starts("pt_embed.") || starts("no_scribble") || starts("dense."))
        return ParamGroup::PromptEncoder;
    return ParamGroup::Decoder;
}

int64_t count_params(const std::vector<ParamDecl>& decls) {
    int64_t n = 0;
    for (const ParamDecl& d : decls)
        if (!d.is_buffer) n += shape_numel(d.shape);
    return n;
}

int64_t count_params(const std::vector<ParamDecl>& decls, ParamGroup group) {
    int64_t n = 0;
    for (const ParamDecl& d : decls)
        if (!d.is_buffer && param_group(d.name) == group) n += shape_numel(d.shape);
    return n;
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace swinseg
