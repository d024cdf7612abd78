#include "swinseg/profile.hpp"

#include <sstream>

#include "swinseg/params.hpp"

namespace swinseg {

namespace {

int64_t conv_flops(int64_t cin, int64_t cout, int64_t k, int64_t hout, int64_t wout) {
    return 2 * cin * cout * k * k * hout * wout;
}

int64_t lin_flops(int64_t n, int64_t in, int64_t out) { return 2 * n * in * out; }

// q/k/v/out projections plus the two attention matmuls (QK^T and PV).
int64_t attn_flops(int64_t nq, int64_t nk, int64_t e, int64_t d) {
    return lin_flops(nq, e, d) + 2 * lin_flops(nk, e, d) + lin_flops(nq, d, e) +
           4 * nq * nk * d;
}

}  // namespace

Profile profile_model(const ModelConfig& cfg) {
    cfg.validate();
    Profile p;

    const auto decls = declare_model(cfg);
    p.encoder_params = count_params(decls, ParamGroup::Encoder);
    p.promptenc_params = count_params(decls, ParamGroup::PromptEncoder);
    p.decoder_params = count_params(decls, ParamGroup::Decoder);
    p.total_params = count_params(decls);

    const int64_t s = cfg.img_size, e = cfg.embed_dim_out, grid = cfg.grid();
    const int64_t win = cfg.window_size, m = win * win;

    // ----- encoder -----
    const int64_t mid = cfg.stage_dims[0] / 2;
    int64_t f = conv_flops(3, mid, 3, s / 2, s / 2) +
                conv_flops(mid, cfg.stage_dims[0], 3, s / 4, s / 4);
    for (int st = 0; st < 4; ++st) {
        const int64_t c = cfg.stage_dims[st];
        const int64_t r = cfg.stage_res(st);
        const int64_t rp = (r + win - 1) / win * win;  // padded inside blocks
        const int64_t nw = (rp / win) * (rp / win);
        int64_t blk = lin_flops(r * r, c, 3 * c)  // qkv
                      + lin_flops(r * r, c, c)    // attn out projection
                      + 4 * nw * m * m * c        // QK^T + PV
                      + conv_flops(c, c, 3, r, r) + lin_flops(r * r, c, 4 * c) +
                      lin_flops(r * r, 4 * c, c);
        f += blk * cfg.depths[st];
    }
    f += lin_flops((s / 8) * (s / 8), 4 * cfg.stage_dims[0], cfg.stage_dims[1]);
    f += lin_flops((s / 16) * (s / 16), 4 * cfg.stage_dims[1], cfg.stage_dims[2]);
    f += lin_flops((s / 16) * (s / 16), cfg.stage_dims[2], cfg.stage_dims[3]);
    f += conv_flops(cfg.stage_dims[3], e, 1, grid, grid) + conv_flops(e, e, 3, grid, grid);
    p.encoder_flops = f;

    // ----- prompt encoder -----
    f = lin_flops(grid * grid, 2, e / 2)  // grid positional encodings
        + lin_flops(6, 2, e / 2)          // sparse token positional encodings
        + conv_flops(1, e / 8, 2, s / 2, s / 2) + conv_flops(e / 8, e / 4, 2, s / 4, s / 4) +
        conv_flops(e / 4, e, 1, grid, grid);
    p.promptenc_flops = f;

    // ----- decoder -----
    const int64_t tokens = 8;  // iou + mask + 4 points + 2 corners
    const int64_t n = grid * grid;
    f = 0;
    for (int l = 0; l < 2; ++l) {
        f += attn_flops(tokens, tokens, e, e);      // self
        f += attn_flops(tokens, n, e, e / 2);       // token -> image
        f += lin_flops(tokens, e, 8 * e) + lin_flops(tokens, 8 * e, e);
        f += attn_flops(n, tokens, e, e / 2);       // image -> token
    }
    f += attn_flops(tokens, n, e, e / 2);           // final token -> image
    const int64_t skip_c = cfg.stage_dims[1] + cfg.stage_dims[2] + cfg.stage_dims[3];
    f += conv_flops(skip_c, e, 3, grid, grid) + conv_flops(e, e, 3, grid, grid);
    f += 2 * e * (e / 4) * 4 * grid * grid;              // up1 (transposed, k2s2)
    f += 2 * (e / 4) * (e / 8) * 4 * (2 * grid) * (2 * grid);  // up2
    f += conv_flops(e / 8 + cfg.stage_dims[0], e / 8, 3, 4 * grid, 4 * grid);
    f += 2 * lin_flops(1, e, e) + lin_flops(1, e, e / 8);  // hypernetwork
    f += 2 * lin_flops(1, e, e) + lin_flops(1, e, 1);      // iou head
    f += lin_flops(1, e / 8, s * s);                       // mask dot product
    p.decoder_flops = f;

    p.total_flops = p.encoder_flops + p.promptenc_flops + p.decoder_flops;
    return p;
}

std::string profile_report(const ModelConfig& cfg) {
    const Profile p = profile_model(cfg);
    auto fmt_m = [](int64_t v) {
        std::ostringstream os;
        os.setf(std::ios::fixed);
        os.precision(2);
        os << static_cast<double>(v) / 1e6 << "M";
        return os.str();
    };
    auto fmt_g = [](int64_t v) {
        std::ostringstream os;
        os.setf(std::ios::fixed);
        os.precision(2);
        os << static_cast<double>(v) / 1e9 << "G";
        return os.str();
    };
    std::ostringstream os;
    os << "image size: " << cfg.img_size << "\n"
       << "params: encoder " << fmt_m(p.encoder_params) << ", prompt encoder "
       << fmt_m(p.promptenc_params) << ", decoder " << fmt_m(p.decoder_params) << ", total "
       << fmt_m(p.total_params) << "\n"
       << "flops:  encoder " << fmt_g(p.encoder_flops) << ", prompt encoder "
       << fmt_g(p.promptenc_flops) << ", decoder " << fmt_g(p.decoder_flops) << ", total "
       << fmt_g(p.total_flops) << "\n"
       << "reference budgets: encoder params 10.51M +/-15%, total params 36.77M +/-15%, "
          "encoder flops 47.70G +/-20%, total flops 55.20G +/-20%\n";
    return os.str();
}

}  // namespace swinseg
