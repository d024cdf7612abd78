#include "swinseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "swinseg/errors.hpp"

namespace swinseg {

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw ContractError("percentile: empty input");
    std::sort(values.begin(), values.end());
    const double rank = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<int64_t>(std::floor(rank));
    const auto hi = static_cast<int64_t>(std::ceil(rank));
    const double frac = rank - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

void normalize_intensity(std::vector<float>& values) {
    if (values.empty()) return;
    std::vector<double> v(values.begin(), values.end());
    const double lo = percentile(v, 0.5);
    const double hi = percentile(v, 99.5);
    if (!(hi - lo > 0.0)) {
        std::fill(values.begin(), values.end(), 0.0f);
        return;
    }
    const double inv = 1.0 / (hi - lo);
    for (float& x : values) {
        const double c = std::clamp(static_cast<double>(x), lo, hi);
        x = static_cast<float>((c - lo) * inv);
    }
}

std::vector<float> resize_bilinear_chw(const std::vector<float>& src, int64_t c, int64_t h,
                                       int64_t w, int64_t nh, int64_t nw) {
    if (static_cast<int64_t>(src.size()) != c * h * w)
        throw DimError("resize_bilinear_chw: buffer size does not match (C,H,W)");
    std::vector<float> out(static_cast<size_t>(c) * nh * nw);
    const double sy = static_cast<double>(h) / static_cast<double>(nh);
    const double sx = static_cast<double>(w) / static_cast<double>(nw);
    for (int64_t i = 0; i < nh; ++i) {
        double fy = (static_cast<double>(i) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
        const auto y0 = static_cast<int64_t>(std::floor(fy));
        const int64_t y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (int64_t j = 0; j < nw; ++j) {
            double fx = (static_cast<double>(j) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
            const auto x0 = static_cast<int64_t>(std::floor(fx));
            const int64_t x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - static_cast<double>(x0);
            for (int64_t ch = 0; ch < c; ++ch) {
                const float* p = src.data() + ch * h * w;
                const double top = p[y0 * w + x0] * (1.0 - wx) + p[y0 * w + x1] * wx;
                const double bot = p[y1 * w + x0] * (1.0 - wx) + p[y1 * w + x1] * wx;
                out[(ch * nh + i) * nw + j] = static_cast<float>(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    return out;
}

std::vector<int64_t> gt_slice(const NpyArray& gts, bool is_3d, int64_t slice_idx) {
    const int64_t h = gts.shape[is_3d ? 1 : 0];
    const int64_t w = gts.shape[is_3d ? 2 : 1];
    const int64_t off = is_3d ? slice_idx * h * w : 0;
    if (is_3d && (slice_idx < 0 || slice_idx >= gts.shape[0]))
        throw ContractError("gt_slice: slice index out of range");
    std::vector<int64_t> out(static_cast<size_t>(h) * w);
    switch (gts.dtype) {
        case NpyArray::Dtype::U8: {
            const uint8_t* p = gts.u8() + off;
            for (int64_t i = 0; i < h * w; ++i) out[i] = p[i];
            break;
        }
        case NpyArray::Dtype::I64: {
            const int64_t* p = gts.i64() + off;
            for (int64_t i = 0; i < h * w; ++i) out[i] = p[i];
            break;
        }
        case NpyArray::Dtype::F32: {
            const float* p = gts.f32() + off;
            for (int64_t i = 0; i < h * w; ++i) out[i] = static_cast<int64_t>(std::llround(p[i]));
            break;
        }
        case NpyArray::Dtype::F64: {
            const double* p = gts.f64() + off;
            for (int64_t i = 0; i < h * w; ++i) out[i] = static_cast<int64_t>(std::llround(p[i]));
            break;
        }
    }
    return out;
}

std::vector<uint8_t> gt_mask_for_box(const std::vector<int64_t>& labels, int64_t h, int64_t w,
                                     const Box2d& box) {
    const auto y1 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(box.y1)), 0, h);
    const auto y2 = std::clamp<int64_t>(static_cast<int64_t>(std::ceil(box.y2)), 0, h);
    const auto x1 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(box.x1)), 0, w);
    const auto x2 = std::clamp<int64_t>(static_cast<int64_t>(std::ceil(box.x2)), 0, w);
    std::map<int64_t, int64_t> counts;
    for (int64_t y = y1; y < y2; ++y)
        for (int64_t x = x1; x < x2; ++x) {
            const int64_t v = labels[y * w + x];
            if (v != 0) ++counts[v];
        }
    std::vector<uint8_t> mask(static_cast<size_t>(h) * w, 0);
    if (counts.empty()) return mask;
    int64_t best = 0, best_count = -1;
    for (const auto& [label, count] : counts)
        if (count > best_count) best = label, best_count = count;
    for (int64_t i = 0; i < h * w; ++i) mask[i] = labels[i] == best ? 1 : 0;
    return mask;
}

std::vector<uint8_t> prepare_gt(const std::vector<uint8_t>& mask, int64_t h, int64_t w,
                                double scale, int img_size) {
    if (static_cast<int64_t>(mask.size()) != h * w)
        throw DimError("prepare_gt: mask size does not match (H,W)");
    const int64_t nh = std::lround(static_cast<double>(h) * scale);
    const int64_t nw = std::lround(static_cast<double>(w) * scale);
    const int64_t s = img_size;
    if (nh > s || nw > s) throw ContractError("prepare_gt: scaled mask exceeds target size");
    std::vector<uint8_t> out(static_cast<size_t>(s) * s, 0);
    const double sy = static_cast<double>(h) / static_cast<double>(nh);
    const double sx = static_cast<double>(w) / static_cast<double>(nw);
    for (int64_t i = 0; i < nh; ++i) {
        const auto y = std::clamp<int64_t>(
            static_cast<int64_t>(std::floor((static_cast<double>(i) + 0.5) * sy)), 0, h - 1);
        for (int64_t j = 0; j < nw; ++j) {
            const auto x = std::clamp<int64_t>(
                static_cast<int64_t>(std::floor((static_cast<double>(j) + 0.5) * sx)), 0, w - 1);
            out[i * s + j] = mask[y * w + x];
        }
    }
    return out;
}

int64_t sample_slice(const CaseRecord& rec, Rng& rng) {
    if (!rec.is_3d) return 0;
    if (rec.gts) {
        std::vector<int64_t> candidates;
        for (int64_t d = 0; d < rec.depth; ++d) {
            const std::vector<int64_t> labels = gt_slice(*rec.gts, true, d);
            for (int64_t v : labels)
                if (v != 0) {
                    candidates.push_back(d);
                    break;
                }
        }
        if (candidates.empty())
            throw SamplingError("sample_slice: volume has no slice with ground truth");
        return candidates[rng.uniform_int(candidates.size())];
    }
    return static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(rec.depth)));
}

namespace {

// Extracts the requested slice/image as float (C,H,W) without normalization.
std::vector<float> extract_chw(const CaseRecord& rec, int64_t slice_idx, int64_t& c_out) {
    const int64_t h = rec.height, w = rec.width;
    const int64_t plane = h * w;
    std::vector<float> out;
    auto read_at = [&](int64_t idx) -> float {
        switch (rec.image.dtype) {
            case NpyArray::Dtype::U8: return static_cast<float>(rec.image.u8()[idx]);
            case NpyArray::Dtype::F32: return rec.image.f32()[idx];
            case NpyArray::Dtype::F64: return static_cast<float>(rec.image.f64()[idx]);
            case NpyArray::Dtype::I64: return static_cast<float>(rec.image.i64()[idx]);
        }
        return 0.0f;
    };
    if (rec.is_rgb) {
        c_out = 3;
        out.resize(static_cast<size_t>(3) * plane);
        for (int64_t i = 0; i < plane; ++i)
            for (int64_t ch = 0; ch < 3; ++ch) out[ch * plane + i] = read_at(i * 3 + ch);
    } else {
        c_out = 1;
        out.resize(static_cast<size_t>(plane));
        const int64_t off = rec.is_3d ? slice_idx * plane : 0;
        for (int64_t i = 0; i < plane; ++i) out[i] = read_at(off + i);
    }
    return out;
}

}  // namespace

PreparedInput prepare_case(const CaseRecord& rec, std::optional<int64_t> slice_idx, int img_size) {
    if (rec.is_3d) {
        if (!slice_idx) throw ContractError("prepare_case: 3D case requires a slice index");
        if (*slice_idx < 0 || *slice_idx >= rec.depth)
            throw ContractError("prepare_case: slice index out of range");
    }
    const int64_t h = rec.height, w = rec.width;
    const int64_t s = img_size;

    int64_t c = 0;
    std::vector<float> chw = extract_chw(rec, slice_idx.value_or(0), c);
    normalize_intensity(chw);

    const double scale = static_cast<double>(s) / static_cast<double>(std::max(h, w));
    const int64_t nh = std::lround(static_cast<double>(h) * scale);
    const int64_t nw = std::lround(static_cast<double>(w) * scale);
    std::vector<float> resized = resize_bilinear_chw(chw, c, h, w, nh, nw);

    PreparedInput p;
    p.img_size = img_size;
    p.scale = scale;
    p.pad_right = s - nw;
    p.pad_bottom = s - nh;
    p.orig_h = h;
    p.orig_w = w;
    p.image.assign(static_cast<size_t>(3) * s * s, 0.0f);
    for (int64_t ch = 0; ch < 3; ++ch) {
        const float* src = resized.data() + (c == 3 ? ch : 0) * nh * nw;
        for (int64_t i = 0; i < nh; ++i)
            for (int64_t j = 0; j < nw; ++j) p.image[(ch * s + i) * s + j] = src[i * nw + j];
    }

    for (const Box2d& b : rec.boxes) {
        Box2d m{std::floor(b.x1 * scale), std::floor(b.y1 * scale), std::ceil(b.x2 * scale),
                std::ceil(b.y2 * scale)};
        m.x1 = std::clamp(m.x1, 0.0, static_cast<double>(s));
        m.x2 = std::clamp(m.x2, 0.0, static_cast<double>(s));
        m.y1 = std::clamp(m.y1, 0.0, static_cast<double>(s));
        m.y2 = std::clamp(m.y2, 0.0, static_cast<double>(s));
        p.boxes.push_back(m);
    }
    return p;
}

namespace {

void flip_plane_h(float* img, int64_t s) {
    for (int64_t i = 0; i < s; ++i)
        for (int64_t j = 0; j < s / 2; ++j) std::swap(img[i * s + j], img[i * s + (s - 1 - j)]);
}

void flip_plane_v(float* img, int64_t s) {
    for (int64_t i = 0; i < s / 2; ++i)
        for (int64_t j = 0; j < s; ++j) std::swap(img[i * s + j], img[(s - 1 - i) * s + j]);
}

}  // namespace

void flip_horizontal(PreparedInput& p, std::vector<uint8_t>* gt) {
    const int64_t s = p.img_size;
    for (int64_t ch = 0; ch < 3; ++ch) flip_plane_h(p.image.data() + ch * s * s, s);
    for (Box2d& b : p.boxes) {
        const double x1 = b.x1, x2 = b.x2;
        b.x1 = static_cast<double>(s) - x2;
        b.x2 = static_cast<double>(s) - x1;
    }
    if (gt)
        for (int64_t i = 0; i < s; ++i)
            for (int64_t j = 0; j < s / 2; ++j)
                std::swap((*gt)[i * s + j], (*gt)[i * s + (s - 1 - j)]);
}

void flip_vertical(PreparedInput& p, std::vector<uint8_t>* gt) {
    const int64_t s = p.img_size;
    for (int64_t ch = 0; ch < 3; ++ch) flip_plane_v(p.image.data() + ch * s * s, s);
    for (Box2d& b : p.boxes) {
        const double y1 = b.y1, y2 = b.y2;
        b.y1 = static_cast<double>(s) - y2;
        b.y2 = static_cast<double>(s) - y1;
    }
    if (gt)
        for (int64_t i = 0; i < s / 2; ++i)
            for (int64_t j = 0; j < s; ++j) std::swap((*gt)[i * s + j], (*gt)[(s - 1 - i) * s + j]);
}

void random_flip(PreparedInput& p, std::vector<uint8_t>* gt, Rng& rng) {
    const bool do_h = rng.bernoulli(0.5);
    const bool do_v = rng.bernoulli(0.5);
    if (do_h) flip_horizontal(p, gt);
    if (do_v) flip_vertical(p, gt);
}

}  // namespace swinseg
