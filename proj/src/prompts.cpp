#include "swinseg/prompts.hpp"

#include <algorithm>
#include <cmath>

#include "swinseg/errors.hpp"

namespace swinseg {

namespace {

void check_ranges(const ShiftRanges& r) {
    auto ok = [](double lo, double hi) { return lo >= 0.0 && lo <= hi && hi <= 0.5; };
    if (!ok(r.w_lo, r.w_hi) || !ok(r.h_lo, r.h_hi))
        throw ContractError("shrink_box: shift ranges must satisfy 0 <= lo <= hi <= 1/2");
}

void check_box(const Box2d& b) {
    if (!(b.x1 < b.x2) || !(b.y1 < b.y2)) throw ContractError("prompt box is degenerate");
}

// Pixel rows/cols whose centers fall inside [lo, hi].
std::pair<int64_t, int64_t> pixel_span(double lo, double hi, int s) {
    auto first = static_cast<int64_t>(std::ceil(lo - 0.5));
    auto last = static_cast<int64_t>(std::floor(hi - 0.5));
    first = std::max<int64_t>(first, 0);
    last = std::min<int64_t>(last, s - 1);
    return {first, last};
}

}  // namespace

Box2d shrink_box(const Box2d& box, const ShiftRanges& ranges, Rng& rng) {
    check_box(box);
    check_ranges(ranges);
    const double w = box.x2 - box.x1;
    const double h = box.y2 - box.y1;
    const double shift_w = rng.uniform(ranges.w_lo * w, ranges.w_hi * w);
    const double shift_h = rng.uniform(ranges.h_lo * h, ranges.h_hi * h);
    return Box2d{box.x1 + shift_w, box.y1 + shift_h, box.x2 - shift_w, box.y2 - shift_h};
}

std::array<PromptPoint, 4> quadrant_points(const Box2d& box, const float* intensity, int s,
                                           Rng& rng) {
    check_box(box);
    const double cx = 0.5 * (box.x1 + box.x2);
    const double cy = 0.5 * (box.y1 + box.y2);
    // Quadrant bounds in order NW, NE, SW, SE.
    const double qx1[4] = {box.x1, cx, box.x1, cx};
    const double qx2[4] = {cx, box.x2, cx, box.x2};
    const double qy1[4] = {box.y1, box.y1, cy, cy};
    const double qy2[4] = {cy, cy, box.y2, box.y2};

    std::array<PromptPoint, 4> out;
    for (int q = 0; q < 4; ++q) {
        const auto [jx1, jx2] = pixel_span(qx1[q], qx2[q], s);
        const auto [jy1, jy2] = pixel_span(qy1[q], qy2[q], s);
        std::vector<int64_t> candidates;
        for (int64_t iy = jy1; iy <= jy2; ++iy)
            for (int64_t ix = jx1; ix <= jx2; ++ix)
                if (intensity[iy * s + ix] != 0.0f) candidates.push_back(iy * s + ix);
        if (candidates.empty()) {
            out[q] = PromptPoint{0.5 * (qx1[q] + qx2[q]), 0.5 * (qy1[q] + qy2[q]), 1};
        } else {
            const int64_t pick = candidates[rng.uniform_int(candidates.size())];
            out[q] = PromptPoint{static_cast<double>(pick % s) + 0.5,
                                 static_cast<double>(pick / s) + 0.5, 1};
        }
    }
    return out;
}

std::vector<std::pair<int, int>> generate_scribble(const Box2d& box, const float* intensity,
                                                   int s, Rng& rng) {
    check_box(box);
    const auto [jx1, jx2] = pixel_span(box.x1, box.x2, s);
    const auto [jy1, jy2] = pixel_span(box.y1, box.y2, s);
    std::vector<int64_t> candidates;
    for (int64_t iy = jy1; iy <= jy2; ++iy)
        for (int64_t ix = jx1; ix <= jx2; ++ix)
            if (intensity[iy * s + ix] != 0.0f) candidates.push_back(iy * s + ix);
    if (candidates.empty()) return {};

    // Partial Fisher-Yates: the first k entries become the control points.
    const size_t k = std::min<size_t>(4, candidates.size());
    for (size_t i = 0; i < k; ++i) {
        const size_t j = i + static_cast<size_t>(rng.uniform_int(candidates.size() - i));
        std::swap(candidates[i], candidates[j]);
    }
    std::vector<std::pair<int, int>> polyline;
    polyline.reserve(k);
    for (size_t i = 0; i < k; ++i)
        polyline.emplace_back(static_cast<int>(candidates[i] % s),
                              static_cast<int>(candidates[i] / s));
    return polyline;
}

std::vector<uint8_t> rasterize_scribble(const std::vector<std::pair<int, int>>& polyline, int s) {
    std::vector<uint8_t> mask(static_cast<size_t>(s) * s, 0);
    for (const auto& [x, y] : polyline)
        if (x < 0 || x >= s || y < 0 || y >= s)
            throw ContractError("rasterize_scribble: control point outside the grid");
    if (polyline.size() == 1) {
        mask[static_cast<size_t>(polyline[0].second) * s + polyline[0].first] = 1;
        return mask;
    }
    for (size_t i = 0; i + 1 < polyline.size(); ++i) {
        int x0 = polyline[i].first, y0 = polyline[i].second;
        const int x1 = polyline[i + 1].first;
        const int y1 = polyline[i + 1].second;
        const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
        const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            mask[static_cast<size_t>(y0) * s + x0] = 1;
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }
    return mask;
}

PromptSet make_prompts(const Box2d& box, const float* intensity, int s, PromptMode mode,
                       Rng& rng) {
    check_box(box);
    PromptSet ps;
    ps.img_size = s;
    ps.point_box = mode == PromptMode::Infer ? shrink_box(box, kPointShiftRanges, rng) : box;
    ps.scribble_box =
        mode == PromptMode::Infer ? shrink_box(box, kScribbleShiftRanges, rng) : box;

    ps.points = quadrant_points(ps.point_box, intensity, s, rng);
    ps.corners[0] = PromptPoint{box.x1, box.y1, 2};
    ps.corners[1] = PromptPoint{box.x2, box.y2, 3};

    const auto polyline = generate_scribble(ps.scribble_box, intensity, s, rng);
    ps.scribble = rasterize_scribble(polyline, s);
    // Keep only scribble pixels on the object: straight segments between
    // non-zero control points may cross zero-intensity pixels.
    for (int64_t i = 0; i < static_cast<int64_t>(s) * s; ++i)
        if (intensity[i] == 0.0f) ps.scribble[i] = 0;
    return ps;
}

std::vector<float> intensity_plane(const PreparedInput& p) {
    const int64_t n = static_cast<int64_t>(p.img_size) * p.img_size;
    std::vector<float> out(n);
    for (int64_t i = 0; i < n; ++i)
        out[i] = (p.image[i] + p.image[n + i] + p.image[2 * n + i]) / 3.0f;
    return out;
}

}  // namespace swinseg
