#pragma once

// Box-derived prompt generation: four quadrant interior points, the two box
// corners, and a rasterized scribble mask. Training mode samples over the
// whole box; inference mode first shrinks the box (one shift per axis, both
// sides moved inward by the same amount).

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "swinseg/dataio.hpp"
#include "swinseg/preprocess.hpp"
#include "swinseg/rng.hpp"

namespace swinseg {

struct PromptPoint {
    double x = 0.0, y = 0.0;
    int label = 0;  // 1 = interior point, 2 = top-left corner, 3 = bottom-right corner
};

struct PromptSet {
    int img_size = 256;
    std::array<PromptPoint, 4> points;   // order NW, NE, SW, SE; labels all 1
    std::array<PromptPoint, 2> corners;  // (x1,y1) label 2, (x2,y2) label 3
    std::vector<uint8_t> scribble;       // (S,S) binary mask
    // Realized sampling regions (equal to the generating box in train mode).
    Box2d point_box{}, scribble_box{};
};

// Fractions of box width/height each side moves inward; lo <= hi <= 1/2.
struct ShiftRanges {
    double w_lo, w_hi, h_lo, h_hi;
};

inline constexpr ShiftRanges kPointShiftRanges{0.2, 0.4, 0.2, 0.4};
inline constexpr ShiftRanges kScribbleShiftRanges{1.0 / 8.0, 1.0 / 6.0, 1.0 / 8.0, 1.0 / 6.0};

enum class PromptMode { Train, Infer };

// Draws shift_w ~ U(w_lo*w, w_hi*w) and shift_h ~ U(h_lo*h, h_hi*h) (in that
// order) and moves all four sides inward.
Box2d shrink_box(const Box2d& box, const ShiftRanges& ranges, Rng& rng);

// One point per quadrant (NW, NE, SW, SE): uniform over the quadrant's
// non-zero pixels, or the quadrant center if it has none. Returned
// coordinates are pixel centers (ix+0.5, iy+0.5) or the continuous center.
std::array<PromptPoint, 4> quadrant_points(const Box2d& box, const float* intensity, int s,
                                           Rng& rng);

// Up to 4 distinct control pixels on non-zero intensity inside the box, in
// random order (a 3-segment polyline when 4 exist). Empty when the box
// interior has no non-zero pixel.
std::vector<std::pair<int, int>> generate_scribble(const Box2d& box, const float* intensity,
                                                   int s, Rng& rng);

// Bresenham rasterization of consecutive polyline segments into an (S,S)
// binary mask; a single point sets one pixel.
std::vector<uint8_t> rasterize_scribble(const std::vector<std::pair<int, int>>& polyline, int s);

// Full prompt set for one box. Infer mode shrinks the box separately for
// points and scribble; the scribble mask is restricted to non-zero intensity
// so every set pixel lies on the object.
PromptSet make_prompts(const Box2d& box, const float* intensity, int s, PromptMode mode,
                       Rng& rng);

// Mean over the three channels of a prepared image — the single-channel
// intensity all prompt sampling runs on.
std::vector<float> intensity_plane(const PreparedInput& p);

}  // namespace swinseg
