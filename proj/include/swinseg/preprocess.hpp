#pragma once

// Converts raw case images and boxes into normalized 3xSxS model inputs.
// Pipeline: percentile-normalize at original resolution, resize so the longest
// side hits the target, zero-pad right/bottom to square. Boxes follow the same
// geometry (floor min corner, ceil max corner).

#include <optional>
#include <vector>

#include "swinseg/dataio.hpp"
#include "swinseg/rng.hpp"

namespace swinseg {

struct PreparedInput {
    int img_size = 256;
    std::vector<float> image;  // (3, S, S) row-major, values in [0,1]
    double scale = 1.0;
    int64_t pad_right = 0, pad_bottom = 0;
    std::vector<Box2d> boxes;  // mapped into S-space
    int64_t orig_h = 0, orig_w = 0;
};

// Linear-interpolation percentile (rank q/100 * (n-1)) of a value list.
double percentile(std::vector<double> values, double q);

// Clips the buffer to its [0.5, 99.5] percentile range, then min-max scales
// to [0,1]. A constant buffer maps to all zeros.
void normalize_intensity(std::vector<float>& values);

// Bilinear resize of a (C,H,W) buffer (half-pixel centers, edge clamp).
std::vector<float> resize_bilinear_chw(const std::vector<float>& src, int64_t c, int64_t h,
                                       int64_t w, int64_t nh, int64_t nw);

// Label values of one gt slice as int64 regardless of the stored dtype.
std::vector<int64_t> gt_slice(const NpyArray& gts, bool is_3d, int64_t slice_idx);

// Binary target mask for one box (original resolution): the most frequent
// non-zero label inside the box footprint; all zeros when the footprint has
// no labels. Box coordinates are in original pixel space.
std::vector<uint8_t> gt_mask_for_box(const std::vector<int64_t>& labels, int64_t h, int64_t w,
                                     const Box2d& box);

// Nearest-neighbor resize of a binary (H,W) mask using the same half-pixel
// geometry as the image resize, then zero-pad to (S,S).
std::vector<uint8_t> prepare_gt(const std::vector<uint8_t>& mask, int64_t h, int64_t w,
                                double scale, int img_size);

// Uniform slice sampling; restricted to slices with non-empty ground truth
// when the case carries one. 2D cases always return 0.
int64_t sample_slice(const CaseRecord& rec, Rng& rng);

// Full preprocessing for one case (slice_idx required iff the image is 3D).
PreparedInput prepare_case(const CaseRecord& rec, std::optional<int64_t> slice_idx,
                           int img_size = 256);

// In-place flips of a prepared input (and optional gt of the same size).
void flip_horizontal(PreparedInput& p, std::vector<uint8_t>* gt);
void flip_vertical(PreparedInput& p, std::vector<uint8_t>* gt);
// Applies each flip independently with p=0.5 (horizontal drawn first).
void random_flip(PreparedInput& p, std::vector<uint8_t>* gt, Rng& rng);

}  // namespace swinseg
