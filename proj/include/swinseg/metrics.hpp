#pragma once

// Evaluation metrics: Dice similarity and normalized surface distance with an
// exact integer squared-Euclidean distance transform, plus the brute-force
// oracle used for verification and report serialization.

#include <cstdint>
#include <string>
#include <vector>

namespace swinseg {

// 2|A n B| / (|A| + |B|); both empty -> 1.
double dsc(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b);

// Boundary pixels: mask pixels with a 4-neighbor outside the mask (the image
// border counts as outside). Returns flat indices.
std::vector<int64_t> boundary_pixels(const std::vector<uint8_t>& mask, int64_t h, int64_t w);

// Exact squared Euclidean distance to the nearest seed pixel; -1 when there
// are no seeds.
std::vector<int64_t> squared_edt(const std::vector<uint8_t>& seeds, int64_t h, int64_t w);

// Fraction of boundary pixels of each mask within tol of the other's
// boundary. Both empty -> 1; exactly one empty -> 0.
double nsd(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b, int64_t h, int64_t w,
           double tol_px = 2.0);

// O(|dA| * |dB|) reference implementation for verification.
double nsd_bruteforce(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b, int64_t h,
                      int64_t w, double tol_px = 2.0);

struct EvalRow {
    std::string case_id;
    double dsc = 0.0, nsd = 0.0, seconds = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_dsc() const;
    double mean_nsd() const;
    std::string to_csv() const;  // case_id,dsc,nsd,seconds
    std::string summary_json() const;
};

}  // namespace swinseg
