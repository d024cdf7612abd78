#pragma once

// Deterministic synthetic 2D cases: soft-edged ellipse/rectangle blobs on a
// noise background, one labeled target with a tight bounding box, and up to
// two unlabeled distractors.

#include <cstdint>

#include "swinseg/dataio.hpp"

namespace swinseg {

// Fully determined by the seed. The ground truth holds exactly one label (1)
// and is never empty; the single box is the tight bounding box of the label.
CaseRecord gen_synthetic_case(uint64_t seed);

// The same case as an on-disk archive ("imgs", "gts", "boxes").
Npz synthetic_case_npz(uint64_t seed);

}  // namespace swinseg
