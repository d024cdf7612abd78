#pragma once

// NPY v1.0 / NPZ (ZIP-of-NPY) reading and writing, case archives, and
// checkpoint containers. Readers accept STORED and DEFLATE entries; the
// writer emits STORED with fixed timestamps so identical content always
// produces identical bytes.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "swinseg/errors.hpp"
#include "swinseg/tensor.hpp"

namespace swinseg {

// ---------------------------------------------------------------------------
// NPY arrays
// ---------------------------------------------------------------------------

struct NpyArray {
    enum class Dtype { F32, F64, U8, I64 };

    Dtype dtype = Dtype::F32;
    Shape shape;
    std::vector<uint8_t> raw;  // little-endian payload, row-major

    int64_t numel() const { return shape_numel(shape); }
    size_t itemsize() const;

    const float* f32() const;
    const double* f64() const;
    const uint8_t* u8() const;
    const int64_t* i64() const;

    // Lossy view as doubles regardless of dtype (for boxes/spacing).
    std::vector<double> to_doubles() const;
};

NpyArray make_npy_f32(Shape shape, const std::vector<float>& data);
NpyArray make_npy_f64(Shape shape, const std::vector<double>& data);
NpyArray make_npy_u8(Shape shape, const std::vector<uint8_t>& data);
NpyArray make_npy_i64(Shape shape, const std::vector<int64_t>& data);

// Serializes to NPY v1.0 (data begins at a 64-byte-aligned offset).
std::vector<uint8_t> write_npy(const NpyArray& arr);
// Parses NPY v1.0 bytes; throws FormatError with an offset on malformed input.
NpyArray read_npy(const uint8_t* bytes, size_t len);
inline NpyArray read_npy(const std::vector<uint8_t>& b) { return read_npy(b.data(), b.size()); }

// ---------------------------------------------------------------------------
// ZIP container (raw entries)
// ---------------------------------------------------------------------------

struct ZipEntry {
    std::string name;
    std::vector<uint8_t> data;
};

// Reads all entries of a ZIP archive (STORED or DEFLATE), CRC-checked.
std::vector<ZipEntry> zip_read(const std::vector<uint8_t>& bytes);
std::vector<ZipEntry> zip_read_file(const std::string& path);

// Writes a ZIP archive with STORED entries and fixed timestamps.
std::vector<uint8_t> zip_write(const std::vector<ZipEntry>& entries);
void zip_write_file(const std::string& path, const std::vector<ZipEntry>& entries);

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);

// ---------------------------------------------------------------------------
// NPZ (named NPY arrays in a ZIP)
// ---------------------------------------------------------------------------

// Ordered name -> array map; insertion order is preserved on write.
struct Npz {
    std::vector<std::pair<std::string, NpyArray>> items;
    // Non-array entries (e.g. a JSON config) carried alongside the arrays.
    std::vector<ZipEntry> extras;

    bool has(const std::string& name) const;
    const NpyArray& at(const std::string& name) const;
    void add(const std::string& name, NpyArray arr);
    const ZipEntry* extra(const std::string& name) const;
};

Npz npz_read_file(const std::string& path);
void npz_write_file(const std::string& path, const Npz& npz);

// ---------------------------------------------------------------------------
// Case records
// ---------------------------------------------------------------------------

struct Box2d {
    double x1, y1, x2, y2;
};

struct CaseRecord {
    NpyArray image;                // u8 or f32; HxW, HxWx3, or DxHxW
    std::optional<NpyArray> gts;   // integer labels, same spatial shape
    std::vector<Box2d> boxes;      // original pixel coordinates
    std::optional<std::vector<double>> spacing;

    bool is_3d = false;   // DxHxW volume
    bool is_rgb = false;  // HxWx3
    int64_t depth = 1, height = 0, width = 0;
    int clipped_boxes = 0;  // boxes adjusted to fit image bounds
};

// Loads and validates a case archive. Requires entry "imgs"; "gts", "boxes",
// and "spacing" are optional. Boxes are clipped to image bounds (counted);
// zero-area boxes raise ValidationError.
CaseRecord read_case_npz(const std::string& path);
CaseRecord case_from_npz(const Npz& npz, const std::string& origin);

}  // namespace swinseg
