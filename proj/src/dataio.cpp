#include "swinseg/dataio.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>

namespace swinseg {

// ---------------------------------------------------------------------------
// NpyArray accessors
// ---------------------------------------------------------------------------

size_t NpyArray::itemsize() const {
    switch (dtype) {
        case Dtype::F32: return 4;
        case Dtype::F64: return 8;
        case Dtype::U8: return 1;
        case Dtype::I64: return 8;
    }
    return 0;
}

namespace {

template <typename T>
const T* typed_ptr(const NpyArray& a, NpyArray::Dtype want, const char* name) {
    if (a.dtype != want)
        throw ContractError(std::string("array accessed as ") + name + " but holds another dtype");
    return reinterpret_cast<const T*>(a.raw.data());
}

std::string dtype_tag(NpyArray::Dtype d) {
    switch (d) {
        case NpyArray::Dtype::F32: return "<f4";
        case NpyArray::Dtype::F64: return "<f8";
        case NpyArray::Dtype::U8: return "|u1";
        case NpyArray::Dtype::I64: return "<i8";
    }
    return "";
}

}  // namespace

const float* NpyArray::f32() const { return typed_ptr<float>(*this, Dtype::F32, "f32"); }
const double* NpyArray::f64() const { return typed_ptr<double>(*this, Dtype::F64, "f64"); }
const uint8_t* NpyArray::u8() const { return typed_ptr<uint8_t>(*this, Dtype::U8, "u8"); }
const int64_t* NpyArray::i64() const { return typed_ptr<int64_t>(*this, Dtype::I64, "i64"); }

std::vector<double> NpyArray::to_doubles() const {
    std::vector<double> out(static_cast<size_t>(numel()));
    switch (dtype) {
        case Dtype::F32:
            for (int64_t i = 0; i < numel(); ++i) out[i] = f32()[i];
            break;
        case Dtype::F64:
            for (int64_t i = 0; i < numel(); ++i) out[i] = f64()[i];
            break;
        case Dtype::U8:
            for (int64_t i = 0; i < numel(); ++i) out[i] = u8()[i];
            break;
        case Dtype::I64:
            for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<double>(i64()[i]);
            break;
    }
    return out;
}

namespace {

template <typename T>
NpyArray make_npy(Shape shape, const std::vector<T>& data, NpyArray::Dtype dt) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
        throw DimError("npy data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
    NpyArray a;
    a.dtype = dt;
    a.shape = std::move(shape);
    a.raw.resize(data.size() * sizeof(T));
    std::memcpy(a.raw.data(), data.data(), a.raw.size());
    return a;
}

}  // namespace

NpyArray make_npy_f32(Shape shape, const std::vector<float>& d) {
    return make_npy(std::move(shape), d, NpyArray::Dtype::F32);
}
NpyArray make_npy_f64(Shape shape, const std::vector<double>& d) {
    return make_npy(std::move(shape), d, NpyArray::Dtype::F64);
}
NpyArray make_npy_u8(Shape shape, const std::vector<uint8_t>& d) {
    return make_npy(std::move(shape), d, NpyArray::Dtype::U8);
}
NpyArray make_npy_i64(Shape shape, const std::vector<int64_t>& d) {
    return make_npy(std::move(shape), d, NpyArray::Dtype::I64);
}

// ---------------------------------------------------------------------------
// NPY v1.0 serialization
// ---------------------------------------------------------------------------

std::vector<uint8_t> write_npy(const NpyArray& arr) {
    std::string shape_s = "(";
    for (size_t i = 0; i < arr.shape.size(); ++i) {
        shape_s += std::to_string(arr.shape[i]);
        if (arr.shape.size() == 1 || i + 1 < arr.shape.size()) shape_s += ",";
        if (i + 1 < arr.shape.size()) shape_s += " ";
    }
    shape_s += ")";
    std::string header = "{'descr': '" + dtype_tag(arr.dtype) +
                         "', 'fortran_order': False, 'shape': " + shape_s + ", }";
    // Pad with spaces so that 10 + len(header) + 1 is a multiple of 64.
    const size_t unpadded = 10 + header.size() + 1;
    const size_t padded = (unpadded + 63) / 64 * 64;
    header.append(padded - unpadded, ' ');
    header += '\n';

    std::vector<uint8_t> out;
    out.reserve(10 + header.size() + arr.raw.size());
    out.assign({0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0});
    const uint16_t hlen = static_cast<uint16_t>(header.size());
    out.push_back(static_cast<uint8_t>(hlen & 0xFF));
    out.push_back(static_cast<uint8_t>(hlen >> 8));
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), arr.raw.begin(), arr.raw.end());
    return out;
}

namespace {

[[noreturn]] void npy_fail(const std::string& what, size_t offset) {
    throw FormatError("npy: " + what + " (offset " + std::to_string(offset) + ")");
}

// Finds `key` in the header dict and returns the value substring following it.
std::string header_value(const std::string& h, const std::string& key) {
    const std::string quoted = "'" + key + "'";
    size_t p = h.find(quoted);
    if (p == std::string::npos) npy_fail("header missing key " + key, 0);
    p = h.find(':', p);
    if (p == std::string::npos) npy_fail("malformed header near " + key, 0);
    ++p;
    while (p < h.size() && h[p] == ' ') ++p;
    return h.substr(p);
}

}  // namespace

NpyArray read_npy(const uint8_t* bytes, size_t len) {
    if (len < 10) npy_fail("truncated preamble", len);
    const uint8_t magic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
    if (std::memcmp(bytes, magic, 6) != 0) npy_fail("bad magic", 0);
    if (bytes[6] != 1) npy_fail("unsupported version " + std::to_string(bytes[6]), 6);
    const uint16_t hlen = static_cast<uint16_t>(bytes[8] | (bytes[9] << 8));
    if (10 + static_cast<size_t>(hlen) > len) npy_fail("truncated header", 10);
    const std::string header(reinterpret_cast<const char*>(bytes + 10), hlen);

    NpyArray arr;
    const std::string descr = header_value(header, "descr");
    if (descr.rfind("'<f4'", 0) == 0)
        arr.dtype = NpyArray::Dtype::F32;
    else if (descr.rfind("'<f8'", 0) == 0)
        arr.dtype = NpyArray::Dtype::F64;
    else if (descr.rfind("'|u1'", 0) == 0 || descr.rfind("'<u1'", 0) == 0)
        arr.dtype = NpyArray::Dtype::U8;
    else if (descr.rfind("'<i8'", 0) == 0)
        arr.dtype = NpyArray::Dtype::I64;
    else
        npy_fail("unsupported dtype " + descr.substr(0, descr.find(',')), 10);

    const std::string forder = header_value(header, "fortran_order");
    if (forder.rfind("False", 0) != 0) {
        if (forder.rfind("True", 0) == 0) npy_fail("fortran order not supported", 10);
        npy_fail("malformed fortran_order", 10);
    }

    std::string shape_v = header_value(header, "shape");
    const size_t open = shape_v.find('(');
    const size_t close = shape_v.find(')');
    if (open == std::string::npos || close == std::string::npos || close < open)
        npy_fail("malformed shape tuple", 10);
    std::string tuple = shape_v.substr(open + 1, close - open - 1);
    arr.shape.clear();
    size_t pos = 0;
    while (pos < tuple.size()) {
        while (pos < tuple.size() && (tuple[pos] == ' ' || tuple[pos] == ',')) ++pos;
        if (pos >= tuple.size()) break;
        size_t end = pos;
        while (end < tuple.size() && isdigit(static_cast<unsigned char>(tuple[end]))) ++end;
        if (end == pos) npy_fail("malformed shape tuple", 10 + pos);
        arr.shape.push_back(std::stoll(tuple.substr(pos, end - pos)));
        pos = end;
    }

    const size_t data_off = 10 + hlen;
    const size_t expect = static_cast<size_t>(arr.numel()) * arr.itemsize();
    if (len - data_off != expect)
        npy_fail("payload size mismatch: expected " + std::to_string(expect) + " bytes, have " +
                     std::to_string(len - data_off),
                 data_off);
    arr.raw.assign(bytes + data_off, bytes + len);
    return arr;
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open file: " + path);
    f.seekg(0, std::ios::end);
    const std::streamoff n = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(n));
    f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw FormatError("short read: " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open file for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("short write: " + path);
}

// ---------------------------------------------------------------------------
// ZIP container
// ---------------------------------------------------------------------------

namespace {

uint16_t rd16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }
uint32_t rd32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
void wr16(std::vector<uint8_t>& v, uint16_t x) {
    v.push_back(static_cast<uint8_t>(x & 0xFF));
    v.push_back(static_cast<uint8_t>(x >> 8));
}
void wr32(std::vector<uint8_t>& v, uint32_t x) {
    for (int i = 0; i < 4; ++i) v.push_back(static_cast<uint8_t>((x >> (8 * i)) & 0xFF));
}

std::vector<uint8_t> inflate_raw(const uint8_t* src, size_t src_len, size_t dst_len) {
    std::vector<uint8_t> out(dst_len);
    z_stream zs{};
    if (inflateInit2(&zs, -15) != Z_OK) throw FormatError("zip: inflate init failed");
    zs.next_in = const_cast<Bytef*>(src);
    zs.avail_in = static_cast<uInt>(src_len);
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(dst_len);
    const int rc = inflate(&zs, Z_FINISH);
    inflateEnd(&zs);
    if (rc != Z_STREAM_END || zs.total_out != dst_len)
        throw FormatError("zip: deflate stream corrupt or size mismatch");
    return out;
}

constexpr uint32_t kLocalSig = 0x04034b50;
constexpr uint32_t kCentralSig = 0x02014b50;
constexpr uint32_t kEocdSig = 0x06054b50;

}  // namespace

std::vector<ZipEntry> zip_read(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 22) throw FormatError("zip: too small for end-of-central-directory");
    // Scan backwards for EOCD (comment may follow it).
    size_t eocd = std::string::npos;
    const size_t lo = bytes.size() >= 22 + 65535 ? bytes.size() - 22 - 65535 : 0;
    for (size_t i = bytes.size() - 22 + 1; i-- > lo;) {
        if (rd32(bytes.data() + i) == kEocdSig) {
            eocd = i;
            break;
        }
    }
    if (eocd == std::string::npos) throw FormatError("zip: end-of-central-directory not found");
    const uint16_t count = rd16(bytes.data() + eocd + 10);
    const uint32_t cd_off = rd32(bytes.data() + eocd + 16);

    std::vector<ZipEntry> entries;
    size_t p = cd_off;
    for (uint16_t e = 0; e < count; ++e) {
        if (p + 46 > bytes.size() || rd32(bytes.data() + p) != kCentralSig)
            throw FormatError("zip: corrupt central directory at " + std::to_string(p));
        const uint16_t method = rd16(bytes.data() + p + 10);
        const uint32_t crc = rd32(bytes.data() + p + 16);
        const uint32_t csize = rd32(bytes.data() + p + 20);
        const uint32_t usize = rd32(bytes.data() + p + 24);
        const uint16_t nlen = rd16(bytes.data() + p + 28);
        const uint16_t xlen = rd16(bytes.data() + p + 30);
        const uint16_t clen = rd16(bytes.data() + p + 32);
        const uint32_t lho = rd32(bytes.data() + p + 42);
        std::string name(reinterpret_cast<const char*>(bytes.data() + p + 46), nlen);
        p += 46 + nlen + xlen + clen;

        if (lho + 30 > bytes.size() || rd32(bytes.data() + lho) != kLocalSig)
            throw FormatError("zip: corrupt local header for entry " + name);
        const uint16_t lnlen = rd16(bytes.data() + lho + 26);
        const uint16_t lxlen = rd16(bytes.data() + lho + 28);
        const size_t doff = lho + 30 + lnlen + lxlen;
        if (doff + csize > bytes.size())
            throw FormatError("zip: truncated payload for entry " + name);

        ZipEntry entry;
        entry.name = std::move(name);
        if (method == 0) {
            if (csize != usize) throw FormatError("zip: stored entry size mismatch: " + entry.name);
            entry.data.assign(bytes.begin() + doff, bytes.begin() + doff + csize);
        } else if (method == 8) {
            entry.data = inflate_raw(bytes.data() + doff, csize, usize);
        } else {
            throw FormatError("zip: unsupported compression method " + std::to_string(method) +
                              " for entry " + entry.name);
        }
        const uint32_t actual =
            crc32(0, entry.data.data(), static_cast<uInt>(entry.data.size()));
        if (actual != crc) throw FormatError("zip: crc mismatch for entry " + entry.name);
        entries.push_back(std::move(entry));
    }
    return entries;
}

std::vector<ZipEntry> zip_read_file(const std::string& path) {
    return zip_read(read_file_bytes(path));
}

std::vector<uint8_t> zip_write(const std::vector<ZipEntry>& entries) {
    std::vector<uint8_t> out;
    struct Central {
        std::string name;
        uint32_t crc, size, offset;
    };
    std::vector<Central> centrals;
    for (const auto& e : entries) {
        const uint32_t off = static_cast<uint32_t>(out.size());
        const uint32_t crc = crc32(0, e.data.data(), static_cast<uInt>(e.data.size()));
        const uint32_t size = static_cast<uint32_t>(e.data.size());
        wr32(out, kLocalSig);
        wr16(out, 20);      // version needed
        wr16(out, 0);       // flags
        wr16(out, 0);       // method: stored
        wr16(out, 0);       // mod time (fixed for determinism)
        wr16(out, 0x0021);  // mod date: 1980-01-01
        wr32(out, crc);
        wr32(out, size);
        wr32(out, size);
        wr16(out, static_cast<uint16_t>(e.name.size()));
        wr16(out, 0);  // extra len
        out.insert(out.end(), e.name.begin(), e.name.end());
        out.insert(out.end(), e.data.begin(), e.data.end());
        centrals.push_back({e.name, crc, size, off});
    }
    const uint32_t cd_off = static_cast<uint32_t>(out.size());
    for (const auto& c : centrals) {
        wr32(out, kCentralSig);
        wr16(out, 20);  // version made by
        wr16(out, 20);  // version needed
        wr16(out, 0);
        wr16(out, 0);
        wr16(out, 0);
        wr16(out, 0x0021);
        wr32(out, c.crc);
        wr32(out, c.size);
        wr32(out, c.size);
        wr16(out, static_cast<uint16_t>(c.name.size()));
        wr16(out, 0);  // extra
        wr16(out, 0);  // comment
        wr16(out, 0);  // disk number
        wr16(out, 0);  // internal attrs
        wr32(out, 0);  // external attrs
        wr32(out, c.offset);
        out.insert(out.end(), c.name.begin(), c.name.end());
    }
    const uint32_t cd_size = static_cast<uint32_t>(out.size()) - cd_off;
    wr32(out, kEocdSig);
    wr16(out, 0);
    wr16(out, 0);
    wr16(out, static_cast<uint16_t>(centrals.size()));
    wr16(out, static_cast<uint16_t>(centrals.size()));
    wr32(out, cd_size);
    wr32(out, cd_off);
    wr16(out, 0);  // comment length
    return out;
}

void zip_write_file(const std::string& path, const std::vector<ZipEntry>& entries) {
    write_file_bytes(path, zip_write(entries));
}

// ---------------------------------------------------------------------------
// NPZ
// ---------------------------------------------------------------------------

bool Npz::has(const std::string& name) const {
    for (const auto& [n, a] : items)
        if (n == name) return true;
    return false;
}

const NpyArray& Npz::at(const std::string& name) const {
    for (const auto& [n, a] : items)
        if (n == name) return a;
    throw FormatError("npz: missing array entry '" + name + "'");
}

void Npz::add(const std::string& name, NpyArray arr) {
    items.emplace_back(name, std::move(arr));
}

const ZipEntry* Npz::extra(const std::string& name) const {
    for (const auto& e : extras)
        if (e.name == name) return &e;
    return nullptr;
}

namespace {

bool looks_like_npy(const std::vector<uint8_t>& data) {
    static const uint8_t magic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
    return data.size() >= 6 && std::memcmp(data.data(), magic, 6) == 0;
}

}  // namespace

Npz npz_read_file(const std::string& path) {
    Npz npz;
    for (auto& e : zip_read_file(path)) {
        if (looks_like_npy(e.data)) {
            std::string name = e.name;
            if (name.size() > 4 && name.substr(name.size() - 4) == ".npy")
                name.resize(name.size() - 4);
            npz.add(name, read_npy(e.data));
        } else {
            npz.extras.push_back(std::move(e));
        }
    }
    return npz;
}

void npz_write_file(const std::string& path, const Npz& npz) {
    std::vector<ZipEntry> entries;
    for (const auto& [name, arr] : npz.items) entries.push_back({name + ".npy", write_npy(arr)});
    for (const auto& e : npz.extras) entries.push_back(e);
    zip_write_file(path, entries);
}

// ---------------------------------------------------------------------------
// Case records
// ---------------------------------------------------------------------------

CaseRecord case_from_npz(const Npz& npz, const std::string& origin) {
    if (!npz.has("imgs")) throw FormatError("case " + origin + ": missing required entry 'imgs'");

    CaseRecord rec;
    rec.image = npz.at("imgs");
    if (rec.image.dtype != NpyArray::Dtype::U8 && rec.image.dtype != NpyArray::Dtype::F32 &&
        rec.image.dtype != NpyArray::Dtype::F64)
        throw ValidationError("case " + origin + ": image must be u8 or float");

    const Shape& s = rec.image.shape;
    if (s.size() == 2) {
        rec.height = s[0];
        rec.width = s[1];
    } else if (s.size() == 3 && s[2] == 3) {
        rec.is_rgb = true;
        rec.height = s[0];
        rec.width = s[1];
    } else if (s.size() == 3) {
        rec.is_3d = true;
        rec.depth = s[0];
        rec.height = s[1];
        rec.width = s[2];
    } else {
        throw ValidationError("case " + origin + ": image shape " + shape_str(s) +
                              " is not HxW, HxWx3, or DxHxW");
    }
    if (rec.height < 1 || rec.width < 1)
        throw ValidationError("case " + origin + ": empty image");

    if (npz.has("gts")) {
        const NpyArray& g = npz.at("gts");
        Shape want = rec.is_3d ? Shape{rec.depth, rec.height, rec.width}
                               : Shape{rec.height, rec.width};
        if (g.shape != want)
            throw ValidationError("case " + origin + ": gts shape " + shape_str(g.shape) +
                                  " does not match image spatial shape " + shape_str(want));
        rec.gts = g;
    }

    if (npz.has("boxes")) {
        const NpyArray& b = npz.at("boxes");
        if (b.shape.size() != 2 || b.shape[1] != 4)
            throw ValidationError("case " + origin + ": boxes must have shape (N, 4), got " +
                                  shape_str(b.shape));
        const std::vector<double> v = b.to_doubles();
        for (int64_t i = 0; i < b.shape[0]; ++i) {
            Box2d box{v[i * 4 + 0], v[i * 4 + 1], v[i * 4 + 2], v[i * 4 + 3]};
            if (!(box.x1 < box.x2) || !(box.y1 < box.y2))
                throw ValidationError("case " + origin + ": degenerate box at index " +
                                      std::to_string(i));
            const Box2d orig = box;
            box.x1 = std::clamp(box.x1, 0.0, static_cast<double>(rec.width));
            box.x2 = std::clamp(box.x2, 0.0, static_cast<double>(rec.width));
            box.y1 = std::clamp(box.y1, 0.0, static_cast<double>(rec.height));
            box.y2 = std::clamp(box.y2, 0.0, static_cast<double>(rec.height));
            if (box.x1 != orig.x1 || box.x2 != orig.x2 || box.y1 != orig.y1 || box.y2 != orig.y2)
                ++rec.clipped_boxes;
            if (!(box.x1 < box.x2) || !(box.y1 < box.y2))
                throw ValidationError("case " + origin + ": box at index " + std::to_string(i) +
                                      " lies entirely outside the image");
            rec.boxes.push_back(box);
        }
    }

    if (npz.has("spacing")) rec.spacing = npz.at("spacing").to_doubles();
    return rec;
}

CaseRecord read_case_npz(const std::string& path) {
    return case_from_npz(npz_read_file(path), path);
}

}  // namespace swinseg
