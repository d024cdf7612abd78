#include "swinseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "swinseg/errors.hpp"

namespace swinseg {

double dsc(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    if (a.size() != b.size()) throw DimError("dsc: mask size mismatch");
    int64_t inter = 0, sa = 0, sb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const bool pa = a[i] != 0, pb = b[i] != 0;
        inter += pa && pb;
        sa += pa;
        sb += pb;
    }
    if (sa + sb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(sa + sb);
}

std::vector<int64_t> boundary_pixels(const std::vector<uint8_t>& mask, int64_t h, int64_t w) {
    std::vector<int64_t> out;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            if (!mask[y * w + x]) continue;
            const bool interior = y > 0 && mask[(y - 1) * w + x] && y + 1 < h &&
                                  mask[(y + 1) * w + x] && x > 0 && mask[y * w + x - 1] &&
                                  x + 1 < w && mask[y * w + x + 1];
            if (!interior) out.push_back(y * w + x);
        }
    return out;
}

namespace {

constexpr int64_t kInf = std::numeric_limits<int64_t>::max() / 4;

// 1-D squared-distance lower envelope (Felzenszwalb-Huttenlocher). f holds
// squared column distances; all values integers or kInf, so equal final
// distances cannot be split by floating-point intersection error.
void edt_1d(const std::vector<int64_t>& f, std::vector<int64_t>& d, int64_t n,
            std::vector<int64_t>& v, std::vector<double>& z) {
    int64_t k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int64_t q = 1; q < n; ++q) {
        if (f[q] >= kInf) continue;
        while (true) {
            if (f[v[k]] >= kInf) {
                // Degenerate leading parabola at infinity: replace it.
                if (k == 0) {
                    v[0] = q;
                    break;
                }
                --k;
                continue;
            }
            const double s = (static_cast<double>(f[q] - f[v[k]]) +
                              static_cast<double>(q * q - v[k] * v[k])) /
                             (2.0 * static_cast<double>(q - v[k]));
            if (s <= z[k]) {
                --k;
                continue;
            }
            ++k;
            v[k] = q;
            z[k] = s;
            z[k + 1] = std::numeric_limits<double>::infinity();
            break;
        }
    }
    int64_t k2 = 0;
    for (int64_t q = 0; q < n; ++q) {
        while (z[k2 + 1] < static_cast<double>(q)) ++k2;
        d[q] = f[v[k2]] >= kInf ? kInf : (q - v[k2]) * (q - v[k2]) + f[v[k2]];
    }
}

}  // namespace

std::vector<int64_t> squared_edt(const std::vector<uint8_t>& seeds, int64_t h, int64_t w) {
    bool any = false;
    for (uint8_t v : seeds) any = any || v;
    if (!any) return std::vector<int64_t>(static_cast<size_t>(h) * w, -1);

    // Column pass: squared vertical distance to the nearest seed in-column.
    std::vector<int64_t> col(static_cast<size_t>(h) * w, kInf);
    for (int64_t x = 0; x < w; ++x) {
        int64_t last = -kInf;
        for (int64_t y = 0; y < h; ++y) {
            if (seeds[y * w + x]) last = y;
            if (last > -kInf) col[y * w + x] = (y - last) * (y - last);
        }
        last = kInf;
        for (int64_t y = h - 1; y >= 0; --y) {
            if (seeds[y * w + x]) last = y;
            if (last < kInf) col[y * w + x] = std::min(col[y * w + x], (last - y) * (last - y));
        }
    }

    // Row pass: lower envelope over columns.
    std::vector<int64_t> out(static_cast<size_t>(h) * w, kInf);
    std::vector<int64_t> f(w), d(w), v(w);
    std::vector<double> z(w + 1);
    for (int64_t y = 0; y < h; ++y) {
        bool row_any = false;
        for (int64_t x = 0; x < w; ++x) {
            f[x] = col[y * w + x];
            row_any = row_any || f[x] < kInf;
        }
        if (!row_any) continue;  // handled below: all rows see some seed via columns
        edt_1d(f, d, w, v, z);
        for (int64_t x = 0; x < w; ++x) out[y * w + x] = d[x];
    }
    return out;
}

double nsd(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b, int64_t h, int64_t w,
           double tol_px) {
    if (a.size() != b.size() || static_cast<int64_t>(a.size()) != h * w)
        throw DimError("nsd: mask size mismatch");
    const auto ba = boundary_pixels(a, h, w);
    const auto bb = boundary_pixels(b, h, w);
    if (ba.empty() && bb.empty()) return 1.0;
    if (ba.empty() || bb.empty()) return 0.0;

    std::vector<uint8_t> seed_a(a.size(), 0), seed_b(b.size(), 0);
    for (int64_t i : ba) seed_a[i] = 1;
    for (int64_t i : bb) seed_b[i] = 1;
    const auto dist_to_b = squared_edt(seed_b, h, w);
    const auto dist_to_a = squared_edt(seed_a, h, w);

    // Compare in exact integers: d^2 <= tol^2 (tolerance squared rounded to
    // the representable comparison value).
    const double tol2 = tol_px * tol_px;
    int64_t ok = 0;
    for (int64_t i : ba) ok += static_cast<double>(dist_to_b[i]) <= tol2;
    for (int64_t i : bb) ok += static_cast<double>(dist_to_a[i]) <= tol2;
    return static_cast<double>(ok) / static_cast<double>(ba.size() + bb.size());
}

double nsd_bruteforce(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b, int64_t h,
                      int64_t w, double tol_px) {
    const auto ba = boundary_pixels(a, h, w);
    const auto bb = boundary_pixels(b, h, w);
    if (ba.empty() && bb.empty()) return 1.0;
    if (ba.empty() || bb.empty()) return 0.0;
    const double tol2 = tol_px * tol_px;
    auto within = [&](int64_t p, const std::vector<int64_t>& other) {
        const int64_t py = p / w, px = p % w;
        int64_t best = kInf;
        for (int64_t q : other) {
            const int64_t dy = py - q / w, dx = px - q % w;
            best = std::min(best, dy * dy + dx * dx);
        }
        return static_cast<double>(best) <= tol2;
    };
    int64_t ok = 0;
    for (int64_t p : ba) ok += within(p, bb);
    for (int64_t p : bb) ok += within(p, ba);
    return static_cast<double>(ok) / static_cast<double>(ba.size() + bb.size());
}

double EvalReport::mean_dsc() const {
    if (rows.empty()) return 0.0;
    double s = 0;
    for (const EvalRow& r : rows) s += r.dsc;
    return s / static_cast<double>(rows.size());
}

double EvalReport::mean_nsd() const {
    if (rows.empty()) return 0.0;
    double s = 0;
    for (const EvalRow& r : rows) s += r.nsd;
    return s / static_cast<double>(rows.size());
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "case_id,dsc,nsd,seconds\n";
    os.setf(std::ios::fixed);
    os.precision(6);
    for (const EvalRow& r : rows)
        os << r.case_id << "," << r.dsc << "," << r.nsd << "," << r.seconds << "\n";
    return os.str();
}

std::string EvalReport::summary_json() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(6);
    double secs = 0;
    for (const EvalRow& r : rows) secs += r.seconds;
    os << "{\n  \"cases\": " << rows.size() << ",\n  \"mean_dsc\": " << mean_dsc()
       << ",\n  \"mean_nsd\": " << mean_nsd() << ",\n  \"total_seconds\": " << secs << "\n}\n";
    return os.str();
}

}  // namespace swinseg
