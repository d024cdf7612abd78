#include "swinseg/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "swinseg/rng.hpp"

namespace swinseg {

namespace {

constexpr int kSide = 256;

struct Blob {
    bool rect = false;
    double cx = 0, cy = 0;   // center
    double a = 0, b = 0;     // semi-axes
    double angle = 0;        // rotation, radians
    float level = 0;         // intensity plateau
};

// Soft occupancy in [0,1]: 1 deep inside, 0 outside, linear ramp of ~2 px
// around the nominal outline. alpha >= 0.5 is exactly the nominal shape.
double blob_alpha(const Blob& s, double x, double y) {
    const double dx = x - s.cx, dy = y - s.cy;
    const double c = std::cos(s.angle), sn = std::sin(s.angle);
    const double u = dx * c + dy * sn;
    const double v = -dx * sn + dy * c;
    // Normalized radial coordinate: 1 on the outline for both shapes.
    const double r = s.rect ? std::max(std::abs(u) / s.a, std::abs(v) / s.b)
                            : std::sqrt(u * u / (s.a * s.a) + v * v / (s.b * s.b));
    const double edge = 2.0 / std::min(s.a, s.b);  // ~2 px of soft edge
    return std::clamp((1.0 - r) / edge + 0.5, 0.0, 1.0);
}

Blob random_blob(Rng& rng, double area_lo, double area_hi) {
    Blob s;
    s.rect = rng.bernoulli(0.5);
    const double area = rng.uniform(area_lo, area_hi) * kSide * kSide;
    const double aspect = rng.uniform(0.5, 2.0);
    // ellipse area = pi*a*b; rectangle area = 4*a*b; b = a/aspect.
    const double k = s.rect ? 4.0 : M_PI;
    s.a = std::sqrt(area * aspect / k);
    s.b = s.a / aspect;
    const double m = std::max(s.a, s.b) + 4.0;  // keep the soft edge inside
    s.cx = rng.uniform(m, kSide - m);
    s.cy = rng.uniform(m, kSide - m);
    s.angle = rng.uniform(0.0, M_PI);
    s.level = static_cast<float>(rng.uniform(0.55, 0.9));
    return s;
}

}  // namespace

CaseRecord gen_synthetic_case(uint64_t seed) {
    Rng rng(Rng::mix(0x5E17C0DEull, seed));

    std::vector<float> img(static_cast<size_t>(kSide) * kSide);
    const float base = static_cast<float>(rng.uniform(0.1, 0.25));
    for (auto& v : img) v = base + static_cast<float>(rng.uniform(0.0, 0.08));

    // Target blob: area within [5%, 30%] of the image (tighter than the
    // admissible [1%, 40%] envelope so every case is comfortably learnable).
    const Blob target = random_blob(rng, 0.05, 0.30);

    // 0-2 distractors with the same appearance but no label; rejection-sample
    // centers so they never touch the target.
    std::vector<Blob> distractors;
    const int want = static_cast<int>(rng.uniform_int(3));
    for (int i = 0; i < want; ++i) {
        for (int attempt = 0; attempt < 50; ++attempt) {
            Blob d = random_blob(rng, 0.01, 0.08);
            const double gap = std::hypot(d.cx - target.cx, d.cy - target.cy);
            const double reach = std::max(target.a, target.b) + std::max(d.a, d.b) + 6.0;
            if (gap > reach) {
                distractors.push_back(d);
                break;
            }
        }
    }

    auto paint = [&](const Blob& s) {
        for (int y = 0; y < kSide; ++y)
            for (int x = 0; x < kSide; ++x) {
                const double al = blob_alpha(s, x + 0.5, y + 0.5);
                if (al <= 0.0) continue;
                float& px = img[static_cast<size_t>(y) * kSide + x];
                px = static_cast<float>(px * (1.0 - al) + s.level * al);
            }
    };
    for (const Blob& d : distractors) paint(d);
    paint(target);

    std::vector<uint8_t> gt(img.size(), 0);
    int64_t x_min = kSide, x_max = -1, y_min = kSide, y_max = -1;
    for (int y = 0; y < kSide; ++y)
        for (int x = 0; x < kSide; ++x)
            if (blob_alpha(target, x + 0.5, y + 0.5) >= 0.5) {
                gt[static_cast<size_t>(y) * kSide + x] = 1;
                x_min = std::min<int64_t>(x_min, x);
                x_max = std::max<int64_t>(x_max, x);
                y_min = std::min<int64_t>(y_min, y);
                y_max = std::max<int64_t>(y_max, y);
            }

    std::vector<uint8_t> pixels(img.size());
    for (size_t i = 0; i < img.size(); ++i)
        pixels[i] = static_cast<uint8_t>(std::lround(std::clamp(img[i], 0.0f, 1.0f) * 255.0f));

    CaseRecord rec;
    rec.image = make_npy_u8({kSide, kSide}, pixels);
    rec.gts = make_npy_u8({kSide, kSide}, gt);
    rec.boxes.push_back(Box2d{static_cast<double>(x_min), static_cast<double>(y_min),
                              static_cast<double>(x_max + 1), static_cast<double>(y_max + 1)});
    rec.height = kSide;
    rec.width = kSide;
    return rec;
}

Npz synthetic_case_npz(uint64_t seed) {
    const CaseRecord rec = gen_synthetic_case(seed);
    Npz npz;
    npz.add("imgs", rec.image);
    npz.add("gts", *rec.gts);
    const Box2d& b = rec.boxes[0];
    npz.add("boxes", make_npy_f64({1, 4}, {b.x1, b.y1, b.x2, b.y2}));
    return npz;
}

}  // namespace swinseg
