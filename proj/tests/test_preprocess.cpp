#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "swinseg/dataio.hpp"
#include "swinseg/errors.hpp"
#include "swinseg/preprocess.hpp"
#include "swinseg/rng.hpp"

using namespace swinseg;

namespace {

CaseRecord make_case(NpyArray image, std::vector<double> boxes_flat = {},
                     std::optional<NpyArray> gts = std::nullopt) {
    Npz npz;
    npz.add("imgs", std::move(image));
    if (!boxes_flat.empty())
        npz.add("boxes", make_npy_f64({static_cast<int64_t>(boxes_flat.size()) / 4, 4},
                                      boxes_flat));
    if (gts) npz.add("gts", *gts);
    return case_from_npz(npz, "test");
}

}  // namespace

TEST_CASE("percentile matches linear-interpolation reference") {
    std::vector<double> v;
    for (int i = 0; i < 100; ++i) v.push_back(i);
    v.push_back(1000.0);
    CHECK(percentile(v, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(percentile(v, 99.5) == doctest::Approx(549.5).epsilon(1e-12));
    CHECK(percentile(v, 0.0) == doctest::Approx(0.0));
    CHECK(percentile(v, 100.0) == doctest::Approx(1000.0));

    std::vector<double> w;
    for (int i = 0; i < 10; ++i) w.push_back(i);
    CHECK(percentile(w, 37.3) == doctest::Approx(3.357).epsilon(1e-12));
    CHECK_THROWS_AS(percentile({}, 50.0), ContractError);
}

TEST_CASE("normalize_intensity clips percentiles then scales to [0,1]") {
    std::vector<float> v;
    for (int i = 0; i < 100; ++i) v.push_back(static_cast<float>(i));
    v.push_back(1000.0f);
    normalize_intensity(v);
    CHECK(v[0] == doctest::Approx(0.0));
    CHECK(v[1] == doctest::Approx(0.0009107468123861566).epsilon(1e-6));
    CHECK(v[50] == doctest::Approx(0.09016393442622951).epsilon(1e-6));
    CHECK(v[100] == doctest::Approx(1.0));
    for (float x : v) {
        CHECK(x >= 0.0f);
        CHECK(x <= 1.0f);
    }

    // An outlier far above the rest ends up clipped to the same value as the
    // in-range maximum region.
    CHECK(v[100] == doctest::Approx(1.0));

    std::vector<float> flat(64, 7.5f);
    normalize_intensity(flat);
    for (float x : flat) CHECK(x == 0.0f);
}

TEST_CASE("resize_bilinear_chw matches half-pixel-center reference") {
    std::vector<float> src(12);
    for (int i = 0; i < 12; ++i) src[i] = static_cast<float>(i);
    const std::vector<float> out = resize_bilinear_chw(src, 1, 3, 4, 2, 3);
    REQUIRE(out.size() == 6);
    const double expect[6] = {1.1666666666666667, 2.5, 3.833333333333333,
                              7.166666666666667,  8.5, 9.833333333333334};
    for (int i = 0; i < 6; ++i) CHECK(out[i] == doctest::Approx(expect[i]).epsilon(1e-6));

    // Identity resize returns the input.
    const std::vector<float> same = resize_bilinear_chw(src, 1, 3, 4, 3, 4);
    for (int i = 0; i < 12; ++i) CHECK(same[i] == doctest::Approx(src[i]));

    CHECK_THROWS_AS(resize_bilinear_chw(src, 2, 3, 4, 2, 3), DimError);
}

TEST_CASE("prepare_case geometry: scale, pads, and box mapping") {
    // 512x1024 -> scale 0.25 -> 128x256, pad bottom 128.
    {
        std::vector<uint8_t> img(512 * 1024);
        for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<uint8_t>(i % 251);
        CaseRecord rec = make_case(make_npy_u8({512, 1024}, img), {0, 0, 1024, 512});
        PreparedInput p = prepare_case(rec, std::nullopt, 256);
        CHECK(p.scale == doctest::Approx(0.25));
        CHECK(p.pad_right == 0);
        CHECK(p.pad_bottom == 128);
        CHECK(p.orig_h == 512);
        CHECK(p.orig_w == 1024);
        REQUIRE(p.boxes.size() == 1);
        CHECK(p.boxes[0].x1 == 0.0);
        CHECK(p.boxes[0].y1 == 0.0);
        CHECK(p.boxes[0].x2 == 256.0);
        CHECK(p.boxes[0].y2 == 128.0);
        // Padded rows are exactly zero on every channel.
        for (int ch = 0; ch < 3; ++ch)
            for (int i = 128; i < 256; ++i)
                for (int j = 0; j < 256; ++j) REQUIRE(p.image[(ch * 256 + i) * 256 + j] == 0.0f);
    }

    // 100x300 -> 85x256 with floor/ceil box rounding.
    {
        std::vector<uint8_t> img(100 * 300);
        for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<uint8_t>((i * 7) % 253);
        CaseRecord rec = make_case(make_npy_u8({100, 300}, img), {10, 20, 30, 40});
        PreparedInput p = prepare_case(rec, std::nullopt, 256);
        CHECK(p.pad_right == 0);
        CHECK(p.pad_bottom == 256 - 85);
        REQUIRE(p.boxes.size() == 1);
        CHECK(p.boxes[0].x1 == 8.0);
        CHECK(p.boxes[0].y1 == 17.0);
        CHECK(p.boxes[0].x2 == 26.0);
        CHECK(p.boxes[0].y2 == 35.0);
    }

    // Square case: full-image box maps to the full model frame.
    {
        std::vector<uint8_t> img(512 * 512);
        for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<uint8_t>(i % 256);
        CaseRecord rec = make_case(make_npy_u8({512, 512}, img), {0, 0, 512, 512});
        PreparedInput p = prepare_case(rec, std::nullopt, 256);
        CHECK(p.pad_right == 0);
        CHECK(p.pad_bottom == 0);
        CHECK(p.boxes[0].x1 == 0.0);
        CHECK(p.boxes[0].y1 == 0.0);
        CHECK(p.boxes[0].x2 == 256.0);
        CHECK(p.boxes[0].y2 == 256.0);
    }
}

TEST_CASE("prepare_case channels: gray replicates, rgb stays distinct, range [0,1]") {
    std::vector<uint8_t> gray(64 * 64);
    for (size_t i = 0; i < gray.size(); ++i) gray[i] = static_cast<uint8_t>((i * 13) % 251);
    PreparedInput pg = prepare_case(make_case(make_npy_u8({64, 64}, gray)), std::nullopt, 256);
    REQUIRE(pg.image.size() == static_cast<size_t>(3) * 256 * 256);
    for (int i = 0; i < 256 * 256; ++i) {
        REQUIRE(pg.image[i] == pg.image[256 * 256 + i]);
        REQUIRE(pg.image[i] == pg.image[2 * 256 * 256 + i]);
        REQUIRE(pg.image[i] >= 0.0f);
        REQUIRE(pg.image[i] <= 1.0f);
    }

    std::vector<uint8_t> rgb(32 * 32 * 3);
    for (size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<uint8_t>((i * 31) % 255);
    PreparedInput pc = prepare_case(make_case(make_npy_u8({32, 32, 3}, rgb)), std::nullopt, 256);
    bool channels_differ = false;
    for (int i = 0; i < 256 * 256 && !channels_differ; ++i)
        if (pc.image[i] != pc.image[256 * 256 + i]) channels_differ = true;
    CHECK(channels_differ);
}

TEST_CASE("prepare_case on volumes requires and honors the slice index") {
    std::vector<float> vol(4 * 8 * 8);
    for (int d = 0; d < 4; ++d)
        for (int i = 0; i < 64; ++i) vol[d * 64 + i] = static_cast<float>(i % (d + 2));
    CaseRecord rec = make_case(make_npy_f32({4, 8, 8}, vol));
    CHECK_THROWS_AS(prepare_case(rec, std::nullopt, 64), ContractError);
    CHECK_THROWS_AS(prepare_case(rec, 4, 64), ContractError);

    // Different slices produce different prepared images.
    PreparedInput a = prepare_case(rec, 0, 64);
    PreparedInput b = prepare_case(rec, 3, 64);
    bool differ = false;
    for (size_t i = 0; i < a.image.size() && !differ; ++i)
        if (a.image[i] != b.image[i]) differ = true;
    CHECK(differ);
}

TEST_CASE("flip_horizontal maps boxes by x -> S - x with endpoint swap") {
    std::vector<uint8_t> img(128 * 128, 100);
    CaseRecord rec = make_case(make_npy_u8({128, 128}, img), {5, 10, 15, 20});
    PreparedInput p = prepare_case(rec, std::nullopt, 256);
    p.boxes[0] = Box2d{10, 20, 30, 40};
    // Marker pixel to track geometry.
    p.image[(0 * 256 + 3) * 256 + 5] = 0.75f;

    flip_horizontal(p, nullptr);
    CHECK(p.boxes[0].x1 == 226.0);
    CHECK(p.boxes[0].y1 == 20.0);
    CHECK(p.boxes[0].x2 == 246.0);
    CHECK(p.boxes[0].y2 == 40.0);
    CHECK(p.image[(0 * 256 + 3) * 256 + 250] == 0.75f);

    flip_vertical(p, nullptr);
    CHECK(p.boxes[0].y1 == 216.0);
    CHECK(p.boxes[0].y2 == 236.0);
    CHECK(p.image[(0 * 256 + 252) * 256 + 250] == 0.75f);
}

TEST_CASE("flips are involutions on image, boxes, and gt") {
    std::vector<uint8_t> img(60 * 90);
    for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<uint8_t>((i * 17) % 250);
    CaseRecord rec = make_case(make_npy_u8({60, 90}, img), {3, 4, 50, 30});
    PreparedInput p = prepare_case(rec, std::nullopt, 256);
    std::vector<uint8_t> gt(256 * 256, 0);
    for (int i = 40; i < 70; ++i)
        for (int j = 10; j < 90; ++j) gt[i * 256 + j] = 1;

    const PreparedInput p0 = p;
    const std::vector<uint8_t> gt0 = gt;

    flip_horizontal(p, &gt);
    flip_horizontal(p, &gt);
    CHECK(p.image == p0.image);
    CHECK(gt == gt0);
    CHECK(p.boxes[0].x1 == p0.boxes[0].x1);
    CHECK(p.boxes[0].x2 == p0.boxes[0].x2);

    flip_vertical(p, &gt);
    flip_vertical(p, &gt);
    CHECK(p.image == p0.image);
    CHECK(gt == gt0);
    CHECK(p.boxes[0].y1 == p0.boxes[0].y1);
    CHECK(p.boxes[0].y2 == p0.boxes[0].y2);
}

TEST_CASE("random_flip keeps image and gt aligned") {
    std::vector<uint8_t> img(50 * 50, 0);
    for (int i = 10; i < 30; ++i)
        for (int j = 20; j < 45; ++j) img[i * 50 + j] = 200;
    CaseRecord rec = make_case(make_npy_u8({50, 50}, img));
    Rng rng(1234);
    int flipped_any = 0;
    for (int trial = 0; trial < 16; ++trial) {
        PreparedInput p = prepare_case(rec, std::nullopt, 64);
        std::vector<uint8_t> gt(64 * 64, 0);
        // Mark gt where the prepared image is bright; alignment must survive flips.
        for (int i = 0; i < 64 * 64; ++i) gt[i] = p.image[i] > 0.5f ? 1 : 0;
        const std::vector<uint8_t> gt_before = gt;
        PreparedInput before = p;
        random_flip(p, &gt, rng);
        if (p.image != before.image) ++flipped_any;
        for (int i = 0; i < 64 * 64; ++i) REQUIRE(gt[i] == (p.image[i] > 0.5f ? 1 : 0));
    }
    CHECK(flipped_any > 0);
    CHECK(flipped_any < 16);
}

TEST_CASE("prepare_gt nearest-neighbor hand oracle and binary preservation") {
    // 2x2 -> 4x4 with scale 2: each source pixel becomes a 2x2 block.
    const std::vector<uint8_t> mask{1, 0, 0, 1};
    const std::vector<uint8_t> out = prepare_gt(mask, 2, 2, 2.0, 4);
    const std::vector<uint8_t> expect{1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1};
    CHECK(out == expect);

    // Downscale keeps values binary and roughly preserves the footprint.
    std::vector<uint8_t> big(100 * 300, 0);
    for (int i = 20; i < 60; ++i)
        for (int j = 50; j < 200; ++j) big[i * 300 + j] = 1;
    const double scale = 256.0 / 300.0;
    const std::vector<uint8_t> small = prepare_gt(big, 100, 300, scale, 256);
    REQUIRE(small.size() == 256 * 256);
    int64_t on = 0;
    for (int i = 0; i < 256; ++i)
        for (int j = 0; j < 256; ++j) {
            REQUIRE((small[i * 256 + j] == 0 || small[i * 256 + j] == 1));
            if (small[i * 256 + j]) {
                ++on;
                // Must stay inside the valid (unpadded) region.
                REQUIRE(i < 85);
            }
        }
    const double expect_area = 40.0 * 150.0 * scale * scale;
    CHECK(static_cast<double>(on) == doctest::Approx(expect_area).epsilon(0.05));
}

TEST_CASE("gt_mask_for_box selects the dominant label under the box") {
    // 6x6 grid: label 1 block on the left, label 2 block on the right.
    std::vector<int64_t> labels(36, 0);
    for (int i = 1; i < 5; ++i)
        for (int j = 0; j < 2; ++j) labels[i * 6 + j] = 1;
    for (int i = 1; i < 5; ++i)
        for (int j = 3; j < 6; ++j) labels[i * 6 + j] = 2;

    const std::vector<uint8_t> m2 = gt_mask_for_box(labels, 6, 6, Box2d{2.2, 0.5, 5.8, 5.5});
    for (int i = 0; i < 36; ++i) CHECK(m2[i] == (labels[i] == 2 ? 1 : 0));

    const std::vector<uint8_t> m1 = gt_mask_for_box(labels, 6, 6, Box2d{0.0, 0.0, 2.0, 6.0});
    for (int i = 0; i < 36; ++i) CHECK(m1[i] == (labels[i] == 1 ? 1 : 0));

    const std::vector<uint8_t> m0 = gt_mask_for_box(labels, 6, 6, Box2d{0.0, 0.0, 6.0, 0.9});
    for (int i = 0; i < 36; ++i) CHECK(m0[i] == 0);
}

TEST_CASE("sample_slice restricts to slices with ground truth") {
    std::vector<float> vol(5 * 4 * 4, 0.5f);
    std::vector<uint8_t> gts(5 * 4 * 4, 0);
    gts[1 * 16 + 3] = 1;
    gts[3 * 16 + 7] = 2;
    Npz npz;
    npz.add("imgs", make_npy_f32({5, 4, 4}, vol));
    npz.add("gts", make_npy_u8({5, 4, 4}, gts));
    CaseRecord rec = case_from_npz(npz, "vol");

    Rng rng(99);
    std::set<int64_t> seen;
    for (int i = 0; i < 100; ++i) {
        const int64_t d = sample_slice(rec, rng);
        REQUIRE((d == 1 || d == 3));
        seen.insert(d);
    }
    CHECK(seen.size() == 2);

    // All-empty gt volume: no valid slice.
    Npz empty;
    empty.add("imgs", make_npy_f32({5, 4, 4}, vol));
    empty.add("gts", make_npy_u8({5, 4, 4}, std::vector<uint8_t>(5 * 16, 0)));
    CaseRecord rec_empty = case_from_npz(empty, "vol_empty");
    CHECK_THROWS_AS(sample_slice(rec_empty, rng), SamplingError);

    // Without gt: uniform over all slices; 2D always slice 0.
    Npz nogt;
    nogt.add("imgs", make_npy_f32({5, 4, 4}, vol));
    CaseRecord rec_nogt = case_from_npz(nogt, "vol_nogt");
    std::set<int64_t> all;
    for (int i = 0; i < 200; ++i) all.insert(sample_slice(rec_nogt, rng));
    CHECK(all.size() == 5);

    Npz flat;
    flat.add("imgs", make_npy_f32({4, 4}, std::vector<float>(16, 1.0f)));
    CaseRecord rec2d = case_from_npz(flat, "flat");
    CHECK(sample_slice(rec2d, rng) == 0);
}

TEST_CASE("gt_slice converts every supported dtype") {
    const std::vector<uint8_t> u{0, 1, 2, 3};
    CHECK(gt_slice(make_npy_u8({2, 2}, u), false, 0) == std::vector<int64_t>{0, 1, 2, 3});
    const std::vector<int64_t> i{5, 0, 7, 0};
    CHECK(gt_slice(make_npy_i64({2, 2}, i), false, 0) == std::vector<int64_t>{5, 0, 7, 0});
    const std::vector<float> f{0.0f, 1.0f, 0.0f, 2.0f};
    CHECK(gt_slice(make_npy_f32({2, 2}, f), false, 0) == std::vector<int64_t>{0, 1, 0, 2});
    // 3D slice offset.
    std::vector<uint8_t> vol(2 * 2 * 2);
    for (int k = 0; k < 8; ++k) vol[k] = static_cast<uint8_t>(k);
    CHECK(gt_slice(make_npy_u8({2, 2, 2}, vol), true, 1) == std::vector<int64_t>{4, 5, 6, 7});
    CHECK_THROWS_AS(gt_slice(make_npy_u8({2, 2, 2}, vol), true, 2), ContractError);
}
