#include "oracles.hpp"

#include "rssl/augment.hpp"
#include "rssl/errors.hpp"

#include <doctest.h>

#include <cmath>

using namespace rssl;

namespace {

ImageBatch random_images(const ImageShape& shape, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    ImageBatch b;
    b.shape = shape;
    b.pixels = oracle::random_matrix(shape.pixels(), n, rng, 0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        b.labels.push_back(static_cast<int>(i % 3));
    }
    return b;
}

} // namespace

TEST_SUITE("augment") {

TEST_CASE("central mode is the identity") {
    const ImageBatch img = random_images({8, 8, 3}, 5, 1);
    const auto views = sample_views(img, AugmentSpec::central(), 99);
    REQUIRE(views.size() == 1);
    CHECK(views[0].pixels == img.pixels);
    CHECK(views[0].labels == img.labels);
}

TEST_CASE("patches on a 32x32 image come from 16x16 regions") {
    const AugmentSpec spec = AugmentSpec::patches(4);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const ViewPlan plan = plan_views({32, 32, 1}, 6, spec, seed);
        for (const auto& slot : plan.regions) {
            for (const CropRegion& r : slot) {
                CHECK(r.height == 16);
                CHECK(r.width == 16);
            }
        }
    }
}

TEST_CASE("same seed gives byte-identical views, other seeds differ") {
    const ImageBatch img = random_images({12, 12, 3}, 4, 2);
    AugmentSpec spec = AugmentSpec::crops(6);
    spec.style_jitter = StyleJitterLaw{{0.8, 1.2}, {-0.1, 0.1}};
    const auto a = sample_views(img, spec, 5);
    const auto b = sample_views(img, spec, 5);
    const auto c = sample_views(img, spec, 6);
    REQUIRE(a.size() == 6);
    bool any_diff = false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].pixels == b[k].pixels);
        any_diff = any_diff || !(a[k].pixels == c[k].pixels);
    }
    CHECK(any_diff);
}

TEST_CASE("views keep the requested resolution and stay in [0, 1]") {
    const ImageBatch img = random_images({16, 16, 3}, 3, 3);
    AugmentSpec spec = AugmentSpec::crops(5);
    spec.out_height = 10;
    spec.out_width = 7;
    for (const auto& v : sample_views(img, spec, 8)) {
        CHECK(v.shape == ImageShape{10, 7, 3});
        CHECK_NOTHROW(v.validate());
    }
    for (const auto& v : sample_views(img, AugmentSpec::crops(5), 8)) {
        CHECK(v.shape == img.shape);
    }
}

TEST_CASE("crop regions lie inside the image and follow the area law") {
    const ImageShape shape{32, 32, 1};
    const AugmentSpec spec = AugmentSpec::crops(16);
    Rng rng(77);
    for (int t = 0; t < 2000; ++t) {
        const CropRegion r = sample_region(shape, spec, rng);
        REQUIRE(r.height >= 1);
        REQUIRE(r.width >= 1);
        CHECK(r.top + r.height <= shape.height);
        CHECK(r.left + r.width <= shape.width);
        if (r.height == 32 && r.width == 32) {
            continue; // the fallback, or a full-area draw
        }
        const double frac = static_cast<double>(r.height * r.width) / (32.0 * 32.0);
        // rounding each side by at most half a pixel
        const double slack = (0.5 * (r.height + r.width + 1.0) + 0.25) / (32.0 * 32.0) + 1e-12;
        CHECK(frac >= 0.08 - slack);
        CHECK(frac <= 1.0 + slack);
        const double ratio = static_cast<double>(r.width) / static_cast<double>(r.height);
        const double h = static_cast<double>(r.height);
        const double lo = (0.75 * (h - 0.5) - 0.5) / h;
        const double hi = (1.3 * (h + 0.5) + 0.5) / h;
        CHECK(ratio >= lo - 1e-12);
        CHECK(ratio <= hi + 1e-12);
    }
}

TEST_CASE("slots draw from independent sub-seeds") {
    // Adding slots never changes the regions of the existing ones.
    const ViewPlan four = plan_views({16, 16, 3}, 7, AugmentSpec::crops(4), 123);
    const ViewPlan nine = plan_views({16, 16, 3}, 7, AugmentSpec::crops(9), 123);
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(four.regions[k] == nine.regions[k]);
    }
    // Adding images never changes the regions of the existing ones.
    const ViewPlan more = plan_views({16, 16, 3}, 11, AugmentSpec::crops(4), 123);
    for (std::size_t k = 0; k < 4; ++k) {
        for (std::size_t i = 0; i < 7; ++i) {
            CHECK(four.regions[k][i] == more.regions[k][i]);
        }
    }
    CHECK(view_seed(1, 2, 3) != view_seed(1, 3, 2));
}

TEST_CASE("bilinear resize of a full-image region to a smaller grid") {
    // 1 x 3 ramp resampled to 1 x 2 keeps the corner values.
    ViewPlan plan;
    plan.in_shape = {1, 3, 1};
    plan.out_shape = {1, 2, 1};
    plan.regions = {{CropRegion{0, 0, 1, 3}}};
    const Matrix px{{0.0}, {0.5}, {1.0}};
    CHECK(render_slot(px, plan, 0) == Matrix{{0.0}, {1.0}});
    plan.out_shape = {1, 5, 1};
    const Matrix up = render_slot(px, plan, 0);
    CHECK(up(1, 0) == doctest::Approx(0.25));
    CHECK(up(3, 0) == doctest::Approx(0.75));
}

TEST_CASE("render adjoint satisfies <R x, y> = <x, R^T y>") {
    const ImageShape shape{9, 9, 2};
    AugmentSpec spec = AugmentSpec::crops(3);
    spec.out_height = 6;
    spec.out_width = 6;
    const ViewPlan plan = plan_views(shape, 4, spec, 55);
    Rng rng(6);
    const Matrix x = oracle::random_matrix(shape.pixels(), 4, rng);
    const Matrix y = oracle::random_matrix(plan.out_shape.pixels(), 4, rng);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(frobenius_dot(render_slot(x, plan, k), y) ==
              doctest::Approx(frobenius_dot(x, render_slot_adjoint(y, plan, k))).epsilon(1e-12));
    }
}

TEST_CASE("style jitter") {
    const ImageBatch img = random_images({4, 4, 3}, 3, 4);
    CHECK(style_jitter(img, StyleJitterLaw{}, 1).pixels == img.pixels);
    const ImageBatch sat = style_jitter(img, StyleJitterLaw{{1.0, 1.0}, {2.0, 2.0}}, 1);
    for (double v : sat.pixels.values()) {
        CHECK(v == 1.0);
    }
    CHECK(sat.labels == img.labels);
    const StyleJitterLaw law{{0.5, 1.5}, {-0.2, 0.2}};
    CHECK(style_jitter(img, law, 9).pixels == style_jitter(img, law, 9).pixels);
    CHECK_NOTHROW(style_jitter(img, law, 9).validate());
}

TEST_CASE("inverted bounds are rejected") {
    AugmentSpec spec = AugmentSpec::crops(2);
    spec.scales = {0.5, 0.2};
    CHECK_THROWS_AS(spec.validate(), InvalidSpec);
    spec = AugmentSpec::crops(2);
    spec.ratios = {1.3, 0.75};
    CHECK_THROWS_AS(spec.validate(), InvalidSpec);
    spec = AugmentSpec::crops(0);
    CHECK_THROWS_AS(spec.validate(), InvalidSpec);
    spec = AugmentSpec::crops(2);
    spec.scales = {0.1, 1.5};
    CHECK_THROWS_AS(sample_views(random_images({4, 4, 1}, 1, 0), spec, 0), InvalidSpec);
}

} // TEST_SUITE
