#include <cmath>

#include "ctarr/error.hpp"
#include "ctarr/eval.hpp"
#include "ctarr/rng.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace ctarr;

namespace {

Grid unit_grid(int nx, int ny, int nz) {
    Grid g;
    g.dims = Arr3i(nx, ny, nz);
    g.spacing_mm = Arr3d(1, 1, 1);
    g.origin_mm = Arr3d(0, 0, 0);
    return g;
}

LabelVolume random_mask(Rng& rng, const Grid& g, double p) {
    LabelVolume v = make_label_volume(g, 1);
    for (Label& x : v.voxels) x = rng.uniform() < p ? 1 : 0;
    return v;
}

}  // namespace

TEST_CASE("dice_score closed forms") {
    Grid g = unit_grid(6, 6, 6);
    LabelVolume a = make_label_volume(g, 1);
    LabelVolume b = make_label_volume(g, 1);

    CHECK(dice_score(a, b) == 1.0);  // both empty

    for (int i = 0; i < 4; ++i) a.voxels[std::size_t(i)] = 1;
    CHECK(dice_score(a, a) == 1.0);

    for (int i = 10; i < 14; ++i) b.voxels[std::size_t(i)] = 1;
    CHECK(dice_score(a, b) == 0.0);  // disjoint, equal volume

    // half overlap, equal volumes: |a| = |b| = 4, |inter| = 2
    b = make_label_volume(g, 1);
    for (int i = 2; i < 6; ++i) b.voxels[std::size_t(i)] = 1;
    CHECK(dice_score(a, b) == 0.5);

    LabelVolume other = make_label_volume(unit_grid(6, 6, 5), 1);
    try {
        dice_score(a, other);
        FAIL("expected dim_mismatch");
    } catch (const Error& e) {
        CHECK(e.code() == errc::dim_mismatch);
    }
}

TEST_CASE("dice_score matches a brute-force oracle and is symmetric") {
    Rng rng(501);
    Grid g = unit_grid(8, 7, 6);
    for (int t = 0; t < 30; ++t) {
        LabelVolume a = random_mask(rng, g, rng.uniform(0.0, 0.6));
        LabelVolume b = random_mask(rng, g, rng.uniform(0.0, 0.6));
        double na = 0, nb = 0, ni = 0;
        for (int k = 0; k < 6; ++k)
            for (int j = 0; j < 7; ++j)
                for (int i = 0; i < 8; ++i) {
                    na += a.at(i, j, k) != 0;
                    nb += b.at(i, j, k) != 0;
                    ni += a.at(i, j, k) != 0 && b.at(i, j, k) != 0;
                }
        double want = na + nb == 0 ? 1.0 : 2.0 * ni / (na + nb);
        double got = dice_score(a, b);
        CHECK(got == want);
        CHECK(got == dice_score(b, a));
        CHECK(got >= 0.0);
        CHECK(got <= 1.0);
    }
}

TEST_CASE("ncc closed forms and error paths") {
    Rng rng(511);
    Grid g = unit_grid(5, 5, 5);
    FloatVolume a = make_volume<float>(g, 0.0f);
    for (float& x : a.voxels) x = float(rng.uniform(-1, 1));

    CHECK(ncc(a, a) == doctest::Approx(1.0).epsilon(1e-12));

    FloatVolume neg = a;
    for (float& x : neg.voxels) x = -x;
    CHECK(ncc(a, neg) == doctest::Approx(-1.0).epsilon(1e-12));

    FloatVolume flat = make_volume<float>(g, 3.5f);
    try {
        ncc(a, flat);
        FAIL("expected undefined_ncc");
    } catch (const Error& e) {
        CHECK(e.code() == errc::undefined_ncc);
    }
    CHECK_THROWS_AS(ncc(flat, a), Error);

    FloatVolume other = make_volume<float>(unit_grid(5, 5, 4), 0.0f);
    try {
        ncc(a, other);
        FAIL("expected dim_mismatch");
    } catch (const Error& e) {
        CHECK(e.code() == errc::dim_mismatch);
    }
}

TEST_CASE("ncc matches the definition, is symmetric, and ignores affine rescaling") {
    Rng rng(521);
    Grid g = unit_grid(6, 5, 4);
    for (int t = 0; t < 20; ++t) {
        FloatVolume a = make_volume<float>(g, 0.0f);
        FloatVolume b = make_volume<float>(g, 0.0f);
        for (float& x : a.voxels) x = float(rng.uniform(-2, 2));
        for (float& x : b.voxels) x = float(rng.uniform(-2, 2));

        // independent two-pass Pearson computation
        std::size_t n = a.voxels.size();
        double sa = 0, sb = 0;
        for (std::size_t v = 0; v < n; ++v) {
            sa += a.voxels[v];
            sb += b.voxels[v];
        }
        double ma = sa / double(n), mb = sb / double(n);
        double num = 0, da2 = 0, db2 = 0;
        for (std::size_t v = 0; v < n; ++v) {
            num += (a.voxels[v] - ma) * (b.voxels[v] - mb);
            da2 += (a.voxels[v] - ma) * (a.voxels[v] - ma);
            db2 += (b.voxels[v] - mb) * (b.voxels[v] - mb);
        }
        double want = num / std::sqrt(da2 * db2);

        double got = ncc(a, b);
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
        CHECK(got == doctest::Approx(ncc(b, a)).epsilon(1e-12));
        CHECK(got >= -1.0 - 1e-12);
        CHECK(got <= 1.0 + 1e-12);

        FloatVolume scaled = b;
        for (float& x : scaled.voxels) x = 2.0f * x + 5.0f;
        CHECK(ncc(a, scaled) == doctest::Approx(got).epsilon(1e-6));
    }
}

TEST_CASE("crop_metrics closed forms") {
    Grid g = unit_grid(10, 10, 10);
    LabelVolume fg = make_label_volume(g, 1);
    for (int k = 0; k < 2; ++k)
        for (int j = 0; j < 2; ++j)
            for (int i = 0; i < 2; ++i) fg.at(i, j, k) = 1;

    VoxelBox corner;
    corner.lo = Arr3i(0, 0, 0);
    corner.hi = Arr3i(2, 2, 2);
    CropMetrics m = crop_metrics(fg, {corner});
    CHECK(m.preserved_pct == 100.0);
    CHECK(m.fg_fraction_before == doctest::Approx(8.0 / 1000.0));
    CHECK(m.fg_fraction_after == doctest::Approx(8.0 / 27.0));

    VoxelBox far_box;
    far_box.lo = Arr3i(5, 5, 5);
    far_box.hi = Arr3i(9, 9, 9);
    CHECK(crop_metrics(fg, {far_box}).preserved_pct == 0.0);

    // overlapping boxes count union voxels once
    CropMetrics twice = crop_metrics(fg, {corner, corner});
    CHECK(twice.fg_fraction_after == doctest::Approx(8.0 / 27.0));

    LabelVolume empty = make_label_volume(g, 1);
    CHECK(crop_metrics(empty, {corner}).preserved_pct == 100.0);

    VoxelBox outside;
    outside.lo = Arr3i(8, 8, 8);
    outside.hi = Arr3i(10, 9, 9);
    try {
        crop_metrics(fg, {outside});
        FAIL("expected invalid_argument");
    } catch (const Error& e) {
        CHECK(e.code() == errc::invalid_argument);
    }
}

TEST_CASE("crop_metrics: enlarging a box never decreases preserved_pct") {
    Rng rng(531);
    Grid g = unit_grid(12, 12, 12);
    for (int t = 0; t < 40; ++t) {
        LabelVolume fg = random_mask(rng, g, 0.1);
        std::vector<VoxelBox> boxes;
        for (int b = 0; b < 3; ++b) {
            VoxelBox box;
            for (int a = 0; a < 3; ++a) {
                box.lo[a] = rng.uniform_int(10);
                box.hi[a] = std::min(11, box.lo[a] + rng.uniform_int(5));
            }
            boxes.push_back(box);
        }
        double before = crop_metrics(fg, boxes).preserved_pct;

        std::vector<VoxelBox> bigger = boxes;
        VoxelBox& grow = bigger[std::size_t(rng.uniform_int(3))];
        grow.lo = (grow.lo - 1).max(Arr3i(0, 0, 0));
        grow.hi = (grow.hi + 1).min(g.dims - 1);
        CHECK(crop_metrics(fg, bigger).preserved_pct >= before);
    }
}

TEST_CASE("metrics_json emits the three table rows") {
    CropMetrics m;
    m.preserved_pct = 99.25;
    m.fg_fraction_before = 0.019;
    m.fg_fraction_after = 0.063;
    nlohmann::json rows = nlohmann::json::parse(metrics_json(m));
    REQUIRE(rows.is_array());
    REQUIRE(rows.size() == 3);
    CHECK(rows[0]["metric"] == "preserved foreground");
    CHECK(rows[0]["value"] == 99.25);
    CHECK(rows[1]["metric"] == "foreground voxels before cropping");
    CHECK(rows[2]["metric"] == "foreground voxels after cropping");
}
