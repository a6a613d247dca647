#include <cmath>

#include "doctest.h"

#include "ctarr/phantom.hpp"
#include "ctarr/volume_ops.hpp"

using namespace ctarr;

namespace {

double analytic_volume(const PhantomBlob& b) {
    double v = 8.0 * b.half_mm.prod();
    return b.cuboid ? v : v * (4.0 / 3.0) * std::acos(-1.0) / 8.0;
}

}  // namespace

TEST_CASE("canonical phantom has all 19 classes, disjoint and deterministic") {
    LabelVolume a = canonical_phantom();
    LabelVolume b = canonical_phantom();
    CHECK(a.voxels == b.voxels);
    CHECK((a.grid.dims == Arr3i(85, 85, 133)).all());

    std::vector<double> vols = class_volumes(a);
    REQUIRE(int(vols.size()) == 19);
    for (int c = 0; c < 19; ++c) CHECK(vols[std::size_t(c)] > 0);

    // other spacings paint without voxel conflicts too
    CHECK_NOTHROW(canonical_phantom(2.0));
    CHECK_NOTHROW(canonical_phantom(1.5));
    CHECK_THROWS_AS(canonical_phantom(0.0), Error);
}

TEST_CASE("phantom blob centroids and volumes match the analytic table") {
    LabelVolume vol = canonical_phantom(1.0);
    LandmarkSet lm = center_of_mass(vol);
    std::vector<double> counts = class_volumes(vol);
    double voxel_mm3 = vol.grid.spacing_mm.prod();

    for (const PhantomBlob& b : phantom_blobs()) {
        REQUIRE(lm.present[std::size_t(b.cls - 1)]);
        Arr3d got = lm.points_mm[std::size_t(b.cls - 1)];
        CHECK((got - b.center_mm).abs().maxCoeff() < 1.0);
        double painted = counts[std::size_t(b.cls - 1)] * voxel_mm3;
        CHECK(std::abs(painted - analytic_volume(b)) / analytic_volume(b) < 0.12);
    }
}

TEST_CASE("phantom layout is bilaterally and axially asymmetric by landmarks") {
    LabelVolume vol = canonical_phantom();
    LandmarkSet lm = center_of_mass(vol);
    Arr3d pivot = vol.grid.physical_center();

    // any non-identity orientation moves at least one landmark far away from
    // every landmark of the same class
    for (const auto& o : all_orientations()) {
        if (o.identity()) continue;
        double worst = 0.0;
        for (int c = 0; c < 19; ++c) {
            Arr3d moved = orient_point(o, lm.points_mm[std::size_t(c)], pivot);
            worst = std::max(worst, (moved - lm.points_mm[std::size_t(c)]).matrix().norm());
        }
        CHECK(worst > 40.0);
    }
}

TEST_CASE("sample_case is bit-deterministic in the seed") {
    CaseConfig cfg;
    cfg.fov_crop_frac = 0.3;
    cfg.dropout_classes = 3;
    cfg.boundary_noise_vox = 1;
    PhantomCase a = sample_case(77, cfg);
    PhantomCase b = sample_case(77, cfg);
    CHECK(a.labels.voxels == b.labels.voxels);
    CHECK(a.roi.voxels == b.roi.voxels);
    CHECK(a.truth.orientation == b.truth.orientation);
    CHECK((a.truth.scale == b.truth.scale).all());
    CHECK((a.truth.translation_mm == b.truth.translation_mm).all());

    PhantomCase c = sample_case(78, cfg);
    CHECK(a.labels.voxels != c.labels.voxels);
}

TEST_CASE("ground truth maps scan landmarks onto the blob centers") {
    CaseConfig cfg;
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
        PhantomCase pc = sample_case(seed, cfg);
        LabelVolume normalized = apply_orientation(pc.labels, pc.truth.orientation);
        LandmarkSet lm = center_of_mass(normalized);
        for (const PhantomBlob& b : phantom_blobs()) {
            REQUIRE(lm.present[std::size_t(b.cls - 1)]);
            Arr3d mapped = pc.truth.to_atlas(lm.points_mm[std::size_t(b.cls - 1)]);
            CHECK((mapped - b.center_mm).abs().maxCoeff() < 3.0);
        }
    }
}

TEST_CASE("fov crop shrinks z and keeps the truth consistent for surviving classes") {
    CaseConfig clean;
    CaseConfig cfg;
    cfg.fov_crop_frac = 0.45;
    int checked = 0;
    for (std::uint64_t seed : {11ull, 12ull, 13ull, 14ull, 15ull}) {
        PhantomCase full = sample_case(seed, clean);
        PhantomCase pc = sample_case(seed, cfg);
        CHECK(pc.labels.grid.dims[2] <= full.labels.grid.dims[2]);

        std::vector<double> vol_full = class_volumes(full.labels);
        std::vector<double> vol_crop = class_volumes(pc.labels);
        LabelVolume normalized = apply_orientation(pc.labels, pc.truth.orientation);
        LandmarkSet lm = center_of_mass(normalized);
        for (const PhantomBlob& b : phantom_blobs()) {
            std::size_t c = std::size_t(b.cls - 1);
            if (vol_crop[c] < vol_full[c] * 0.999) continue;  // clipped by the FOV
            REQUIRE(lm.present[c]);
            Arr3d mapped = pc.truth.to_atlas(lm.points_mm[c]);
            CHECK((mapped - b.center_mm).abs().maxCoeff() < 3.0);
            ++checked;
        }
    }
    CHECK(checked > 20);
}

TEST_CASE("dropout removes the requested number of classes") {
    CaseConfig cfg;
    cfg.dropout_classes = 10;
    PhantomCase pc = sample_case(5, cfg);
    std::vector<double> vols = class_volumes(pc.labels);
    int present = 0;
    for (double v : vols) present += v > 0 ? 1 : 0;
    CHECK(present == 9);
}

TEST_CASE("boundary noise perturbs volumes without destroying classes") {
    CaseConfig clean;
    CaseConfig noisy;
    noisy.boundary_noise_vox = 1;
    PhantomCase a = sample_case(21, clean);
    PhantomCase b = sample_case(21, noisy);
    std::vector<double> va = class_volumes(a.labels);
    std::vector<double> vb = class_volumes(b.labels);
    bool any_changed = false;
    for (int c = 0; c < 19; ++c) {
        CHECK(vb[std::size_t(c)] > 0);
        CHECK(vb[std::size_t(c)] > 0.2 * va[std::size_t(c)]);
        CHECK(vb[std::size_t(c)] < 5.0 * va[std::size_t(c)]);
        any_changed = any_changed || vb[std::size_t(c)] != va[std::size_t(c)];
    }
    CHECK(any_changed);
}

TEST_CASE("lesion roi sits against the requested organ") {
    CaseConfig cfg;
    cfg.lesion_organ = "spleen";
    for (std::uint64_t seed : {31ull, 32ull, 33ull}) {
        PhantomCase pc = sample_case(seed, cfg);
        CHECK(pc.lesion_class == 16);
        CHECK((pc.roi.grid.dims == pc.labels.grid.dims).all());

        double n = 0;
        Arr3d sum(0, 0, 0);
        const Grid& g = pc.roi.grid;
        for (int k = 0; k < g.dims[2]; ++k)
            for (int j = 0; j < g.dims[1]; ++j)
                for (int i = 0; i < g.dims[0]; ++i)
                    if (pc.roi.at(i, j, k)) {
                        sum += g.coord(i, j, k);
                        n += 1;
                    }
        REQUIRE(n > 0);
        LabelVolume normalized = apply_orientation(pc.roi, pc.truth.orientation);
        LandmarkSet lm = center_of_mass(normalized);
        Arr3d mapped = pc.truth.to_atlas(lm.points_mm[0]);
        const PhantomBlob& organ = phantom_blobs()[15];
        Arr3d gap = ((mapped - organ.center_mm).abs() - organ.half_mm).max(Arr3d(0, 0, 0));
        CHECK(gap.maxCoeff() < 1.5 * 14.0 + 1.0);
        CHECK(gap.maxCoeff() > 0.0);  // outside the organ surface along one axis
    }

    CHECK_THROWS_AS(sample_case(1, [] {
                        CaseConfig c;
                        c.lesion_organ = "gastrocnemius";
                        return c;
                    }()),
                    Error);
}

TEST_CASE("config bounds are enforced") {
    auto with = [](auto mod) {
        CaseConfig c;
        mod(c);
        return c;
    };
    CHECK_THROWS_AS(sample_case(1, with([](CaseConfig& c) { c.max_translation_frac = 0.5; })),
                    Error);
    CHECK_THROWS_AS(sample_case(1, with([](CaseConfig& c) { c.scale_min = 0.7; })), Error);
    CHECK_THROWS_AS(sample_case(1, with([](CaseConfig& c) { c.scale_max = 1.3; })), Error);
    CHECK_THROWS_AS(sample_case(1, with([](CaseConfig& c) { c.dropout_classes = 11; })), Error);
    CHECK_THROWS_AS(sample_case(1, with([](CaseConfig& c) { c.boundary_noise_vox = 3; })), Error);
    CHECK_THROWS_AS(sample_case(1, with([](CaseConfig& c) { c.fov_crop_frac = 0.7; })), Error);
    CHECK_THROWS_AS(sample_case(1, with([](CaseConfig& c) { c.scan_spacing_mm[1] = 0.0; })),
                    Error);
}

TEST_CASE("intensity channel is a plateau per class") {
    PhantomCase pc = sample_case(41, CaseConfig{});
    FloatVolume img = intensity_from_labels(pc.labels);
    for (std::size_t n = 0; n < img.voxels.size(); ++n) {
        float expect = -100.0f + 60.0f * float(pc.labels.voxels[n]);
        CHECK(img.voxels[n] == expect);
    }
}
