#include "doctest.h"

#include "ctarr/types.hpp"

using namespace ctarr;

namespace {

Grid small_grid() {
    Grid g;
    g.dims = Arr3i(4, 3, 2);
    g.spacing_mm = Arr3d(3.0, 3.0, 3.0);
    g.origin_mm = Arr3d(0.0, 0.0, 0.0);
    return g;
}

}  // namespace

TEST_CASE("label volume construction validates invariants") {
    Grid g = small_grid();
    std::vector<Label> vox(std::size_t(g.num_voxels()), 0);
    vox[0] = 5;

    CHECK_NOTHROW(make_label_volume(g, 5, vox));
    CHECK_THROWS_AS(make_label_volume(g, 4, vox), Error);

    Grid bad = g;
    bad.spacing_mm[1] = 0.0;
    CHECK_THROWS_AS(make_label_volume(bad, 5, vox), Error);

    vox.pop_back();
    CHECK_THROWS_AS(make_label_volume(g, 5, vox), Error);
}

TEST_CASE("grid coordinate convention: origin + spacing * index") {
    Grid g = small_grid();
    g.origin_mm = Arr3d(-6.0, 1.5, 2.0);
    Arr3d p = g.coord(2, 1, 1);
    CHECK(p[0] == doctest::Approx(0.0));
    CHECK(p[1] == doctest::Approx(4.5));
    CHECK(p[2] == doctest::Approx(5.0));
    Arr3d f = g.index_of(p);
    CHECK(f[0] == doctest::Approx(2.0));
    CHECK(f[1] == doctest::Approx(1.0));
    CHECK(f[2] == doctest::Approx(1.0));
}

TEST_CASE("default schema has the 19 classes in ID order") {
    LabelSchema s = default_schema();
    REQUIRE(s.num_classes() == 19);
    CHECK(s.names.front() == "skull");
    CHECK(s.names.back() == "urinary bladder");
    CHECK(s.names[10] == "brain");
    CHECK(s.names[14] == "liver");
}

TEST_CASE("orientation group: composition, inverse, commutation") {
    auto all = all_orientations();
    REQUIRE(all.size() == 8);

    for (const auto& a : all) {
        CHECK(compose(inverse(a), a) == RestrictedOrientation{});
        CHECK(compose(a, inverse(a)) == RestrictedOrientation{});
        for (const auto& b : all) {
            RestrictedOrientation ab = compose(b, a);
            CHECK(ab.k_rot == (a.k_rot + b.k_rot) % 4);
            CHECK(ab.flip_z == (a.flip_z != b.flip_z));
            // rotation and z-flip commute
            CHECK(compose(b, a).k_rot == compose(a, b).k_rot);
            CHECK(compose(b, a).flip_z == compose(a, b).flip_z);
        }
    }
    CHECK_THROWS_AS(make_orientation(4, false), Error);
}

TEST_CASE("orient_offset matches the index-plane convention") {
    // k_rot = 1 maps (dx, dy) -> (dy, -dx)
    Arr3d d(2.0, 5.0, -1.0);
    Arr3d r1 = orient_offset(RestrictedOrientation{1, false}, d);
    CHECK(r1[0] == doctest::Approx(5.0));
    CHECK(r1[1] == doctest::Approx(-2.0));
    CHECK(r1[2] == doctest::Approx(-1.0));

    Arr3d rf = orient_offset(RestrictedOrientation{0, true}, d);
    CHECK(rf[2] == doctest::Approx(1.0));

    // group action: offset map of a composition equals composed offset maps
    for (const auto& a : all_orientations())
        for (const auto& b : all_orientations()) {
            Arr3d lhs = orient_offset(compose(b, a), d);
            Arr3d rhs = orient_offset(b, orient_offset(a, d));
            CHECK((lhs - rhs).abs().maxCoeff() == doctest::Approx(0.0));
        }
}

TEST_CASE("restricted affine forward/inverse round trip") {
    RestrictedAffine t = make_affine(RestrictedOrientation{2, true}, Arr3d(1.1, 0.9, 1.25),
                                     Arr3d(10.0, -4.0, 25.0));
    Arr3d x(12.0, 7.0, -3.0);
    Arr3d y = t.to_atlas(x);
    CHECK((t.from_atlas(y) - x).abs().maxCoeff() < 1e-12);

    CHECK_THROWS_AS(make_affine(RestrictedOrientation{}, Arr3d(0.4, 1.0, 1.0), Arr3d(0, 0, 0)),
                    Error);
    CHECK_THROWS_AS(make_affine(RestrictedOrientation{}, Arr3d(1.0, 2.1, 1.0), Arr3d(0, 0, 0)),
                    Error);
}

TEST_CASE("bounding box invariants and region overlap rejection") {
    CHECK_THROWS_AS(make_box(Arr3d(0, 0, 0), Arr3d(1, 0, 1)), Error);
    BoundingBox a = make_box(Arr3d(0, 0, 0), Arr3d(10, 10, 10));
    BoundingBox b = make_box(Arr3d(5, 5, 5), Arr3d(15, 15, 15));
    BoundingBox c = make_box(Arr3d(10, 0, 0), Arr3d(20, 10, 10));
    CHECK(a.overlaps(b));
    CHECK(!a.overlaps(c));  // touching faces do not overlap

    CHECK_THROWS_AS(make_region("r", {a, b}, 0.0, 10.0), Error);
    CHECK_NOTHROW(make_region("r", {a, c}, 0.0, 10.0));
    CHECK_THROWS_AS(make_region("r", {a}, -0.5, 10.0), Error);
    CHECK_THROWS_AS(make_region("r", {}, 0.0, 10.0), Error);
}

TEST_CASE("atlas construction computes landmarks and volumes, rejects bad probs") {
    Grid g = small_grid();
    LabelSchema schema = make_schema({"a", "b"});

    auto pa = make_volume<float>(g, 0.0f);
    auto pb = make_volume<float>(g, 0.0f);
    pa.at(0, 0, 0) = 1.0f;
    pa.at(2, 0, 0) = 1.0f;
    pb.at(1, 2, 1) = 0.5f;

    AtlasSegmentation atlas = make_atlas(g, schema, {pa, pb});
    CHECK(atlas.class_volumes[0] == doctest::Approx(2.0));
    CHECK(atlas.class_volumes[1] == doctest::Approx(0.5));
    // probability-weighted centroid in physical coordinates
    CHECK(atlas.landmarks_mm[0][0] == doctest::Approx(3.0));
    CHECK(atlas.landmarks_mm[0][1] == doctest::Approx(0.0));
    CHECK(atlas.landmarks_mm[1][1] == doctest::Approx(6.0));

    auto bad = pa;
    bad.at(0, 0, 1) = 1.5f;
    CHECK_THROWS_AS(make_atlas(g, schema, {bad, pb}), Error);

    // every class must be represented
    auto empty = make_volume<float>(g, 0.0f);
    CHECK_THROWS_AS(make_atlas(g, schema, {pa, empty}), Error);

    // the atlas working grid is 3 mm isotropic
    Grid g2 = g;
    g2.spacing_mm = Arr3d(2.0, 3.0, 3.0);
    CHECK_THROWS_AS(make_atlas(g2, schema, {pa, pb}), Error);
}

TEST_CASE("atlas_from_labels produces one-hot channels") {
    Grid g = small_grid();
    LabelVolume lv = make_label_volume(g, 2);
    lv.at(0, 0, 0) = 1;
    lv.at(3, 2, 1) = 2;
    lv.at(1, 1, 0) = 2;

    AtlasSegmentation atlas = atlas_from_labels(lv, make_schema({"a", "b"}));
    CHECK(atlas.class_volumes[0] == doctest::Approx(1.0));
    CHECK(atlas.class_volumes[1] == doctest::Approx(2.0));
    CHECK(atlas.prob[0].at(0, 0, 0) == 1.0f);
    CHECK(atlas.prob[1].at(1, 1, 0) == 1.0f);
    CHECK(atlas.prob[1].at(0, 0, 0) == 0.0f);
}

TEST_CASE("heatmap starts empty and means stay in [0,1]") {
    Heatmap h = make_heatmap(small_grid());
    CHECK(h.count == 0);
    FloatVolume m = h.mean();
    for (float v : m.voxels) CHECK(v == 0.0f);
}
