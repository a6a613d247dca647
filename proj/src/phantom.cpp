#include "ctarr/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctarr/error.hpp"
#include "ctarr/rng.hpp"
#include "ctarr/volume_ops.hpp"

namespace ctarr {

namespace {

// Disjointness margins between neighboring blobs are >= 5% in normalized
// coordinates; the painting check below guards any future edits.
const std::vector<PhantomBlob>& blob_table() {
    static const std::vector<PhantomBlob> table = {
        {1, false, {128, 128, 378}, {44, 50, 18}},   // skull
        {2, true, {128, 152, 302}, {8, 8, 16}},      // C vertebrae
        {3, true, {28, 130, 250}, {8, 55, 55}},      // left ribs plate
        {4, true, {226, 132, 248}, {9, 54, 52}},     // right ribs plate
        {5, true, {128, 56, 240}, {7, 5, 38}},       // sternum
        {6, true, {128, 152, 240}, {9, 9, 40}},      // T vertebrae
        {7, true, {128, 152, 160}, {10, 10, 36}},    // L vertebrae
        {8, false, {128, 152, 92}, {20, 13, 20}},    // sacrum
        {9, false, {82, 142, 78}, {24, 19, 26}},     // left hip
        {10, false, {176, 144, 80}, {23, 20, 27}},   // right hip
        {11, false, {126, 122, 338}, {34, 38, 17}},  // brain
        {12, false, {72, 140, 245}, {34, 40, 48}},   // lung left
        {13, false, {184, 142, 243}, {28, 38, 46}},  // lung right
        {14, false, {140, 84, 224}, {26, 22, 26}},   // heart
        {15, false, {170, 110, 170}, {40, 44, 28}},  // liver
        {16, false, {66, 120, 175}, {20, 22, 18}},   // spleen
        {17, false, {88, 150, 138}, {16, 14, 22}},   // left kidney
        {18, false, {166, 152, 132}, {15, 15, 20}},  // right kidney
        {19, false, {130, 92, 62}, {18, 18, 16}},    // urinary bladder
    };
    return table;
}

bool inside_blob(const PhantomBlob& b, const Arr3d& p) {
    Arr3d u = (p - b.center_mm) / b.half_mm;
    if (b.cuboid) return (u.abs() <= 1.0).all();
    return (u * u).sum() <= 1.0;
}

// Paints every voxel whose center maps into the blob under x -> s*x + t.
// scale = 1, t = 0 paints in phantom coordinates directly.
void paint_blob(LabelVolume& vol, const PhantomBlob& b, const Arr3d& scale, const Arr3d& t,
                bool check_disjoint) {
    const Grid& g = vol.grid;
    Arr3i lo, hi;
    for (int a = 0; a < 3; ++a) {
        double x0 = (b.center_mm[a] - b.half_mm[a] - t[a]) / scale[a];
        double x1 = (b.center_mm[a] + b.half_mm[a] - t[a]) / scale[a];
        double f0 = (x0 - g.origin_mm[a]) / g.spacing_mm[a];
        double f1 = (x1 - g.origin_mm[a]) / g.spacing_mm[a];
        lo[a] = std::max(0, int(std::ceil(f0 - 1e-9)));
        hi[a] = std::min(g.dims[a] - 1, int(std::floor(f1 + 1e-9)));
    }
    for (int k = lo[2]; k <= hi[2]; ++k)
        for (int j = lo[1]; j <= hi[1]; ++j)
            for (int i = lo[0]; i <= hi[0]; ++i) {
                Arr3d y = scale * g.coord(i, j, k) + t;
                if (!inside_blob(b, y)) continue;
                Label& v = vol.at(i, j, k);
                if (check_disjoint)
                    require(v == 0, errc::internal_consistency,
                            "phantom blobs " + std::to_string(v) + " and " +
                                std::to_string(b.cls) + " claim one voxel");
                v = Label(b.cls);
            }
}

struct ClassBounds {
    Arr3i lo{0, 0, 0};
    Arr3i hi{-1, -1, -1};
    bool any = false;
};

std::vector<ClassBounds> class_bounds(const LabelVolume& vol) {
    std::vector<ClassBounds> out(std::size_t(vol.num_classes));
    const Arr3i& d = vol.grid.dims;
    std::int64_t n = 0;
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i, ++n) {
                Label c = vol.voxels[std::size_t(n)];
                if (c == 0) continue;
                ClassBounds& cb = out[std::size_t(c - 1)];
                Arr3i p(i, j, k);
                if (!cb.any) {
                    cb.lo = cb.hi = p;
                    cb.any = true;
                } else {
                    cb.lo = cb.lo.min(p);
                    cb.hi = cb.hi.max(p);
                }
            }
    return out;
}

// One 6-neighborhood dilation step of class c into background, within bounds.
void dilate_class(LabelVolume& vol, Label c, ClassBounds& cb) {
    const Arr3i& d = vol.grid.dims;
    Arr3i lo = (cb.lo - 1).max(Arr3i(0, 0, 0));
    Arr3i hi = (cb.hi + 1).min(d - 1);
    std::vector<std::int64_t> grow;
    for (int k = lo[2]; k <= hi[2]; ++k)
        for (int j = lo[1]; j <= hi[1]; ++j)
            for (int i = lo[0]; i <= hi[0]; ++i) {
                if (vol.at(i, j, k) != 0) continue;
                bool touch = (i > 0 && vol.at(i - 1, j, k) == c) ||
                             (i + 1 < d[0] && vol.at(i + 1, j, k) == c) ||
                             (j > 0 && vol.at(i, j - 1, k) == c) ||
                             (j + 1 < d[1] && vol.at(i, j + 1, k) == c) ||
                             (k > 0 && vol.at(i, j, k - 1) == c) ||
                             (k + 1 < d[2] && vol.at(i, j, k + 1) == c);
                if (touch) grow.push_back(vol.grid.linear(i, j, k));
            }
    for (auto n : grow) vol.voxels[std::size_t(n)] = c;
    cb.lo = lo;
    cb.hi = hi;
}

// One erosion step: voxels of class c with any non-c face neighbor (the
// volume border counts as background) turn into background.
void erode_class(LabelVolume& vol, Label c, const ClassBounds& cb) {
    const Arr3i& d = vol.grid.dims;
    std::vector<std::int64_t> shrink;
    for (int k = cb.lo[2]; k <= cb.hi[2]; ++k)
        for (int j = cb.lo[1]; j <= cb.hi[1]; ++j)
            for (int i = cb.lo[0]; i <= cb.hi[0]; ++i) {
                if (vol.at(i, j, k) != c) continue;
                bool interior = i > 0 && vol.at(i - 1, j, k) == c && i + 1 < d[0] &&
                                vol.at(i + 1, j, k) == c && j > 0 && vol.at(i, j - 1, k) == c &&
                                j + 1 < d[1] && vol.at(i, j + 1, k) == c && k > 0 &&
                                vol.at(i, j, k - 1) == c && k + 1 < d[2] &&
                                vol.at(i, j, k + 1) == c;
                if (!interior) shrink.push_back(vol.grid.linear(i, j, k));
            }
    for (auto n : shrink) vol.voxels[std::size_t(n)] = 0;
}

void validate_config(const CaseConfig& cfg) {
    require(cfg.max_translation_frac >= 0.0 && cfg.max_translation_frac <= 0.4,
            errc::invalid_argument, "max_translation_frac must lie in [0, 0.4]");
    require(cfg.scale_min >= 0.8 && cfg.scale_max <= 1.25 && cfg.scale_min <= cfg.scale_max,
            errc::invalid_argument, "scale range must lie within [0.8, 1.25]");
    require(cfg.fov_crop_frac >= 0.0 && cfg.fov_crop_frac <= 0.6, errc::invalid_argument,
            "fov_crop_frac must lie in [0, 0.6]");
    require(cfg.dropout_classes >= 0 && cfg.dropout_classes <= 10, errc::invalid_argument,
            "dropout_classes must lie in [0, 10]");
    require(cfg.boundary_noise_vox >= 0 && cfg.boundary_noise_vox <= 2, errc::invalid_argument,
            "boundary_noise_vox must lie in [0, 2]");
    require((cfg.scan_spacing_mm > 0.0).all() && (cfg.scan_spacing_mm <= 5.0).all(),
            errc::invalid_argument, "scan spacing must lie in (0, 5] mm");
    require(cfg.lesion_radius_min_mm >= 3.0 && cfg.lesion_radius_max_mm <= 20.0 &&
                cfg.lesion_radius_min_mm <= cfg.lesion_radius_max_mm,
            errc::invalid_argument, "lesion radius range must lie within [3, 20] mm");
}

int resolve_class(const std::string& name) {
    LabelSchema schema = default_schema();
    for (int c = 1; c <= schema.num_classes(); ++c)
        if (schema.names[std::size_t(c - 1)] == name) return c;
    fail(errc::invalid_argument, "unknown organ \"" + name + "\"");
}

}  // namespace

const std::vector<PhantomBlob>& phantom_blobs() { return blob_table(); }

Arr3d phantom_extent_mm() { return Arr3d(256.0, 256.0, 400.0); }

LabelVolume canonical_phantom(double spacing_mm) {
    require(spacing_mm > 0.0 && spacing_mm <= 10.0, errc::invalid_argument,
            "phantom spacing must lie in (0, 10] mm");
    Arr3d extent = phantom_extent_mm();
    Grid g;
    for (int a = 0; a < 3; ++a)
        g.dims[a] = int(std::max<long long>(1, std::llround(extent[a] / spacing_mm)));
    g.spacing_mm = Arr3d(spacing_mm, spacing_mm, spacing_mm);
    g.origin_mm = (extent - spacing_mm * (g.dims.cast<double>() - 1.0)) / 2.0;

    LabelVolume vol = make_label_volume(g, int(blob_table().size()));
    for (const PhantomBlob& b : blob_table())
        paint_blob(vol, b, Arr3d(1, 1, 1), Arr3d(0, 0, 0), true);
    return vol;
}

PhantomCase sample_case(std::uint64_t seed, const CaseConfig& cfg) {
    validate_config(cfg);
    const int num_classes = int(blob_table().size());
    int lesion_cls = resolve_class(cfg.lesion_organ);

    // Fixed draw order keeps cases comparable across configs sharing a seed.
    Rng rng(seed);
    int k_rot = rng.uniform_int(4);
    bool flip_z = rng.coin();
    RestrictedOrientation orient =
        cfg.vary_orientation ? make_orientation(k_rot, flip_z) : RestrictedOrientation{};
    Arr3d scale, t;
    for (int a = 0; a < 3; ++a) scale[a] = rng.uniform(cfg.scale_min, cfg.scale_max);
    Arr3d extent = phantom_extent_mm();
    for (int a = 0; a < 3; ++a) {
        double tau = cfg.max_translation_frac * extent[a];
        t[a] = rng.uniform(-tau, tau);
    }
    bool crop_low = rng.coin();
    double crop_amount = rng.uniform(0.0, cfg.fov_crop_frac);
    std::vector<int> dropout_order(static_cast<std::size_t>(num_classes));
    std::iota(dropout_order.begin(), dropout_order.end(), 1);
    for (int i = num_classes - 1; i > 0; --i)
        std::swap(dropout_order[std::size_t(i)], dropout_order[std::size_t(rng.uniform_int(i + 1))]);
    std::vector<int> noise(static_cast<std::size_t>(num_classes));
    for (int& a : noise) a = rng.uniform_int(2 * cfg.boundary_noise_vox + 1) - cfg.boundary_noise_vox;
    int lesion_axis = rng.uniform_int(3);
    double lesion_sign = rng.coin() ? 1.0 : -1.0;
    double lesion_r = rng.uniform(cfg.lesion_radius_min_mm, cfg.lesion_radius_max_mm);

    // Scan grid: preimage of the anatomy hull plus margin, so the full
    // phantom (and any lesion) fits the field of view before cropping.
    Arr3d hull_lo = blob_table()[0].center_mm, hull_hi = blob_table()[0].center_mm;
    for (const PhantomBlob& b : blob_table()) {
        hull_lo = hull_lo.min(b.center_mm - b.half_mm);
        hull_hi = hull_hi.max(b.center_mm + b.half_mm);
    }
    const double margin = 25.0;
    Grid g;
    g.spacing_mm = cfg.scan_spacing_mm;
    for (int a = 0; a < 3; ++a) {
        double x0 = (hull_lo[a] - margin - t[a]) / scale[a];
        double x1 = (hull_hi[a] + margin - t[a]) / scale[a];
        g.dims[a] = int(std::floor((x1 - x0) / g.spacing_mm[a])) + 1;
        g.origin_mm[a] = x0;
    }

    LabelVolume labels = make_label_volume(g, num_classes);
    for (const PhantomBlob& b : blob_table()) paint_blob(labels, b, scale, t, false);

    const PhantomBlob& organ = blob_table()[std::size_t(lesion_cls - 1)];
    PhantomBlob lesion;
    lesion.cls = 1;
    lesion.cuboid = false;
    lesion.center_mm = organ.center_mm;
    lesion.center_mm[lesion_axis] +=
        lesion_sign * (organ.half_mm[lesion_axis] + 0.5 * lesion_r);
    lesion.half_mm = Arr3d(lesion_r, lesion_r, lesion_r);
    LabelVolume roi = make_label_volume(g, 1);
    paint_blob(roi, lesion, scale, t, false);

    labels = apply_orientation(labels, inverse(orient));
    roi = apply_orientation(roi, inverse(orient));

    Arr3d center_before = labels.grid.physical_center();
    int nz = labels.grid.dims[2];
    int keep = nz - int(std::floor(nz * crop_amount));
    if (keep < 1) keep = 1;
    if (keep < nz) {
        VoxelBox box;
        box.lo = Arr3i(0, 0, crop_low ? nz - keep : 0);
        box.hi = Arr3i(labels.grid.dims[0] - 1, labels.grid.dims[1] - 1,
                       crop_low ? nz - 1 : keep - 1);
        labels = crop(labels, box);
        roi = crop(roi, box);
        // the transform convention pivots on the scan's physical center, so
        // trimming the grid shifts the equivalent translation
        Arr3d d = labels.grid.physical_center() - center_before;
        t = t - scale * (d - orient_offset(orient, d));
    }

    for (int i = 0; i < cfg.dropout_classes; ++i) {
        Label gone = Label(dropout_order[std::size_t(i)]);
        for (Label& v : labels.voxels)
            if (v == gone) v = 0;
    }

    if (cfg.boundary_noise_vox > 0) {
        std::vector<ClassBounds> bounds = class_bounds(labels);
        for (int c = 1; c <= num_classes; ++c) {
            ClassBounds& cb = bounds[std::size_t(c - 1)];
            if (!cb.any) continue;
            int amount = noise[std::size_t(c - 1)];
            for (int step = 0; step < amount; ++step) dilate_class(labels, Label(c), cb);
            for (int step = 0; step < -amount; ++step) erode_class(labels, Label(c), cb);
        }
    }

    PhantomCase out;
    out.labels = std::move(labels);
    out.roi = std::move(roi);
    out.truth = make_affine(orient, scale, t);
    out.seed = seed;
    out.lesion_class = lesion_cls;
    return out;
}

FloatVolume intensity_from_labels(const LabelVolume& labels) {
    FloatVolume out = make_volume<float>(labels.grid, -100.0f);
    for (std::size_t n = 0; n < labels.voxels.size(); ++n)
        if (labels.voxels[n] != 0) out.voxels[n] = -100.0f + 60.0f * float(labels.voxels[n]);
    return out;
}

}  // namespace ctarr
