#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ctarr/grid.hpp"

namespace ctarr {

// Ordered class names; class ID c maps to names[c-1].
struct LabelSchema {
    std::vector<std::string> names;

    int num_classes() const { return int(names.size()); }
    bool operator==(const LabelSchema& o) const { return names == o.names; }
};

// The 19-class whole-body schema the atlas pipeline is built around.
LabelSchema default_schema();

LabelSchema make_schema(std::vector<std::string> names);

// Discrete orientation: k_rot 90-degree rotations in the xy index plane plus
// an optional z-axis flip. The 8 values form a group (C4 x C2): k_rot adds
// mod 4, flip_z XORs, and the two commute.
struct RestrictedOrientation {
    int k_rot = 0;
    bool flip_z = false;

    bool identity() const { return k_rot == 0 && !flip_z; }
    bool operator==(const RestrictedOrientation& o) const {
        return k_rot == o.k_rot && flip_z == o.flip_z;
    }
};

RestrictedOrientation make_orientation(int k_rot, bool flip_z);

// b after a: returns the orientation equivalent to applying a first, then b.
inline RestrictedOrientation compose(const RestrictedOrientation& b,
                                     const RestrictedOrientation& a) {
    return RestrictedOrientation{(a.k_rot + b.k_rot) % 4, bool(a.flip_z ^ b.flip_z)};
}

inline RestrictedOrientation inverse(const RestrictedOrientation& o) {
    return RestrictedOrientation{(4 - o.k_rot) % 4, o.flip_z};
}

// All 8 orientations in deterministic (k_rot, flip_z) order.
std::vector<RestrictedOrientation> all_orientations();

// Rotate/flip a physical offset from the pivot point. k_rot = 1 maps
// (dx, dy) -> (dy, -dx), matching the array op on voxel indices.
Arr3d orient_offset(const RestrictedOrientation& o, const Arr3d& offset);

inline Arr3d orient_point(const RestrictedOrientation& o, const Arr3d& p, const Arr3d& pivot) {
    return pivot + orient_offset(o, p - pivot);
}

// Scale clamp applied during refinement; inter-subject anatomy never needs more.
inline constexpr double kScaleMin = 0.5;
inline constexpr double kScaleMax = 2.0;

// Restricted affine transform: orientation, then per-axis scale and
// translation. On an orientation-normalized moving point x the forward map is
// s * x + t (into atlas coordinates); the inverse on an atlas point y is
// (y - t) / s.
struct RestrictedAffine {
    RestrictedOrientation orientation;
    Arr3d scale{1.0, 1.0, 1.0};
    Arr3d translation_mm{0.0, 0.0, 0.0};

    Arr3d to_atlas(const Arr3d& x) const { return scale * x + translation_mm; }
    Arr3d from_atlas(const Arr3d& y) const { return (y - translation_mm) / scale; }
};

RestrictedAffine make_affine(const RestrictedOrientation& o, const Arr3d& scale,
                             const Arr3d& translation_mm);

// Axis-aligned physical box, min < max componentwise.
struct BoundingBox {
    Arr3d min_mm{0.0, 0.0, 0.0};
    Arr3d max_mm{0.0, 0.0, 0.0};

    Arr3d size_mm() const { return max_mm - min_mm; }
    double volume_mm3() const { return size_mm().prod(); }
    bool overlaps(const BoundingBox& o) const {
        return (min_mm < o.max_mm).all() && (o.min_mm < max_mm).all();
    }
    BoundingBox hull(const BoundingBox& o) const {
        return BoundingBox{min_mm.min(o.min_mm), max_mm.max(o.max_mm)};
    }
    BoundingBox inflated(double margin_mm) const {
        return BoundingBox{min_mm - margin_mm, max_mm + margin_mm};
    }
};

BoundingBox make_box(const Arr3d& min_mm, const Arr3d& max_mm);

// Inclusive voxel index ranges of a crop.
struct VoxelBox {
    Arr3i lo{0, 0, 0};
    Arr3i hi{0, 0, 0};  // inclusive

    Arr3i size() const { return hi - lo + 1; }
    std::int64_t num_voxels() const { return size().cast<std::int64_t>().prod(); }
};

// Named set of non-overlapping boxes in atlas physical coordinates.
struct RegionDefinition {
    std::string name;
    std::vector<BoundingBox> boxes;
    double threshold = 0.0;
    double margin_mm = 10.0;
    int n_examples = 0;
};

RegionDefinition make_region(std::string name, std::vector<BoundingBox> boxes, double threshold,
                             double margin_mm, int n_examples = 0);

// Per-class centers of mass; a point is defined iff the class has >= 1 voxel.
struct LandmarkSet {
    std::vector<Arr3d> points_mm;  // index c-1; valid only where present
    std::vector<bool> present;

    int num_classes() const { return int(present.size()); }
};

// Per-class registration weights, nonnegative, summing to 1; zero exactly for
// classes absent from the moving volume.
struct CoverageWeights {
    std::vector<double> w;

    int num_classes() const { return int(w.size()); }
};

// Probabilistic atlas: one probability channel per class on a fixed 3 mm
// isotropic grid, with per-class landmarks (probability-weighted centroids)
// and channel sums precomputed.
struct AtlasSegmentation {
    Grid grid;
    LabelSchema schema;
    std::vector<FloatVolume> prob;      // index c-1, values in [0,1]
    std::vector<Arr3d> landmarks_mm;    // index c-1
    std::vector<double> class_volumes;  // index c-1, voxel-sum of each channel, > 0

    int num_classes() const { return schema.num_classes(); }
};

inline constexpr double kAtlasSpacingMm = 3.0;

// Builds an atlas from probability channels; landmarks and class volumes are
// computed here, never trusted from the caller.
AtlasSegmentation make_atlas(const Grid& grid, LabelSchema schema, std::vector<FloatVolume> prob);

// One-hot atlas standing in for a probabilistic one; every class must occur.
AtlasSegmentation atlas_from_labels(const LabelVolume& vol, LabelSchema schema);

// Voxel-wise mean of ROI masks warped onto the atlas grid.
struct Heatmap {
    Grid grid;
    int count = 0;
    std::vector<double> sum;  // per-voxel sum of warped masks

    double mean_at(std::int64_t idx) const { return count == 0 ? 0.0 : sum[idx] / count; }
    FloatVolume mean() const;
};

Heatmap make_heatmap(const Grid& atlas_grid);

}  // namespace ctarr
