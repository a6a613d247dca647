#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctarr/types.hpp"

namespace ctarr {

// One synthetic anatomy: an axis-aligned ellipsoid or cuboid in the canonical
// phantom's physical coordinates.
struct PhantomBlob {
    int cls = 0;  // 1-based class ID matching default_schema()
    bool cuboid = false;
    Arr3d center_mm{0, 0, 0};
    Arr3d half_mm{0, 0, 0};  // semi-axes (ellipsoid) or half-extents (cuboid)
};

// The fixed 19-blob layout, one entry per class, mutually disjoint and
// bilaterally asymmetric. Head at high z, pelvis at low z.
const std::vector<PhantomBlob>& phantom_blobs();

// Physical extent the blobs live in.
Arr3d phantom_extent_mm();

// Renders the blob table onto a centered isotropic grid by voxel-center
// membership. Deterministic; throws if two blobs ever claim one voxel.
LabelVolume canonical_phantom(double spacing_mm = kAtlasSpacingMm);

struct CaseConfig {
    bool vary_orientation = true;
    double max_translation_frac = 0.4;  // of phantom extent, per axis
    double scale_min = 0.8;
    double scale_max = 1.25;
    double fov_crop_frac = 0.0;  // fraction of the scan's z range removed
    int dropout_classes = 0;     // classes erased from the labels, <= 10
    int boundary_noise_vox = 0;  // per-class erosion/dilation up to this many voxels
    Arr3d scan_spacing_mm{2.0, 2.0, 2.0};
    std::string lesion_organ = "liver";
    double lesion_radius_min_mm = 6.0;
    double lesion_radius_max_mm = 14.0;
};

struct PhantomCase {
    LabelVolume labels;      // multi-class scan
    LabelVolume roi;         // binary lesion mask on the same grid
    RestrictedAffine truth;  // maps normalized scan points into phantom coordinates
    std::uint64_t seed = 0;
    int lesion_class = 0;    // organ the lesion sits against
};

// Draws a transformed, degraded copy of the canonical phantom with known
// ground truth. Labels are painted analytically (continuous geometry mapped
// through the ground-truth transform), so the only discretization is the scan
// grid itself.
PhantomCase sample_case(std::uint64_t seed, const CaseConfig& config);

// Flat synthetic intensity: one plateau per class over a background level.
FloatVolume intensity_from_labels(const LabelVolume& labels);

}  // namespace ctarr
