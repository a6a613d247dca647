#pragma once

#include <string>
#include <vector>

#include "ctarr/types.hpp"

namespace ctarr {

struct AtlasBuildReport {
    int cohort_size = 0;
    int valid_scans = 0;
    std::vector<std::size_t> rejected;    // cohort indices
    std::vector<std::string> reasons;     // parallel to rejected
    double wall_ms = 0.0;
};

// Builds the probabilistic atlas from a labeled cohort. Scans are resampled
// to the atlas spacing; each is registered to every other (the other scan's
// one-hot masks standing in for atlas probabilities). A scan whose pairwise
// orientations are mostly non-identity is rejected, as is one missing a
// class. Per scan, the pairwise (s, t) are averaged and used to warp its
// one-hot masks onto a common grid (the valid scan with the largest physical
// z extent); the voxel-wise mean over n valid scans is the provisional
// atlas. A second registration pass against the provisional atlas and a
// second mean give the final atlas. jobs > 1 runs registrations in parallel;
// the averaging order is fixed, so the result is bit-stable.
AtlasSegmentation build_atlas(const std::vector<LabelVolume>& cohort, const LabelSchema& schema,
                              int jobs = 1, AtlasBuildReport* report = nullptr);

// Atlas directory format: manifest.json plus one raw little-endian float32
// channel file per class (class_<id>_<name>.f32, x-fastest). Landmarks and
// class volumes are recomputed on load and cross-checked against the
// manifest, so a round trip reproduces every field bit for bit.
void save_atlas(const AtlasSegmentation& atlas, const std::string& dir);
AtlasSegmentation load_atlas(const std::string& dir);

}  // namespace ctarr
