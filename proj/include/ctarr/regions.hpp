#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ctarr/registration.hpp"
#include "ctarr/types.hpp"

namespace ctarr {

// Atlas-space box pulled back onto a target grid: inclusive voxel ranges plus
// the fraction of voxels (per axis) lost to clipping at the grid bounds.
struct MappedBox {
    VoxelBox voxels;
    Arr3d clip_frac{0.0, 0.0, 0.0};
};

// Pulls an atlas-space box back through (bb - t) / s onto the target grid of
// the orientation-normalized scan. Voxel ranges floor the min corner and ceil
// the max corner, then clip. A box with no voxels left on some axis raises
// outside_field_of_view.
MappedBox map_box_to_voxels(const BoundingBox& bb, const RestrictedAffine& transform,
                            const Grid& target);

// Full forward map of a box from original scan coordinates into atlas
// coordinates: orientation about the pivot (the moving grid physical center),
// then scale and translation. unmap_box inverts it exactly; the round trip
// reproduces the box to floating-point accuracy.
BoundingBox map_box(const BoundingBox& bb, const RestrictedAffine& transform, const Arr3d& pivot);
BoundingBox unmap_box(const BoundingBox& bb, const RestrictedAffine& transform, const Arr3d& pivot);

struct BoxCropInfo {
    VoxelBox voxels;                  // valid only when in_fov
    Arr3d clip_frac{0.0, 0.0, 0.0};  // valid only when in_fov
    bool in_fov = false;
};

struct CropReport {
    RestrictedAffine transform;
    RegistrationReport registration;
    std::vector<BoxCropInfo> boxes;  // one entry per region box, in order
    double register_ms = 0.0;
    double crop_ms = 0.0;
};

struct CropResult {
    std::vector<FloatVolume> crops;  // one per in-FOV region box, in box order
    CropReport report;
};

// Registers seg_moving to the atlas, applies the found orientation to the
// image, maps every region box into the normalized image grid, and crops.
// image and seg_moving must share the physical frame; seg_moving may be a
// coarser resampling of the same extent. Boxes outside the field of view are
// skipped with a report entry; if no box intersects the scan, raises
// outside_field_of_view.
CropResult crop_region(const FloatVolume& image, const LabelVolume& seg_moving,
                       const AtlasSegmentation& atlas, const RegionDefinition& region);

// Warps a binary ROI (nonzero = inside) onto the heatmap grid with the scan's
// registration transform and adds it to the running mean. Trilinear weights
// keep every accumulated value, and hence the mean, inside [0, 1].
void accumulate_heatmap(Heatmap& h, const LabelVolume& roi, const RestrictedAffine& transform);

// Thresholds the heatmap mean (strictly > threshold), takes 6-connected
// components, merges overlapping component boxes into their hull to a
// fixpoint in lexicographic order, inflates by margin_mm per face, clips to
// the heatmap extent, and re-merges any overlap the inflation introduced.
// Box corners lie on voxel-extent boundaries (centers +- spacing/2). An empty
// thresholded heatmap raises empty_region.
RegionDefinition boxes_from_heatmap(const Heatmap& h, double threshold, double margin_mm = 10.0,
                                    const std::string& name = "region");

struct InferReport {
    int pairs = 0;
    int used = 0;
    std::vector<std::size_t> failed;   // indices into pairs
    std::vector<std::string> reasons;  // aligned with failed
    double wall_ms = 0.0;
};

// Registers each (seg, roi) pair's seg to the atlas (in parallel when jobs >
// 1), accumulates the ROIs into a heatmap in pair order, and extracts boxes.
// Pairs that fail to register are recorded and skipped; if every pair fails,
// raises empty_region. The result records n_examples = pairs used.
RegionDefinition infer_region(const std::vector<std::pair<LabelVolume, LabelVolume>>& pairs,
                              const AtlasSegmentation& atlas, const std::string& name,
                              double threshold, double margin_mm = 10.0, int jobs = 1,
                              InferReport* report = nullptr);

// Region files are JSON: {schema_version, name, boxes, threshold, margin_mm,
// n_examples}. Loading validates the content through make_region.
void save_region(const RegionDefinition& region, const std::string& path);
RegionDefinition load_region(const std::string& path);

}  // namespace ctarr
