#pragma once

#include <vector>

#include "ctarr/types.hpp"

namespace ctarr {

// Nearest-neighbor resampling of a label volume onto a new spacing. The
// output grid covers the same physical extent (within one output voxel) and
// keeps the physical center of the input grid.
LabelVolume resample_labels(const LabelVolume& vol, const Arr3d& target_spacing_mm);

// Pure index permutation/reversal: k_rot quarter turns in the xy index plane,
// then a z reversal if flip_z. Dims and spacing permute with the axes; the
// origin is chosen so the physical center of the grid stays fixed, matching
// orient_point about that center.
LabelVolume apply_orientation(const LabelVolume& vol, const RestrictedOrientation& o);
FloatVolume apply_orientation(const FloatVolume& vol, const RestrictedOrientation& o);

// Unweighted mean physical coordinate of each class's voxels.
LandmarkSet center_of_mass(const LabelVolume& vol);

// Voxel count per class, index c-1; absent classes report 0.
std::vector<double> class_volumes(const LabelVolume& vol);

// Bit-exact subarray copy over inclusive index ranges; the origin advances by
// spacing * box.lo.
LabelVolume crop(const LabelVolume& vol, const VoxelBox& box);
FloatVolume crop(const FloatVolume& vol, const VoxelBox& box);

// One-hot channels: channel c-1 is 1.0 where label == c.
std::vector<FloatVolume> to_soft_masks(const LabelVolume& vol);

// Trilinear sample at a fractional voxel index, zero outside the grid.
float sample_trilinear(const FloatVolume& vol, const Arr3d& frac_index);

// 8-corner trilinear stencil at a fractional voxel index. inside is false
// (and corners/weights unset) when the point leaves [0, dims-1] on any axis.
// Corner j = dx + 2*dy + 4*dz; weights are exact doubles, so independent
// consumers of the same stencil agree bit for bit.
struct TrilinearStencil {
    bool inside = false;
    std::int64_t corner[8];
    double weight[8];
};
TrilinearStencil trilinear_stencil(const Grid& g, const Arr3d& frac_index);

// Trilinear sample of the one-hot mask of class cls, zero outside the grid.
double sample_onehot_trilinear(const LabelVolume& vol, int cls, const Arr3d& frac_index);

// 6-neighborhood binary dilation, iterated.
std::vector<std::uint8_t> dilate6(const std::vector<std::uint8_t>& mask, const Arr3i& dims,
                                  int iterations);

}  // namespace ctarr
