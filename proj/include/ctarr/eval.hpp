#pragma once

#include <string>
#include <vector>

#include "ctarr/grid.hpp"
#include "ctarr/types.hpp"

namespace ctarr {

// Dice overlap of two binary masks (nonzero = inside), 2|a n b| / (|a| + |b|).
// Two empty masks agree vacuously and score 1. Raises dim_mismatch when the
// volumes differ in shape.
double dice_score(const LabelVolume& a, const LabelVolume& b);

// Pearson correlation of voxel values, in [-1, 1]. A constant input has no
// correlation defined and raises undefined_ncc.
double ncc(const FloatVolume& a, const FloatVolume& b);

struct CropMetrics {
    double preserved_pct = 0.0;        // percent of fg voxels inside the box union
    double fg_fraction_before = 0.0;   // |fg| / |volume|
    double fg_fraction_after = 0.0;    // |fg inside| / |box union|
};

// Foreground bookkeeping for a set of crop boxes (inclusive index ranges,
// each inside the volume; overlap between boxes is counted once). An empty
// foreground is preserved vacuously: preserved_pct = 100.
CropMetrics crop_metrics(const LabelVolume& fg, const std::vector<VoxelBox>& boxes);

// Rows of {"metric", "value"} JSON objects, one per figure of merit.
std::string metrics_json(const CropMetrics& m);

}  // namespace ctarr
