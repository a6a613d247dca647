#pragma once

#include <string>

#include "ctarr/types.hpp"

namespace ctarr {

enum class VolumeFormat {
    native,  // one-line JSON header + raw little-endian payload
    nifti,   // NIfTI-1 subset, gzipped when the path ends in .gz
};

// Reads either format (detected from the file content, not the extension) and
// validates that every voxel is an integer label in [0, num_classes].
LabelVolume read_label_volume(const std::string& path, int num_classes);

// Reads either format as float values, applying NIfTI scl_slope/scl_inter.
FloatVolume read_value_volume(const std::string& path);

void write_volume(const LabelVolume& vol, const std::string& path, VolumeFormat format);
void write_volume(const FloatVolume& vol, const std::string& path, VolumeFormat format);

}  // namespace ctarr
