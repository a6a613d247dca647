#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "ctarr/error.hpp"

namespace ctarr {

using Arr3d = Eigen::Array3d;
using Arr3i = Eigen::Array3i;

// Voxel grid geometry. Voxel (i,j,k) sits at origin_mm + spacing_mm * (i,j,k);
// there is no half-voxel offset anywhere. Arrays are stored x-fastest.
struct Grid {
    Arr3i dims{0, 0, 0};
    Arr3d spacing_mm{1.0, 1.0, 1.0};
    Arr3d origin_mm{0.0, 0.0, 0.0};

    std::int64_t num_voxels() const {
        return std::int64_t(dims[0]) * dims[1] * dims[2];
    }
    std::int64_t linear(int i, int j, int k) const {
        return i + std::int64_t(dims[0]) * (j + std::int64_t(dims[1]) * k);
    }
    bool contains(int i, int j, int k) const {
        return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
    }
    Arr3d coord(int i, int j, int k) const {
        return origin_mm + spacing_mm * Arr3d(i, j, k);
    }
    Arr3d coord(const Arr3i& idx) const { return coord(idx[0], idx[1], idx[2]); }
    // Continuous (fractional) voxel index of a physical point.
    Arr3d index_of(const Arr3d& p) const { return (p - origin_mm) / spacing_mm; }
    // Center of the voxel-center lattice; orientation ops pivot here.
    Arr3d physical_center() const {
        return origin_mm + spacing_mm * (dims.cast<double>() - 1.0) / 2.0;
    }
    // Full physical span covered by the grid (each voxel covers one spacing).
    Arr3d extent_mm() const { return spacing_mm * dims.cast<double>(); }

    bool operator==(const Grid& o) const {
        return (dims == o.dims).all() && (spacing_mm == o.spacing_mm).all() &&
               (origin_mm == o.origin_mm).all();
    }
};

inline void validate_grid(const Grid& g) {
    require((g.dims > 0).all(), errc::invalid_argument, "grid dims must be positive");
    require((g.spacing_mm > 0.0).all() && g.spacing_mm.isFinite().all(),
            errc::invalid_argument, "grid spacing must be positive and finite");
    require(g.origin_mm.isFinite().all(), errc::invalid_argument, "grid origin must be finite");
}

// Dense scalar volume on a Grid, x-fastest.
template <class T>
struct Volume {
    Grid grid;
    std::vector<T> voxels;

    T at(int i, int j, int k) const { return voxels[grid.linear(i, j, k)]; }
    T& at(int i, int j, int k) { return voxels[grid.linear(i, j, k)]; }
};

using FloatVolume = Volume<float>;

template <class T>
Volume<T> make_volume(const Grid& grid, std::vector<T> voxels) {
    validate_grid(grid);
    require(std::int64_t(voxels.size()) == grid.num_voxels(), errc::invalid_argument,
            "voxel payload size does not match grid dims");
    return Volume<T>{grid, std::move(voxels)};
}

template <class T>
Volume<T> make_volume(const Grid& grid, T fill = T{}) {
    validate_grid(grid);
    return Volume<T>{grid, std::vector<T>(std::size_t(grid.num_voxels()), fill)};
}

using Label = std::uint8_t;

// Integer-labeled volume; labels are class IDs in 0..num_classes, 0 = background.
struct LabelVolume {
    Grid grid;
    int num_classes = 0;
    std::vector<Label> voxels;

    Label at(int i, int j, int k) const { return voxels[grid.linear(i, j, k)]; }
    Label& at(int i, int j, int k) { return voxels[grid.linear(i, j, k)]; }
};

LabelVolume make_label_volume(const Grid& grid, int num_classes, std::vector<Label> voxels);
LabelVolume make_label_volume(const Grid& grid, int num_classes);

}  // namespace ctarr
