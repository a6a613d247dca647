#include "ctarr/volume_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace ctarr {

namespace {

// Forward index map of an orientation: input (i,j,k) with input dims -> output index.
inline Arr3i orient_index(const RestrictedOrientation& o, int i, int j, int k,
                          const Arr3i& dims) {
    const int nx = dims[0], ny = dims[1], nz = dims[2];
    int oi = i, oj = j;
    switch (o.k_rot & 3) {
        case 1:
            oi = j;
            oj = nx - 1 - i;
            break;
        case 2:
            oi = nx - 1 - i;
            oj = ny - 1 - j;
            break;
        case 3:
            oi = ny - 1 - j;
            oj = i;
            break;
        default:
            break;
    }
    return Arr3i(oi, oj, o.flip_z ? nz - 1 - k : k);
}

Grid oriented_grid(const Grid& in, const RestrictedOrientation& o) {
    Grid out = in;
    if (o.k_rot % 2 == 1) {
        out.dims = Arr3i(in.dims[1], in.dims[0], in.dims[2]);
        out.spacing_mm = Arr3d(in.spacing_mm[1], in.spacing_mm[0], in.spacing_mm[2]);
    }
    out.origin_mm =
        in.physical_center() - out.spacing_mm * (out.dims.cast<double>() - 1.0) / 2.0;
    return out;
}

template <class T>
void orient_voxels(const std::vector<T>& in, std::vector<T>& out, const Grid& in_grid,
                   const Grid& out_grid, const RestrictedOrientation& o) {
    const int nx = in_grid.dims[0], ny = in_grid.dims[1], nz = in_grid.dims[2];
    std::int64_t idx = 0;
    for (int k = 0; k < nz; ++k)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i, ++idx) {
                Arr3i oi = orient_index(o, i, j, k, in_grid.dims);
                out[std::size_t(out_grid.linear(oi[0], oi[1], oi[2]))] = in[std::size_t(idx)];
            }
}

}  // namespace

LabelVolume resample_labels(const LabelVolume& vol, const Arr3d& target_spacing_mm) {
    require((target_spacing_mm > 0.0).all() && target_spacing_mm.isFinite().all(),
            errc::invalid_argument, "target spacing must be positive");
    const Grid& in = vol.grid;

    Grid out;
    out.spacing_mm = target_spacing_mm;
    for (int a = 0; a < 3; ++a)
        out.dims[a] = int(std::max<std::int64_t>(
            1, std::llround(in.spacing_mm[a] * in.dims[a] / target_spacing_mm[a])));
    // Same physical center; written as an origin offset so the identity
    // resample reproduces the origin bit-exactly.
    out.origin_mm = in.origin_mm + (in.spacing_mm * (in.dims.cast<double>() - 1.0) -
                                    out.spacing_mm * (out.dims.cast<double>() - 1.0)) /
                                       2.0;

    LabelVolume res = make_label_volume(out, vol.num_classes);
    std::int64_t idx = 0;
    for (int k = 0; k < out.dims[2]; ++k)
        for (int j = 0; j < out.dims[1]; ++j)
            for (int i = 0; i < out.dims[0]; ++i, ++idx) {
                Arr3d f = in.index_of(out.coord(i, j, k));
                int si = std::clamp(int(std::llround(f[0])), 0, in.dims[0] - 1);
                int sj = std::clamp(int(std::llround(f[1])), 0, in.dims[1] - 1);
                int sk = std::clamp(int(std::llround(f[2])), 0, in.dims[2] - 1);
                res.voxels[std::size_t(idx)] = vol.at(si, sj, sk);
            }
    return res;
}

LabelVolume apply_orientation(const LabelVolume& vol, const RestrictedOrientation& o) {
    if (o.identity()) return vol;
    Grid out_grid = oriented_grid(vol.grid, o);
    LabelVolume out{out_grid, vol.num_classes,
                    std::vector<Label>(std::size_t(out_grid.num_voxels()))};
    orient_voxels(vol.voxels, out.voxels, vol.grid, out_grid, o);
    return out;
}

FloatVolume apply_orientation(const FloatVolume& vol, const RestrictedOrientation& o) {
    if (o.identity()) return vol;
    Grid out_grid = oriented_grid(vol.grid, o);
    FloatVolume out{out_grid, std::vector<float>(std::size_t(out_grid.num_voxels()))};
    orient_voxels(vol.voxels, out.voxels, vol.grid, out_grid, o);
    return out;
}

LandmarkSet center_of_mass(const LabelVolume& vol) {
    const int C = vol.num_classes;
    std::vector<Arr3d> sums(std::size_t(C), Arr3d(0.0, 0.0, 0.0));
    std::vector<std::int64_t> counts(std::size_t(C), 0);

    const Grid& g = vol.grid;
    std::int64_t idx = 0;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i, ++idx) {
                Label l = vol.voxels[std::size_t(idx)];
                if (l > 0) {
                    sums[std::size_t(l - 1)] += g.coord(i, j, k);
                    counts[std::size_t(l - 1)] += 1;
                }
            }

    LandmarkSet lm;
    lm.points_mm.assign(std::size_t(C), Arr3d(0.0, 0.0, 0.0));
    lm.present.assign(std::size_t(C), false);
    for (int c = 0; c < C; ++c)
        if (counts[std::size_t(c)] > 0) {
            lm.present[std::size_t(c)] = true;
            lm.points_mm[std::size_t(c)] = sums[std::size_t(c)] / double(counts[std::size_t(c)]);
        }
    return lm;
}

std::vector<double> class_volumes(const LabelVolume& vol) {
    std::vector<double> counts(std::size_t(vol.num_classes), 0.0);
    for (Label l : vol.voxels)
        if (l > 0) counts[std::size_t(l - 1)] += 1.0;
    return counts;
}

namespace {

std::string box_to_string(const VoxelBox& b) {
    std::ostringstream oss;
    oss << "[" << b.lo[0] << ".." << b.hi[0] << ", " << b.lo[1] << ".." << b.hi[1] << ", "
        << b.lo[2] << ".." << b.hi[2] << "]";
    return oss.str();
}

template <class T>
void copy_subarray(const std::vector<T>& in, const Grid& in_grid, const VoxelBox& box,
                   std::vector<T>& out) {
    const Arr3i sz = box.size();
    out.resize(std::size_t(box.num_voxels()));
    std::size_t dst = 0;
    for (int k = 0; k < sz[2]; ++k)
        for (int j = 0; j < sz[1]; ++j) {
            std::int64_t src = in_grid.linear(box.lo[0], box.lo[1] + j, box.lo[2] + k);
            std::memcpy(&out[dst], &in[std::size_t(src)], std::size_t(sz[0]) * sizeof(T));
            dst += std::size_t(sz[0]);
        }
}

Grid cropped_grid(const Grid& in, const VoxelBox& box) {
    require((box.lo >= 0).all() && (box.hi < in.dims).all(), errc::invalid_argument,
            "crop ranges must be clipped to the volume beforehand");
    Grid out = in;
    out.dims = box.size();
    out.origin_mm = in.origin_mm + in.spacing_mm * box.lo.cast<double>();
    return out;
}

}  // namespace

LabelVolume crop(const LabelVolume& vol, const VoxelBox& box) {
    if ((box.hi < box.lo).any())
        fail(errc::empty_crop, "empty crop ranges " + box_to_string(box));
    LabelVolume out;
    out.grid = cropped_grid(vol.grid, box);
    out.num_classes = vol.num_classes;
    copy_subarray(vol.voxels, vol.grid, box, out.voxels);
    return out;
}

FloatVolume crop(const FloatVolume& vol, const VoxelBox& box) {
    if ((box.hi < box.lo).any())
        fail(errc::empty_crop, "empty crop ranges " + box_to_string(box));
    FloatVolume out;
    out.grid = cropped_grid(vol.grid, box);
    copy_subarray(vol.voxels, vol.grid, box, out.voxels);
    return out;
}

std::vector<FloatVolume> to_soft_masks(const LabelVolume& vol) {
    std::vector<FloatVolume> masks;
    masks.reserve(std::size_t(vol.num_classes));
    for (int c = 0; c < vol.num_classes; ++c) masks.push_back(make_volume<float>(vol.grid, 0.0f));
    for (std::size_t idx = 0; idx < vol.voxels.size(); ++idx) {
        Label l = vol.voxels[idx];
        if (l > 0) masks[std::size_t(l - 1)].voxels[idx] = 1.0f;
    }
    return masks;
}

float sample_trilinear(const FloatVolume& vol, const Arr3d& f) {
    const Arr3i& d = vol.grid.dims;
    if ((f < 0.0).any() || (f > (d.cast<double>() - 1.0)).any()) return 0.0f;
    int i0 = std::min(int(f[0]), d[0] - 2);
    int j0 = std::min(int(f[1]), d[1] - 2);
    int k0 = std::min(int(f[2]), d[2] - 2);
    i0 = std::max(i0, 0);
    j0 = std::max(j0, 0);
    k0 = std::max(k0, 0);
    double dx = f[0] - i0, dy = f[1] - j0, dz = f[2] - k0;
    auto v = [&](int a, int b, int c) { return double(vol.at(a, b, c)); };
    double c00 = v(i0, j0, k0) * (1 - dx) + v(i0 + 1, j0, k0) * dx;
    double c10 = v(i0, j0 + 1, k0) * (1 - dx) + v(i0 + 1, j0 + 1, k0) * dx;
    double c01 = v(i0, j0, k0 + 1) * (1 - dx) + v(i0 + 1, j0, k0 + 1) * dx;
    double c11 = v(i0, j0 + 1, k0 + 1) * (1 - dx) + v(i0 + 1, j0 + 1, k0 + 1) * dx;
    double c0 = c00 * (1 - dy) + c10 * dy;
    double c1 = c01 * (1 - dy) + c11 * dy;
    return float(c0 * (1 - dz) + c1 * dz);
}

TrilinearStencil trilinear_stencil(const Grid& g, const Arr3d& f) {
    TrilinearStencil s;
    for (int a = 0; a < 3; ++a)
        if (!(f[a] >= 0.0 && f[a] <= double(g.dims[a] - 1))) return s;
    s.inside = true;
    int lo[3], hi[3];
    double fr[3];
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(int(f[a]), g.dims[a] - 2);
        if (lo[a] < 0) lo[a] = 0;
        hi[a] = std::min(lo[a] + 1, g.dims[a] - 1);  // weight is 0 when clamped
        fr[a] = f[a] - double(lo[a]);
    }
    const std::int64_t sx = 1, sy = g.dims[0], sz = std::int64_t(g.dims[0]) * g.dims[1];
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                int j = dx + 2 * dy + 4 * dz;
                s.corner[j] = (dx ? hi[0] : lo[0]) * sx + (dy ? hi[1] : lo[1]) * sy +
                              (dz ? hi[2] : lo[2]) * sz;
                s.weight[j] = (dx ? fr[0] : 1.0 - fr[0]) * (dy ? fr[1] : 1.0 - fr[1]) *
                              (dz ? fr[2] : 1.0 - fr[2]);
            }
    return s;
}

double sample_onehot_trilinear(const LabelVolume& vol, int cls, const Arr3d& f) {
    const Arr3i& d = vol.grid.dims;
    if ((f < 0.0).any() || (f > (d.cast<double>() - 1.0)).any()) return 0.0;
    int i0 = std::clamp(int(f[0]), 0, d[0] - 2);
    int j0 = std::clamp(int(f[1]), 0, d[1] - 2);
    int k0 = std::clamp(int(f[2]), 0, d[2] - 2);
    double dx = f[0] - i0, dy = f[1] - j0, dz = f[2] - k0;
    auto v = [&](int a, int b, int c) { return vol.at(a, b, c) == cls ? 1.0 : 0.0; };
    double c00 = v(i0, j0, k0) * (1 - dx) + v(i0 + 1, j0, k0) * dx;
    double c10 = v(i0, j0 + 1, k0) * (1 - dx) + v(i0 + 1, j0 + 1, k0) * dx;
    double c01 = v(i0, j0, k0 + 1) * (1 - dx) + v(i0 + 1, j0, k0 + 1) * dx;
    double c11 = v(i0, j0 + 1, k0 + 1) * (1 - dx) + v(i0 + 1, j0 + 1, k0 + 1) * dx;
    double c0 = c00 * (1 - dy) + c10 * dy;
    double c1 = c01 * (1 - dy) + c11 * dy;
    return c0 * (1 - dz) + c1 * dz;
}

std::vector<std::uint8_t> dilate6(const std::vector<std::uint8_t>& mask, const Arr3i& dims,
                                  int iterations) {
    const int nx = dims[0], ny = dims[1], nz = dims[2];
    const std::int64_t sx = 1, sy = nx, sz = std::int64_t(nx) * ny;
    std::vector<std::uint8_t> cur = mask;
    std::vector<std::uint8_t> next(cur.size());
    for (int it = 0; it < iterations; ++it) {
        next = cur;
        std::int64_t idx = 0;
        for (int k = 0; k < nz; ++k)
            for (int j = 0; j < ny; ++j)
                for (int i = 0; i < nx; ++i, ++idx) {
                    if (cur[std::size_t(idx)]) continue;
                    bool hit = (i > 0 && cur[std::size_t(idx - sx)]) ||
                               (i + 1 < nx && cur[std::size_t(idx + sx)]) ||
                               (j > 0 && cur[std::size_t(idx - sy)]) ||
                               (j + 1 < ny && cur[std::size_t(idx + sy)]) ||
                               (k > 0 && cur[std::size_t(idx - sz)]) ||
                               (k + 1 < nz && cur[std::size_t(idx + sz)]);
                    if (hit) next[std::size_t(idx)] = 1;
                }
        cur.swap(next);
    }
    return cur;
}

}  // namespace ctarr
