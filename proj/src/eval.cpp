#include "ctarr/eval.hpp"

#include <cmath>

#include "ctarr/error.hpp"
#include "json.hpp"

namespace ctarr {

double dice_score(const LabelVolume& a, const LabelVolume& b) {
    require((a.grid.dims == b.grid.dims).all(), errc::dim_mismatch,
            "dice_score needs equal volume shapes");
    std::int64_t na = 0, nb = 0, inter = 0;
    for (std::size_t v = 0; v < a.voxels.size(); ++v) {
        bool in_a = a.voxels[v] != 0;
        bool in_b = b.voxels[v] != 0;
        na += in_a;
        nb += in_b;
        inter += in_a && in_b;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * double(inter) / double(na + nb);
}

double ncc(const FloatVolume& a, const FloatVolume& b) {
    require((a.grid.dims == b.grid.dims).all(), errc::dim_mismatch,
            "ncc needs equal volume shapes");
    const std::size_t n = a.voxels.size();
    double mean_a = 0.0, mean_b = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        mean_a += a.voxels[v];
        mean_b += b.voxels[v];
    }
    mean_a /= double(n);
    mean_b /= double(n);
    double cov = 0.0, var_a = 0.0, var_b = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        double da = a.voxels[v] - mean_a;
        double db = b.voxels[v] - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    require(var_a > 0.0 && var_b > 0.0, errc::undefined_ncc,
            "ncc is undefined for a constant volume");
    return cov / (std::sqrt(var_a) * std::sqrt(var_b));
}

CropMetrics crop_metrics(const LabelVolume& fg, const std::vector<VoxelBox>& boxes) {
    const Grid& g = fg.grid;
    for (const VoxelBox& b : boxes)
        require((b.lo >= 0).all() && (b.lo <= b.hi).all() && (b.hi < g.dims).all(),
                errc::invalid_argument, "crop box exceeds the volume bounds");

    std::vector<std::uint8_t> in_union(std::size_t(g.num_voxels()), 0);
    for (const VoxelBox& b : boxes)
        for (int k = b.lo[2]; k <= b.hi[2]; ++k)
            for (int j = b.lo[1]; j <= b.hi[1]; ++j)
                for (int i = b.lo[0]; i <= b.hi[0]; ++i)
                    in_union[std::size_t(g.linear(i, j, k))] = 1;

    std::int64_t n_fg = 0, n_union = 0, n_inside = 0;
    for (std::size_t v = 0; v < fg.voxels.size(); ++v) {
        bool is_fg = fg.voxels[v] != 0;
        n_fg += is_fg;
        n_union += in_union[v];
        n_inside += is_fg && in_union[v];
    }

    CropMetrics m;
    m.preserved_pct = n_fg == 0 ? 100.0 : 100.0 * double(n_inside) / double(n_fg);
    m.fg_fraction_before = double(n_fg) / double(g.num_voxels());
    m.fg_fraction_after = n_union == 0 ? 0.0 : double(n_inside) / double(n_union);
    return m;
}

std::string metrics_json(const CropMetrics& m) {
    nlohmann::json rows = nlohmann::json::array();
    rows.push_back({{"metric", "preserved foreground"}, {"value", m.preserved_pct}});
    rows.push_back({{"metric", "foreground voxels before cropping"},
                    {"value", m.fg_fraction_before}});
    rows.push_back({{"metric", "foreground voxels after cropping"},
                    {"value", m.fg_fraction_after}});
    return rows.dump(2);
}

}  // namespace ctarr
