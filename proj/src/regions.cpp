#include "ctarr/regions.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "ctarr/error.hpp"
#include "ctarr/log.hpp"
#include "ctarr/parallel.hpp"
#include "ctarr/volume_ops.hpp"
#include "json.hpp"

namespace ctarr {

namespace {

using nlohmann::json;

double now_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
        .count();
}

void sort_boxes(std::vector<BoundingBox>& boxes) {
    std::sort(boxes.begin(), boxes.end(), [](const BoundingBox& a, const BoundingBox& b) {
        for (int axis = 0; axis < 3; ++axis) {
            if (a.min_mm[axis] != b.min_mm[axis]) return a.min_mm[axis] < b.min_mm[axis];
            if (a.max_mm[axis] != b.max_mm[axis]) return a.max_mm[axis] < b.max_mm[axis];
        }
        return false;
    });
}

// Repeatedly merges the lexicographically first overlapping pair into its
// hull until no two boxes overlap.
void merge_to_fixpoint(std::vector<BoundingBox>& boxes) {
    for (;;) {
        sort_boxes(boxes);
        bool merged = false;
        for (std::size_t i = 0; i < boxes.size() && !merged; ++i)
            for (std::size_t j = i + 1; j < boxes.size() && !merged; ++j)
                if (boxes[i].overlaps(boxes[j])) {
                    boxes[i] = boxes[i].hull(boxes[j]);
                    boxes.erase(boxes.begin() + std::ptrdiff_t(j));
                    merged = true;
                }
        if (!merged) return;
    }
}

}  // namespace

MappedBox map_box_to_voxels(const BoundingBox& bb, const RestrictedAffine& transform,
                            const Grid& target) {
    make_box(bb.min_mm, bb.max_mm);
    Arr3d lo_mm = transform.from_atlas(bb.min_mm);
    Arr3d hi_mm = transform.from_atlas(bb.max_mm);

    MappedBox out;
    for (int a = 0; a < 3; ++a) {
        double f0 = (lo_mm[a] - target.origin_mm[a]) / target.spacing_mm[a];
        double f1 = (hi_mm[a] - target.origin_mm[a]) / target.spacing_mm[a];
        std::int64_t lo = std::int64_t(std::floor(f0));
        std::int64_t hi = std::int64_t(std::ceil(f1));
        std::int64_t clo = std::max<std::int64_t>(lo, 0);
        std::int64_t chi = std::min<std::int64_t>(hi, target.dims[a] - 1);
        if (clo > chi)
            fail(errc::outside_field_of_view,
                 "mapped box lies outside the scan grid on axis " + std::to_string(a));
        out.voxels.lo[a] = int(clo);
        out.voxels.hi[a] = int(chi);
        out.clip_frac[a] = 1.0 - double(chi - clo + 1) / double(hi - lo + 1);
    }
    return out;
}

BoundingBox map_box(const BoundingBox& bb, const RestrictedAffine& transform, const Arr3d& pivot) {
    Arr3d a = transform.to_atlas(orient_point(transform.orientation, bb.min_mm, pivot));
    Arr3d b = transform.to_atlas(orient_point(transform.orientation, bb.max_mm, pivot));
    return BoundingBox{a.min(b), a.max(b)};
}

BoundingBox unmap_box(const BoundingBox& bb, const RestrictedAffine& transform,
                      const Arr3d& pivot) {
    RestrictedOrientation back = inverse(transform.orientation);
    Arr3d a = orient_point(back, transform.from_atlas(bb.min_mm), pivot);
    Arr3d b = orient_point(back, transform.from_atlas(bb.max_mm), pivot);
    return BoundingBox{a.min(b), a.max(b)};
}

CropResult crop_region(const FloatVolume& image, const LabelVolume& seg_moving,
                       const AtlasSegmentation& atlas, const RegionDefinition& region) {
    Arr3d tol = image.grid.spacing_mm.max(seg_moving.grid.spacing_mm);
    require(((image.grid.physical_center() - seg_moving.grid.physical_center()).abs() <= 0.5 * tol)
                    .all() &&
                ((image.grid.extent_mm() - seg_moving.grid.extent_mm()).abs() <= tol).all(),
            errc::invalid_argument, "image and segmentation do not share a physical frame");

    CropResult out;
    auto t0 = std::chrono::steady_clock::now();
    RegistrationResult reg = register_to_atlas(seg_moving, atlas);
    out.report.register_ms = now_ms(t0);
    out.report.transform = reg.transform;
    out.report.registration = reg.report;

    auto t1 = std::chrono::steady_clock::now();
    FloatVolume normalized = reg.transform.orientation.identity()
                                 ? image
                                 : apply_orientation(image, reg.transform.orientation);
    for (const BoundingBox& bb : region.boxes) {
        BoxCropInfo info;
        try {
            MappedBox mb = map_box_to_voxels(bb, reg.transform, normalized.grid);
            info.voxels = mb.voxels;
            info.clip_frac = mb.clip_frac;
            info.in_fov = true;
            out.crops.push_back(crop(normalized, mb.voxels));
        } catch (const Error& e) {
            if (e.code() != errc::outside_field_of_view) throw;
            log::debug("crop_region: box outside field of view, skipping");
        }
        out.report.boxes.push_back(info);
    }
    out.report.crop_ms = now_ms(t1);
    if (out.crops.empty())
        fail(errc::outside_field_of_view,
             "no box of region '" + region.name + "' intersects the scan field of view");
    return out;
}

void accumulate_heatmap(Heatmap& h, const LabelVolume& roi, const RestrictedAffine& transform) {
    const LabelVolume* src = &roi;
    LabelVolume oriented;
    if (!transform.orientation.identity()) {
        oriented = apply_orientation(roi, transform.orientation);
        src = &oriented;
    }
    const Grid& m = src->grid;
    const Grid& g = h.grid;
    Arr3d A, B;
    for (int a = 0; a < 3; ++a) {
        double denom = transform.scale[a] * m.spacing_mm[a];
        A[a] = g.spacing_mm[a] / denom;
        B[a] = (g.origin_mm[a] - transform.translation_mm[a]) / denom -
               m.origin_mm[a] / m.spacing_mm[a];
    }
    const Label* mask = src->voxels.data();
    std::int64_t v = 0;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i, ++v) {
                Arr3d f(double(i) * A[0] + B[0], double(j) * A[1] + B[1],
                        double(k) * A[2] + B[2]);
                TrilinearStencil st = trilinear_stencil(m, f);
                if (!st.inside) continue;
                double val = 0.0;
                for (int n = 0; n < 8; ++n)
                    if (mask[st.corner[n]] != 0) val += st.weight[n];
                h.sum[std::size_t(v)] += val;
            }
    h.count += 1;
}

RegionDefinition boxes_from_heatmap(const Heatmap& h, double threshold, double margin_mm,
                                    const std::string& name) {
    require(threshold >= 0.0, errc::invalid_argument, "threshold must be >= 0");
    require(margin_mm >= 0.0, errc::invalid_argument, "margin must be >= 0");
    const Grid& g = h.grid;
    const std::int64_t nv = g.num_voxels();
    std::vector<std::uint8_t> on(std::size_t(nv), 0);
    bool any = false;
    for (std::int64_t v = 0; v < nv; ++v) {
        on[std::size_t(v)] = h.mean_at(v) > threshold;
        any = any || on[std::size_t(v)];
    }
    if (!any) fail(errc::empty_region, "no heatmap voxel exceeds threshold");

    // 6-connected components, each reduced to its tight voxel index box
    std::vector<BoundingBox> boxes;
    std::vector<std::int64_t> stack;
    const std::int64_t sx = 1, sy = g.dims[0], sz = std::int64_t(g.dims[0]) * g.dims[1];
    for (std::int64_t seed = 0; seed < nv; ++seed) {
        if (!on[std::size_t(seed)]) continue;
        Arr3i lo(g.dims[0], g.dims[1], g.dims[2]), hi(-1, -1, -1);
        stack.assign(1, seed);
        on[std::size_t(seed)] = 0;
        while (!stack.empty()) {
            std::int64_t v = stack.back();
            stack.pop_back();
            int i = int(v % g.dims[0]);
            int j = int((v / sy) % g.dims[1]);
            int k = int(v / sz);
            lo = lo.min(Arr3i(i, j, k));
            hi = hi.max(Arr3i(i, j, k));
            auto visit = [&](bool ok, std::int64_t u) {
                if (ok && on[std::size_t(u)]) {
                    on[std::size_t(u)] = 0;
                    stack.push_back(u);
                }
            };
            visit(i > 0, v - sx);
            visit(i + 1 < g.dims[0], v + sx);
            visit(j > 0, v - sy);
            visit(j + 1 < g.dims[1], v + sy);
            visit(k > 0, v - sz);
            visit(k + 1 < g.dims[2], v + sz);
        }
        boxes.push_back(BoundingBox{
            g.coord(lo) - 0.5 * g.spacing_mm,
            g.coord(hi) + 0.5 * g.spacing_mm,
        });
    }

    merge_to_fixpoint(boxes);
    Arr3d span_lo = g.origin_mm - 0.5 * g.spacing_mm;
    Arr3d span_hi = g.coord(g.dims[0] - 1, g.dims[1] - 1, g.dims[2] - 1) + 0.5 * g.spacing_mm;
    for (BoundingBox& b : boxes) {
        b = b.inflated(margin_mm);
        b.min_mm = b.min_mm.max(span_lo);
        b.max_mm = b.max_mm.min(span_hi);
    }
    merge_to_fixpoint(boxes);
    return make_region(name, std::move(boxes), threshold, margin_mm, h.count);
}

RegionDefinition infer_region(const std::vector<std::pair<LabelVolume, LabelVolume>>& pairs,
                              const AtlasSegmentation& atlas, const std::string& name,
                              double threshold, double margin_mm, int jobs,
                              InferReport* report) {
    auto t0 = std::chrono::steady_clock::now();
    const int n = int(pairs.size());
    require(n >= 1, errc::invalid_argument, "need at least one (seg, roi) pair");
    for (const auto& [seg, roi] : pairs)
        require(roi.grid == seg.grid, errc::invalid_argument,
                "each ROI must live on its segmentation's grid");

    std::vector<RestrictedAffine> tf(std::size_t(n), RestrictedAffine{});
    std::vector<std::string> errs(std::size_t(n), std::string{});
    parallel_for(jobs, n, [&](int i) {
        try {
            tf[std::size_t(i)] = register_to_atlas(pairs[std::size_t(i)].first, atlas).transform;
        } catch (const Error& e) {
            errs[std::size_t(i)] = e.what();
        }
    });

    Heatmap h = make_heatmap(atlas.grid);
    InferReport rep;
    rep.pairs = n;
    for (int i = 0; i < n; ++i) {
        if (errs[std::size_t(i)].empty()) {
            accumulate_heatmap(h, pairs[std::size_t(i)].second, tf[std::size_t(i)]);
            ++rep.used;
        } else {
            log::warn("infer_region: pair " + std::to_string(i) + " failed: " +
                      errs[std::size_t(i)]);
            rep.failed.push_back(std::size_t(i));
            rep.reasons.push_back(errs[std::size_t(i)]);
        }
    }
    if (rep.used == 0)
        fail(errc::empty_region,
             "all " + std::to_string(n) + " pairs failed to register: " + errs[0]);

    RegionDefinition def = boxes_from_heatmap(h, threshold, margin_mm, name);
    rep.wall_ms = now_ms(t0);
    if (report) *report = rep;
    return def;
}

void save_region(const RegionDefinition& region, const std::string& path) {
    json j;
    j["schema_version"] = 1;
    j["name"] = region.name;
    json boxes = json::array();
    for (const BoundingBox& b : region.boxes)
        boxes.push_back({{"min_mm", {b.min_mm[0], b.min_mm[1], b.min_mm[2]}},
                         {"max_mm", {b.max_mm[0], b.max_mm[1], b.max_mm[2]}}});
    j["boxes"] = boxes;
    j["threshold"] = region.threshold;
    j["margin_mm"] = region.margin_mm;
    j["n_examples"] = region.n_examples;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), errc::io_error, "cannot open " + path + " for writing");
    out << j.dump(2) << '\n';
    require(out.good(), errc::io_error, "short write to " + path);
}

RegionDefinition load_region(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), errc::io_error, "cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail(errc::corrupt_file, path + ": malformed JSON: " + e.what());
    }
    require(j.contains("schema_version") && j["schema_version"].get<int>() == 1,
            errc::version_mismatch, path + ": unsupported region schema_version");
    for (const char* key : {"name", "boxes", "threshold", "margin_mm", "n_examples"})
        require(j.contains(key), errc::corrupt_file,
                path + ": region file missing \"" + std::string(key) + "\"");
    try {
        std::vector<BoundingBox> boxes;
        for (const json& b : j["boxes"])
            boxes.push_back(BoundingBox{
                Arr3d(b.at("min_mm")[0].get<double>(), b.at("min_mm")[1].get<double>(),
                      b.at("min_mm")[2].get<double>()),
                Arr3d(b.at("max_mm")[0].get<double>(), b.at("max_mm")[1].get<double>(),
                      b.at("max_mm")[2].get<double>()),
            });
        return make_region(j["name"].get<std::string>(), std::move(boxes),
                           j["threshold"].get<double>(), j["margin_mm"].get<double>(),
                           j["n_examples"].get<int>());
    } catch (const json::exception& e) {
        fail(errc::corrupt_file, path + ": malformed region content: " + e.what());
    } catch (const Error& e) {
        fail(errc::corrupt_file, path + ": invalid region: " + e.what());
    }
}

}  // namespace ctarr
