#include "ctarr/registration.hpp"

#include <chrono>
#include <cmath>

#include "ctarr/error.hpp"
#include "ctarr/log.hpp"
#include "ctarr/volume_ops.hpp"
#include "json.hpp"

namespace ctarr {

namespace {

constexpr double kDiceEps = 1e-5;
constexpr double kInitialStep = 0.05;
constexpr double kMinImprovement = 0.005;
constexpr int kMaxReductions = 4;
constexpr int kMaxIterations = 500;
constexpr double kScaleProbe = 1e-3;

double weighted_dice_loss(const std::vector<double>& psum, const std::vector<double>& inter,
                          const std::vector<double>& qsum, const CoverageWeights& w) {
    double loss = 1.0;
    for (int c = 0; c < w.num_classes(); ++c) {
        double wc = w.w[std::size_t(c)];
        if (wc == 0.0) continue;
        std::size_t n = std::size_t(c);
        double dice = (2.0 * inter[n] + kDiceEps) / (psum[n] + qsum[n] + kDiceEps);
        loss -= wc * dice;
    }
    return loss;
}

void check_scale_bounds(const Arr3d& scale) {
    require((scale >= kScaleMin).all() && (scale <= kScaleMax).all(), errc::invalid_argument,
            "scale outside the [0.5, 2] clamp bounds");
}

// Fractional moving index as an affine function of the atlas voxel index:
// f_a = index * mul_a + add_a.
struct IndexMap {
    Arr3d mul, add;
};

IndexMap make_index_map(const Grid& atlas_grid, const Grid& moving_grid, const Arr3d& scale,
                        const Arr3d& t) {
    IndexMap m;
    for (int a = 0; a < 3; ++a) {
        double inv = 1.0 / (scale[a] * moving_grid.spacing_mm[a]);
        m.mul[a] = atlas_grid.spacing_mm[a] * inv;
        m.add[a] = (atlas_grid.origin_mm[a] - t[a]) * inv -
                   moving_grid.origin_mm[a] / moving_grid.spacing_mm[a];
    }
    return m;
}

struct MovingStats {
    std::vector<double> volumes_mm3;
    LandmarkSet landmarks;
    CoverageWeights weights;
};

MovingStats moving_stats(const LabelVolume& moving, const AtlasSegmentation& atlas) {
    require(moving.num_classes == atlas.num_classes(), errc::invalid_argument,
            "moving volume has " + std::to_string(moving.num_classes) + " classes, atlas has " +
                std::to_string(atlas.num_classes()));
    MovingStats st;
    st.volumes_mm3 = class_volumes(moving);
    double voxel = moving.grid.spacing_mm.prod();
    for (double& v : st.volumes_mm3) v *= voxel;
    std::vector<double> atlas_mm3 = atlas.class_volumes;
    double avoxel = atlas.grid.spacing_mm.prod();
    for (double& v : atlas_mm3) v *= avoxel;
    st.weights = coverage_weights(st.volumes_mm3, atlas_mm3);
    st.landmarks = center_of_mass(moving);
    return st;
}

OrientationResult orientation_search_with(const MovingStats& st, const Arr3d& pivot,
                                          const AtlasSegmentation& atlas) {
    OrientationResult best;
    bool first = true;
    for (const RestrictedOrientation& o : all_orientations()) {
        LandmarkSet lm = st.landmarks;
        for (int c = 0; c < lm.num_classes(); ++c)
            if (lm.present[std::size_t(c)])
                lm.points_mm[std::size_t(c)] = orient_point(o, lm.points_mm[std::size_t(c)], pivot);
        LsqResult fit = lsq_translation(lm, atlas.landmarks_mm, st.weights);
        if (first || fit.residual < best.residual) {
            best.orientation = o;
            best.t0 = fit.t;
            best.residual = fit.residual;
            first = false;
        }
    }
    return best;
}

}  // namespace

CoverageWeights coverage_weights(const std::vector<double>& moving_volumes,
                                 const std::vector<double>& atlas_volumes) {
    require(moving_volumes.size() == atlas_volumes.size(), errc::invalid_argument,
            "moving and atlas volume lists differ in length");
    require(!moving_volumes.empty(), errc::invalid_argument, "empty volume lists");
    CoverageWeights w;
    w.w.resize(moving_volumes.size());
    double total = 0.0;
    for (std::size_t c = 0; c < moving_volumes.size(); ++c) {
        require(atlas_volumes[c] > 0.0, errc::invalid_argument,
                "atlas volume for class " + std::to_string(c + 1) + " not positive");
        require(moving_volumes[c] >= 0.0, errc::invalid_argument,
                "negative moving volume for class " + std::to_string(c + 1));
        w.w[c] = moving_volumes[c] / atlas_volumes[c];
        total += w.w[c];
    }
    require(total > 0.0, errc::no_anatomy_found, "no labeled anatomy in the moving volume");
    for (double& x : w.w) x /= total;
    return w;
}

LsqResult lsq_translation(const LandmarkSet& moving, const std::vector<Arr3d>& atlas_landmarks,
                          const CoverageWeights& w) {
    require(moving.num_classes() == int(atlas_landmarks.size()) &&
                moving.num_classes() == w.num_classes(),
            errc::invalid_argument, "landmark/weight class counts differ");
    LsqResult out;
    for (int c = 0; c < w.num_classes(); ++c) {
        double wc = w.w[std::size_t(c)];
        if (wc == 0.0) continue;
        require(moving.present[std::size_t(c)], errc::internal_consistency,
                "positive weight on class " + std::to_string(c + 1) + " without a landmark");
        out.t += wc * (atlas_landmarks[std::size_t(c)] - moving.points_mm[std::size_t(c)]);
    }
    for (int c = 0; c < w.num_classes(); ++c) {
        double wc = w.w[std::size_t(c)];
        if (wc == 0.0) continue;
        Arr3d r = moving.points_mm[std::size_t(c)] + out.t - atlas_landmarks[std::size_t(c)];
        out.residual += wc * (r * r).sum();
    }
    return out;
}

OrientationResult orientation_search(const LabelVolume& moving, const AtlasSegmentation& atlas) {
    MovingStats st = moving_stats(moving, atlas);
    return orientation_search_with(st, moving.grid.physical_center(), atlas);
}

DiceLossContext::DiceLossContext(const AtlasSegmentation& atlas) : atlas_(&atlas) {
    const Grid& g = atlas.grid;
    require((g.dims <= 32767).all(), errc::invalid_argument, "atlas grid too large");
    std::int64_t n = g.num_voxels();
    std::vector<std::uint8_t> mask(std::size_t(n), 0);
    for (const FloatVolume& ch : atlas.prob)
        for (std::int64_t v = 0; v < n; ++v)
            if (ch.voxels[std::size_t(v)] > 0.0f) mask[std::size_t(v)] = 1;
    mask = dilate6(mask, g.dims, 5);

    row_offset_.push_back(0);
    std::int64_t v = 0;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i, ++v) {
                if (!mask[std::size_t(v)]) continue;
                vi_.push_back(std::int16_t(i));
                vj_.push_back(std::int16_t(j));
                vk_.push_back(std::int16_t(k));
                for (int c = 0; c < atlas.num_classes(); ++c) {
                    float q = atlas.prob[std::size_t(c)].voxels[std::size_t(v)];
                    if (q > 0.0f) {
                        row_cls_.push_back(std::uint8_t(c));
                        row_q_.push_back(q);
                    }
                }
                row_offset_.push_back(std::int32_t(row_cls_.size()));
            }
}

double DiceLossContext::evaluate(const LabelVolume& moving_norm, const Arr3d& scale,
                                 const Arr3d& translation_mm, const CoverageWeights& w) const {
    check_scale_bounds(scale);
    const AtlasSegmentation& atlas = *atlas_;
    require(moving_norm.num_classes == atlas.num_classes(), errc::invalid_argument,
            "moving class count differs from the atlas");
    require(w.num_classes() == atlas.num_classes(), errc::invalid_argument,
            "weight class count differs from the atlas");

    IndexMap map = make_index_map(atlas.grid, moving_norm.grid, scale, translation_mm);
    const Label* mov = moving_norm.voxels.data();
    const int C = atlas.num_classes();
    std::vector<double> psum(std::size_t(C), 0.0), inter(std::size_t(C), 0.0);

    const std::size_t active = vi_.size();
    for (std::size_t v = 0; v < active; ++v) {
        Arr3d f(double(vi_[v]) * map.mul[0] + map.add[0], double(vj_[v]) * map.mul[1] + map.add[1],
                double(vk_[v]) * map.mul[2] + map.add[2]);
        TrilinearStencil st = trilinear_stencil(moving_norm.grid, f);
        if (!st.inside) continue;

        Label lbl[8];
        bool any = false;
        for (int j = 0; j < 8; ++j) {
            lbl[j] = mov[st.corner[j]];
            any = any || lbl[j] != 0;
        }
        if (!any) continue;

        // aggregate per class before accumulating, matching the reference
        // path's per-voxel sums exactly
        double pc[8];
        int cls[8];
        int groups = 0;
        for (int j = 0; j < 8; ++j) {
            if (lbl[j] == 0) continue;
            int found = -1;
            for (int gidx = 0; gidx < groups; ++gidx)
                if (cls[gidx] == int(lbl[j])) {
                    found = gidx;
                    break;
                }
            if (found < 0) {
                cls[groups] = int(lbl[j]);
                pc[groups] = st.weight[j];
                ++groups;
            } else {
                pc[found] += st.weight[j];
            }
        }
        for (int gidx = 0; gidx < groups; ++gidx) {
            std::size_t c = std::size_t(cls[gidx] - 1);
            psum[c] += pc[gidx];
        }
        for (std::int32_t r = row_offset_[v]; r < row_offset_[v + 1]; ++r) {
            int c = int(row_cls_[std::size_t(r)]);
            for (int gidx = 0; gidx < groups; ++gidx)
                if (cls[gidx] == c + 1) {
                    inter[std::size_t(c)] += double(row_q_[std::size_t(r)]) * pc[gidx];
                    break;
                }
        }
    }
    return weighted_dice_loss(psum, inter, atlas.class_volumes, w);
}

double soft_dice_loss(const std::vector<FloatVolume>& moving_soft, const Arr3d& scale,
                      const Arr3d& translation_mm, const AtlasSegmentation& atlas,
                      const CoverageWeights& w) {
    check_scale_bounds(scale);
    require(int(moving_soft.size()) == atlas.num_classes(), errc::invalid_argument,
            "moving channel count differs from the atlas");
    require(w.num_classes() == atlas.num_classes(), errc::invalid_argument,
            "weight class count differs from the atlas");
    for (const FloatVolume& ch : moving_soft)
        require((ch.grid.dims == moving_soft[0].grid.dims).all(), errc::dim_mismatch,
                "moving channels disagree on dims");

    const Grid& ag = atlas.grid;
    std::vector<std::uint8_t> mask(std::size_t(ag.num_voxels()), 0);
    for (const FloatVolume& ch : atlas.prob)
        for (std::int64_t v = 0; v < ag.num_voxels(); ++v)
            if (ch.voxels[std::size_t(v)] > 0.0f) mask[std::size_t(v)] = 1;
    mask = dilate6(mask, ag.dims, 5);

    const Grid& mg = moving_soft[0].grid;
    IndexMap map = make_index_map(ag, mg, scale, translation_mm);
    const int C = atlas.num_classes();
    std::vector<double> psum(std::size_t(C), 0.0), inter(std::size_t(C), 0.0);

    std::int64_t lin = 0;
    for (int k = 0; k < ag.dims[2]; ++k)
        for (int j = 0; j < ag.dims[1]; ++j)
            for (int i = 0; i < ag.dims[0]; ++i, ++lin) {
                if (!mask[std::size_t(lin)]) continue;
                Arr3d f(double(i) * map.mul[0] + map.add[0], double(j) * map.mul[1] + map.add[1],
                        double(k) * map.mul[2] + map.add[2]);
                TrilinearStencil st = trilinear_stencil(mg, f);
                if (!st.inside) continue;
                for (int c = 0; c < C; ++c) {
                    if (w.w[std::size_t(c)] == 0.0) continue;
                    const float* ch = moving_soft[std::size_t(c)].voxels.data();
                    double p = 0.0;
                    for (int n = 0; n < 8; ++n) p += st.weight[n] * double(ch[st.corner[n]]);
                    psum[std::size_t(c)] += p;
                    double q = double(atlas.prob[std::size_t(c)].voxels[std::size_t(lin)]);
                    inter[std::size_t(c)] += q * p;
                }
            }
    return weighted_dice_loss(psum, inter, atlas.class_volumes, w);
}

RefineResult refine_transform(const LabelVolume& moving_norm, const AtlasSegmentation& atlas,
                              const Arr3d& t0, const CoverageWeights& w) {
    require(t0.isFinite().all(), errc::invalid_argument, "non-finite initial translation");
    DiceLossContext ctx(atlas);
    const Arr3d extent = atlas.grid.extent_mm();
    const Arr3d delta_t = 0.5 * atlas.grid.spacing_mm / extent;

    // Weighted anatomy center of the moving volume. Descending on
    // u = t + (s - 1) * xbar instead of t itself makes scale act around the
    // anatomy rather than the coordinate origin, removing the scale/shift
    // coupling that otherwise turns the loss into a narrow diagonal valley.
    LandmarkSet lm = center_of_mass(moving_norm);
    require(lm.num_classes() == w.num_classes(), errc::invalid_argument,
            "moving class count differs from the weights");
    Arr3d xbar(0, 0, 0), ybar(0, 0, 0);
    for (int c = 0; c < w.num_classes(); ++c) {
        double wc = w.w[std::size_t(c)];
        if (wc == 0.0) continue;
        xbar += wc * lm.points_mm[std::size_t(c)];
        ybar += wc * atlas.landmarks_mm[std::size_t(c)];
    }

    // Moment-matched scale start: ratio of weighted landmark spreads. In the
    // u parameterization the landmark-optimal u is ybar - xbar = t0 for any
    // scale, so the start point stays at t0.
    Arr3d var_x(0, 0, 0), var_y(0, 0, 0);
    for (int c = 0; c < w.num_classes(); ++c) {
        double wc = w.w[std::size_t(c)];
        if (wc == 0.0) continue;
        Arr3d dx = lm.points_mm[std::size_t(c)] - xbar;
        Arr3d dy = atlas.landmarks_mm[std::size_t(c)] - ybar;
        var_x += wc * dx * dx;
        var_y += wc * dy * dy;
    }
    Arr3d s0(1.0, 1.0, 1.0);
    for (int a = 0; a < 3; ++a) {
        if (var_x[a] > 0.0 && var_y[a] > 0.0) s0[a] = std::sqrt(var_y[a] / var_x[a]);
        if (std::abs(s0[a] - 1.0) < 1e-6) s0[a] = 1.0;
    }
    s0 = s0.max(kScaleMin).min(kScaleMax);

    // theta = (u / extent, s); t recovered as u - (s - 1) * xbar
    auto eval = [&](const Arr3d& un, const Arr3d& s) {
        Arr3d sc = s.max(kScaleMin).min(kScaleMax);
        double loss = ctx.evaluate(moving_norm, sc, un * extent - (sc - 1.0) * xbar, w);
        require(std::isfinite(loss), errc::numerical_failure,
                "non-finite dice loss at scale " + std::to_string(sc[0]) + "," +
                    std::to_string(sc[1]) + "," + std::to_string(sc[2]));
        return loss;
    };

    Arr3d tn = t0 / extent;
    Arr3d s = s0;
    double loss = eval(tn, s);
    if (!(s0 == 1.0).all()) {
        double plain = eval(tn, Arr3d(1.0, 1.0, 1.0));
        if (plain <= loss) {  // never start worse than the landmark-only init
            s = Arr3d(1.0, 1.0, 1.0);
            loss = plain;
        }
    }

    RefineResult out;
    out.loss_init = loss;
    out.loss_trace.push_back(loss);

    // Proposals that worsen the loss are rejected (the iterate stays put), so
    // the accepted trace is non-increasing and the end state is the best seen.
    double eta = kInitialStep;
    double g[6];
    bool have_gradient = false;
    while (out.step_reductions < kMaxReductions && out.iterations < kMaxIterations) {
        if (!have_gradient) {
            double gmax = 0.0;
            for (int a = 0; a < 3; ++a) {
                Arr3d hi = tn, lo = tn;
                hi[a] += delta_t[a];
                lo[a] -= delta_t[a];
                g[a] = (eval(hi, s) - eval(lo, s)) / (2.0 * delta_t[a]);
                gmax = std::max(gmax, std::abs(g[a]));
            }
            for (int a = 0; a < 3; ++a) {
                Arr3d hi = s, lo = s;
                hi[a] += kScaleProbe;
                lo[a] -= kScaleProbe;
                g[3 + a] = (eval(tn, hi) - eval(tn, lo)) / (2.0 * kScaleProbe);
                gmax = std::max(gmax, std::abs(g[3 + a]));
            }
            require(std::isfinite(gmax), errc::numerical_failure, "non-finite dice gradient");
            if (gmax == 0.0) {
                out.step_reductions = kMaxReductions;  // flat point, nowhere to go
                break;
            }
            for (double& v : g) v /= gmax;
            have_gradient = true;
        }

        Arr3d tn_new = tn, s_new = s;
        for (int a = 0; a < 3; ++a) tn_new[a] -= eta * g[a];
        for (int a = 0; a < 3; ++a) s_new[a] -= eta * g[3 + a];
        s_new = s_new.max(kScaleMin).min(kScaleMax);
        double loss_new = eval(tn_new, s_new);
        ++out.iterations;

        double improvement = loss - loss_new;
        if (loss_new < loss) {
            tn = tn_new;
            s = s_new;
            loss = loss_new;
            out.loss_trace.push_back(loss);
            have_gradient = false;
        }
        if (improvement < kMinImprovement) {
            eta /= 2.0;
            ++out.step_reductions;
        }
    }

    out.scale = s;
    out.translation_mm = tn * extent - (s - 1.0) * xbar;
    out.loss_final = loss;
    return out;
}

RegistrationResult register_to_atlas(const LabelVolume& moving, const AtlasSegmentation& atlas) {
    auto start = std::chrono::steady_clock::now();
    MovingStats st = moving_stats(moving, atlas);
    OrientationResult found = orientation_search_with(st, moving.grid.physical_center(), atlas);
    log::debug("orientation k_rot=" + std::to_string(found.orientation.k_rot) +
               " flip_z=" + std::to_string(found.orientation.flip_z) +
               " residual=" + std::to_string(found.residual));

    // Landmarks, weights and t0 are recomputed from the normalized volume:
    // equivalent inputs normalize to bit-identical arrays, so the whole
    // refinement runs on bit-identical state regardless of the input pose.
    LabelVolume normalized = apply_orientation(moving, found.orientation);
    MovingStats nst = moving_stats(normalized, atlas);
    LsqResult fit = lsq_translation(nst.landmarks, atlas.landmarks_mm, nst.weights);
    if (!(normalized.grid.spacing_mm == atlas.grid.spacing_mm).all())
        normalized = resample_labels(normalized, atlas.grid.spacing_mm);

    RefineResult refined = refine_transform(normalized, atlas, fit.t, nst.weights);

    RegistrationResult out;
    out.transform = make_affine(found.orientation, refined.scale, refined.translation_mm);
    out.report.weights = nst.weights;
    out.report.residual_landmark = fit.residual;
    out.report.loss_init = refined.loss_init;
    out.report.loss_final = refined.loss_final;
    out.report.iterations = refined.iterations;
    out.report.step_reductions = refined.step_reductions;
    out.report.loss_trace = std::move(refined.loss_trace);
    out.report.wall_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - start)
                             .count();
    return out;
}

std::string transform_to_json(const RegistrationResult& result) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["k_rot"] = result.transform.orientation.k_rot;
    j["flip_z"] = result.transform.orientation.flip_z;
    j["scale"] = {result.transform.scale[0], result.transform.scale[1],
                  result.transform.scale[2]};
    j["translation_mm"] = {result.transform.translation_mm[0],
                           result.transform.translation_mm[1],
                           result.transform.translation_mm[2]};
    j["weights"] = result.report.weights.w;
    j["loss_init"] = result.report.loss_init;
    j["loss_final"] = result.report.loss_final;
    j["residual_landmark"] = result.report.residual_landmark;
    return j.dump(2) + "\n";
}

RestrictedAffine transform_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(errc::corrupt_file, std::string("malformed transform JSON: ") + e.what());
    }
    require(j.contains("schema_version") && j["schema_version"].get<int>() == 1,
            errc::version_mismatch, "unsupported transform schema_version");
    for (const char* key : {"k_rot", "flip_z", "scale", "translation_mm"})
        require(j.contains(key), errc::corrupt_file,
                "transform JSON missing \"" + std::string(key) + "\"");
    RestrictedOrientation o = make_orientation(j["k_rot"].get<int>(), j["flip_z"].get<bool>());
    Arr3d s(j["scale"][0].get<double>(), j["scale"][1].get<double>(), j["scale"][2].get<double>());
    Arr3d t(j["translation_mm"][0].get<double>(), j["translation_mm"][1].get<double>(),
            j["translation_mm"][2].get<double>());
    return make_affine(o, s, t);
}

}  // namespace ctarr
