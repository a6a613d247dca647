#include "ctarr/atlas.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <zlib.h>

#include "ctarr/error.hpp"
#include "ctarr/log.hpp"
#include "ctarr/parallel.hpp"
#include "ctarr/registration.hpp"
#include "ctarr/volume_ops.hpp"
#include "json.hpp"

namespace ctarr {

namespace {

static_assert(std::endian::native == std::endian::little,
              "atlas channel files are little-endian; big-endian hosts are unsupported");

namespace fs = std::filesystem;
using nlohmann::json;

std::string sanitize_name(const std::string& name) {
    std::string out;
    for (char ch : name) {
        if (std::isalnum(static_cast<unsigned char>(ch)))
            out += char(std::tolower(static_cast<unsigned char>(ch)));
        else if (!out.empty() && out.back() != '_')
            out += '_';
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out.empty() ? "class" : out;
}

std::string channel_filename(int cls, const std::string& name) {
    return "class_" + std::to_string(cls) + "_" + sanitize_name(name) + ".f32";
}

// Adds the one-hot masks of scan, warped through T, onto per-class voxel sums
// over the common grid: each grid point y is pulled back to (y - t)/s in the
// orientation-normalized scan and sampled trilinearly.
void accumulate_onehot(std::vector<std::vector<double>>& sum, const Grid& g,
                       const LabelVolume& scan, const RestrictedAffine& T) {
    const LabelVolume* src = &scan;
    LabelVolume oriented;
    if (!T.orientation.identity()) {
        oriented = apply_orientation(scan, T.orientation);
        src = &oriented;
    }
    const Grid& m = src->grid;
    // direct divisions keep the identity transform lattice-exact (A = 1, B = 0)
    Arr3d A, B;
    for (int a = 0; a < 3; ++a) {
        double denom = T.scale[a] * m.spacing_mm[a];
        A[a] = g.spacing_mm[a] / denom;
        B[a] = (g.origin_mm[a] - T.translation_mm[a]) / denom - m.origin_mm[a] / m.spacing_mm[a];
    }
    const Label* mov = src->voxels.data();
    std::int64_t v = 0;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i, ++v) {
                Arr3d f(double(i) * A[0] + B[0], double(j) * A[1] + B[1],
                        double(k) * A[2] + B[2]);
                TrilinearStencil st = trilinear_stencil(m, f);
                if (!st.inside) continue;
                for (int n = 0; n < 8; ++n) {
                    Label lbl = mov[st.corner[n]];
                    if (lbl != 0) sum[std::size_t(lbl - 1)][std::size_t(v)] += st.weight[n];
                }
            }
}

std::vector<FloatVolume> mean_channels(const std::vector<std::vector<double>>& sum, const Grid& g,
                                       int n_scans) {
    std::vector<FloatVolume> out;
    out.reserve(sum.size());
    for (const std::vector<double>& ch : sum) {
        FloatVolume vol = make_volume<float>(g, 0.0f);
        for (std::size_t v = 0; v < ch.size(); ++v)
            vol.voxels[v] = float(std::min(1.0, ch[v] / double(n_scans)));
        out.push_back(std::move(vol));
    }
    return out;
}

std::uint32_t bytes_crc32(const char* data, std::size_t size) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (size > 0) {
        uInt chunk = uInt(std::min<std::size_t>(size, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        size -= chunk;
    }
    return std::uint32_t(crc);
}

Arr3d json_arr3d(const json& j) { return Arr3d(j[0].get<double>(), j[1].get<double>(), j[2].get<double>()); }

}  // namespace

AtlasSegmentation build_atlas(const std::vector<LabelVolume>& cohort, const LabelSchema& schema,
                              int jobs, AtlasBuildReport* report) {
    auto start = std::chrono::steady_clock::now();
    const int C = schema.num_classes();
    require(C >= 1, errc::invalid_argument, "schema has no classes");
    require(cohort.size() >= 2, errc::cohort_too_small,
            "atlas cohort needs at least 2 scans, got " + std::to_string(cohort.size()));
    for (const LabelVolume& scan : cohort)
        require(scan.num_classes == C, errc::invalid_argument,
                "cohort scan class count differs from the schema");

    AtlasBuildReport rep;
    rep.cohort_size = int(cohort.size());
    auto reject = [&](std::size_t idx, const std::string& why) {
        log::warn("atlas: rejecting cohort scan " + std::to_string(idx) + ": " + why);
        rep.rejected.push_back(idx);
        rep.reasons.push_back(why);
    };

    const Arr3d atlas_spacing(kAtlasSpacingMm, kAtlasSpacingMm, kAtlasSpacingMm);
    std::vector<LabelVolume> scans;
    std::vector<std::size_t> scan_idx;  // original cohort index per entry
    for (std::size_t n = 0; n < cohort.size(); ++n) {
        LabelVolume s = (cohort[n].grid.spacing_mm == atlas_spacing).all()
                            ? cohort[n]
                            : resample_labels(cohort[n], atlas_spacing);
        std::vector<double> vols = class_volumes(s);
        int missing = -1;
        for (int c = 0; c < C; ++c)
            if (vols[std::size_t(c)] == 0.0) {
                missing = c;
                break;
            }
        if (missing >= 0) {
            reject(n, "missing class " + std::to_string(missing + 1) + " (" +
                          schema.names[std::size_t(missing)] + ")");
            continue;
        }
        scans.push_back(std::move(s));
        scan_idx.push_back(n);
    }

    int n = int(scans.size());
    require(n >= 2, errc::cohort_too_small,
            "fewer than 2 usable scans after validation (" + std::to_string(n) + ")");

    // pairwise pass: pairwise[i][j] = transform of scan i onto scan j's one-hot atlas
    std::vector<std::vector<RestrictedAffine>> pairwise(
        std::size_t(n), std::vector<RestrictedAffine>{std::size_t(n), RestrictedAffine{}});
    for (int j = 0; j < n; ++j) {
        AtlasSegmentation target = atlas_from_labels(scans[std::size_t(j)], schema);
        parallel_for(jobs, n, [&](int i) {
            if (i == j) return;
            pairwise[std::size_t(i)][std::size_t(j)] =
                register_to_atlas(scans[std::size_t(i)], target).transform;
        });
    }

    // a scan is misoriented when most of its pairwise registrations need a
    // non-identity orientation; remaining stray rows are rejected afterwards
    std::vector<bool> keep(std::size_t(n), true);
    for (int i = 0; i < n; ++i) {
        int nonid = 0;
        for (int j = 0; j < n; ++j)
            if (j != i && !pairwise[std::size_t(i)][std::size_t(j)].orientation.identity()) ++nonid;
        if (2 * nonid > n - 1) {
            keep[std::size_t(i)] = false;
            reject(scan_idx[std::size_t(i)], "pairwise orientation is non-identity for " +
                                                 std::to_string(nonid) + " of " +
                                                 std::to_string(n - 1) + " partners");
        }
    }
    for (int i = 0; i < n; ++i) {
        if (!keep[std::size_t(i)]) continue;
        for (int j = 0; j < n; ++j)
            if (j != i && keep[std::size_t(j)] &&
                !pairwise[std::size_t(i)][std::size_t(j)].orientation.identity()) {
                keep[std::size_t(i)] = false;
                reject(scan_idx[std::size_t(i)], "orientation disagreement with scan " +
                                                     std::to_string(scan_idx[std::size_t(j)]));
                break;
            }
    }

    std::vector<int> valid;
    for (int i = 0; i < n; ++i)
        if (keep[std::size_t(i)]) valid.push_back(i);
    rep.valid_scans = int(valid.size());
    require(rep.valid_scans >= 2, errc::cohort_too_small,
            "fewer than 2 scans agree on orientation (" + std::to_string(rep.valid_scans) + ")");

    // common grid: the valid scan spanning the largest physical z extent
    int ref = valid[0];
    for (int i : valid)
        if (scans[std::size_t(i)].grid.extent_mm()[2] > scans[std::size_t(ref)].grid.extent_mm()[2])
            ref = i;
    const Grid common = scans[std::size_t(ref)].grid;

    // provisional atlas: averaged pairwise transforms, voxel-wise mean
    std::vector<std::vector<double>> sum(std::size_t(C),
                                         std::vector<double>(std::size_t(common.num_voxels()), 0.0));
    for (int i : valid) {
        Arr3d s_mean(0, 0, 0), t_mean(0, 0, 0);
        for (int j : valid) {
            if (j == i) continue;
            s_mean += pairwise[std::size_t(i)][std::size_t(j)].scale;
            t_mean += pairwise[std::size_t(i)][std::size_t(j)].translation_mm;
        }
        double m = double(valid.size() - 1);
        RestrictedAffine avg = make_affine(RestrictedOrientation{}, s_mean / m, t_mean / m);
        accumulate_onehot(sum, common, scans[std::size_t(i)], avg);
    }
    AtlasSegmentation provisional =
        make_atlas(common, schema, mean_channels(sum, common, rep.valid_scans));

    // final atlas: register every scan to the provisional atlas, average again
    std::vector<RestrictedAffine> to_prov{std::size_t(n), RestrictedAffine{}};
    parallel_for(jobs, int(valid.size()), [&](int v) {
        int i = valid[std::size_t(v)];
        to_prov[std::size_t(i)] = register_to_atlas(scans[std::size_t(i)], provisional).transform;
    });
    for (std::vector<double>& ch : sum) std::fill(ch.begin(), ch.end(), 0.0);
    for (int i : valid) {
        if (!to_prov[std::size_t(i)].orientation.identity())
            log::warn("atlas: scan " + std::to_string(scan_idx[std::size_t(i)]) +
                      " flipped against the provisional atlas");
        accumulate_onehot(sum, common, scans[std::size_t(i)], to_prov[std::size_t(i)]);
    }
    AtlasSegmentation final_atlas =
        make_atlas(common, schema, mean_channels(sum, common, rep.valid_scans));

    rep.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    if (report) *report = rep;
    return final_atlas;
}

void save_atlas(const AtlasSegmentation& atlas, const std::string& dir) {
    fs::path root(dir);
    std::error_code ec;
    fs::create_directories(root, ec);
    require(!ec, errc::io_error, "cannot create atlas directory " + dir + ": " + ec.message());

    json manifest;
    manifest["schema_version"] = 1;
    manifest["dims"] = {atlas.grid.dims[0], atlas.grid.dims[1], atlas.grid.dims[2]};
    manifest["spacing_mm"] = {atlas.grid.spacing_mm[0], atlas.grid.spacing_mm[1],
                              atlas.grid.spacing_mm[2]};
    manifest["origin_mm"] = {atlas.grid.origin_mm[0], atlas.grid.origin_mm[1],
                             atlas.grid.origin_mm[2]};
    manifest["classes"] = atlas.schema.names;
    json landmarks = json::array();
    for (const Arr3d& p : atlas.landmarks_mm) landmarks.push_back({p[0], p[1], p[2]});
    manifest["landmarks_mm"] = landmarks;
    manifest["class_volumes"] = atlas.class_volumes;

    json checksums = json::array();
    for (int c = 0; c < atlas.num_classes(); ++c) {
        const FloatVolume& ch = atlas.prob[std::size_t(c)];
        const char* data = reinterpret_cast<const char*>(ch.voxels.data());
        std::size_t size = ch.voxels.size() * sizeof(float);
        checksums.push_back(bytes_crc32(data, size));
        fs::path p = root / channel_filename(c + 1, atlas.schema.names[std::size_t(c)]);
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        require(out.good(), errc::io_error, "cannot open " + p.string() + " for writing");
        out.write(data, std::streamsize(size));
        require(out.good(), errc::io_error, "short write to " + p.string());
    }
    manifest["checksums"] = checksums;

    fs::path mp = root / "manifest.json";
    std::ofstream out(mp, std::ios::binary | std::ios::trunc);
    require(out.good(), errc::io_error, "cannot open " + mp.string() + " for writing");
    out << manifest.dump(2) << '\n';
    require(out.good(), errc::io_error, "short write to " + mp.string());
}

AtlasSegmentation load_atlas(const std::string& dir) {
    fs::path root(dir);
    fs::path mp = root / "manifest.json";
    std::ifstream in(mp, std::ios::binary);
    require(in.good(), errc::io_error, "cannot open " + mp.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        fail(errc::corrupt_file, "malformed atlas manifest: " + std::string(e.what()));
    }
    require(manifest.contains("schema_version") && manifest["schema_version"].get<int>() == 1,
            errc::version_mismatch, "unsupported atlas schema_version");
    for (const char* key :
         {"dims", "spacing_mm", "origin_mm", "classes", "landmarks_mm", "class_volumes",
          "checksums"})
        require(manifest.contains(key), errc::corrupt_file,
                "atlas manifest missing \"" + std::string(key) + "\"");

    Grid grid;
    grid.dims = Arr3i(manifest["dims"][0].get<int>(), manifest["dims"][1].get<int>(),
                      manifest["dims"][2].get<int>());
    grid.spacing_mm = json_arr3d(manifest["spacing_mm"]);
    grid.origin_mm = json_arr3d(manifest["origin_mm"]);
    validate_grid(grid);

    LabelSchema schema = make_schema(manifest["classes"].get<std::vector<std::string>>());
    const int C = schema.num_classes();
    require(int(manifest["landmarks_mm"].size()) == C && int(manifest["class_volumes"].size()) == C &&
                int(manifest["checksums"].size()) == C,
            errc::corrupt_file, "atlas manifest per-class arrays disagree with class count");

    std::vector<FloatVolume> channels;
    channels.reserve(std::size_t(C));
    const std::size_t expected = std::size_t(grid.num_voxels()) * sizeof(float);
    for (int c = 0; c < C; ++c) {
        fs::path p = root / channel_filename(c + 1, schema.names[std::size_t(c)]);
        std::ifstream ch(p, std::ios::binary);
        require(ch.good(), errc::missing_channel,
                "missing channel file for class " + std::to_string(c + 1) + " (" +
                    schema.names[std::size_t(c)] + "): " + p.string());
        std::vector<char> bytes((std::istreambuf_iterator<char>(ch)),
                                std::istreambuf_iterator<char>());
        require(bytes.size() == expected, errc::truncated_payload,
                p.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                    std::to_string(bytes.size()));
        std::uint32_t crc = bytes_crc32(bytes.data(), bytes.size());
        require(crc == manifest["checksums"][std::size_t(c)].get<std::uint32_t>(),
                errc::corrupt_file, p.string() + ": checksum mismatch");
        std::vector<float> values(std::size_t(grid.num_voxels()));
        std::memcpy(values.data(), bytes.data(), bytes.size());
        channels.push_back(make_volume<float>(grid, std::move(values)));
    }

    AtlasSegmentation atlas = make_atlas(grid, std::move(schema), std::move(channels));
    for (int c = 0; c < C; ++c) {
        Arr3d lm = json_arr3d(manifest["landmarks_mm"][std::size_t(c)]);
        require((atlas.landmarks_mm[std::size_t(c)] == lm).all() &&
                    atlas.class_volumes[std::size_t(c)] ==
                        manifest["class_volumes"][std::size_t(c)].get<double>(),
                errc::corrupt_file,
                "manifest landmarks/volumes disagree with channel data for class " +
                    std::to_string(c + 1));
    }
    return atlas;
}

}  // namespace ctarr
