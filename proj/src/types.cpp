#include "ctarr/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace ctarr {

LabelVolume make_label_volume(const Grid& grid, int num_classes, std::vector<Label> voxels) {
    validate_grid(grid);
    require(num_classes >= 1 && num_classes <= int(std::numeric_limits<Label>::max()),
            errc::invalid_argument, "num_classes must be in 1..255");
    require(std::int64_t(voxels.size()) == grid.num_voxels(), errc::invalid_argument,
            "voxel payload size does not match grid dims");
    for (Label v : voxels) {
        if (int(v) > num_classes) {
            std::ostringstream oss;
            oss << "label " << int(v) << " exceeds num_classes " << num_classes;
            fail(errc::invalid_argument, oss.str());
        }
    }
    return LabelVolume{grid, num_classes, std::move(voxels)};
}

LabelVolume make_label_volume(const Grid& grid, int num_classes) {
    validate_grid(grid);
    require(num_classes >= 1 && num_classes <= int(std::numeric_limits<Label>::max()),
            errc::invalid_argument, "num_classes must be in 1..255");
    return LabelVolume{grid, num_classes, std::vector<Label>(std::size_t(grid.num_voxels()), 0)};
}

LabelSchema default_schema() {
    return LabelSchema{{
        "skull",
        "C vertebrae",
        "left rips, scapula, clavicular",
        "right rips, scapula, clavicular",
        "sternum",
        "T vertebrae",
        "L vertebrae",
        "sacrum",
        "left hip",
        "right hip",
        "brain",
        "lung left",
        "lung right",
        "heart",
        "liver",
        "spleen",
        "left kidney",
        "right kidney",
        "urinary bladder",
    }};
}

LabelSchema make_schema(std::vector<std::string> names) {
    require(!names.empty(), errc::invalid_argument, "schema needs at least one class name");
    for (const auto& n : names)
        require(!n.empty(), errc::invalid_argument, "schema class names must be non-empty");
    return LabelSchema{std::move(names)};
}

RestrictedOrientation make_orientation(int k_rot, bool flip_z) {
    require(k_rot >= 0 && k_rot <= 3, errc::invalid_argument, "k_rot must be in 0..3");
    return RestrictedOrientation{k_rot, flip_z};
}

std::vector<RestrictedOrientation> all_orientations() {
    std::vector<RestrictedOrientation> out;
    out.reserve(8);
    for (int k = 0; k < 4; ++k)
        for (int f = 0; f < 2; ++f) out.push_back(RestrictedOrientation{k, f == 1});
    return out;
}

Arr3d orient_offset(const RestrictedOrientation& o, const Arr3d& d) {
    double x = d[0], y = d[1];
    switch (o.k_rot & 3) {
        case 1: {
            double t = x;
            x = y;
            y = -t;
            break;
        }
        case 2:
            x = -x;
            y = -y;
            break;
        case 3: {
            double t = x;
            x = -y;
            y = t;
            break;
        }
        default:
            break;
    }
    return Arr3d(x, y, o.flip_z ? -d[2] : d[2]);
}

RestrictedAffine make_affine(const RestrictedOrientation& o, const Arr3d& scale,
                             const Arr3d& translation_mm) {
    require((scale > 0.0).all() && scale.isFinite().all(), errc::invalid_argument,
            "scale must be positive and finite");
    require((scale >= kScaleMin).all() && (scale <= kScaleMax).all(), errc::invalid_argument,
            "scale outside [0.5, 2.0]");
    require(translation_mm.isFinite().all(), errc::invalid_argument,
            "translation must be finite");
    return RestrictedAffine{o, scale, translation_mm};
}

BoundingBox make_box(const Arr3d& min_mm, const Arr3d& max_mm) {
    require(min_mm.isFinite().all() && max_mm.isFinite().all(), errc::invalid_argument,
            "box corners must be finite");
    require((min_mm < max_mm).all(), errc::invalid_argument,
            "box min must be strictly below max on every axis");
    return BoundingBox{min_mm, max_mm};
}

RegionDefinition make_region(std::string name, std::vector<BoundingBox> boxes, double threshold,
                             double margin_mm, int n_examples) {
    require(!name.empty(), errc::invalid_argument, "region name must be non-empty");
    require(!boxes.empty(), errc::invalid_argument, "region needs at least one box");
    require(threshold >= 0.0, errc::invalid_argument, "region threshold must be >= 0");
    for (const auto& b : boxes) make_box(b.min_mm, b.max_mm);
    for (std::size_t a = 0; a < boxes.size(); ++a)
        for (std::size_t b = a + 1; b < boxes.size(); ++b)
            require(!boxes[a].overlaps(boxes[b]), errc::invalid_argument,
                    "region boxes must not overlap (merge to fixpoint first)");
    return RegionDefinition{std::move(name), std::move(boxes), threshold, margin_mm, n_examples};
}

AtlasSegmentation make_atlas(const Grid& grid, LabelSchema schema, std::vector<FloatVolume> prob) {
    validate_grid(grid);
    require((grid.spacing_mm == kAtlasSpacingMm).all(), errc::invalid_argument,
            "atlas grid must have 3 mm isotropic spacing");
    const int C = schema.num_classes();
    require(C >= 1, errc::invalid_argument, "atlas schema must have at least one class");
    require(int(prob.size()) == C, errc::invalid_argument,
            "atlas needs one probability channel per class");

    AtlasSegmentation atlas;
    atlas.grid = grid;
    atlas.schema = std::move(schema);
    atlas.landmarks_mm.resize(C);
    atlas.class_volumes.resize(C);

    const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
    for (int c = 0; c < C; ++c) {
        require(prob[c].grid == grid, errc::invalid_argument,
                "probability channel grid mismatch for class " + atlas.schema.names[c]);
        double wsum = 0.0;
        Arr3d centroid(0.0, 0.0, 0.0);
        std::int64_t idx = 0;
        for (int k = 0; k < nz; ++k)
            for (int j = 0; j < ny; ++j)
                for (int i = 0; i < nx; ++i, ++idx) {
                    float p = prob[c].voxels[std::size_t(idx)];
                    require(p >= 0.0f && p <= 1.0f, errc::invalid_argument,
                            "atlas probability outside [0,1] in class " + atlas.schema.names[c]);
                    if (p > 0.0f) {
                        wsum += p;
                        centroid += double(p) * grid.coord(i, j, k);
                    }
                }
        require(wsum > 0.0, errc::invalid_argument,
                "atlas class has empty support: " + atlas.schema.names[c]);
        atlas.class_volumes[c] = wsum;
        atlas.landmarks_mm[c] = centroid / wsum;
    }
    atlas.prob = std::move(prob);
    return atlas;
}

AtlasSegmentation atlas_from_labels(const LabelVolume& vol, LabelSchema schema) {
    require(vol.num_classes == schema.num_classes(), errc::invalid_argument,
            "label volume class count does not match schema");
    const int C = schema.num_classes();
    std::vector<FloatVolume> prob(C);
    for (int c = 0; c < C; ++c) prob[std::size_t(c)] = make_volume<float>(vol.grid, 0.0f);
    const std::int64_t n = vol.grid.num_voxels();
    for (std::int64_t idx = 0; idx < n; ++idx) {
        Label l = vol.voxels[std::size_t(idx)];
        if (l > 0) prob[std::size_t(l - 1)].voxels[std::size_t(idx)] = 1.0f;
    }
    return make_atlas(vol.grid, std::move(schema), std::move(prob));
}

FloatVolume Heatmap::mean() const {
    FloatVolume out = make_volume<float>(grid, 0.0f);
    if (count > 0)
        for (std::size_t i = 0; i < sum.size(); ++i)
            out.voxels[i] = float(sum[i] / count);
    return out;
}

Heatmap make_heatmap(const Grid& atlas_grid) {
    validate_grid(atlas_grid);
    return Heatmap{atlas_grid, 0, std::vector<double>(std::size_t(atlas_grid.num_voxels()), 0.0)};
}

const char* errc_name(errc c) {
    switch (c) {
        case errc::invalid_argument: return "invalid argument";
        case errc::no_anatomy_found: return "no anatomy found";
        case errc::internal_consistency: return "internal consistency";
        case errc::numerical_failure: return "numerical failure";
        case errc::outside_field_of_view: return "outside field of view";
        case errc::empty_crop: return "empty crop";
        case errc::empty_region: return "empty region";
        case errc::missing_class: return "missing class";
        case errc::cohort_too_small: return "cohort too small";
        case errc::dim_mismatch: return "dim mismatch";
        case errc::undefined_ncc: return "undefined ncc";
        case errc::io_error: return "io error";
        case errc::bad_magic: return "bad magic";
        case errc::unsupported_datatype: return "unsupported datatype";
        case errc::unsupported_dimension: return "unsupported dimension";
        case errc::truncated_payload: return "truncated payload";
        case errc::corrupt_file: return "corrupt file";
        case errc::version_mismatch: return "version mismatch";
        case errc::missing_channel: return "missing channel";
    }
    return "error";
}

}  // namespace ctarr
