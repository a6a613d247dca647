#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ctarr/atlas.hpp"
#include "ctarr/error.hpp"
#include "ctarr/eval.hpp"
#include "ctarr/io.hpp"
#include "ctarr/log.hpp"
#include "ctarr/phantom.hpp"
#include "ctarr/regions.hpp"
#include "ctarr/registration.hpp"
#include "ctarr/types.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Default heatmap thresholds for the shipped region names; used when
// infer-region is called without --threshold.
const std::map<std::string, double>& default_thresholds() {
    static const std::map<std::string, double> table = {
        {"brain", 0.01},   {"colon", 0.03},           {"gallbladder", 0.01},
        {"heart", 0.03},   {"kidneys", 0.01},         {"liver", 0.035},
        {"lungs", 0.04},   {"pancreas", 0.01},        {"spine", 0.03},
        {"spleen", 0.01},  {"stomach", 0.01},         {"urinary bladder", 0.01},
    };
    return table;
}

std::string normalize_name(std::string name) {
    for (char& c : name) {
        if (c == '_') c = ' ';
        c = char(std::tolower(static_cast<unsigned char>(c)));
    }
    return name;
}

ctarr::VolumeFormat format_for_path(const std::string& path) {
    auto ends_with = [&](const char* suf) {
        std::string_view s(suf);
        return path.size() >= s.size() && path.compare(path.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(".nii") || ends_with(".nii.gz")) return ctarr::VolumeFormat::nifti;
    return ctarr::VolumeFormat::native;
}

const char* extension_for(ctarr::VolumeFormat format) {
    return format == ctarr::VolumeFormat::nifti ? ".nii.gz" : ".vol";
}

ctarr::VolumeFormat parse_format(const std::string& name) {
    if (name == "native") return ctarr::VolumeFormat::native;
    if (name == "nifti") return ctarr::VolumeFormat::nifti;
    throw ctarr::Error(ctarr::errc::invalid_argument, "unknown format '" + name + "'");
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ctarr::Error(ctarr::errc::io_error, "cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw ctarr::Error(ctarr::errc::io_error, "write failed for '" + path + "'");
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ctarr::Error(ctarr::errc::io_error, "cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return text;
}

json arr3(const ctarr::Arr3d& v) { return json::array({v[0], v[1], v[2]}); }
json arr3(const ctarr::Arr3i& v) { return json::array({v[0], v[1], v[2]}); }

json transform_json(const ctarr::RestrictedAffine& t) {
    return json{{"k_rot", t.orientation.k_rot},
                {"flip_z", t.orientation.flip_z},
                {"scale", arr3(t.scale)},
                {"translation_mm", arr3(t.translation_mm)}};
}

struct RegisterArgs {
    std::string moving, atlas_dir, out;
};

int run_register(const RegisterArgs& a) {
    ctarr::AtlasSegmentation atlas = ctarr::load_atlas(a.atlas_dir);
    ctarr::LabelVolume moving = ctarr::read_label_volume(a.moving, atlas.num_classes());
    ctarr::RegistrationResult result = ctarr::register_to_atlas(moving, atlas);
    write_text(a.out, ctarr::transform_to_json(result));
    const ctarr::RestrictedAffine& t = result.transform;
    std::printf("orientation k_rot=%d flip_z=%d  scale=[%.4f %.4f %.4f]  t=[%.1f %.1f %.1f] mm\n",
                t.orientation.k_rot, int(t.orientation.flip_z), t.scale[0], t.scale[1], t.scale[2],
                t.translation_mm[0], t.translation_mm[1], t.translation_mm[2]);
    std::printf("loss %.6f -> %.6f in %d iterations (%.0f ms); transform written to %s\n",
                result.report.loss_init, result.report.loss_final, result.report.iterations,
                result.report.wall_ms, a.out.c_str());
    return 0;
}

struct CropArgs {
    std::string image, seg, atlas_dir, region, out_dir, format = "auto";
};

int run_crop(const CropArgs& a) {
    ctarr::AtlasSegmentation atlas = ctarr::load_atlas(a.atlas_dir);
    ctarr::RegionDefinition region = ctarr::load_region(a.region);
    ctarr::FloatVolume image = ctarr::read_value_volume(a.image);
    ctarr::LabelVolume seg = ctarr::read_label_volume(a.seg, atlas.num_classes());
    ctarr::CropResult result = ctarr::crop_region(image, seg, atlas, region);

    ctarr::VolumeFormat format =
        a.format == "auto" ? format_for_path(a.image) : parse_format(a.format);
    fs::create_directories(a.out_dir);

    json boxes = json::array();
    json files = json::array();
    std::size_t crop_idx = 0;
    for (std::size_t b = 0; b < result.report.boxes.size(); ++b) {
        const ctarr::BoxCropInfo& info = result.report.boxes[b];
        json row{{"box", b}, {"in_fov", info.in_fov}};
        if (info.in_fov) {
            char name[64];
            std::snprintf(name, sizeof(name), "crop_%03zu%s", b, extension_for(format));
            ctarr::write_volume(result.crops[crop_idx++], (fs::path(a.out_dir) / name).string(),
                                format);
            row["voxels"] = json{{"lo", arr3(info.voxels.lo)}, {"hi", arr3(info.voxels.hi)}};
            row["clip_frac"] = arr3(info.clip_frac);
            row["file"] = name;
            files.push_back(name);
        }
        boxes.push_back(std::move(row));
    }

    json report{{"schema_version", 1},
                {"region", region.name},
                {"transform", transform_json(result.report.transform)},
                {"boxes", std::move(boxes)},
                {"crops", std::move(files)},
                {"register_ms", result.report.register_ms},
                {"crop_ms", result.report.crop_ms}};
    write_text((fs::path(a.out_dir) / "report.json").string(), report.dump(2) + "\n");
    std::printf("%zu of %zu boxes in view; crops and report.json written to %s\n",
                result.crops.size(), result.report.boxes.size(), a.out_dir.c_str());
    return 0;
}

struct BuildAtlasArgs {
    std::vector<std::string> segs;
    std::string out;
    int jobs = 1;
};

int run_build_atlas(const BuildAtlasArgs& a) {
    ctarr::LabelSchema schema = ctarr::default_schema();
    std::vector<ctarr::LabelVolume> cohort;
    cohort.reserve(a.segs.size());
    for (const std::string& path : a.segs)
        cohort.push_back(ctarr::read_label_volume(path, schema.num_classes()));

    ctarr::AtlasBuildReport report;
    ctarr::AtlasSegmentation atlas = ctarr::build_atlas(cohort, schema, a.jobs, &report);
    ctarr::save_atlas(atlas, a.out);

    json reasons = json::array();
    for (std::size_t i = 0; i < report.rejected.size(); ++i)
        reasons.push_back(json{{"scan", a.segs[report.rejected[i]]}, {"reason", report.reasons[i]}});
    json j{{"schema_version", 1},
           {"cohort_size", report.cohort_size},
           {"valid_scans", report.valid_scans},
           {"rejected", std::move(reasons)},
           {"wall_ms", report.wall_ms}};
    write_text((fs::path(a.out) / "build_report.json").string(), j.dump(2) + "\n");
    std::printf("atlas built from %d of %d scans (%.0f ms); written to %s\n", report.valid_scans,
                report.cohort_size, report.wall_ms, a.out.c_str());
    return 0;
}

struct InferArgs {
    std::string pairs, atlas_dir, name, out, report_path;
    double threshold = -1.0;
    double margin_mm = 10.0;
    int jobs = 1;
};

int run_infer_region(const InferArgs& a, const CLI::App& cmd) {
    double threshold = a.threshold;
    if (threshold < 0.0) {
        auto it = default_thresholds().find(normalize_name(a.name));
        if (it == default_thresholds().end()) {
            std::cerr << "error: no default threshold for region '" << a.name
                      << "'; pass --threshold\n"
                      << cmd.help();
            return 1;
        }
        threshold = it->second;
    }

    ctarr::AtlasSegmentation atlas = ctarr::load_atlas(a.atlas_dir);
    json manifest = json::parse(read_text(a.pairs));
    if (!manifest.is_array() || manifest.empty())
        throw ctarr::Error(ctarr::errc::invalid_argument,
                           "pairs manifest must be a non-empty JSON array");

    std::vector<std::pair<ctarr::LabelVolume, ctarr::LabelVolume>> pairs;
    pairs.reserve(manifest.size());
    std::vector<std::string> seg_paths;
    for (const json& row : manifest) {
        std::string seg_path = row.at("seg_path").get<std::string>();
        std::string roi_path = row.at("roi_path").get<std::string>();
        pairs.emplace_back(ctarr::read_label_volume(seg_path, atlas.num_classes()),
                           ctarr::read_label_volume(roi_path, 1));
        seg_paths.push_back(std::move(seg_path));
    }

    ctarr::InferReport report;
    ctarr::RegionDefinition region =
        ctarr::infer_region(pairs, atlas, a.name, threshold, a.margin_mm, a.jobs, &report);
    ctarr::save_region(region, a.out);

    if (!a.report_path.empty()) {
        json failed = json::array();
        for (std::size_t i = 0; i < report.failed.size(); ++i)
            failed.push_back(
                json{{"scan", seg_paths[report.failed[i]]}, {"reason", report.reasons[i]}});
        json j{{"schema_version", 1},
               {"region", a.name},
               {"threshold", threshold},
               {"margin_mm", a.margin_mm},
               {"pairs", report.pairs},
               {"used", report.used},
               {"failed", std::move(failed)},
               {"boxes", region.boxes.size()},
               {"wall_ms", report.wall_ms}};
        write_text(a.report_path, j.dump(2) + "\n");
    }
    std::printf("region '%s': %zu box(es) from %d of %d pairs (threshold %.3g); written to %s\n",
                region.name.c_str(), region.boxes.size(), report.used, report.pairs, threshold,
                a.out.c_str());
    return 0;
}

struct PhantomArgs {
    std::string out_dir, format = "native", lesion_organ = "liver";
    std::uint64_t seed = 1;
    bool canonical = false;
    bool fixed_orientation = false;
    double spacing = 0.0;  // 0 keeps the per-mode default
    double translation_frac = 0.4, scale_min = 0.8, scale_max = 1.25, fov_crop_frac = 0.0;
    int dropout = 0, noise_vox = 0;
};

int run_phantom(const PhantomArgs& a) {
    ctarr::VolumeFormat format = parse_format(a.format);
    const char* ext = extension_for(format);
    fs::create_directories(a.out_dir);
    auto path_of = [&](const char* stem) { return (fs::path(a.out_dir) / (stem + std::string(ext))).string(); };

    json meta{{"schema_version", 1}, {"seed", a.seed}, {"canonical", a.canonical}};
    if (a.canonical) {
        double spacing = a.spacing > 0.0 ? a.spacing : ctarr::kAtlasSpacingMm;
        ctarr::LabelVolume labels = ctarr::canonical_phantom(spacing);
        ctarr::write_volume(labels, path_of("labels"), format);
        ctarr::write_volume(ctarr::intensity_from_labels(labels), path_of("image"), format);
        meta["spacing_mm"] = spacing;
        meta["truth"] = transform_json(ctarr::RestrictedAffine{});
        meta["files"] = json{{"labels", "labels" + std::string(ext)},
                             {"image", "image" + std::string(ext)}};
    } else {
        ctarr::CaseConfig config;
        config.vary_orientation = !a.fixed_orientation;
        config.max_translation_frac = a.translation_frac;
        config.scale_min = a.scale_min;
        config.scale_max = a.scale_max;
        config.fov_crop_frac = a.fov_crop_frac;
        config.dropout_classes = a.dropout;
        config.boundary_noise_vox = a.noise_vox;
        config.lesion_organ = a.lesion_organ;
        if (a.spacing > 0.0) config.scan_spacing_mm = ctarr::Arr3d{a.spacing, a.spacing, a.spacing};

        ctarr::PhantomCase c = ctarr::sample_case(a.seed, config);
        ctarr::write_volume(c.labels, path_of("labels"), format);
        ctarr::write_volume(ctarr::intensity_from_labels(c.labels), path_of("image"), format);
        ctarr::write_volume(c.roi, path_of("roi"), format);
        meta["spacing_mm"] = config.scan_spacing_mm[0];
        meta["lesion_class"] = c.lesion_class;
        meta["lesion_organ"] = a.lesion_organ;
        meta["truth"] = transform_json(c.truth);
        meta["files"] = json{{"labels", "labels" + std::string(ext)},
                             {"image", "image" + std::string(ext)},
                             {"roi", "roi" + std::string(ext)}};
    }
    write_text((fs::path(a.out_dir) / "case.json").string(), meta.dump(2) + "\n");
    std::printf("phantom %s written to %s\n", a.canonical ? "(canonical)" : "case",
                a.out_dir.c_str());
    return 0;
}

void emit_metrics(const std::string& text, const std::string& out) {
    if (out.empty())
        std::cout << text << "\n";
    else
        write_text(out, text + "\n");
}

json metric_row(const char* name, double value) {
    return json{{"metric", name}, {"value", value}};
}

struct EvalArgs {
    std::string a, b, out;
    int classes = int(ctarr::default_schema().num_classes());
};

int run_eval_dice(const EvalArgs& e) {
    ctarr::LabelVolume a = ctarr::read_label_volume(e.a, e.classes);
    ctarr::LabelVolume b = ctarr::read_label_volume(e.b, e.classes);
    emit_metrics(json::array({metric_row("dice", ctarr::dice_score(a, b))}).dump(2), e.out);
    return 0;
}

int run_eval_ncc(const EvalArgs& e) {
    ctarr::FloatVolume a = ctarr::read_value_volume(e.a);
    ctarr::FloatVolume b = ctarr::read_value_volume(e.b);
    emit_metrics(json::array({metric_row("ncc", ctarr::ncc(a, b))}).dump(2), e.out);
    return 0;
}

struct EvalCropArgs {
    std::string fg, region, transform, out;
};

int run_eval_crop(const EvalCropArgs& e) {
    ctarr::LabelVolume fg = ctarr::read_label_volume(e.fg, 1);
    ctarr::RegionDefinition region = ctarr::load_region(e.region);
    ctarr::RestrictedAffine t = ctarr::transform_from_json(read_text(e.transform));

    std::vector<ctarr::VoxelBox> boxes;
    for (const ctarr::BoundingBox& bb : region.boxes) {
        try {
            boxes.push_back(ctarr::map_box_to_voxels(bb, t, fg.grid).voxels);
        } catch (const ctarr::Error& err) {
            if (err.code() != ctarr::errc::outside_field_of_view) throw;
        }
    }
    emit_metrics(ctarr::metrics_json(ctarr::crop_metrics(fg, boxes)), e.out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CT anatomical region registration and cropping"};
    app.require_subcommand(1);

    RegisterArgs reg;
    CLI::App* cmd_register =
        app.add_subcommand("register", "Register a labeled scan to an atlas");
    cmd_register->add_option("--moving", reg.moving, "Multi-class segmentation of the scan")
        ->required();
    cmd_register->add_option("--atlas", reg.atlas_dir, "Atlas directory")->required();
    cmd_register->add_option("--out", reg.out, "Output transform JSON")->required();

    CropArgs crop;
    CLI::App* cmd_crop = app.add_subcommand("crop", "Crop region boxes out of a scan");
    cmd_crop->add_option("--image", crop.image, "Intensity volume to crop")->required();
    cmd_crop->add_option("--moving-seg", crop.seg, "Multi-class segmentation of the scan")
        ->required();
    cmd_crop->add_option("--atlas", crop.atlas_dir, "Atlas directory")->required();
    cmd_crop->add_option("--region", crop.region, "Region definition JSON")->required();
    cmd_crop->add_option("--out-dir", crop.out_dir, "Directory for crops and report.json")
        ->required();
    cmd_crop->add_option("--format", crop.format, "Output format: auto, native, nifti")
        ->check(CLI::IsMember({"auto", "native", "nifti"}))
        ->capture_default_str();

    BuildAtlasArgs build;
    CLI::App* cmd_build =
        app.add_subcommand("build-atlas", "Build a probabilistic atlas from segmentations");
    cmd_build->add_option("segs", build.segs, "Cohort segmentation volumes")
        ->required()
        ->expected(-1);
    cmd_build->add_option("--out", build.out, "Output atlas directory")->required();
    cmd_build->add_option("--jobs", build.jobs, "Worker threads")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    InferArgs infer;
    CLI::App* cmd_infer =
        app.add_subcommand("infer-region", "Infer a region definition from labeled examples");
    cmd_infer->add_option("--pairs", infer.pairs,
                          "JSON manifest: list of {seg_path, roi_path}")
        ->required();
    cmd_infer->add_option("--atlas", infer.atlas_dir, "Atlas directory")->required();
    cmd_infer->add_option("--name", infer.name, "Region name")->required();
    cmd_infer->add_option("--threshold", infer.threshold,
                          "Heatmap threshold; defaults per region name");
    cmd_infer->add_option("--margin", infer.margin_mm, "Safety margin in mm")
        ->capture_default_str();
    cmd_infer->add_option("--out", infer.out, "Output region JSON")->required();
    cmd_infer->add_option("--report", infer.report_path, "Optional inference report JSON");
    cmd_infer->add_option("--jobs", infer.jobs, "Worker threads")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    PhantomArgs phantom;
    CLI::App* cmd_phantom =
        app.add_subcommand("phantom", "Generate a synthetic labeled scan with known truth");
    cmd_phantom->add_option("--out-dir", phantom.out_dir, "Output directory")->required();
    cmd_phantom->add_option("--seed", phantom.seed, "Random seed")->capture_default_str();
    cmd_phantom->add_flag("--canonical", phantom.canonical,
                          "Write the untransformed phantom instead of a sampled case");
    cmd_phantom->add_option("--format", phantom.format, "Output format: native, nifti")
        ->check(CLI::IsMember({"native", "nifti"}))
        ->capture_default_str();
    cmd_phantom->add_option("--spacing", phantom.spacing, "Isotropic voxel spacing in mm");
    cmd_phantom->add_flag("--fixed-orientation", phantom.fixed_orientation,
                          "Keep the canonical orientation");
    cmd_phantom->add_option("--translation-frac", phantom.translation_frac,
                            "Max |translation| as a fraction of the phantom extent")
        ->capture_default_str();
    cmd_phantom->add_option("--scale-min", phantom.scale_min, "Scale lower bound")
        ->capture_default_str();
    cmd_phantom->add_option("--scale-max", phantom.scale_max, "Scale upper bound")
        ->capture_default_str();
    cmd_phantom->add_option("--fov-crop-frac", phantom.fov_crop_frac,
                            "Fraction of the z range removed")
        ->capture_default_str();
    cmd_phantom->add_option("--dropout", phantom.dropout, "Classes erased from the labels")
        ->capture_default_str();
    cmd_phantom->add_option("--noise-vox", phantom.noise_vox,
                            "Boundary erosion/dilation in voxels")
        ->capture_default_str();
    cmd_phantom->add_option("--lesion-organ", phantom.lesion_organ, "Organ hosting the lesion")
        ->capture_default_str();

    CLI::App* cmd_eval = app.add_subcommand("eval", "Similarity and cropping metrics");
    cmd_eval->require_subcommand(1);
    EvalArgs eval_dice, eval_ncc;
    CLI::App* cmd_dice = cmd_eval->add_subcommand("dice", "Dice overlap of two label volumes");
    cmd_dice->add_option("--a", eval_dice.a, "First label volume")->required();
    cmd_dice->add_option("--b", eval_dice.b, "Second label volume")->required();
    cmd_dice->add_option("--classes", eval_dice.classes, "Number of classes")
        ->capture_default_str();
    cmd_dice->add_option("--out", eval_dice.out, "Output JSON (stdout when omitted)");
    CLI::App* cmd_ncc =
        cmd_eval->add_subcommand("ncc", "Normalized cross-correlation of two volumes");
    cmd_ncc->add_option("--a", eval_ncc.a, "First volume")->required();
    cmd_ncc->add_option("--b", eval_ncc.b, "Second volume")->required();
    cmd_ncc->add_option("--out", eval_ncc.out, "Output JSON (stdout when omitted)");
    EvalCropArgs eval_crop;
    CLI::App* cmd_eval_crop =
        cmd_eval->add_subcommand("crop", "Foreground preservation under region cropping");
    cmd_eval_crop->add_option("--fg", eval_crop.fg, "Binary foreground mask")->required();
    cmd_eval_crop->add_option("--region", eval_crop.region, "Region definition JSON")->required();
    cmd_eval_crop->add_option("--transform", eval_crop.transform, "Transform JSON from register")
        ->required();
    cmd_eval_crop->add_option("--out", eval_crop.out, "Output JSON (stdout when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand(cmd_register)) return run_register(reg);
        if (app.got_subcommand(cmd_crop)) return run_crop(crop);
        if (app.got_subcommand(cmd_build)) return run_build_atlas(build);
        if (app.got_subcommand(cmd_infer)) return run_infer_region(infer, *cmd_infer);
        if (app.got_subcommand(cmd_phantom)) return run_phantom(phantom);
        if (app.got_subcommand(cmd_eval)) {
            if (cmd_eval->got_subcommand(cmd_dice)) return run_eval_dice(eval_dice);
            if (cmd_eval->got_subcommand(cmd_ncc)) return run_eval_ncc(eval_ncc);
            if (cmd_eval->got_subcommand(cmd_eval_crop)) return run_eval_crop(eval_crop);
        }
    } catch (const ctarr::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
