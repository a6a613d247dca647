#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "ctarr/regions.hpp"
#include "ctarr/registration.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace ctarr;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const char* name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args, std::string* output = nullptr) {
    static int counter = 0;
    fs::path cap =
        fs::temp_directory_path() / ("ctarr_cli_capture_" + std::to_string(counter++) + ".txt");
    std::string cmd = "'" CTARR_CLI_PATH "' " + args + " > '" + cap.string() + "' 2>&1";
    int status = std::system(cmd.c_str());
    if (output) {
        std::ifstream in(cap);
        output->assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    }
    fs::remove(cap);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json parse_file(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    return json::parse(in);
}

}  // namespace

TEST_CASE("--help exits 0 for every subcommand") {
    CHECK(run_cli("--help") == 0);
    for (const char* sub : {"register", "crop", "build-atlas", "infer-region", "phantom", "eval"})
        CHECK(run_cli(std::string(sub) + " --help") == 0);
    for (const char* sub : {"dice", "ncc", "crop"})
        CHECK(run_cli(std::string("eval ") + sub + " --help") == 0);
}

TEST_CASE("usage errors exit 1 with a diagnostic") {
    std::string out;
    CHECK(run_cli("", &out) == 1);

    CHECK(run_cli("register --moving a --atlas b --out c --bogus", &out) == 1);
    CHECK(out.find("--bogus") != std::string::npos);

    CHECK(run_cli("register --atlas b --out c", &out) == 1);
    CHECK(out.find("--moving") != std::string::npos);

    CHECK(run_cli("infer-region --pairs p --atlas a --name mystery --out r.json", &out) == 1);
    CHECK(out.find("threshold") != std::string::npos);
}

TEST_CASE("processing errors exit 2") {
    std::string out;
    CHECK(run_cli("register --moving nope.vol --atlas nowhere --out t.json", &out) == 2);
    CHECK(out.find("error:") != std::string::npos);

    CHECK(run_cli("eval dice --a nope.vol --b nope.vol", &out) == 2);
}

TEST_CASE("phantom, build-atlas, register, crop, infer-region, eval round trip") {
    fs::path dir = fresh_dir("ctarr_cli_pipeline");
    std::string canon = (dir / "canon").string();
    std::string scan = (dir / "scan").string();
    std::string atlas_dir = (dir / "atlas").string();

    REQUIRE(run_cli("phantom --canonical --out-dir " + canon) == 0);
    REQUIRE(run_cli("phantom --seed 11 --out-dir " + scan) == 0);
    CHECK(fs::exists(dir / "canon" / "labels.vol"));
    CHECK(fs::exists(dir / "scan" / "roi.vol"));

    json case_meta = parse_file(dir / "scan" / "case.json");
    CHECK(case_meta["seed"] == 11);
    json truth = case_meta["truth"];

    std::string canon_labels = canon + "/labels.vol";
    REQUIRE(run_cli("build-atlas " + canon_labels + " " + canon_labels + " --out " + atlas_dir) ==
            0);
    json build_report = parse_file(dir / "atlas" / "build_report.json");
    CHECK(build_report["valid_scans"] == 2);

    std::string tf_path = (dir / "tf.json").string();
    REQUIRE(run_cli("register --moving " + scan + "/labels.vol --atlas " + atlas_dir + " --out " +
                    tf_path) == 0);
    json tf = parse_file(tf_path);
    CHECK(tf["k_rot"] == truth["k_rot"]);
    CHECK(tf["flip_z"] == truth["flip_z"]);
    for (int a = 0; a < 3; ++a) {
        CHECK(std::abs(tf["translation_mm"][a].get<double>() -
                       truth["translation_mm"][a].get<double>()) <= 6.0);
        CHECK(std::abs(tf["scale"][a].get<double>() - truth["scale"][a].get<double>()) <= 0.02);
    }

    std::string region_path = std::string(CTARR_DATA_DIR) + "/regions/liver.json";
    std::string crops = (dir / "crops").string();
    REQUIRE(run_cli("crop --image " + scan + "/image.vol --moving-seg " + scan +
                    "/labels.vol --atlas " + atlas_dir + " --region " + region_path +
                    " --out-dir " + crops) == 0);
    json crop_report = parse_file(dir / "crops" / "report.json");
    REQUIRE(crop_report["boxes"].size() == 1);
    CHECK(crop_report["boxes"][0]["in_fov"] == true);
    CHECK(fs::exists(dir / "crops" / crop_report["crops"][0].get<std::string>()));

    std::string dice_out;
    REQUIRE(run_cli("eval dice --a " + scan + "/labels.vol --b " + scan + "/labels.vol",
                    &dice_out) == 0);
    json dice = json::parse(dice_out);
    CHECK(dice[0]["metric"] == "dice");
    CHECK(dice[0]["value"].get<double>() == 1.0);

    std::string crop_metrics_out;
    REQUIRE(run_cli("eval crop --fg " + scan + "/roi.vol --region " + region_path +
                        " --transform " + tf_path,
                    &crop_metrics_out) == 0);
    json rows = json::parse(crop_metrics_out);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0]["metric"] == "preserved foreground");
    double preserved = rows[0]["value"].get<double>();
    CHECK(preserved >= 0.0);
    CHECK(preserved <= 100.0);

    std::ofstream(dir / "pairs.json") << json::array({json{{"seg_path", scan + "/labels.vol"},
                                                           {"roi_path", scan + "/roi.vol"}}});
    std::string inferred_path = (dir / "lesions.json").string();
    std::string infer_report_path = (dir / "infer_report.json").string();
    REQUIRE(run_cli("infer-region --pairs " + (dir / "pairs.json").string() + " --atlas " +
                    atlas_dir + " --name liver --out " + inferred_path + " --report " +
                    infer_report_path) == 0);
    RegionDefinition inferred = load_region(inferred_path);
    CHECK(inferred.name == "liver");
    CHECK(inferred.threshold == 0.035);
    CHECK(inferred.n_examples == 1);
    CHECK(!inferred.boxes.empty());
    json infer_report = parse_file(infer_report_path);
    CHECK(infer_report["used"] == 1);
    CHECK(infer_report["failed"].empty());
}

TEST_CASE("nifti output round trips through the CLI") {
    fs::path dir = fresh_dir("ctarr_cli_nifti");
    std::string scan = (dir / "scan").string();
    REQUIRE(run_cli("phantom --seed 3 --fixed-orientation --format nifti --out-dir " + scan) == 0);
    CHECK(fs::exists(dir / "scan" / "labels.nii.gz"));

    std::string out;
    REQUIRE(run_cli("eval ncc --a " + scan + "/image.nii.gz --b " + scan + "/image.nii.gz",
                    &out) == 0);
    json rows = json::parse(out);
    CHECK(rows[0]["value"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
}
