#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "worldscan/trajbench.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string out;
    json report() const { return json::parse(out); }
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(WORLDSCAN_CLI_PATH) + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string out;
    char buf[4096];
    size_t n = 0;
    while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) {
        out.append(buf, n);
    }
    const int status = pclose(pipe);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

fs::path fresh_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("worldscan_cli_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    REQUIRE(out.good());
    out << content;
}

const std::string kDataDir = WORLDSCAN_DATA_DIR;

}  // namespace

TEST_CASE("scan-demo with frame scaling stays stable over 1000 wide frames") {
    const fs::path dir = fresh_dir("scan_stable");
    const CliResult r = run_cli("scan-demo --d 16 --s 256 --frames 1000 --gamma 0.99 "
                                "--scaling frame --seed 5 --out-dir " + dir.string());
    REQUIRE(r.exit_code == 0);
    const json report = r.report();
    CHECK(report["metrics"]["blowup"] == false);
    CHECK(report["metrics"]["first_unstable_step"].is_null());
    CHECK(fs::exists(dir / "scan_trace.json"));
    CHECK(fs::exists(dir / "scan_trace.csv"));
}

TEST_CASE("scan-demo without key scaling flags an early blowup") {
    const fs::path dir = fresh_dir("scan_blowup");
    const CliResult r = run_cli("scan-demo --d 16 --s 256 --frames 1000 --gamma 0.99 "
                                "--scaling none --seed 5 --out-dir " + dir.string());
    REQUIRE(r.exit_code == 0);  // blowup is reported, not an error
    const json report = r.report();
    CHECK(report["metrics"]["blowup"] == true);
    CHECK(report["metrics"]["first_unstable_step"].get<int>() <= 64);
}

TEST_CASE("scan-demo with one frame writes a single-row trace") {
    const fs::path dir = fresh_dir("scan_single");
    const CliResult r =
        run_cli("scan-demo --frames 1 --seed 1 --format json --out-dir " + dir.string());
    REQUIRE(r.exit_code == 0);
    const json trace = json::parse(read_file(dir / "scan_trace.json"));
    REQUIRE(trace.is_array());
    CHECK(trace.size() == 1);
    CHECK(trace[0]["frame_index"] == 0);
    CHECK(!fs::exists(dir / "scan_trace.csv"));
}

TEST_CASE("cp-verify passes with deviations at machine precision") {
    const fs::path dir = fresh_dir("cp_ok");
    const CliResult r = run_cli("cp-verify --frames 32 --shards 1,2,4,8 --seed 2 --out-dir " +
                                dir.string());
    REQUIRE(r.exit_code == 0);
    const json table = r.report()["metrics"]["table"];
    REQUIRE(table.size() == 4);
    CHECK(table[0]["shards"] == 1);
    CHECK(table[0]["max_deviation"].get<double>() == 0.0);
    for (const auto& row : table) {
        CHECK(row["max_deviation"].get<double>() <= 1e-10);
    }
}

TEST_CASE("cp-verify with a corrupted composite exits with failure") {
    const fs::path dir = fresh_dir("cp_bad");
    const CliResult r = run_cli("cp-verify --frames 32 --shards 2,4 --corrupt --seed 2 "
                                "--out-dir " + dir.string());
    CHECK(r.exit_code == 1);
    CHECK(r.report()["metrics"]["all_within_threshold"] == false);
}

TEST_CASE("traj-gen writes 961 poses for a minute at 16 fps") {
    const fs::path dir = fresh_dir("traj_gen");
    const CliResult r = run_cli("traj-gen --template " + kDataDir +
                                "/templates/loop_return.json --scene " + kDataDir +
                                "/scenes/indoor.json --duration 60 --fps 16 --seed 7 --out-dir " +
                                dir.string());
    REQUIRE(r.exit_code == 0);
    const auto traj = worldscan::trajbench::trajectory_from_json(
        read_file(dir / "loop_return_trajectory.json"));
    CHECK(traj.poses.size() == 961);
    const json scene_report = r.report()["metrics"]["scenes"][0];
    CHECK(scene_report["max_angular_velocity_deg_s"].get<double>() <= 12.0 + 1e-9);
    CHECK(scene_report["collision"] == false);

    // Post-hoc scan of the written file: every rotation step within 12 deg/s.
    for (size_t i = 1; i < traj.poses.size(); ++i) {
        CHECK(worldscan::trajbench::rotation_angle_deg(traj.poses[i - 1].r, traj.poses[i].r) *
                  traj.fps <=
              12.0 + 1e-6);
    }
}

TEST_CASE("traj-gen artifacts are byte-identical across reruns") {
    const fs::path a = fresh_dir("traj_det_a");
    const fs::path b = fresh_dir("traj_det_b");
    const std::string base = "traj-gen --template " + kDataDir +
                             "/templates/figure_eight.json --scene " + kDataDir +
                             "/scenes/indoor.json --seed 11 --out-dir ";
    REQUIRE(run_cli(base + a.string()).exit_code == 0);
    REQUIRE(run_cli(base + b.string()).exit_code == 0);
    for (const char* name :
         {"figure_eight_trajectory.json", "figure_eight_report.json", "figure_eight_report.csv"}) {
        CHECK(read_file(a / name) == read_file(b / name));
    }
}

TEST_CASE("traj-gen fans out over a template directory") {
    const fs::path dir = fresh_dir("traj_dir");
    const CliResult r = run_cli("traj-gen --template " + kDataDir + "/templates --scene " +
                                kDataDir + "/scenes/outdoor.json --duration 30 --seed 3 "
                                "--format json --out-dir " + dir.string());
    REQUIRE(r.exit_code == 0);
    CHECK(r.report()["metrics"]["scenes"].size() == 3);
    CHECK(fs::exists(dir / "figure_eight_trajectory.json"));
    CHECK(fs::exists(dir / "loop_return_trajectory.json"));
    CHECK(fs::exists(dir / "s_curve_trajectory.json"));
}

TEST_CASE("traj-eval of a trajectory against itself reports zero error") {
    const fs::path dir = fresh_dir("eval_self");
    REQUIRE(run_cli("traj-gen --template " + kDataDir + "/templates/s_curve.json --scene " +
                    kDataDir + "/scenes/indoor.json --seed 1 --out-dir " + dir.string())
                .exit_code == 0);
    const std::string traj = (dir / "s_curve_trajectory.json").string();
    const CliResult r = run_cli("traj-eval --gt " + traj + " --est " + traj + " --out-dir " +
                                dir.string());
    REQUIRE(r.exit_code == 0);
    const json metrics = r.report()["metrics"];
    CHECK(metrics["rot_err_deg"].get<double>() <= 1e-6);
    CHECK(metrics["trans_err"].get<double>() <= 1e-9);
    CHECK(metrics["cam_mc"].get<double>() <= 1e-6);
    CHECK(fs::exists(dir / "metrics.json"));
    CHECK(fs::exists(dir / "metrics.csv"));
}

TEST_CASE("traj-eval recovers a synthetic 10 degree rotation offset") {
    namespace tb = worldscan::trajbench;
    const fs::path dir = fresh_dir("eval_offset");
    REQUIRE(run_cli("traj-gen --template " + kDataDir + "/templates/s_curve.json --scene " +
                    kDataDir + "/scenes/indoor.json --seed 1 --out-dir " + dir.string())
                .exit_code == 0);
    tb::Trajectory est =
        tb::trajectory_from_json(read_file(dir / "s_curve_trajectory.json"));
    const Eigen::Matrix3d offset =
        Eigen::AngleAxisd(10.0 * M_PI / 180.0, Eigen::Vector3d(0, 0, 1)).toRotationMatrix();
    for (auto& pose : est.poses) {
        pose.r = pose.r * offset;
    }
    write_file(dir / "est.json", tb::trajectory_to_json(est));

    const CliResult r = run_cli("traj-eval --gt " + (dir / "s_curve_trajectory.json").string() +
                                " --est " + (dir / "est.json").string() + " --out-dir " +
                                dir.string());
    REQUIRE(r.exit_code == 0);
    CHECK(r.report()["metrics"]["rot_err_deg"].get<double>() ==
          doctest::Approx(10.0).epsilon(1e-6));
    CHECK(r.report()["metrics"]["trans_err"].get<double>() <= 1e-9);
}

TEST_CASE("traj-eval remaps mismatched frame rates by timestamp") {
    namespace tb = worldscan::trajbench;
    const fs::path dir = fresh_dir("eval_fps");
    REQUIRE(run_cli("traj-gen --template " + kDataDir + "/templates/s_curve.json --scene " +
                    kDataDir + "/scenes/indoor.json --duration 10 --seed 1 --out-dir " +
                    dir.string())
                .exit_code == 0);
    const tb::Trajectory gt =
        tb::trajectory_from_json(read_file(dir / "s_curve_trajectory.json"));

    // A 32 fps estimate whose even frames carry the 16 fps content.
    tb::Trajectory est;
    est.fps = 32.0;
    est.intrinsics = gt.intrinsics;
    for (size_t i = 0; i < gt.poses.size(); ++i) {
        est.poses.push_back(gt.poses[i]);
        if (i + 1 < gt.poses.size()) {
            est.poses.push_back(gt.poses[i]);  // filler, never sampled
        }
    }
    write_file(dir / "est32.json", tb::trajectory_to_json(est));

    const CliResult r = run_cli("traj-eval --gt " + (dir / "s_curve_trajectory.json").string() +
                                " --est " + (dir / "est32.json").string() + " --out-dir " +
                                dir.string());
    REQUIRE(r.exit_code == 0);
    CHECK(r.report()["metrics"]["rot_err_deg"].get<double>() <= 1e-6);
    CHECK(r.report()["metrics"]["trans_err"].get<double>() <= 1e-9);
}

TEST_CASE("refine-demo reaches the target through the distilled schedule") {
    const fs::path dir = fresh_dir("refine");
    const CliResult r = run_cli("refine-demo --elements 4096 --seed 9 --out-dir " + dir.string());
    REQUIRE(r.exit_code == 0);
    const json metrics = r.report()["metrics"];
    CHECK(metrics["residual_max_abs"].get<double>() <= 1e-10);
    CHECK(metrics["sigma_in_range"] == true);
    CHECK(metrics["sigma_max"].get<double>() <= 0.909375);
    const json trace = json::parse(read_file(dir / "refine_trace.json"));
    REQUIRE(trace.size() == 4);
    CHECK(trace[0]["sigma"].get<double>() == 0.909375);
}

TEST_CASE("filter-audit accepts boundary stats inclusively") {
    const fs::path dir = fresh_dir("filter");
    const fs::path stats = dir / "stats.csv";
    write_file(stats,
               "clip_id,vmaf_motion,unimatch_flow,dover,color_sat,scene_cuts,vlm_entity,"
               "vlm_quality\n"
               "edge,0.5,3,0.4,180,1,0,0\n"
               "cutty,20,10,0.7,90,2,0,0\n");
    const CliResult r = run_cli("filter-audit --stats " + stats.string() +
                                " --profile-name MiraData --out-dir " + dir.string());
    REQUIRE(r.exit_code == 0);
    CHECK(r.report()["metrics"]["passed"] == 1);
    CHECK(r.report()["metrics"]["failed"] == 1);
    const std::string audit = read_file(dir / "filter_audit.csv");
    CHECK(audit.find("edge,1,") != std::string::npos);
    CHECK(audit.find("cutty,0,scene_cuts") != std::string::npos);
}

TEST_CASE("filter-audit of an empty stats file writes an empty audit") {
    const fs::path dir = fresh_dir("filter_empty");
    const fs::path stats = dir / "stats.csv";
    write_file(stats,
               "clip_id,vmaf_motion,unimatch_flow,dover,color_sat,scene_cuts,vlm_entity,"
               "vlm_quality\n");
    const CliResult r = run_cli("filter-audit --stats " + stats.string() +
                                " --profile-name MiraData --out-dir " + dir.string());
    REQUIRE(r.exit_code == 0);
    CHECK(read_file(dir / "filter_audit.csv") == "clip_id,pass,reasons\n");
}

TEST_CASE("usage and config errors exit with code 2") {
    CHECK(run_cli("traj-eval --gt /nonexistent.json --est /nonexistent.json").exit_code == 2);
    CHECK(run_cli("no-such-command").exit_code == 2);
    CHECK(run_cli("scan-demo --scaling bogus").exit_code == 2);
    CHECK(run_cli("filter-audit --stats /nonexistent.csv --profile-name Nope").exit_code == 2);

    const fs::path dir = fresh_dir("bad_config");
    write_file(dir / "config.json", R"({"scan-demo": {"not_a_key": 1}})");
    CHECK(run_cli("scan-demo --config " + (dir / "config.json").string()).exit_code == 2);
}

TEST_CASE("flags override config values which override defaults") {
    const fs::path dir = fresh_dir("config_prec");
    write_file(dir / "config.json",
               R"({"global": {"seed": 3}, "scan-demo": {"frames": 3, "d": 4, "s": 2}})");

    const CliResult from_config = run_cli("scan-demo --config " +
                                          (dir / "config.json").string() + " --format json "
                                          "--out-dir " + (dir / "a").string());
    REQUIRE(from_config.exit_code == 0);
    CHECK(from_config.report()["config"]["frames"] == 3);
    CHECK(from_config.report()["config"]["seed"] == 3);
    CHECK(json::parse(read_file(dir / "a" / "scan_trace.json")).size() == 3);

    const CliResult flag_wins = run_cli("scan-demo --config " + (dir / "config.json").string() +
                                        " --frames 5 --seed 8 --format json --out-dir " +
                                        (dir / "b").string());
    REQUIRE(flag_wins.exit_code == 0);
    CHECK(flag_wins.report()["config"]["frames"] == 5);
    CHECK(flag_wins.report()["config"]["seed"] == 8);
    CHECK(json::parse(read_file(dir / "b" / "scan_trace.json")).size() == 5);
}

TEST_CASE("reports echo the command, config, and artifact paths") {
    const fs::path dir = fresh_dir("report_shape");
    const CliResult r = run_cli("scan-demo --frames 2 --seed 1 --out-dir " + dir.string());
    REQUIRE(r.exit_code == 0);
    const json report = r.report();
    CHECK(report["command"] == "scan-demo");
    CHECK(report["config"].contains("gamma"));
    CHECK(report["artifacts"].size() == 2);
    CHECK(report.contains("duration_ms"));
}
