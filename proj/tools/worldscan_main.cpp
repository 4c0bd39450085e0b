// worldscan command-line harness: scan demos, context-parallel
// verification, trajectory generation/evaluation, refiner schedule demos,
// and clip-filter audits, with JSON/CSV artifacts.
//
// Exit codes: 0 success, 1 verification failure, 2 usage/config error.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "worldscan/camgeo.hpp"
#include "worldscan/cpscan.hpp"
#include "worldscan/datafilter.hpp"
#include "worldscan/refiner.hpp"
#include "worldscan/seqmodel.hpp"
#include "worldscan/trajbench.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

namespace sm = worldscan::seqmodel;
namespace cp = worldscan::cpscan;
namespace cg = worldscan::camgeo;
namespace tb = worldscan::trajbench;
namespace rf = worldscan::refiner;
namespace df = worldscan::datafilter;

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailed = 1;
constexpr int kExitUsage = 2;

#ifndef WORLDSCAN_DATA_DIR
#define WORLDSCAN_DATA_DIR "data"
#endif

struct GlobalOpts {
    std::string config_path;
    uint64_t seed = 0;
    std::string out_dir = "out";
    std::string format = "both";  // json | csv | both

    bool want_json() const { return format == "json" || format == "both"; }
    bool want_csv() const { return format == "csv" || format == "both"; }
};

// Applies config-file values to bound variables, but only where the
// corresponding flag was not given (flags > config file > defaults).
struct ConfigBinder {
    struct Entry {
        CLI::Option* opt;
        std::function<void(const json&)> apply;
    };
    std::map<std::string, Entry> entries;

    template <typename T>
    void bind(CLI::Option* opt, const std::string& key, T& var) {
        entries[key] = {opt, [&var](const json& v) { var = v.get<T>(); }};
    }

    void apply(const json& section) const {
        for (const auto& [key, value] : section.items()) {
            const auto it = entries.find(key);
            if (it == entries.end()) {
                throw std::invalid_argument("unknown config key: " + key);
            }
            if (it->second.opt == nullptr || it->second.opt->count() == 0) {
                it->second.apply(value);
            }
        }
    }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::invalid_argument("cannot open file: " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write file: " + path.string());
    }
    out << content;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct Report {
    std::string command;
    ordered_json config;
    ordered_json metrics;
    std::vector<std::string> artifacts;

    void print(double duration_ms) const {
        ordered_json j;
        j["command"] = command;
        j["config"] = config;
        j["metrics"] = metrics;
        j["artifacts"] = artifacts;
        j["duration_ms"] = duration_ms;
        std::cout << j.dump(2) << "\n";
    }
};

int worker_count() {
    const char* env = std::getenv("WORLDSCAN_THREADS");
    unsigned n = std::thread::hardware_concurrency();
    if (n == 0) {
        n = 1;
    }
    if (env != nullptr) {
        const long parsed = std::strtol(env, nullptr, 10);
        if (parsed >= 1) {
            n = std::min<unsigned>(n, static_cast<unsigned>(parsed));
        }
    }
    return static_cast<int>(n);
}

// ---------------------------------------------------------------- scan-demo

struct ScanDemoOpts {
    int d = 16;
    int s = 64;
    int frames = 64;
    double gamma = 0.99;
    double beta = 1.0;
    std::string scaling = "frame";  // none | l2 | frame
};

sm::KeyScaling parse_scaling(const std::string& name) {
    if (name == "none") return sm::KeyScaling::none;
    if (name == "l2") return sm::KeyScaling::l2;
    if (name == "frame") return sm::KeyScaling::frame;
    throw std::invalid_argument("scaling must be one of none|l2|frame");
}

std::vector<sm::FrameBatch> random_raw_frames(int t, int d, int s, double gamma, double beta,
                                              std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<sm::FrameBatch> frames(static_cast<size_t>(t));
    for (sm::FrameBatch& f : frames) {
        f.q = worldscan::Mat::NullaryExpr(d, s, [&] { return normal(rng); });
        f.k = worldscan::Mat::NullaryExpr(d, s, [&] { return normal(rng); });
        f.v = worldscan::Mat::NullaryExpr(d, s, [&] { return normal(rng); });
        f.beta = worldscan::Vec::Constant(s, beta);
        f.gamma = gamma;
    }
    return frames;
}

int cmd_scan_demo(const GlobalOpts& g, const ScanDemoOpts& o, Report& report) {
    const sm::KeyScaling mode = parse_scaling(o.scaling);
    if (o.d < 1 || o.s < 1 || o.frames < 1 || o.gamma <= 0.0 || o.gamma > 1.0 || o.beta < 0.0 ||
        o.beta > 1.0) {
        throw std::invalid_argument("invalid scan-demo configuration");
    }

    std::mt19937_64 rng(g.seed);
    const auto frames = random_raw_frames(o.frames, o.d, o.s, o.gamma, o.beta, rng);
    const auto trace = sm::trace_gdn_scan(frames, mode);
    const auto unstable = sm::first_unstable_step(trace);

    double max_finite_norm = 0.0;
    for (const sm::ScanStepTrace& step : trace) {
        if (std::isfinite(step.state_norm)) {
            max_finite_norm = std::max(max_finite_norm, step.state_norm);
        }
    }

    if (g.want_json()) {
        const fs::path p = fs::path(g.out_dir) / "scan_trace.json";
        write_file(p, sm::trace_to_json(trace));
        report.artifacts.push_back(p.string());
    }
    if (g.want_csv()) {
        const fs::path p = fs::path(g.out_dir) / "scan_trace.csv";
        write_file(p, sm::trace_to_csv(trace));
        report.artifacts.push_back(p.string());
    }

    report.config = {{"d", o.d},         {"s", o.s},       {"frames", o.frames},
                     {"gamma", o.gamma}, {"beta", o.beta}, {"scaling", o.scaling},
                     {"seed", g.seed}};
    report.metrics["blowup"] = unstable.has_value();
    report.metrics["first_unstable_step"] = unstable.has_value() ? json(*unstable) : json(nullptr);
    report.metrics["max_finite_state_norm"] = max_finite_norm;
    return kExitOk;
}

// ---------------------------------------------------------------- cp-verify

struct CpVerifyOpts {
    int frames = 32;
    int d = 8;
    int s = 4;
    std::string shards = "1,2,4,8";
    bool corrupt = false;
};

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(std::stoi(item));
    }
    if (out.empty()) {
        throw std::invalid_argument("expected a comma-separated integer list");
    }
    return out;
}

std::vector<sm::FrameBatch> random_stabilized_frames(int t, int d, int s, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<sm::FrameBatch> frames(static_cast<size_t>(t));
    for (sm::FrameBatch& f : frames) {
        f.q = sm::prepare_queries(worldscan::Mat::NullaryExpr(d, s, [&] { return normal(rng); }));
        f.k = sm::stabilize_keys(worldscan::Mat::NullaryExpr(d, s, [&] { return normal(rng); }),
                                 {d, s});
        f.v = worldscan::Mat::NullaryExpr(d, s, [&] { return normal(rng); });
        f.beta = worldscan::Vec::NullaryExpr(s, [&] { return unit(rng); });
        f.gamma = 0.9 + 0.1 * unit(rng);
    }
    return frames;
}

int cmd_cp_verify(const GlobalOpts& g, const CpVerifyOpts& o, Report& report) {
    const std::vector<int> shard_counts = parse_int_list(o.shards);
    if (o.frames < 1 || o.d < 1 || o.s < 1) {
        throw std::invalid_argument("invalid cp-verify configuration");
    }

    std::mt19937_64 rng(g.seed);
    const auto frames = random_stabilized_frames(o.frames, o.d, o.s, rng);
    const sm::ScanOutput oracle =
        sm::gdn_forward_scan(frames, sm::RecurrentState::zero(o.d));

    constexpr double kThreshold = 1e-10;
    ordered_json rows = ordered_json::array();
    std::string csv = "shards,max_deviation\n";
    bool all_ok = true;
    for (int p : shard_counts) {
        const cp::ShardPlan plan = cp::make_plan(o.frames, p);
        sm::ScanOutput result;
        if (o.corrupt && p > 1) {
            // Negative control: perturb one input composite before the
            // prefix composition.
            std::vector<cp::ShardSummary> summaries;
            for (const cp::FrameRange& r : plan.assignment) {
                std::vector<sm::FrameBatch> shard(frames.begin() + r.begin,
                                                  frames.begin() + r.end);
                summaries.push_back(cp::shard_summary(shard));
            }
            summaries.front().h *= 1.0 + 1e-3;
            const auto starts = cp::prefix_compose(summaries, o.d);
            for (size_t i = 0; i < plan.assignment.size(); ++i) {
                const cp::FrameRange& r = plan.assignment[i];
                std::vector<sm::FrameBatch> shard(frames.begin() + r.begin,
                                                  frames.begin() + r.end);
                sm::ScanOutput local = sm::gdn_forward_scan(shard, starts[i]);
                for (worldscan::Mat& out : local.outputs) {
                    result.outputs.push_back(std::move(out));
                }
                result.final_state = std::move(local.final_state);
            }
        } else {
            result = cp::cp_scan(frames, plan);
        }

        double deviation = (result.final_state.s - oracle.final_state.s).cwiseAbs().maxCoeff();
        for (size_t t = 0; t < oracle.outputs.size(); ++t) {
            deviation =
                std::max(deviation, (result.outputs[t] - oracle.outputs[t]).cwiseAbs().maxCoeff());
        }
        all_ok = all_ok && deviation <= kThreshold;
        rows.push_back({{"shards", p}, {"max_deviation", deviation}});
        csv += std::to_string(p) + "," + fmt_double(deviation) + "\n";
    }

    if (g.want_json()) {
        const fs::path p = fs::path(g.out_dir) / "cp_verify.json";
        write_file(p, rows.dump(2) + "\n");
        report.artifacts.push_back(p.string());
    }
    if (g.want_csv()) {
        const fs::path p = fs::path(g.out_dir) / "cp_verify.csv";
        write_file(p, csv);
        report.artifacts.push_back(p.string());
    }

    report.config = {{"frames", o.frames}, {"d", o.d},           {"s", o.s},
                     {"shards", o.shards}, {"corrupt", o.corrupt}, {"seed", g.seed}};
    report.metrics["threshold"] = kThreshold;
    report.metrics["all_within_threshold"] = all_ok;
    report.metrics["table"] = rows;
    return all_ok ? kExitOk : kExitVerifyFailed;
}

// ------------------------------------------------------------------ traj-gen

struct TrajGenOpts {
    std::string template_path;
    std::string scene_path;
    double duration = 60.0;
    double fps = 16.0;
};

tb::Scene load_scene(const std::string& path) {
    auto [scene, cloud_path] = tb::scene_from_json(read_file(path));
    if (cloud_path.has_value()) {
        const fs::path resolved = fs::path(path).parent_path() / *cloud_path;
        const std::string bytes = read_file(resolved.string());
        if (resolved.extension() == ".bin") {
            scene.point_cloud = tb::point_cloud_from_binary(bytes);
        } else {
            scene.point_cloud = tb::point_cloud_from_text(bytes);
        }
    }
    return scene;
}

ordered_json revisits_to_json(const std::vector<tb::RevisitPair>& revisits) {
    ordered_json arr = ordered_json::array();
    for (const tb::RevisitPair& r : revisits) {
        arr.push_back({{"i", r.i},
                       {"j", r.j},
                       {"distance_m", r.distance_m},
                       {"angle_deg", r.angle_deg},
                       {"score", r.score()}});
    }
    return arr;
}

int cmd_traj_gen(const GlobalOpts& g, const TrajGenOpts& o, Report& report) {
    if (o.template_path.empty() || o.scene_path.empty()) {
        throw std::invalid_argument("traj-gen requires --template and --scene");
    }
    const tb::Scene scene = load_scene(o.scene_path);

    std::vector<fs::path> template_files;
    if (fs::is_directory(o.template_path)) {
        for (const auto& entry : fs::directory_iterator(o.template_path)) {
            if (entry.path().extension() == ".json") {
                template_files.push_back(entry.path());
            }
        }
        std::sort(template_files.begin(), template_files.end());
    } else {
        template_files.emplace_back(o.template_path);
    }
    if (template_files.empty()) {
        throw std::invalid_argument("no templates found at " + o.template_path);
    }

    struct SceneResult {
        std::string stem;
        tb::Trajectory traj;
        tb::GenStatus status;
        std::vector<tb::RevisitPair> revisits;
    };
    std::vector<SceneResult> results(template_files.size());
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::string failure;
    std::mutex failure_mutex;

    const auto run = [&] {
        for (size_t i = next.fetch_add(1); i < template_files.size(); i = next.fetch_add(1)) {
            try {
                const auto tmpl = tb::template_from_json(read_file(template_files[i].string()));
                auto [traj, status] =
                    tb::generate_trajectory(tmpl, scene, o.duration, o.fps, g.seed);
                results[i].stem = template_files[i].stem().string();
                results[i].traj = std::move(traj);
                results[i].status = status;
                results[i].revisits = tb::detect_revisits(results[i].traj);
            } catch (const std::exception& e) {
                std::scoped_lock lock(failure_mutex);
                failed = true;
                failure = e.what();
            }
        }
    };
    const int threads = std::min<int>(worker_count(), static_cast<int>(template_files.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) {
        pool.emplace_back(run);
    }
    run();
    for (std::thread& t : pool) {
        t.join();
    }
    if (failed) {
        throw std::invalid_argument(failure);
    }

    ordered_json scenes = ordered_json::array();
    for (const SceneResult& r : results) {
        const fs::path traj_path = fs::path(g.out_dir) / (r.stem + "_trajectory.json");
        write_file(traj_path, tb::trajectory_to_json(r.traj));
        report.artifacts.push_back(traj_path.string());

        ordered_json gen;
        gen["template"] = r.stem;
        gen["poses"] = r.traj.poses.size();
        gen["retries"] = r.status.retries;
        gen["collision"] = r.status.collision;
        gen["scale"] = r.status.scale;
        gen["max_speed_mps"] = r.status.max_speed_mps;
        gen["max_angular_velocity_deg_s"] = r.status.max_angular_velocity_deg_s;
        gen["revisit_pairs"] = revisits_to_json(r.revisits);
        if (g.want_json()) {
            const fs::path p = fs::path(g.out_dir) / (r.stem + "_report.json");
            write_file(p, gen.dump(2) + "\n");
            report.artifacts.push_back(p.string());
        }
        if (g.want_csv()) {
            std::string csv =
                "template,poses,retries,collision,scale,max_speed_mps,max_angular_velocity_deg_"
                "s,revisit_pairs\n";
            csv += r.stem + "," + std::to_string(r.traj.poses.size()) + "," +
                   std::to_string(r.status.retries) + "," + (r.status.collision ? "1" : "0") +
                   "," + fmt_double(r.status.scale) + "," + fmt_double(r.status.max_speed_mps) +
                   "," + fmt_double(r.status.max_angular_velocity_deg_s) + "," +
                   std::to_string(r.revisits.size()) + "\n";
            const fs::path p = fs::path(g.out_dir) / (r.stem + "_report.csv");
            write_file(p, csv);
            report.artifacts.push_back(p.string());
        }
        scenes.push_back(std::move(gen));
    }

    report.config = {{"template", o.template_path},
                     {"scene", o.scene_path},
                     {"duration", o.duration},
                     {"fps", o.fps},
                     {"seed", g.seed}};
    report.metrics["scenes"] = scenes;
    return kExitOk;
}

// ----------------------------------------------------------------- traj-eval

struct TrajEvalOpts {
    std::string gt_path;
    std::string est_path;
};

int cmd_traj_eval(const GlobalOpts& g, const TrajEvalOpts& o, Report& report) {
    if (o.gt_path.empty() || o.est_path.empty()) {
        throw std::invalid_argument("traj-eval requires --gt and --est");
    }
    const tb::Trajectory gt = tb::trajectory_from_json(read_file(o.gt_path));
    const tb::Trajectory est_native = tb::trajectory_from_json(read_file(o.est_path));

    const tb::Trajectory est_resampled =
        tb::resample_to(est_native, gt.fps, static_cast<int>(gt.poses.size()));
    const tb::Trajectory gt_rel = tb::relativize_to_first(gt);
    tb::Trajectory est_rel = tb::relativize_to_first(est_resampled);

    std::string alignment = "sim3";
    try {
        const tb::Sim3 sim =
            tb::umeyama_sim3(tb::positions_of(est_rel), tb::positions_of(gt_rel));
        est_rel = tb::apply_sim3(sim, est_rel);
    } catch (const worldscan::AlignmentError&) {
        alignment = "identity(degenerate)";
    }

    const tb::PoseMetrics metrics = tb::pose_errors(gt_rel, est_rel);
    const auto revisits = tb::detect_revisits(gt);

    ordered_json mj;
    mj["rot_err_deg"] = metrics.rot_err_deg;
    mj["trans_err"] = metrics.trans_err;
    mj["cam_mc"] = metrics.cam_mc;
    mj["revisit_pairs"] = revisits_to_json(revisits);
    if (g.want_json()) {
        const fs::path p = fs::path(g.out_dir) / "metrics.json";
        write_file(p, mj.dump(2) + "\n");
        report.artifacts.push_back(p.string());
    }
    if (g.want_csv()) {
        std::string csv = "rot_err_deg,trans_err,cam_mc,revisit_pairs\n";
        csv += fmt_double(metrics.rot_err_deg) + "," + fmt_double(metrics.trans_err) + "," +
               fmt_double(metrics.cam_mc) + "," + std::to_string(revisits.size()) + "\n";
        const fs::path p = fs::path(g.out_dir) / "metrics.csv";
        write_file(p, csv);
        report.artifacts.push_back(p.string());
    }

    report.config = {{"gt", o.gt_path}, {"est", o.est_path}, {"seed", g.seed}};
    report.metrics["rot_err_deg"] = metrics.rot_err_deg;
    report.metrics["trans_err"] = metrics.trans_err;
    report.metrics["cam_mc"] = metrics.cam_mc;
    report.metrics["alignment"] = alignment;
    return kExitOk;
}

// --------------------------------------------------------------- refine-demo

struct RefineDemoOpts {
    int elements = 4096;
    std::string schedule = "0.909375,0.725,0.421875,0";
    int sigma_samples = 100000;
    double ln_mean = 0.0;
    double ln_std = 1.0;
    double ln_shift = 0.0;
};

int cmd_refine_demo(const GlobalOpts& g, const RefineDemoOpts& o, Report& report) {
    if (o.elements < 1 || o.sigma_samples < 1) {
        throw std::invalid_argument("invalid refine-demo configuration");
    }
    std::vector<double> steps;
    {
        std::stringstream ss(o.schedule);
        std::string item;
        while (std::getline(ss, item, ',')) {
            steps.push_back(std::stod(item));
        }
    }
    rf::SigmaSchedule schedule{steps.empty() ? 0.0 : steps.front(), steps};
    schedule.validate();

    std::mt19937_64 rng(g.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto randn = [&](int n) {
        return rf::Array::NullaryExpr(n, [&] { return normal(rng); });
    };
    const rf::Array x_l = randn(o.elements);
    const rf::Array x_h = randn(o.elements);
    const rf::Array noise = randn(o.elements);

    const rf::Array x1 = rf::make_source(x_l, schedule.sigma_start, noise);
    const rf::Array v_star = rf::target_velocity(x1, x_h, schedule.sigma_start);

    std::vector<rf::EulerStepTrace> trace;
    const rf::Array x_final = rf::euler_refine(
        x1, schedule, [&](const rf::Array&, double) { return v_star; }, &trace);
    const double residual = (x_final - x_h).abs().maxCoeff();

    double sigma_min = 1.0;
    double sigma_max = 0.0;
    bool in_range = true;
    const rf::LogitNormalParams params{o.ln_mean, o.ln_std, o.ln_shift};
    for (int i = 0; i < o.sigma_samples; ++i) {
        const double s = rf::sample_sigma(params, schedule.sigma_start, rng);
        sigma_min = std::min(sigma_min, s);
        sigma_max = std::max(sigma_max, s);
        in_range = in_range && s > 0.0 && s <= schedule.sigma_start;
    }

    if (g.want_json()) {
        const fs::path p = fs::path(g.out_dir) / "refine_trace.json";
        write_file(p, rf::euler_trace_to_json(trace));
        report.artifacts.push_back(p.string());
    }
    if (g.want_csv()) {
        std::string csv = "sigma,mean_abs\n";
        for (const rf::EulerStepTrace& step : trace) {
            csv += fmt_double(step.sigma) + "," + fmt_double(step.mean_abs) + "\n";
        }
        const fs::path p = fs::path(g.out_dir) / "refine_trace.csv";
        write_file(p, csv);
        report.artifacts.push_back(p.string());
    }

    report.config = {{"elements", o.elements},
                     {"schedule", o.schedule},
                     {"sigma_samples", o.sigma_samples},
                     {"ln_mean", o.ln_mean},
                     {"ln_std", o.ln_std},
                     {"ln_shift", o.ln_shift},
                     {"seed", g.seed}};
    report.metrics["residual_max_abs"] = residual;
    report.metrics["sigma_min"] = sigma_min;
    report.metrics["sigma_max"] = sigma_max;
    report.metrics["sigma_in_range"] = in_range;
    return kExitOk;
}

// -------------------------------------------------------------- filter-audit

struct FilterAuditOpts {
    std::string stats_path;
    std::string profile_name;
    std::string profiles_path = std::string(WORLDSCAN_DATA_DIR) + "/filter_profiles.json";
};

int cmd_filter_audit(const GlobalOpts& g, const FilterAuditOpts& o, Report& report) {
    if (o.stats_path.empty() || o.profile_name.empty()) {
        throw std::invalid_argument("filter-audit requires --stats and --profile-name");
    }
    const auto profiles = df::profiles_from_json(read_file(o.profiles_path));
    const auto it = profiles.find(o.profile_name);
    if (it == profiles.end()) {
        throw std::invalid_argument("unknown profile: " + o.profile_name);
    }

    const auto stats = df::stats_from_csv(read_file(o.stats_path));
    std::vector<std::pair<std::string, df::GateResult>> rows;
    int passed = 0;
    for (const df::ClipStats& clip : stats) {
        df::GateResult result = df::apply_profile(clip, it->second);
        passed += result.pass ? 1 : 0;
        rows.emplace_back(clip.clip_id, std::move(result));
    }

    const fs::path audit_path = fs::path(g.out_dir) / "filter_audit.csv";
    write_file(audit_path, df::audit_to_csv(rows));
    report.artifacts.push_back(audit_path.string());
    if (g.want_json()) {
        ordered_json arr = ordered_json::array();
        for (const auto& [clip_id, result] : rows) {
            arr.push_back({{"clip_id", clip_id}, {"pass", result.pass}, {"reasons", result.reasons}});
        }
        const fs::path p = fs::path(g.out_dir) / "filter_audit.json";
        write_file(p, arr.dump(2) + "\n");
        report.artifacts.push_back(p.string());
    }

    report.config = {{"stats", o.stats_path},
                     {"profile_name", o.profile_name},
                     {"profiles", o.profiles_path},
                     {"seed", g.seed}};
    report.metrics["clips"] = stats.size();
    report.metrics["passed"] = passed;
    report.metrics["failed"] = static_cast<int>(stats.size()) - passed;
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"worldscan: recurrent-scan, camera-geometry, and benchmark tooling"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOpts g;
    app.add_option("--config", g.config_path, "JSON config file");
    CLI::Option* opt_seed = app.add_option("--seed", g.seed, "RNG seed");
    CLI::Option* opt_out = app.add_option("--out-dir", g.out_dir, "artifact directory");
    CLI::Option* opt_format =
        app.add_option("--format", g.format, "artifact format: json|csv|both")
            ->check(CLI::IsMember({"json", "csv", "both"}));

    ScanDemoOpts scan_opts;
    CLI::App* scan = app.add_subcommand("scan-demo", "run a gated scan and trace state norms");
    ConfigBinder scan_binder;
    scan_binder.bind(scan->add_option("--d", scan_opts.d, "head dimension"), "d", scan_opts.d);
    scan_binder.bind(scan->add_option("--s", scan_opts.s, "tokens per frame"), "s", scan_opts.s);
    scan_binder.bind(scan->add_option("--frames", scan_opts.frames, "sequence length"), "frames",
                     scan_opts.frames);
    scan_binder.bind(scan->add_option("--gamma", scan_opts.gamma, "frame decay"), "gamma",
                     scan_opts.gamma);
    scan_binder.bind(scan->add_option("--beta", scan_opts.beta, "update gate"), "beta",
                     scan_opts.beta);
    scan_binder.bind(scan->add_option("--scaling", scan_opts.scaling, "key scaling none|l2|frame"),
                     "scaling", scan_opts.scaling);

    CpVerifyOpts cp_opts;
    CLI::App* cpv = app.add_subcommand("cp-verify", "verify context-parallel scan exactness");
    ConfigBinder cp_binder;
    cp_binder.bind(cpv->add_option("--frames", cp_opts.frames, "sequence length"), "frames",
                   cp_opts.frames);
    cp_binder.bind(cpv->add_option("--d", cp_opts.d, "head dimension"), "d", cp_opts.d);
    cp_binder.bind(cpv->add_option("--s", cp_opts.s, "tokens per frame"), "s", cp_opts.s);
    cp_binder.bind(cpv->add_option("--shards", cp_opts.shards, "comma-separated shard counts"),
                   "shards", cp_opts.shards);
    cp_binder.bind(cpv->add_flag("--corrupt", cp_opts.corrupt, "perturb one composite"), "corrupt",
                   cp_opts.corrupt);

    TrajGenOpts tg_opts;
    CLI::App* tg = app.add_subcommand("traj-gen", "generate benchmark camera trajectories");
    ConfigBinder tg_binder;
    tg_binder.bind(tg->add_option("--template", tg_opts.template_path, "template file or directory"),
                   "template", tg_opts.template_path);
    tg_binder.bind(tg->add_option("--scene", tg_opts.scene_path, "scene JSON"), "scene",
                   tg_opts.scene_path);
    tg_binder.bind(tg->add_option("--duration", tg_opts.duration, "seconds"), "duration",
                   tg_opts.duration);
    tg_binder.bind(tg->add_option("--fps", tg_opts.fps, "camera frames per second"), "fps",
                   tg_opts.fps);

    TrajEvalOpts te_opts;
    CLI::App* te = app.add_subcommand("traj-eval", "evaluate a trajectory against ground truth");
    ConfigBinder te_binder;
    te_binder.bind(te->add_option("--gt", te_opts.gt_path, "ground-truth trajectory JSON"), "gt",
                   te_opts.gt_path);
    te_binder.bind(te->add_option("--est", te_opts.est_path, "estimated trajectory JSON"), "est",
                   te_opts.est_path);

    RefineDemoOpts rd_opts;
    CLI::App* rd = app.add_subcommand("refine-demo", "run the truncated-sigma Euler refiner");
    ConfigBinder rd_binder;
    rd_binder.bind(rd->add_option("--elements", rd_opts.elements, "latent size"), "elements",
                   rd_opts.elements);
    rd_binder.bind(rd->add_option("--schedule", rd_opts.schedule, "comma-separated sigmas"),
                   "schedule", rd_opts.schedule);
    rd_binder.bind(rd->add_option("--sigma-samples", rd_opts.sigma_samples, "sampler draws"),
                   "sigma_samples", rd_opts.sigma_samples);
    rd_binder.bind(rd->add_option("--ln-mean", rd_opts.ln_mean, "logit-normal mean"), "ln_mean",
                   rd_opts.ln_mean);
    rd_binder.bind(rd->add_option("--ln-std", rd_opts.ln_std, "logit-normal std"), "ln_std",
                   rd_opts.ln_std);
    rd_binder.bind(rd->add_option("--ln-shift", rd_opts.ln_shift, "logit-normal shift"),
                   "ln_shift", rd_opts.ln_shift);

    FilterAuditOpts fa_opts;
    CLI::App* fa = app.add_subcommand("filter-audit", "gate clip stats against a dataset profile");
    ConfigBinder fa_binder;
    fa_binder.bind(fa->add_option("--stats", fa_opts.stats_path, "clip stats CSV"), "stats",
                   fa_opts.stats_path);
    fa_binder.bind(fa->add_option("--profile-name", fa_opts.profile_name, "dataset profile"),
                   "profile_name", fa_opts.profile_name);
    fa_binder.bind(fa->add_option("--profiles", fa_opts.profiles_path, "profiles JSON"),
                   "profiles", fa_opts.profiles_path);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    const auto started = std::chrono::steady_clock::now();
    try {
        CLI::App* active = app.get_subcommands().front();
        const std::string name = active->get_name();

        if (!g.config_path.empty()) {
            const json config = json::parse(read_file(g.config_path));
            for (const auto& [section, values] : config.items()) {
                if (section == "global") {
                    for (const auto& [key, value] : values.items()) {
                        if (key == "seed" && opt_seed->count() == 0) {
                            g.seed = value.get<uint64_t>();
                        } else if (key == "out_dir" && opt_out->count() == 0) {
                            g.out_dir = value.get<std::string>();
                        } else if (key == "format" && opt_format->count() == 0) {
                            g.format = value.get<std::string>();
                        } else if (key != "seed" && key != "out_dir" && key != "format") {
                            throw std::invalid_argument("unknown global config key: " + key);
                        }
                    }
                    continue;
                }
                const ConfigBinder* binder = nullptr;
                if (section == "scan-demo") binder = &scan_binder;
                else if (section == "cp-verify") binder = &cp_binder;
                else if (section == "traj-gen") binder = &tg_binder;
                else if (section == "traj-eval") binder = &te_binder;
                else if (section == "refine-demo") binder = &rd_binder;
                else if (section == "filter-audit") binder = &fa_binder;
                else throw std::invalid_argument("unknown config section: " + section);
                if (section == name) {
                    binder->apply(values);
                }
            }
        }
        if (g.format != "json" && g.format != "csv" && g.format != "both") {
            throw std::invalid_argument("format must be json|csv|both");
        }

        Report report;
        report.command = name;
        int code = kExitUsage;
        if (name == "scan-demo") code = cmd_scan_demo(g, scan_opts, report);
        else if (name == "cp-verify") code = cmd_cp_verify(g, cp_opts, report);
        else if (name == "traj-gen") code = cmd_traj_gen(g, tg_opts, report);
        else if (name == "traj-eval") code = cmd_traj_eval(g, te_opts, report);
        else if (name == "refine-demo") code = cmd_refine_demo(g, rd_opts, report);
        else if (name == "filter-audit") code = cmd_filter_audit(g, fa_opts, report);

        const double duration_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started)
                .count();
        report.print(duration_ms);
        return code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}
