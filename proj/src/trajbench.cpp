#include "worldscan/trajbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include <json.hpp>

namespace worldscan::trajbench {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDegPerRad = 180.0 / kPi;

double clamp_unit(double x) { return std::min(1.0, std::max(-1.0, x)); }

// Base camera: OpenCV axes (x right, y down, z forward) looking along
// world +X in a Z-up world.
Eigen::Matrix3d base_camera_rotation() {
    Eigen::Matrix3d r;
    r.col(0) = Eigen::Vector3d(0.0, -1.0, 0.0);
    r.col(1) = Eigen::Vector3d(0.0, 0.0, -1.0);
    r.col(2) = Eigen::Vector3d(1.0, 0.0, 0.0);
    return r;
}

Eigen::Quaterniond slerp_no_flip(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b,
                                 double t) {
    const double dot = clamp_unit(a.dot(b));
    const double theta = std::acos(dot);
    if (theta < 1e-9) {
        Eigen::Quaterniond out(a.coeffs() * (1.0 - t) + b.coeffs() * t);
        out.normalize();
        return out;
    }
    const double sin_theta = std::sin(theta);
    const double wa = std::sin((1.0 - t) * theta) / sin_theta;
    const double wb = std::sin(t * theta) / sin_theta;
    Eigen::Quaterniond out(a.coeffs() * wa + b.coeffs() * wb);
    out.normalize();
    return out;
}

// log of a unit quaternion, as a pure-imaginary 3-vector.
Eigen::Vector3d quat_log(const Eigen::Quaterniond& q) {
    const double vnorm = q.vec().norm();
    if (vnorm < 1e-12) {
        return q.vec();
    }
    const double theta = std::atan2(vnorm, q.w());
    return q.vec() * (theta / vnorm);
}

Eigen::Quaterniond quat_exp(const Eigen::Vector3d& v) {
    const double theta = v.norm();
    if (theta < 1e-12) {
        Eigen::Quaterniond q(1.0, v.x(), v.y(), v.z());
        q.normalize();
        return q;
    }
    const double s = std::sin(theta) / theta;
    return Eigen::Quaterniond(std::cos(theta), v.x() * s, v.y() * s, v.z() * s);
}

void check_waypoints(const std::vector<Waypoint>& waypoints) {
    require(waypoints.size() >= 2, "need at least two waypoints");
    for (size_t i = 1; i < waypoints.size(); ++i) {
        require(waypoints[i].time_s > waypoints[i - 1].time_s,
                "waypoint times must be strictly increasing");
    }
}

// Index of the waypoint segment containing time t (clamped to the ends)
// plus the normalized coordinate within it.
std::pair<size_t, double> locate_segment(const std::vector<Waypoint>& waypoints, double t) {
    const size_t n = waypoints.size();
    if (t <= waypoints.front().time_s) {
        return {0, 0.0};
    }
    if (t >= waypoints.back().time_s) {
        return {n - 2, 1.0};
    }
    size_t seg = 0;
    while (seg + 2 < n && t > waypoints[seg + 1].time_s) {
        ++seg;
    }
    const double t0 = waypoints[seg].time_s;
    const double t1 = waypoints[seg + 1].time_s;
    return {seg, (t - t0) / (t1 - t0)};
}

Eigen::Vector3d lerp_guarded(const Eigen::Vector3d& a, const Eigen::Vector3d& b, double t,
                             double ta, double tb) {
    if (tb - ta < 1e-12) {
        return b;
    }
    const double w = (t - ta) / (tb - ta);
    return (1.0 - w) * a + w * b;
}

// Barry-Goldman evaluation of one centripetal Catmull-Rom segment between
// p1 and p2 at local coordinate u in [0,1].
Eigen::Vector3d catmull_rom_segment(const Eigen::Vector3d& p0, const Eigen::Vector3d& p1,
                                    const Eigen::Vector3d& p2, const Eigen::Vector3d& p3,
                                    double u) {
    const double t0 = 0.0;
    const double t1 = t0 + std::sqrt((p1 - p0).norm());
    const double t2 = t1 + std::sqrt((p2 - p1).norm());
    const double t3 = t2 + std::sqrt((p3 - p2).norm());
    if (t2 - t1 < 1e-12) {
        return p1;  // coincident interior points
    }
    const double t = t1 + u * (t2 - t1);

    const Eigen::Vector3d a1 = lerp_guarded(p0, p1, t, t0, t1);
    const Eigen::Vector3d a2 = lerp_guarded(p1, p2, t, t1, t2);
    const Eigen::Vector3d a3 = lerp_guarded(p2, p3, t, t2, t3);
    const Eigen::Vector3d b1 = lerp_guarded(a1, a2, t, t0, t2);
    const Eigen::Vector3d b2 = lerp_guarded(a2, a3, t, t1, t3);
    return lerp_guarded(b1, b2, t, t1, t2);
}

}  // namespace

Eigen::Quaterniond yaw_pitch_quaternion(double yaw_deg, double pitch_deg) {
    const Eigen::Quaterniond yaw(
        Eigen::AngleAxisd(yaw_deg / kDegPerRad, Eigen::Vector3d::UnitZ()));
    const Eigen::Quaterniond base(base_camera_rotation());
    const Eigen::Quaterniond pitch(
        Eigen::AngleAxisd(pitch_deg / kDegPerRad, Eigen::Vector3d::UnitX()));
    Eigen::Quaterniond q = yaw * base * pitch;
    q.normalize();
    if (q.w() < 0.0) {
        q.coeffs() = -q.coeffs();
    }
    return q;
}

double rotation_angle_deg(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
    // Same angle as acos(clip((tr(aᵀb)-1)/2, -1, 1)) but conditioned well
    // near 0: the sine comes from the antisymmetric part, which cancels
    // exactly for identical inputs.
    const Eigen::Matrix3d q = a.transpose() * b;
    const double cos_angle = (q.trace() - 1.0) / 2.0;
    const Eigen::Vector3d axis(q(2, 1) - q(1, 2), q(0, 2) - q(2, 0), q(1, 0) - q(0, 1));
    return std::atan2(0.5 * axis.norm(), cos_angle) * kDegPerRad;
}

std::vector<double> frame_times(double duration_s, double fps) {
    require(duration_s > 0.0 && fps > 0.0, "duration and fps must be positive");
    const int count = static_cast<int>(std::lround(duration_s * fps)) + 1;
    std::vector<double> times(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        times[static_cast<size_t>(i)] = static_cast<double>(i) / fps;
    }
    return times;
}

std::vector<Eigen::Vector3d> catmull_rom_positions(const std::vector<Waypoint>& waypoints,
                                                   const std::vector<double>& times) {
    check_waypoints(waypoints);
    const size_t n = waypoints.size();

    // Duplicated endpoints complete the boundary segments.
    std::vector<Eigen::Vector3d> ctrl;
    ctrl.reserve(n + 2);
    ctrl.push_back(waypoints.front().position);
    for (const Waypoint& w : waypoints) {
        ctrl.push_back(w.position);
    }
    ctrl.push_back(waypoints.back().position);

    std::vector<Eigen::Vector3d> out;
    out.reserve(times.size());
    for (double t : times) {
        const auto [seg, u] = locate_segment(waypoints, t);
        out.push_back(
            catmull_rom_segment(ctrl[seg], ctrl[seg + 1], ctrl[seg + 2], ctrl[seg + 3], u));
    }
    return out;
}

std::vector<Eigen::Quaterniond> squad_rotations(const std::vector<Waypoint>& waypoints,
                                                const std::vector<double>& times) {
    check_waypoints(waypoints);
    const size_t n = waypoints.size();

    std::vector<Eigen::Quaterniond> q(n);
    for (size_t i = 0; i < n; ++i) {
        q[i] = yaw_pitch_quaternion(waypoints[i].yaw_deg, waypoints[i].pitch_deg);
        if (i > 0 && q[i - 1].dot(q[i]) < 0.0) {
            q[i].coeffs() = -q[i].coeffs();
        }
    }

    // Inner control quaternions; endpoints reuse the waypoint orientation.
    std::vector<Eigen::Quaterniond> s(n);
    s.front() = q.front();
    s.back() = q.back();
    for (size_t i = 1; i + 1 < n; ++i) {
        const Eigen::Quaterniond inv = q[i].conjugate();
        const Eigen::Vector3d arg =
            -(quat_log(inv * q[i - 1]) + quat_log(inv * q[i + 1])) / 4.0;
        s[i] = q[i] * quat_exp(arg);
        s[i].normalize();
    }

    std::vector<Eigen::Quaterniond> out;
    out.reserve(times.size());
    for (double t : times) {
        const auto [seg, u] = locate_segment(waypoints, t);
        const Eigen::Quaterniond outer = slerp_no_flip(q[seg], q[seg + 1], u);
        const Eigen::Quaterniond inner = slerp_no_flip(s[seg], s[seg + 1], u);
        Eigen::Quaterniond r = slerp_no_flip(outer, inner, 2.0 * u * (1.0 - u));
        r.normalize();
        if (!out.empty() && out.back().dot(r) < 0.0) {
            r.coeffs() = -r.coeffs();
        }
        out.push_back(r);
    }
    return out;
}

std::vector<Eigen::Vector3d> arc_length_reparam(const std::vector<Eigen::Vector3d>& positions,
                                                int frame_count) {
    require(positions.size() >= 2, "need at least two samples");
    require(frame_count >= 1, "frame count must be positive");
    const size_t n = positions.size();

    // Dense chord-length table on a 16x oversampling of the input polyline.
    const size_t dense_count = std::max<size_t>(2, static_cast<size_t>(frame_count) * 16);
    std::vector<Eigen::Vector3d> dense(dense_count);
    for (size_t i = 0; i < dense_count; ++i) {
        const double u = static_cast<double>(i) / static_cast<double>(dense_count - 1) *
                         static_cast<double>(n - 1);
        const size_t j = std::min(n - 2, static_cast<size_t>(u));
        const double w = u - static_cast<double>(j);
        dense[i] = (1.0 - w) * positions[j] + w * positions[j + 1];
    }

    std::vector<double> cumulative(dense_count, 0.0);
    for (size_t i = 1; i < dense_count; ++i) {
        cumulative[i] = cumulative[i - 1] + (dense[i] - dense[i - 1]).norm();
    }
    const double total = cumulative.back();
    if (total < 1e-15) {
        return std::vector<Eigen::Vector3d>(static_cast<size_t>(frame_count), positions.front());
    }

    std::vector<Eigen::Vector3d> out;
    out.reserve(static_cast<size_t>(frame_count));
    for (int i = 0; i < frame_count; ++i) {
        const double target =
            frame_count == 1 ? 0.0
                             : total * static_cast<double>(i) / static_cast<double>(frame_count - 1);
        const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), target);
        size_t hi = std::min(dense_count - 1,
                             static_cast<size_t>(it - cumulative.begin()));
        if (hi == 0) {
            out.push_back(dense.front());
            continue;
        }
        const size_t lo = hi - 1;
        const double span = cumulative[hi] - cumulative[lo];
        const double w = span < 1e-15 ? 0.0 : (target - cumulative[lo]) / span;
        out.push_back((1.0 - w) * dense[lo] + w * dense[hi]);
    }
    return out;
}

std::vector<Eigen::Vector3d> laplacian_smooth(const std::vector<Eigen::Vector3d>& positions,
                                              double sigma) {
    require(sigma >= 0.0, "sigma must be nonnegative");
    const long iterations = std::lround(sigma);
    std::vector<Eigen::Vector3d> x = positions;
    if (x.size() < 3) {
        return x;
    }
    std::vector<Eigen::Vector3d> next = x;
    for (long it = 0; it < iterations; ++it) {
        for (size_t i = 1; i + 1 < x.size(); ++i) {
            next[i] = x[i] + 0.5 * (0.5 * (x[i - 1] + x[i + 1]) - x[i]);
        }
        std::swap(x, next);
    }
    return x;
}

std::vector<Eigen::Quaterniond> clamp_angular_velocity(const std::vector<Eigen::Quaterniond>& rots,
                                                       double fps, double limit_deg_per_s) {
    require(fps > 0.0, "fps must be positive");
    require(limit_deg_per_s > 0.0, "limit must be positive");
    if (rots.empty()) {
        return {};
    }
    const double max_step_deg = limit_deg_per_s / fps;

    std::vector<Eigen::Quaterniond> out = rots;
    for (size_t i = 1; i < out.size(); ++i) {
        Eigen::Quaterniond cur = rots[i];
        if (out[i - 1].dot(cur) < 0.0) {
            cur.coeffs() = -cur.coeffs();
        }
        const double angle_deg =
            2.0 * std::acos(clamp_unit(std::abs(out[i - 1].dot(cur)))) * kDegPerRad;
        if (angle_deg > max_step_deg) {
            out[i] = slerp_no_flip(out[i - 1], cur, max_step_deg / angle_deg);
        } else {
            out[i] = cur;
        }
    }
    return out;
}

double scene_speed_limit(double median_depth_m, double duration_s) {
    require(median_depth_m > 0.0, "median depth must be positive");
    require(duration_s > 0.0, "duration must be positive");
    return std::min(kGlobalMaxSpeedMps, kDepthSpeedFraction * median_depth_m / duration_s);
}

namespace {

bool collides(const std::vector<Eigen::Vector3d>& positions,
              const std::vector<Eigen::Vector3d>& cloud) {
    const double margin_sq = kCollisionMarginM * kCollisionMarginM;
    for (const Eigen::Vector3d& p : positions) {
        for (const Eigen::Vector3d& c : cloud) {
            if ((p - c).squaredNorm() < margin_sq) {
                return true;
            }
        }
    }
    return false;
}

double max_step_speed(const std::vector<Eigen::Vector3d>& positions, double fps) {
    double max_speed = 0.0;
    for (size_t i = 1; i < positions.size(); ++i) {
        max_speed = std::max(max_speed, (positions[i] - positions[i - 1]).norm() * fps);
    }
    return max_speed;
}

double max_step_angle_deg_s(const std::vector<Eigen::Quaterniond>& rots, double fps) {
    double max_rate = 0.0;
    for (size_t i = 1; i < rots.size(); ++i) {
        const double angle =
            2.0 * std::acos(clamp_unit(std::abs(rots[i - 1].dot(rots[i])))) * kDegPerRad;
        max_rate = std::max(max_rate, angle * fps);
    }
    return max_rate;
}

}  // namespace

std::pair<Trajectory, GenStatus> generate_trajectory(const TrajectoryTemplate& tmpl,
                                                     const Scene& scene, double duration_s,
                                                     double fps, uint64_t seed) {
    check_waypoints(tmpl.waypoints);
    const std::vector<double> times = frame_times(duration_s, fps);
    const int frame_count = static_cast<int>(times.size());

    // Waypoint times rescaled onto [0, duration].
    std::vector<Waypoint> waypoints = tmpl.waypoints;
    const double t_first = waypoints.front().time_s;
    const double t_span = waypoints.back().time_s - t_first;
    for (Waypoint& w : waypoints) {
        w.time_s = (w.time_s - t_first) * duration_s / t_span;
    }

    const double speed_limit = scene_speed_limit(scene.median_depth_m, duration_s);
    double template_length = 0.0;
    for (size_t i = 1; i < waypoints.size(); ++i) {
        template_length += (waypoints[i].position - waypoints[i - 1].position).norm();
    }
    const double base_scale =
        template_length > 1e-12 ? speed_limit * duration_s / template_length : 1.0;

    const Eigen::Vector3d anchor = waypoints.front().position;
    const std::vector<Eigen::Quaterniond> raw_rotations = squad_rotations(waypoints, times);
    const std::vector<Eigen::Quaterniond> rotations =
        clamp_angular_velocity(raw_rotations, fps, kAngularLimitDegPerS);

    GenStatus status;
    status.seed = seed;
    std::vector<Eigen::Vector3d> positions;
    for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
        const double scale = base_scale * std::pow(kRetrySpeedFactor, attempt);
        std::vector<Waypoint> scaled = waypoints;
        for (Waypoint& w : scaled) {
            w.position = anchor + scale * (w.position - anchor);
        }

        positions = catmull_rom_positions(scaled, times);
        positions = arc_length_reparam(positions, frame_count);
        positions = laplacian_smooth(positions, static_cast<double>(frame_count) / 200.0);

        status.retries = attempt;
        status.scale = scale;
        status.collision = collides(positions, scene.point_cloud);
        if (!status.collision) {
            break;
        }
    }

    Trajectory traj;
    traj.fps = fps;
    traj.intrinsics = scene.intrinsics;
    traj.poses.reserve(positions.size());
    for (size_t i = 0; i < positions.size(); ++i) {
        traj.poses.push_back({rotations[i].toRotationMatrix(), positions[i]});
    }
    status.max_speed_mps = max_step_speed(positions, fps);
    status.max_angular_velocity_deg_s = max_step_angle_deg_s(rotations, fps);
    return {std::move(traj), status};
}

std::vector<RevisitPair> detect_revisits(const Trajectory& traj, int max_pairs,
                                         int min_gap_frames) {
    require(max_pairs >= 0, "max_pairs must be nonnegative");
    require(min_gap_frames >= 0, "min_gap_frames must be nonnegative");
    const int n = static_cast<int>(traj.poses.size());

    std::vector<RevisitPair> pairs;
    for (int i = 0; i < n; ++i) {
        for (int j = i + min_gap_frames; j < n; ++j) {
            const double dist = (traj.poses[static_cast<size_t>(i)].o -
                                 traj.poses[static_cast<size_t>(j)].o)
                                    .norm();
            if (dist >= kRevisitMaxDistM) {
                continue;
            }
            const Eigen::Vector3d fi = traj.poses[static_cast<size_t>(i)].r.col(2);
            const Eigen::Vector3d fj = traj.poses[static_cast<size_t>(j)].r.col(2);
            const double angle = std::acos(clamp_unit(fi.dot(fj))) * kDegPerRad;
            if (angle >= kRevisitMaxAngleDeg) {
                continue;
            }
            pairs.push_back({i, j, dist, angle});
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const RevisitPair& a, const RevisitPair& b) {
        if (a.score() != b.score()) {
            return a.score() < b.score();
        }
        return std::pair(a.i, a.j) < std::pair(b.i, b.j);
    });
    if (pairs.size() > static_cast<size_t>(max_pairs)) {
        pairs.resize(static_cast<size_t>(max_pairs));
    }
    return pairs;
}

Sim3 umeyama_sim3(const std::vector<Eigen::Vector3d>& est,
                  const std::vector<Eigen::Vector3d>& gt) {
    if (est.size() != gt.size()) {
        throw std::invalid_argument("point lists must have equal length");
    }
    const size_t n = est.size();
    if (n < 3) {
        throw AlignmentError("need at least three point pairs");
    }
    const double inv_n = 1.0 / static_cast<double>(n);

    Eigen::Vector3d mean_est = Eigen::Vector3d::Zero();
    Eigen::Vector3d mean_gt = Eigen::Vector3d::Zero();
    for (size_t i = 0; i < n; ++i) {
        mean_est += est[i];
        mean_gt += gt[i];
    }
    mean_est *= inv_n;
    mean_gt *= inv_n;

    double var_est = 0.0;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d de = est[i] - mean_est;
        const Eigen::Vector3d dg = gt[i] - mean_gt;
        var_est += de.squaredNorm();
        cov += dg * de.transpose();
    }
    var_est *= inv_n;
    cov *= inv_n;

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d d = svd.singularValues();
    if (var_est < 1e-18 || d(1) <= 1e-12 * std::max(1.0, d(0))) {
        throw AlignmentError("degenerate point configuration");
    }

    Eigen::Vector3d correction = Eigen::Vector3d::Ones();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
        correction(2) = -1.0;
    }
    Sim3 sim;
    sim.rotation = svd.matrixU() * correction.asDiagonal() * svd.matrixV().transpose();
    sim.scale = d.dot(correction) / var_est;
    sim.translation = mean_gt - sim.scale * sim.rotation * mean_est;
    return sim;
}

Eigen::Vector3d apply_sim3(const Sim3& sim, const Eigen::Vector3d& point) {
    return sim.scale * sim.rotation * point + sim.translation;
}

Trajectory apply_sim3(const Sim3& sim, const Trajectory& traj) {
    Trajectory out = traj;
    for (camgeo::CameraPose& pose : out.poses) {
        pose.r = sim.rotation * pose.r;
        pose.o = apply_sim3(sim, pose.o);
    }
    return out;
}

Trajectory relativize_to_first(const Trajectory& traj) {
    require(!traj.poses.empty(), "empty trajectory");
    const Eigen::Matrix3d r0t = traj.poses.front().r.transpose();
    const Eigen::Vector3d o0 = traj.poses.front().o;
    Trajectory out = traj;
    for (camgeo::CameraPose& pose : out.poses) {
        pose.r = r0t * pose.r;
        pose.o = r0t * (pose.o - o0);
    }
    return out;
}

PoseMetrics pose_errors(const Trajectory& gt, const Trajectory& est_aligned) {
    require(gt.poses.size() == est_aligned.poses.size(), "trajectory length mismatch");
    require(!gt.poses.empty(), "empty trajectory");
    const double inv_n = 1.0 / static_cast<double>(gt.poses.size());

    PoseMetrics m;
    for (size_t i = 0; i < gt.poses.size(); ++i) {
        const camgeo::CameraPose& g = gt.poses[i];
        const camgeo::CameraPose& e = est_aligned.poses[i];
        m.rot_err_deg += rotation_angle_deg(g.r, e.r);
        m.trans_err += (g.o - e.o).norm();
        Eigen::Matrix<double, 3, 4> pg, pe;
        pg << g.r, g.o;
        pe << e.r, e.o;
        m.cam_mc += (pg - pe).norm();
    }
    m.rot_err_deg *= inv_n;
    m.trans_err *= inv_n;
    m.cam_mc *= inv_n;
    return m;
}

Trajectory resample_to(const Trajectory& src, double target_fps, int target_count) {
    require(target_fps > 0.0, "target fps must be positive");
    require(target_count >= 1, "target count must be positive");
    require(!src.poses.empty(), "empty trajectory");

    Trajectory out;
    out.fps = target_fps;
    out.intrinsics = src.intrinsics;
    out.poses.reserve(static_cast<size_t>(target_count));
    const int last = static_cast<int>(src.poses.size()) - 1;
    for (int i = 0; i < target_count; ++i) {
        const int j = static_cast<int>(
            std::lround(static_cast<double>(i) * src.fps / target_fps));
        out.poses.push_back(src.poses[static_cast<size_t>(std::clamp(j, 0, last))]);
    }
    return out;
}

std::vector<Eigen::Vector3d> positions_of(const Trajectory& traj) {
    std::vector<Eigen::Vector3d> out;
    out.reserve(traj.poses.size());
    for (const camgeo::CameraPose& pose : traj.poses) {
        out.push_back(pose.o);
    }
    return out;
}

namespace {

nlohmann::ordered_json intrinsics_to_json(const camgeo::Intrinsics& intr) {
    nlohmann::ordered_json j;
    j["fx"] = intr.fx;
    j["fy"] = intr.fy;
    j["cx"] = intr.cx;
    j["cy"] = intr.cy;
    j["w"] = intr.w;
    j["h"] = intr.h;
    return j;
}

camgeo::Intrinsics intrinsics_from_json(const nlohmann::json& j) {
    camgeo::Intrinsics intr{j.at("fx").get<double>(), j.at("fy").get<double>(),
                            j.at("cx").get<double>(), j.at("cy").get<double>(),
                            j.at("w").get<double>(),  j.at("h").get<double>()};
    intr.validate();
    return intr;
}

}  // namespace

std::string trajectory_to_json(const Trajectory& traj) {
    nlohmann::ordered_json j;
    j["fps"] = traj.fps;
    j["intrinsics"] = intrinsics_to_json(traj.intrinsics);
    nlohmann::ordered_json frames = nlohmann::ordered_json::array();
    Eigen::Quaterniond prev;
    for (size_t i = 0; i < traj.poses.size(); ++i) {
        Eigen::Quaterniond q(traj.poses[i].r);
        q.normalize();
        if (i == 0 ? q.w() < 0.0 : prev.dot(q) < 0.0) {
            q.coeffs() = -q.coeffs();
        }
        prev = q;
        nlohmann::ordered_json frame;
        frame["q"] = {q.w(), q.x(), q.y(), q.z()};
        frame["p"] = {traj.poses[i].o.x(), traj.poses[i].o.y(), traj.poses[i].o.z()};
        frames.push_back(std::move(frame));
    }
    j["frames"] = std::move(frames);
    return j.dump(2) + "\n";
}

Trajectory trajectory_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    Trajectory traj;
    traj.fps = j.at("fps").get<double>();
    traj.intrinsics = intrinsics_from_json(j.at("intrinsics"));
    for (const nlohmann::json& frame : j.at("frames")) {
        const auto& q = frame.at("q");
        const auto& p = frame.at("p");
        require(q.size() == 4 && p.size() == 3, "frame must carry q[wxyz] and p[xyz]");
        Eigen::Quaterniond quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                                q[3].get<double>());
        quat.normalize();
        traj.poses.push_back({quat.toRotationMatrix(),
                              Eigen::Vector3d(p[0].get<double>(), p[1].get<double>(),
                                              p[2].get<double>())});
    }
    require(!traj.poses.empty(), "trajectory must carry at least one frame");
    return traj;
}

std::string template_to_json(const TrajectoryTemplate& tmpl) {
    nlohmann::ordered_json j;
    j["name"] = tmpl.name;
    nlohmann::ordered_json waypoints = nlohmann::ordered_json::array();
    for (const Waypoint& w : tmpl.waypoints) {
        nlohmann::ordered_json wp;
        wp["position"] = {w.position.x(), w.position.y(), w.position.z()};
        wp["yaw_deg"] = w.yaw_deg;
        wp["pitch_deg"] = w.pitch_deg;
        wp["time_s"] = w.time_s;
        if (w.revisit_tag.has_value()) {
            wp["revisit"] = *w.revisit_tag;
        }
        waypoints.push_back(std::move(wp));
    }
    j["waypoints"] = std::move(waypoints);
    return j.dump(2) + "\n";
}

TrajectoryTemplate template_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    TrajectoryTemplate tmpl;
    tmpl.name = j.value("name", "template");
    for (const nlohmann::json& wp : j.at("waypoints")) {
        Waypoint w;
        const auto& p = wp.at("position");
        require(p.size() == 3, "waypoint position must be xyz");
        w.position = {p[0].get<double>(), p[1].get<double>(), p[2].get<double>()};
        w.yaw_deg = wp.at("yaw_deg").get<double>();
        w.pitch_deg = wp.at("pitch_deg").get<double>();
        w.time_s = wp.at("time_s").get<double>();
        if (wp.contains("revisit")) {
            w.revisit_tag = wp.at("revisit").get<std::string>();
        }
        tmpl.waypoints.push_back(std::move(w));
    }
    check_waypoints(tmpl.waypoints);
    return tmpl;
}

std::pair<Scene, std::optional<std::string>> scene_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    Scene scene;
    scene.median_depth_m = j.at("median_depth_m").get<double>();
    require(scene.median_depth_m > 0.0, "median depth must be positive");
    if (j.contains("intrinsics")) {
        scene.intrinsics = intrinsics_from_json(j.at("intrinsics"));
    }
    std::optional<std::string> cloud_path;
    if (j.contains("point_cloud")) {
        cloud_path = j.at("point_cloud").get<std::string>();
    }
    return {std::move(scene), std::move(cloud_path)};
}

std::vector<Eigen::Vector3d> point_cloud_from_text(const std::string& text) {
    std::istringstream in(text);
    std::vector<Eigen::Vector3d> cloud;
    double x, y, z;
    while (in >> x >> y >> z) {
        cloud.emplace_back(x, y, z);
    }
    return cloud;
}

std::vector<Eigen::Vector3d> point_cloud_from_binary(const std::string& bytes) {
    require(bytes.size() % (3 * sizeof(float)) == 0,
            "binary cloud must hold whole float32 xyz triplets");
    const size_t count = bytes.size() / (3 * sizeof(float));
    std::vector<Eigen::Vector3d> cloud;
    cloud.reserve(count);
    const float* src = reinterpret_cast<const float*>(bytes.data());
    for (size_t i = 0; i < count; ++i) {
        cloud.emplace_back(src[3 * i], src[3 * i + 1], src[3 * i + 2]);
    }
    return cloud;
}

}  // namespace worldscan::trajbench
