#pragma once

// One-minute benchmark trajectory generation and camera-accuracy
// evaluation: centripetal Catmull-Rom positions, quaternion Squad
// orientations, arc-length reparameterization, Laplacian smoothing,
// angular-velocity clamping, scene-scale speed limits with collision
// retries, revisit detection, Umeyama Sim(3) alignment, and pose-error
// metrics.
//
// World frame: Z-up. Waypoint orientations are yaw about world-up then
// pitch about the camera's local right axis (positive pitch looks up),
// applied to an OpenCV-style base camera looking along world +X.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "worldscan/camgeo.hpp"
#include "worldscan/common.hpp"

namespace worldscan::trajbench {

// Benchmark constants.
inline constexpr double kGlobalMaxSpeedMps = 0.4;
inline constexpr double kDepthSpeedFraction = 0.6;
inline constexpr double kAngularLimitDegPerS = 12.0;
inline constexpr double kCollisionMarginM = 0.3;
inline constexpr int kMaxRetries = 3;
inline constexpr double kRetrySpeedFactor = 0.7;
inline constexpr double kRevisitMaxDistM = 0.5;
inline constexpr double kRevisitMaxAngleDeg = 20.0;
inline constexpr int kRevisitMinGapFrames = 32;
inline constexpr int kRevisitMaxPairs = 5;

struct Waypoint {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();  // meters
    double yaw_deg = 0.0;
    double pitch_deg = 0.0;
    double time_s = 0.0;
    std::optional<std::string> revisit_tag;
};

struct TrajectoryTemplate {
    std::string name;
    std::vector<Waypoint> waypoints;  // times strictly increasing
};

struct Trajectory {
    std::vector<camgeo::CameraPose> poses;
    double fps = 16.0;
    camgeo::Intrinsics intrinsics{640.0, 640.0, 640.0, 360.0, 1280.0, 720.0};
};

struct RevisitPair {
    int i = 0;
    int j = 0;            // i < j
    double distance_m = 0.0;
    double angle_deg = 0.0;

    // Normalized distance + angle ratios; lower is a tighter revisit.
    double score() const {
        return distance_m / kRevisitMaxDistM + angle_deg / kRevisitMaxAngleDeg;
    }
};

struct Sim3 {
    double scale = 1.0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

struct PoseMetrics {
    double rot_err_deg = 0.0;
    double trans_err = 0.0;
    double cam_mc = 0.0;
};

struct Scene {
    double median_depth_m = 10.0;
    std::vector<Eigen::Vector3d> point_cloud;
    camgeo::Intrinsics intrinsics{640.0, 640.0, 640.0, 360.0, 1280.0, 720.0};
};

struct GenStatus {
    int retries = 0;
    bool collision = false;
    double scale = 1.0;  // template extent multiplier actually applied
    double max_speed_mps = 0.0;
    double max_angular_velocity_deg_s = 0.0;
    uint64_t seed = 0;
};

// Camera-to-world rotation for a yaw/pitch waypoint.
Eigen::Quaterniond yaw_pitch_quaternion(double yaw_deg, double pitch_deg);

// Geodesic angle between two rotations, degrees.
double rotation_angle_deg(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b);

// Frame times i/fps for round(duration*fps)+1 frames covering [0, duration].
std::vector<double> frame_times(double duration_s, double fps);

// Centripetal (alpha = 0.5) Catmull-Rom through the waypoint positions,
// hitting each waypoint at its time. Endpoints are duplicated to complete
// the boundary segments.
std::vector<Eigen::Vector3d> catmull_rom_positions(const std::vector<Waypoint>& waypoints,
                                                   const std::vector<double>& times);

// C1 spherical interpolation through the waypoint orientations; outputs
// are unit quaternions with nonnegative consecutive dot products.
std::vector<Eigen::Quaterniond> squad_rotations(const std::vector<Waypoint>& waypoints,
                                                const std::vector<double>& times);

// Resamples to frame_count points at equal arc-length increments, using a
// 16x dense chord-length table. A zero-length path yields a constant
// output.
std::vector<Eigen::Vector3d> arc_length_reparam(const std::vector<Eigen::Vector3d>& positions,
                                                int frame_count);

// round(sigma) iterations of x <- x + 0.5*(avg(neighbors) - x), endpoints
// fixed.
std::vector<Eigen::Vector3d> laplacian_smooth(const std::vector<Eigen::Vector3d>& positions,
                                              double sigma);

// Single forward pass replacing any step faster than the limit with the
// slerp point at the limit.
std::vector<Eigen::Quaterniond> clamp_angular_velocity(const std::vector<Eigen::Quaterniond>& rots,
                                                       double fps, double limit_deg_per_s);

// min(0.4, 0.6 * median_depth / duration) in m/s.
double scene_speed_limit(double median_depth_m, double duration_s);

// Full generation pipeline: scale template extent to the scene speed limit,
// spline positions, Squad rotations, arc-length reparameterization,
// Laplacian smoothing (sigma = frames/200), 12 deg/s angular clamp, then a
// 0.3 m point-cloud collision check with up to three 0.7x speed retries.
std::pair<Trajectory, GenStatus> generate_trajectory(const TrajectoryTemplate& tmpl,
                                                     const Scene& scene, double duration_s,
                                                     double fps, uint64_t seed);

// Frame pairs at least min_gap apart whose centers are within 0.5 m and
// forward axes within 20 deg, best score first, truncated to max_pairs.
std::vector<RevisitPair> detect_revisits(const Trajectory& traj,
                                         int max_pairs = kRevisitMaxPairs,
                                         int min_gap_frames = kRevisitMinGapFrames);

// Closed-form least-squares similarity minimizing sum ||s R est + t - gt||^2
// (covariance SVD with reflection correction). Throws AlignmentError for
// fewer than three or collinear points.
Sim3 umeyama_sim3(const std::vector<Eigen::Vector3d>& est, const std::vector<Eigen::Vector3d>& gt);

Eigen::Vector3d apply_sim3(const Sim3& sim, const Eigen::Vector3d& point);
Trajectory apply_sim3(const Sim3& sim, const Trajectory& traj);

// Expresses every pose relative to the first frame.
Trajectory relativize_to_first(const Trajectory& traj);

// Mean geodesic rotation error (degrees), mean translation L2 error, and
// mean Frobenius norm of stacked [R|t] differences. Inputs must already be
// aligned and relativized.
PoseMetrics pose_errors(const Trajectory& gt, const Trajectory& est_aligned);

// Timestamp remap onto a target rate: target index i reads source frame
// round(i * src_fps / target_fps). Identity when the rates match.
Trajectory resample_to(const Trajectory& src, double target_fps, int target_count);

std::vector<Eigen::Vector3d> positions_of(const Trajectory& traj);

// Trajectory file: {"fps", "intrinsics", "frames":[{"q":[w,x,y,z],
// "p":[x,y,z]}, ...]}.
std::string trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const std::string& text);

std::string template_to_json(const TrajectoryTemplate& tmpl);
TrajectoryTemplate template_from_json(const std::string& text);

// Scene file: {"median_depth_m", optional "point_cloud" path (returned for
// the caller to resolve and load), optional "intrinsics"}.
std::pair<Scene, std::optional<std::string>> scene_from_json(const std::string& text);

// Whitespace-separated "x y z" lines.
std::vector<Eigen::Vector3d> point_cloud_from_text(const std::string& text);
// Flat little-endian float32 xyz triplets.
std::vector<Eigen::Vector3d> point_cloud_from_binary(const std::string& bytes);

}  // namespace worldscan::trajbench
