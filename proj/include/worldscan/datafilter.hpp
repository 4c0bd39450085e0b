#pragma once

// Clip-quality gating math: field of view, focal divergence, scale
// coefficient of variation, per-dataset threshold profiles, and the
// weighted per-frame depth-scale fusion with EMA smoothing.
//
// Metric scores (VMAF motion, UniMatch flow, DOVER, saturation, VLM
// counts/flags) arrive as inputs; only the gating and fusion math lives
// here.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "worldscan/camgeo.hpp"
#include "worldscan/common.hpp"

namespace worldscan::datafilter {

inline constexpr double kFovMinDeg = 25.0;
inline constexpr double kFovMaxDeg = 120.0;
inline constexpr double kMaxFocalDivergence = 0.20;
inline constexpr double kMaxScaleCv = 2.0;
inline constexpr double kScaleCvEpsilon = 1e-8;
inline constexpr double kDefaultEmaMomentum = 0.99;

struct ClipStats {
    std::string clip_id;
    double vmaf_motion = 0.0;
    double unimatch_flow = 0.0;
    double dover = 0.0;
    double color_sat = 0.0;
    int scene_cuts = 0;
    int vlm_entity = 0;
    double vlm_quality = 0.0;
};

struct MetricRange {
    double min = 0.0;
    double max = 0.0;  // inclusive bounds
};

struct FilterProfile {
    std::string name;
    // Keyed by metric name; a missing key means the filter is not applied.
    std::map<std::string, MetricRange> ranges;
    void validate() const;
};

struct GateResult {
    bool pass = true;
    std::vector<std::string> reasons;  // violated criteria, stable order
};

struct ScaleSeries {
    std::vector<double> s;  // per-frame positive scale factors
    void validate() const;
};

// theta_x = 2 atan(W / (2 fx)), theta_y = 2 atan(H / (2 fy)), degrees.
std::pair<double, double> fov(const camgeo::Intrinsics& intr);

// |fx - fy| / ((fx + fy) / 2).
double focal_divergence(double fx, double fy);

// Population std over (mean + epsilon).
double scale_cv(const ScaleSeries& series, double epsilon = kScaleCvEpsilon);

// Camera-specific gate applied uniformly: both FOVs in [25, 120] degrees,
// focal divergence <= 0.20, scale CV <= 2.0.
GateResult camera_gate(const camgeo::Intrinsics& intr, const ScaleSeries& series);

// Every metric named by the profile must lie within its inclusive range.
GateResult apply_profile(const ClipStats& stats, const FilterProfile& profile);

// Per-frame scale fusing a long-sequence-consistent depth with a metric
// anchor: s = argmin sum_i w_i (s d_primary_i - d_anchor_i)^2 with
// w_i = 1/d_primary_i, then EMA-smoothed with the given momentum.
std::pair<double, double> fuse_depth_scale(const std::vector<double>& d_primary,
                                           const std::vector<double>& d_anchor,
                                           std::optional<double> prev_ema,
                                           double momentum = kDefaultEmaMomentum);

// Shipped per-dataset profiles, keyed by dataset name.
std::map<std::string, FilterProfile> profiles_from_json(const std::string& text);
std::string profiles_to_json(const std::map<std::string, FilterProfile>& profiles);

// CSV header: clip_id,vmaf_motion,unimatch_flow,dover,color_sat,
// scene_cuts,vlm_entity,vlm_quality.
std::vector<ClipStats> stats_from_csv(const std::string& text);

// Audit rows: clip_id,pass,reasons (reasons ';'-joined).
std::string audit_to_csv(const std::vector<std::pair<std::string, GateResult>>& rows);

// Metric value by profile key; throws for unknown names.
double metric_value(const ClipStats& stats, const std::string& name);

}  // namespace worldscan::datafilter
