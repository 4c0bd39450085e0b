#include "worldscan/datafilter.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace worldscan::datafilter {

namespace {

constexpr double kDegPerRad = 180.0 / 3.14159265358979323846;

const char* const kMetricNames[] = {"vmaf_motion", "unimatch_flow", "dover",      "color_sat",
                                    "scene_cuts",  "vlm_entity",    "vlm_quality"};

}  // namespace

void FilterProfile::validate() const {
    for (const auto& [name, range] : ranges) {
        bool known = false;
        for (const char* metric : kMetricNames) {
            known = known || name == metric;
        }
        require(known, "unknown metric in profile: " + name);
        require(range.min <= range.max, "range min must not exceed max: " + name);
    }
}

void ScaleSeries::validate() const {
    require(!s.empty(), "scale series must be nonempty");
    for (double v : s) {
        require(v > 0.0, "scale factors must be positive");
    }
}

std::pair<double, double> fov(const camgeo::Intrinsics& intr) {
    require(intr.fx > 0.0 && intr.fy > 0.0, "focal lengths must be positive");
    require(intr.w > 0.0 && intr.h > 0.0, "image size must be positive");
    const double theta_x = 2.0 * std::atan(intr.w / (2.0 * intr.fx)) * kDegPerRad;
    const double theta_y = 2.0 * std::atan(intr.h / (2.0 * intr.fy)) * kDegPerRad;
    return {theta_x, theta_y};
}

double focal_divergence(double fx, double fy) {
    require(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
    return std::abs(fx - fy) / ((fx + fy) / 2.0);
}

double scale_cv(const ScaleSeries& series, double epsilon) {
    series.validate();
    const double n = static_cast<double>(series.s.size());
    double mean = 0.0;
    for (double v : series.s) {
        mean += v;
    }
    mean /= n;
    double var = 0.0;
    for (double v : series.s) {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    return std::sqrt(var) / (mean + epsilon);
}

GateResult camera_gate(const camgeo::Intrinsics& intr, const ScaleSeries& series) {
    const auto [theta_x, theta_y] = fov(intr);
    GateResult result;
    if (theta_x < kFovMinDeg || theta_x > kFovMaxDeg) {
        result.reasons.push_back("fov_x");
    }
    if (theta_y < kFovMinDeg || theta_y > kFovMaxDeg) {
        result.reasons.push_back("fov_y");
    }
    if (focal_divergence(intr.fx, intr.fy) > kMaxFocalDivergence) {
        result.reasons.push_back("focal_divergence");
    }
    if (scale_cv(series) > kMaxScaleCv) {
        result.reasons.push_back("scale_cv");
    }
    result.pass = result.reasons.empty();
    return result;
}

double metric_value(const ClipStats& stats, const std::string& name) {
    if (name == "vmaf_motion") return stats.vmaf_motion;
    if (name == "unimatch_flow") return stats.unimatch_flow;
    if (name == "dover") return stats.dover;
    if (name == "color_sat") return stats.color_sat;
    if (name == "scene_cuts") return static_cast<double>(stats.scene_cuts);
    if (name == "vlm_entity") return static_cast<double>(stats.vlm_entity);
    if (name == "vlm_quality") return stats.vlm_quality;
    throw std::invalid_argument("unknown metric: " + name);
}

GateResult apply_profile(const ClipStats& stats, const FilterProfile& profile) {
    profile.validate();
    GateResult result;
    for (const auto& [name, range] : profile.ranges) {
        const double value = metric_value(stats, name);
        if (value < range.min || value > range.max) {
            result.reasons.push_back(name);
        }
    }
    result.pass = result.reasons.empty();
    return result;
}

std::pair<double, double> fuse_depth_scale(const std::vector<double>& d_primary,
                                           const std::vector<double>& d_anchor,
                                           std::optional<double> prev_ema, double momentum) {
    require(!d_primary.empty(), "depth arrays must be nonempty");
    require(d_primary.size() == d_anchor.size(), "depth arrays must have equal length");
    require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0,1)");

    double num = 0.0;
    double den = 0.0;
    for (size_t i = 0; i < d_primary.size(); ++i) {
        require(d_primary[i] > 0.0 && d_anchor[i] > 0.0, "depths must be positive");
        const double w = 1.0 / d_primary[i];
        num += w * d_primary[i] * d_anchor[i];
        den += w * d_primary[i] * d_primary[i];
    }
    const double s = num / den;
    const double ema = prev_ema.has_value() ? momentum * (*prev_ema) + (1.0 - momentum) * s : s;
    return {s, ema};
}

std::map<std::string, FilterProfile> profiles_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    std::map<std::string, FilterProfile> profiles;
    for (const auto& [dataset, ranges] : j.items()) {
        FilterProfile profile;
        profile.name = dataset;
        for (const auto& [metric, bounds] : ranges.items()) {
            require(bounds.is_array() && bounds.size() == 2, "range must be [min, max]: " + metric);
            profile.ranges[metric] = {bounds[0].get<double>(), bounds[1].get<double>()};
        }
        profile.validate();
        profiles[dataset] = std::move(profile);
    }
    return profiles;
}

std::string profiles_to_json(const std::map<std::string, FilterProfile>& profiles) {
    nlohmann::ordered_json j;
    for (const auto& [dataset, profile] : profiles) {
        nlohmann::ordered_json ranges;
        for (const auto& [metric, range] : profile.ranges) {
            ranges[metric] = {range.min, range.max};
        }
        j[dataset] = std::move(ranges);
    }
    return j.dump(2) + "\n";
}

std::vector<ClipStats> stats_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<ClipStats> rows;
    bool saw_header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        if (!saw_header) {
            saw_header = true;
            require(line.rfind("clip_id,", 0) == 0, "stats CSV must start with a clip_id header");
            continue;
        }
        std::istringstream fields(line);
        std::string field;
        std::vector<std::string> cols;
        while (std::getline(fields, field, ',')) {
            cols.push_back(field);
        }
        require(cols.size() == 8, "stats row must carry 8 columns");
        ClipStats stats;
        stats.clip_id = cols[0];
        stats.vmaf_motion = std::stod(cols[1]);
        stats.unimatch_flow = std::stod(cols[2]);
        stats.dover = std::stod(cols[3]);
        stats.color_sat = std::stod(cols[4]);
        stats.scene_cuts = std::stoi(cols[5]);
        stats.vlm_entity = std::stoi(cols[6]);
        stats.vlm_quality = std::stod(cols[7]);
        rows.push_back(std::move(stats));
    }
    return rows;
}

std::string audit_to_csv(const std::vector<std::pair<std::string, GateResult>>& rows) {
    std::string out = "clip_id,pass,reasons\n";
    for (const auto& [clip_id, result] : rows) {
        out += clip_id;
        out += result.pass ? ",1," : ",0,";
        for (size_t i = 0; i < result.reasons.size(); ++i) {
            if (i > 0) {
                out += ';';
            }
            out += result.reasons[i];
        }
        out += '\n';
    }
    return out;
}

}  // namespace worldscan::datafilter
