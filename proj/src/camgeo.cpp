#include "worldscan/camgeo.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "raymap binary serialization assumes a little-endian host");

namespace worldscan::camgeo {

namespace {

constexpr double kRotationTol = 1e-9;
constexpr double kDegenerateUpTol = 1e-6;

}  // namespace

void CameraPose::validate() const {
    require((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() <= kRotationTol,
            "rotation must be orthonormal");
    require(std::abs(r.determinant() - 1.0) <= kRotationTol, "rotation must have determinant +1");
    require(o.allFinite(), "camera center must be finite");
}

void Intrinsics::validate() const {
    require(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
    require(w > 0.0 && h > 0.0, "image size must be positive");
    require(cx > 0.0 && cx < w, "principal point x out of bounds");
    require(cy > 0.0 && cy < h, "principal point y out of bounds");
}

Intrinsics scale_intrinsics(const Intrinsics& intr, double factor) {
    intr.validate();
    require(factor > 0.0, "scale factor must be positive");
    return {intr.fx / factor, intr.fy / factor, intr.cx / factor,
            intr.cy / factor, intr.w / factor,  intr.h / factor};
}

void ChannelSplit::validate() const {
    require(geo_channels >= 0 && rope_channels >= 0, "channel counts must be nonnegative");
    require(geo_channels % 4 == 0, "geometric channels must be a multiple of 4");
}

ChannelSplit ChannelSplit::halves(int head_dim) {
    require(head_dim >= 0, "head dimension must be nonnegative");
    const int geo = (head_dim / 2) / 4 * 4;
    return {geo, head_dim - geo};
}

Ray unproject(double u, double v, const Intrinsics& intr, const CameraPose& pose) {
    intr.validate();
    pose.validate();
    const Eigen::Vector3d cam((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
    return {pose.o, (pose.r * cam).normalized()};
}

RayLocalTransform ray_local_basis(const Ray& ray, const Eigen::Vector3d& up) {
    require(std::abs(ray.direction.norm() - 1.0) <= kRotationTol, "ray direction must be unit");
    require(std::abs(up.norm() - 1.0) <= kRotationTol, "up axis must be unit");

    const Eigen::Vector3d z = ray.direction;
    const Eigen::Vector3d xu = up.cross(z);
    if (xu.norm() < kDegenerateUpTol) {
        throw DegenerateBasisError("up axis parallel to ray direction");
    }
    const Eigen::Vector3d x = xu.normalized();
    const Eigen::Vector3d y = z.cross(x);

    RayLocalTransform t;
    t.d.setIdentity();
    t.d.row(0).head<3>() = x;
    t.d.row(1).head<3>() = y;
    t.d.row(2).head<3>() = z;
    t.d(0, 3) = -x.dot(ray.origin);
    t.d(1, 3) = -y.dot(ray.origin);
    t.d(2, 3) = -z.dot(ray.origin);
    return t;
}

RayLocalTransform camera_ray_basis(const Ray& ray, const CameraPose& pose) {
    const Eigen::Vector3d vertical = pose.r.col(1);
    if (vertical.cross(ray.direction).norm() >= kDegenerateUpTol) {
        return ray_local_basis(ray, vertical);
    }
    return ray_local_basis(ray, Eigen::Vector3d(pose.r.col(0)));
}

Vec rope_rotate(const Vec& channels, const Eigen::Vector3d& position, double base) {
    require(base > 0.0, "rope base must be positive");
    const Eigen::Index n = channels.size();
    if (n == 0) {
        return channels;
    }
    require(n % 3 == 0, "rotary channels must split evenly over (t, y, x)");
    const Eigen::Index per_axis = n / 3;
    require(per_axis % 2 == 0, "each rotary axis group needs whole channel pairs");

    Vec out(n);
    for (int axis = 0; axis < 3; ++axis) {
        const Eigen::Index offset = axis * per_axis;
        const double pos = position[axis];
        for (Eigen::Index k = 0; 2 * k < per_axis; ++k) {
            const double theta =
                std::pow(base, -2.0 * static_cast<double>(k) / static_cast<double>(per_axis));
            const double angle = pos * theta;
            const double c = std::cos(angle);
            const double s = std::sin(angle);
            const double a = channels[offset + 2 * k];
            const double b = channels[offset + 2 * k + 1];
            out[offset + 2 * k] = a * c - b * s;
            out[offset + 2 * k + 1] = a * s + b * c;
        }
    }
    return out;
}

namespace {

enum class GeoMode { query, key_value, output };

Vec transform_token(const Vec& token, const Eigen::Matrix4d& d, const Eigen::Vector3d& position,
                    const ChannelSplit& split, double rope_base, GeoMode mode, bool invert_rope) {
    require(token.size() == split.head_dim(), "token length does not match channel split");
    Vec out(token.size());

    Eigen::Matrix4d geo_op;
    switch (mode) {
        case GeoMode::query:
            geo_op = d.transpose();
            break;
        case GeoMode::key_value:
            geo_op = d.inverse();
            break;
        case GeoMode::output:
            geo_op = d;
            break;
    }
    for (int g = 0; g < split.geo_channels; g += 4) {
        out.segment<4>(g) = geo_op * token.segment<4>(g);
    }
    if (split.rope_channels > 0) {
        const Eigen::Vector3d pos = invert_rope ? Eigen::Vector3d(-position) : position;
        out.tail(split.rope_channels) =
            rope_rotate(token.tail(split.rope_channels), pos, rope_base);
    }
    return out;
}

void check_geometry(const TokenGeometry& geometry, size_t tokens) {
    require(geometry.ray_transform.size() == tokens, "one ray transform per token");
    require(geometry.rope_position.size() == tokens, "one rotary position per token");
}

}  // namespace

UcpeTokens ucpe_apply(const UcpeTokens& tokens, const TokenGeometry& geometry,
                      const ChannelSplit& split, double rope_base) {
    split.validate();
    const size_t n = tokens.q.size();
    require(tokens.k.size() == n && tokens.v.size() == n, "q/k/v token counts must match");
    check_geometry(geometry, n);

    UcpeTokens out;
    out.q.reserve(n);
    out.k.reserve(n);
    out.v.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        const Eigen::Matrix4d& d = geometry.ray_transform[i];
        const Eigen::Vector3d& pos = geometry.rope_position[i];
        out.q.push_back(transform_token(tokens.q[i], d, pos, split, rope_base, GeoMode::query, false));
        out.k.push_back(
            transform_token(tokens.k[i], d, pos, split, rope_base, GeoMode::key_value, false));
        out.v.push_back(
            transform_token(tokens.v[i], d, pos, split, rope_base, GeoMode::key_value, false));
    }
    return out;
}

std::vector<Vec> ucpe_output_apply(const std::vector<Vec>& outputs, const TokenGeometry& geometry,
                                   const ChannelSplit& split, double rope_base) {
    split.validate();
    check_geometry(geometry, outputs.size());
    std::vector<Vec> out;
    out.reserve(outputs.size());
    for (size_t i = 0; i < outputs.size(); ++i) {
        out.push_back(transform_token(outputs[i], geometry.ray_transform[i],
                                      geometry.rope_position[i], split, rope_base, GeoMode::output,
                                      true));
    }
    return out;
}

TokenGeometry latent_token_geometry(const Intrinsics& latent_intr, const CameraPose& pose,
                                    int latent_w, int latent_h, double frame_index) {
    require(latent_w >= 1 && latent_h >= 1, "latent grid must be nonempty");
    TokenGeometry geom;
    geom.ray_transform.reserve(static_cast<size_t>(latent_w) * static_cast<size_t>(latent_h));
    geom.rope_position.reserve(geom.ray_transform.capacity());
    for (int y = 0; y < latent_h; ++y) {
        for (int x = 0; x < latent_w; ++x) {
            const Ray ray = unproject(x + 0.5, y + 0.5, latent_intr, pose);
            geom.ray_transform.push_back(camera_ray_basis(ray, pose).d);
            geom.rope_position.emplace_back(frame_index, static_cast<double>(y),
                                            static_cast<double>(x));
        }
    }
    return geom;
}

RaymapGrid plucker_raymap(const Intrinsics& intr, const CameraPose& pose, int grid_w, int grid_h) {
    require(grid_w >= 1 && grid_h >= 1, "raymap grid must be nonempty");
    RaymapGrid grid{grid_w, grid_h, {}};
    grid.rays.reserve(static_cast<size_t>(grid_w) * static_cast<size_t>(grid_h));
    for (int y = 0; y < grid_h; ++y) {
        for (int x = 0; x < grid_w; ++x) {
            const Ray ray = unproject(x + 0.5, y + 0.5, intr, pose);
            grid.rays.push_back({ray.direction, ray.origin.cross(ray.direction)});
        }
    }
    return grid;
}

PackedRaymap pack_raymaps(const std::array<RaymapGrid, 8>& grids) {
    const int w = grids[0].w;
    const int h = grids[0].h;
    for (const RaymapGrid& g : grids) {
        require(g.w == w && g.h == h, "raymap grids must share one size");
        require(g.rays.size() == static_cast<size_t>(w) * static_cast<size_t>(h),
                "raymap grid data does not match its size");
    }

    PackedRaymap packed{w, h, 48, {}};
    packed.data.resize(static_cast<size_t>(w) * static_cast<size_t>(h) * 48);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const size_t pixel = static_cast<size_t>(y) * static_cast<size_t>(w) +
                                 static_cast<size_t>(x);
            double* dst = packed.data.data() + pixel * 48;
            for (int f = 0; f < 8; ++f) {
                const PluckerRay& ray = grids[static_cast<size_t>(f)].rays[pixel];
                dst[f * 6 + 0] = ray.direction.x();
                dst[f * 6 + 1] = ray.direction.y();
                dst[f * 6 + 2] = ray.direction.z();
                dst[f * 6 + 3] = ray.moment.x();
                dst[f * 6 + 4] = ray.moment.y();
                dst[f * 6 + 5] = ray.moment.z();
            }
        }
    }
    return packed;
}

std::array<RaymapGrid, 8> unpack_raymaps(const PackedRaymap& packed) {
    require(packed.channels == 48, "packed raymap must carry 48 channels");
    require(packed.data.size() == static_cast<size_t>(packed.w) * static_cast<size_t>(packed.h) *
                                      static_cast<size_t>(packed.channels),
            "packed raymap data does not match its header");

    std::array<RaymapGrid, 8> grids;
    for (int f = 0; f < 8; ++f) {
        grids[static_cast<size_t>(f)].w = packed.w;
        grids[static_cast<size_t>(f)].h = packed.h;
        grids[static_cast<size_t>(f)].rays.resize(static_cast<size_t>(packed.w) *
                                                  static_cast<size_t>(packed.h));
    }
    for (size_t pixel = 0; pixel < static_cast<size_t>(packed.w) * static_cast<size_t>(packed.h);
         ++pixel) {
        const double* src = packed.data.data() + pixel * 48;
        for (int f = 0; f < 8; ++f) {
            PluckerRay& ray = grids[static_cast<size_t>(f)].rays[pixel];
            ray.direction = {src[f * 6 + 0], src[f * 6 + 1], src[f * 6 + 2]};
            ray.moment = {src[f * 6 + 3], src[f * 6 + 4], src[f * 6 + 5]};
        }
    }
    return grids;
}

std::string packed_raymap_to_binary(const PackedRaymap& packed) {
    const uint32_t header[3] = {static_cast<uint32_t>(packed.w), static_cast<uint32_t>(packed.h),
                                static_cast<uint32_t>(packed.channels)};
    std::string bytes(sizeof(header) + packed.data.size() * sizeof(float), '\0');
    std::memcpy(bytes.data(), header, sizeof(header));
    float* dst = reinterpret_cast<float*>(bytes.data() + sizeof(header));
    for (size_t i = 0; i < packed.data.size(); ++i) {
        dst[i] = static_cast<float>(packed.data[i]);
    }
    return bytes;
}

PackedRaymap packed_raymap_from_binary(const std::string& bytes) {
    require(bytes.size() >= 12, "raymap binary too short for its header");
    uint32_t header[3];
    std::memcpy(header, bytes.data(), sizeof(header));
    PackedRaymap packed{static_cast<int>(header[0]), static_cast<int>(header[1]),
                        static_cast<int>(header[2]), {}};
    const size_t count = static_cast<size_t>(header[0]) * header[1] * header[2];
    require(bytes.size() == 12 + count * sizeof(float), "raymap binary size mismatch");
    packed.data.resize(count);
    const float* src = reinterpret_cast<const float*>(bytes.data() + 12);
    for (size_t i = 0; i < count; ++i) {
        packed.data[i] = static_cast<double>(src[i]);
    }
    return packed;
}

std::string packed_raymap_to_json(const PackedRaymap& packed) {
    nlohmann::ordered_json j;
    j["w"] = packed.w;
    j["h"] = packed.h;
    j["channels"] = packed.channels;
    j["data"] = packed.data;
    return j.dump() + "\n";
}

}  // namespace worldscan::camgeo
