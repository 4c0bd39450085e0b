#pragma once

// Camera-geometric conditioning math: pixel unprojection, ray-local
// homogeneous transforms with a RoPE channel split, and per-pixel Plücker
// raymaps packed over a temporal VAE stride.
//
// Camera convention: OpenCV-style camera frame (x right, y down, z
// forward), camera-to-world rotations. The camera "vertical axis" used to
// seed ray-local bases is the second column of the rotation.

#include <array>
#include <string>
#include <vector>

#include "worldscan/common.hpp"

namespace worldscan::camgeo {

struct CameraPose {
    Eigen::Matrix3d r = Eigen::Matrix3d::Identity();  // camera-to-world
    Eigen::Vector3d o = Eigen::Vector3d::Zero();      // camera center, meters

    void validate() const;  // rᵀr = I and det(r) = +1 within 1e-9
};

struct Intrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;  // image size, pixels
    double h = 0.0;

    void validate() const;
};

// Intrinsics at a downsampled resolution (factor > 1 shrinks).
Intrinsics scale_intrinsics(const Intrinsics& intr, double factor);

struct Ray {
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();  // unit norm
};

// Homogeneous world -> ray-local transform. The rotation block rows are
// the basis vectors (x, y, z) with z along the ray.
struct RayLocalTransform {
    Eigen::Matrix4d d = Eigen::Matrix4d::Identity();
};

struct PluckerRay {
    Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();
    Eigen::Vector3d moment = Eigen::Vector3d::Zero();  // origin × direction
};

struct ChannelSplit {
    int geo_channels = 0;   // multiple of 4, transformed in 4-groups
    int rope_channels = 0;  // rotary channels, split over (t, y, x) axes

    int head_dim() const { return geo_channels + rope_channels; }
    void validate() const;

    // Half geometric / half rotary, geometric rounded down to a multiple
    // of 4.
    static ChannelSplit halves(int head_dim);
};

// direction = normalize(R ((u-cx)/fx, (v-cy)/fy, 1)), origin = camera
// center. Out-of-bounds pixels are allowed (latent-cell centers).
Ray unproject(double u, double v, const Intrinsics& intr, const CameraPose& pose);

// Basis: z = direction, x = normalize(up × z), y = z × x. Throws
// DegenerateBasisError when ‖up × z‖ < 1e-6.
RayLocalTransform ray_local_basis(const Ray& ray, const Eigen::Vector3d& up);

// ray_local_basis seeded with the camera vertical axis; falls back to the
// camera x-axis when the ray is parallel to it.
RayLocalTransform camera_ray_basis(const Ray& ray, const CameraPose& pose);

// Per-pair planar rotations over three axis groups (t, y, x) of equal
// size; pair k of an n-channel axis group rotates by position·base^(-2k/n).
// Invertible by negating positions.
Vec rope_rotate(const Vec& channels, const Eigen::Vector3d& position, double base);

struct TokenGeometry {
    std::vector<Eigen::Matrix4d> ray_transform;   // world -> ray-local, per token
    std::vector<Eigen::Vector3d> rope_position;   // (t, y, x), per token
};

struct UcpeTokens {
    std::vector<Vec> q;
    std::vector<Vec> k;
    std::vector<Vec> v;
};

// Pose-transforms the camera-branch qkv: geometric channels in 4-groups
// (queries by Dᵀ, keys and values by D⁻¹), rotary channels by the
// spatiotemporal rotation. Attention logits on the geometric channels then
// depend only on relative pose.
UcpeTokens ucpe_apply(const UcpeTokens& tokens, const TokenGeometry& geometry,
                      const ChannelSplit& split, double rope_base = 10000.0);

// Inverse path applied to mixer outputs: D on geometric groups, negated
// rotary angles on the rest.
std::vector<Vec> ucpe_output_apply(const std::vector<Vec>& outputs, const TokenGeometry& geometry,
                                   const ChannelSplit& split, double rope_base = 10000.0);

// Ray transforms and grid positions for every cell center of a latent
// frame, with intrinsics already at latent resolution.
TokenGeometry latent_token_geometry(const Intrinsics& latent_intr, const CameraPose& pose,
                                    int latent_w, int latent_h, double frame_index);

struct RaymapGrid {
    int w = 0;
    int h = 0;
    std::vector<PluckerRay> rays;  // row-major, rays[y*w + x]
};

// Per-pixel Plücker rays through pixel centers (x+0.5, y+0.5).
RaymapGrid plucker_raymap(const Intrinsics& intr, const CameraPose& pose, int grid_w, int grid_h);

// Eight raw-frame raymaps of one temporal stride packed frame-major into
// 6-channel (d, m) blocks: channel = frame*6 + {dx,dy,dz,mx,my,mz}.
struct PackedRaymap {
    int w = 0;
    int h = 0;
    int channels = 0;
    std::vector<double> data;  // data[(y*w + x)*channels + c]

    double at(int x, int y, int c) const {
        return data[(static_cast<size_t>(y) * static_cast<size_t>(w) + static_cast<size_t>(x)) *
                        static_cast<size_t>(channels) +
                    static_cast<size_t>(c)];
    }
};

PackedRaymap pack_raymaps(const std::array<RaymapGrid, 8>& grids);
std::array<RaymapGrid, 8> unpack_raymaps(const PackedRaymap& packed);

// Flat binary layout: uint32 header {W,H,C} then W*H*C float32 samples,
// index (y*W + x)*C + c, little-endian.
std::string packed_raymap_to_binary(const PackedRaymap& packed);
PackedRaymap packed_raymap_from_binary(const std::string& bytes);

// JSON form for small grids: {"w","h","channels","data":[...]}.
std::string packed_raymap_to_json(const PackedRaymap& packed);

}  // namespace worldscan::camgeo
