#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace voxfuse {

using Vec3 = Eigen::Vector3d;
using Index3 = Eigen::Vector3i;

class GeometryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Intrinsics {
    double fx = 0, fy = 0;
    double cx = 0, cy = 0;
    int width = 0, height = 0;

    void validate() const;
    Eigen::Matrix3d matrix() const;
};

// Camera-to-world rigid transform.
struct Pose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Vec3 translation = Vec3::Zero();

    void validate(double tol = 1e-6) const;
    Vec3 apply(const Vec3& x_cam) const { return rotation * x_cam + translation; }
    Vec3 apply_inverse(const Vec3& x_world) const {
        return rotation.transpose() * (x_world - translation);
    }
    Vec3 camera_center() const { return translation; }
};

// T samples spaced l/(T-1) apart along the viewing ray, centered on the
// surface point. tsdf_targets run from +l/2 (camera side) to -l/2 (behind).
struct RayBand {
    std::vector<Vec3> samples;
    std::vector<double> tsdf_targets;
    std::vector<Index3> voxel_indices; // filled by voxelization, empty until then
};

Vec3 unproject_pixel(double u, double v, double depth, const Intrinsics& K, const Pose& pose);

// Inverse of unproject_pixel: world point -> (u, v, depth). depth <= 0 means
// the point is behind the camera.
struct PixelDepth {
    double u, v, depth;
};
PixelDepth project_point(const Vec3& x_world, const Intrinsics& K, const Pose& pose);

RayBand sample_ray_band(const Vec3& x_world, const Vec3& camera_center, int samples_per_ray,
                        double band_length);

struct VoxelLookup {
    Index3 index;
    bool in_grid;
};
VoxelLookup world_to_voxel(const Vec3& x_world, const Vec3& origin, double voxel_size,
                           const Index3& dims);

} // namespace voxfuse
