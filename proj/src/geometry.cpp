#include "voxfuse/geometry.hpp"

#include <cmath>

namespace voxfuse {

void Intrinsics::validate() const {
    if (!(fx > 0) || !(fy > 0))
        throw GeometryError("intrinsics: focal lengths must be positive");
    if (width <= 0 || height <= 0)
        throw GeometryError("intrinsics: raster size must be positive");
    if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height))
        throw GeometryError("intrinsics: principal point outside raster");
}

Eigen::Matrix3d Intrinsics::matrix() const {
    Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
    K(0, 0) = fx;
    K(1, 1) = fy;
    K(0, 2) = cx;
    K(1, 2) = cy;
    return K;
}

void Pose::validate(double tol) const {
    Eigen::Matrix3d rtr = rotation.transpose() * rotation;
    if ((rtr - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol)
        throw GeometryError("pose: rotation is not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > tol)
        throw GeometryError("pose: rotation determinant is not +1");
}

Vec3 unproject_pixel(double u, double v, double depth, const Intrinsics& K, const Pose& pose) {
    if (!(depth > 0))
        throw GeometryError("unproject_pixel: depth must be positive");
    Vec3 x_cam(depth * (u - K.cx) / K.fx, depth * (v - K.cy) / K.fy, depth);
    return pose.apply(x_cam);
}

PixelDepth project_point(const Vec3& x_world, const Intrinsics& K, const Pose& pose) {
    Vec3 x_cam = pose.apply_inverse(x_world);
    PixelDepth out;
    out.depth = x_cam.z();
    if (x_cam.z() != 0.0) {
        out.u = K.fx * x_cam.x() / x_cam.z() + K.cx;
        out.v = K.fy * x_cam.y() / x_cam.z() + K.cy;
    } else {
        out.u = out.v = 0.0;
    }
    return out;
}

RayBand sample_ray_band(const Vec3& x_world, const Vec3& camera_center, int samples_per_ray,
                        double band_length) {
    if (samples_per_ray < 2)
        throw GeometryError("sample_ray_band: need at least two samples");
    if (!(band_length > 0))
        throw GeometryError("sample_ray_band: band length must be positive");
    Vec3 ray = x_world - camera_center;
    double norm = ray.norm();
    if (norm == 0.0)
        throw GeometryError("sample_ray_band: zero-length ray");
    Vec3 dir = ray / norm;

    RayBand band;
    band.samples.reserve(samples_per_ray);
    band.tsdf_targets.reserve(samples_per_ray);
    const double step = band_length / (samples_per_ray - 1);
    const double half = 0.5 * band_length;
    for (int k = 0; k < samples_per_ray; ++k) {
        double offset = k * step - half;
        band.samples.push_back(x_world + offset * dir);
        band.tsdf_targets.push_back(half - k * step);
    }
    return band;
}

VoxelLookup world_to_voxel(const Vec3& x_world, const Vec3& origin, double voxel_size,
                           const Index3& dims) {
    if (!(voxel_size > 0))
        throw GeometryError("world_to_voxel: voxel size must be positive");
    Vec3 rel = (x_world - origin) / voxel_size;
    Index3 idx(static_cast<int>(std::lround(rel.x())), static_cast<int>(std::lround(rel.y())),
               static_cast<int>(std::lround(rel.z())));
    bool inside = idx.x() >= 0 && idx.x() < dims.x() && idx.y() >= 0 && idx.y() < dims.y() &&
                  idx.z() >= 0 && idx.z() < dims.z();
    return {idx, inside};
}

} // namespace voxfuse
