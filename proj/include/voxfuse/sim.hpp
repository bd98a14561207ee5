#pragma once

#include "voxfuse/integration.hpp"
#include "voxfuse/rng.hpp"

#include <optional>
#include <string>
#include <vector>

namespace voxfuse {

class SimError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Primitive {
    enum class Kind { sphere, box, plane, room } kind = Kind::sphere;
    Vec3 center = Vec3::Zero(); // plane: unit normal in `center`, offset in `radius`
    Vec3 half = Vec3::Zero();   // box/room half extents
    double radius = 0.0;

    double sdf(const Vec3& p) const;
};

// Solid union of primitives: min of their SDFs (exact outside overlaps,
// a Lipschitz-1 lower bound inside them).
struct Scene {
    std::vector<Primitive> primitives;

    double sdf(const Vec3& p) const;
};

double scene_sdf(const Scene& scene, const Vec3& p);

struct SensorModel {
    enum class Kind { tof_like, stereo_like } kind = Kind::tof_like;
    // depth-dependent Gaussian: sigma(z) = a + b z^2
    double sigma_a = 0.0;
    double sigma_b = 0.0;
    double quant_step = 0.0; // tof_like depth quantization (0 = off)
    // stereo_like: sigma scaled by edge_gain / (1 + |grad D| / grad_ref),
    // clamped to [edge_min_factor, edge_gain]; low near depth edges, high on
    // homogeneous interiors
    double edge_gain = 1.0;
    double grad_ref = 0.02;
    double edge_min_factor = 0.15;
    // outliers: each pixel seeds a blob with probability outlier_rate; the
    // blob offsets depth by blob_magnitude plus jitter clamped to +-3 sigma
    // over a disc of blob_radius_px pixels
    double outlier_rate = 0.0;
    double blob_magnitude = 0.45;
    double blob_sigma = 0.02;
    int blob_radius_px = 2;
    int outlier_region = 0;         // 0 everywhere, +1 world x > threshold, -1 world x < threshold
    double region_threshold = 0.0;
    double min_depth = 0.5, max_depth = 3.0; // validity range; outside -> invalid

    void validate() const;
};

struct Trajectory {
    std::vector<Pose> poses;
    std::vector<double> timestamps;
    std::vector<int> sensor_divisors; // sensor i integrates poses where index % divisor == 0
};

// Circular orbit around `target`, cameras looking inward, z-up world. When a
// second ring is given (radius2 > 0), poses alternate between the two rings
// while the azimuth advances continuously; the steeper ring shrinks the
// ground shadows cast by foreground objects.
Trajectory orbit_trajectory(int n_poses, double radius, double height, const Vec3& target,
                            double fps = 30.0, double radius2 = 0.0, double height2 = 0.0);

// Sphere-traced clean depth; 0 marks a miss. Row-major raster.
std::vector<float> render_depth(const Scene& scene, const Intrinsics& K, const Pose& pose,
                                double t_max = 8.0);

// Apply a sensor's noise / quantization / outlier model to a clean raster.
DepthFrame apply_sensor(const std::vector<float>& clean, const Intrinsics& K, const Pose& pose,
                        int sensor_id, double timestamp, const SensorModel& model, Rng& rng);

// V_GT = clamp(sdf, -l/2, +l/2) at voxel centers.
Field3<double> make_gt_grid(const Scene& scene, const GridGeometry& geom, double band);

// ---- dataset on disk ----
struct FrameRef {
    int sensor = 0;
    int pose_index = 0;
    std::string stem; // relative to the dataset dir, without extension
};

struct Dataset {
    std::string dir;
    GridGeometry grid;
    Scene scene;
    std::vector<SensorModel> sensors;
    Intrinsics intrinsics;
    Trajectory trajectory;
    std::vector<FrameRef> frames; // pose-major, sensor 0 first
    uint64_t seed = 0;
    std::string gt_grid_file = "gt.grid";

    DepthFrame load_frame(const FrameRef& ref) const;
    Field3<double> load_gt() const;
};

// Renders, corrupts and writes every frame plus the ground-truth grid and the
// scene manifest. Deterministic for a fixed seed (documented per-frame
// substream derivation).
Dataset generate_dataset(const std::string& dir, const Scene& scene, const GridGeometry& grid,
                         const Intrinsics& K, const Trajectory& traj,
                         const std::vector<SensorModel>& sensors, double band, uint64_t seed);

Dataset load_dataset(const std::string& dir);

} // namespace voxfuse
