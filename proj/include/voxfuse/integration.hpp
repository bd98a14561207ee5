#pragma once

#include "voxfuse/grid.hpp"

#include <string>
#include <vector>

namespace voxfuse {

class IntegrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DepthFrame {
    Intrinsics intrinsics;
    Pose pose;
    int sensor_id = 0;
    double timestamp = 0.0;
    std::vector<float> depth; // row-major, meters; <= 0 means invalid

    float at(int u, int v) const { return depth[size_t(v) * intrinsics.width + u]; }
    void validate() const;
};

struct IntegrationConfig {
    int samples_per_ray = 11;  // T
    double band = 0.1;         // l, meters
    uint32_t omega_max = 500;  // weight clip
    int border_mask = 10;      // pixels ignored on every raster edge
    double min_depth = 0.5;    // sensor validity range, meters
    double max_depth = 3.0;

    void validate() const;
};

// Integrate one depth frame into a sensor's shape grid with the banded
// moving-average update. Returns the canonical per-voxel batch (with
// pre-update weights recorded) for reuse by feature integration and training.
UpdateBatch integrate_shape(SensorShapeState& state, const GridGeometry& geom,
                            const DepthFrame& frame, const IntegrationConfig& cfg);

// Moving-average feature update: F <- (W_prev * F + sum_f) / (W_prev + m)
// per group, where features[pixel * channels ..] holds the frame's per-pixel
// feature vectors and W_prev comes from the batch.
void integrate_features(FeatureGrid& grid, const UpdateBatch& batch, const float* features,
                        int channels);
// channel-planar variant (feature of pixel p, channel c at features[c*raster+p])
void integrate_features_planar(FeatureGrid& grid, const UpdateBatch& batch,
                               const double* features, int64_t raster, int channels);

// Depth frame I/O: <stem>.bin raw float32 raster + <stem>.json sidecar.
void save_depth_frame(const std::string& stem, const DepthFrame& frame);
DepthFrame load_depth_frame(const std::string& stem);

} // namespace voxfuse
