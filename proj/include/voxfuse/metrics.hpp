#pragma once

#include "voxfuse/mesh.hpp"

#include <optional>
#include <string>

namespace voxfuse {

struct GridMetrics {
    double mad = 0, mse = 0, iou = 0, acc = 0;
    int64_t n = 0; // voxels considered
};

// Masked grid comparison; voxels with w == 0 are ignored. Occupancy counts
// use the sign tests with occupied == negative; note the IoU here is
// tn / (tn + fp + fn), i.e. the intersection over union of the *occupied*
// sets under that sign convention.
std::optional<GridMetrics> grid_metrics(const Field3<double>& v, const Field3<uint32_t>& w,
                                        const Field3<double>& gt);
std::optional<GridMetrics> grid_metrics_masked(const Field3<double>& v,
                                               const Field3<uint8_t>& mask,
                                               const Field3<double>& gt);

struct FScore {
    double f = 0, p = 0, r = 0; // percentages
    bool pred_empty = false, gt_empty = false;
};

// Vertex-to-vertex precision/recall at threshold tau (distance < tau), exact
// nearest-neighbor via a tau-sized spatial hash.
FScore mesh_fscore(const Mesh& pred, const Mesh& gt, double tau);

struct MetricsReport {
    GridMetrics grid;
    FScore mesh;

    void save(const std::string& path) const;
    static MetricsReport load(const std::string& path);
};

} // namespace voxfuse
