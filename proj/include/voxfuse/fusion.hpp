#pragma once

#include "voxfuse/grid.hpp"

namespace voxfuse {

// Per-voxel observation class.
enum class VoxelSet : uint8_t {
    none = 0, // neither sensor integrated
    c1 = 1,   // only sensor 1
    c2 = 2,   // only sensor 2
    c12 = 3,  // both
};

struct VoxelSetMask {
    Field3<VoxelSet> cls;

    bool is(int64_t l, VoxelSet s) const { return cls[l] == s; }
};

VoxelSetMask classify_voxels(const Field3<uint32_t>& w1, const Field3<uint32_t>& w2);

// Eq-style case table: alpha*V1 + (1-alpha)*V2 where both observed, the
// observed sensor's value where only one is, 0 elsewhere.
Field3<double> fuse(const Field3<double>& v1, const Field3<double>& v2,
                    const Field3<double>& alpha, const VoxelSetMask& mask);

struct FilteredWeights {
    Field3<uint32_t> w1;
    Field3<uint32_t> w2;
};

// Test-time outlier filter: single-sensor voxels keep their weight only when
// the sensor's confidence (alpha for sensor 1, 1-alpha for sensor 2) is
// strictly above 0.5. Both-sensor voxels are untouched.
FilteredWeights outlier_filter(const VoxelSetMask& mask, const Field3<double>& alpha,
                               const Field3<uint32_t>& w1, const Field3<uint32_t>& w2);

} // namespace voxfuse
