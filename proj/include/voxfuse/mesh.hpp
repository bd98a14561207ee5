#pragma once

#include "voxfuse/grid.hpp"

#include <array>
#include <string>
#include <vector>

namespace voxfuse {

struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;

    bool empty() const { return vertices.empty(); }
};

// Standard 256-case marching cubes at `iso` with linear zero-crossing
// interpolation. A cell emits triangles only when all eight corners are
// valid. Triangles are wound so normals point toward positive values
// (observed free space).
Mesh marching_cubes(const Field3<double>& v, const Field3<uint8_t>& valid,
                    const GridGeometry& geom, double iso = 0.0);

Field3<uint8_t> weight_valid_mask(const Field3<uint32_t>& w);
Field3<uint8_t> weight_union_mask(const Field3<uint32_t>& w1, const Field3<uint32_t>& w2);
Field3<uint8_t> all_valid_mask(const Index3& dims);

void save_ply(const std::string& path, const Mesh& mesh);
Mesh load_ply(const std::string& path);

} // namespace voxfuse
