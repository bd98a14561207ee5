#pragma once

#include "voxfuse/geometry.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace voxfuse {

class GridError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GridGeometry {
    Vec3 origin = Vec3::Zero(); // world position of voxel (0,0,0) center
    double voxel_size = 0.01;
    Index3 dims = Index3::Zero();

    void validate() const;
    int64_t voxel_count() const {
        return int64_t(dims.x()) * dims.y() * dims.z();
    }
    bool contains(const Index3& i) const {
        return i.x() >= 0 && i.x() < dims.x() && i.y() >= 0 && i.y() < dims.y() && i.z() >= 0 &&
               i.z() < dims.z();
    }
    // linear layout: x fastest, then y, then z
    int64_t linear(const Index3& i) const {
        return (int64_t(i.z()) * dims.y() + i.y()) * dims.x() + i.x();
    }
    Index3 unlinear(int64_t l) const {
        int x = static_cast<int>(l % dims.x());
        int64_t r = l / dims.x();
        int y = static_cast<int>(r % dims.y());
        int z = static_cast<int>(r / dims.y());
        return {x, y, z};
    }
    Vec3 voxel_center(const Index3& i) const {
        return origin + voxel_size * Vec3(i.x(), i.y(), i.z());
    }
};

template <typename T>
struct Field3 {
    Index3 dims = Index3::Zero();
    std::vector<T> data;

    Field3() = default;
    explicit Field3(const Index3& d, T fill = T{})
        : dims(d), data(size_t(int64_t(d.x()) * d.y() * d.z()), fill) {}

    int64_t size() const { return int64_t(data.size()); }
    T& at(int x, int y, int z) { return data[(size_t(z) * dims.y() + y) * dims.x() + x]; }
    const T& at(int x, int y, int z) const {
        return data[(size_t(z) * dims.y() + y) * dims.x() + x];
    }
    T& operator[](int64_t l) { return data[size_t(l)]; }
    const T& operator[](int64_t l) const { return data[size_t(l)]; }
    void fill(T v) { std::fill(data.begin(), data.end(), v); }
};

// Per-sensor TSDF + update-count grids, zero initialized.
struct SensorShapeState {
    Field3<double> tsdf;
    Field3<uint32_t> weight;

    SensorShapeState() = default;
    explicit SensorShapeState(const Index3& dims) : tsdf(dims, 0.0), weight(dims, 0) {}
    void reset() {
        tsdf.fill(0.0);
        weight.fill(0);
    }
};

// n-channel feature volume, channel-interleaved (channel index fastest).
struct FeatureGrid {
    Index3 dims = Index3::Zero();
    int channels = 0;
    std::vector<float> data;

    FeatureGrid() = default;
    FeatureGrid(const Index3& d, int n)
        : dims(d), channels(n), data(size_t(int64_t(d.x()) * d.y() * d.z() * n), 0.f) {}

    float* voxel(int64_t linear) { return data.data() + size_t(linear) * channels; }
    const float* voxel(int64_t linear) const { return data.data() + size_t(linear) * channels; }
    void reset() { std::fill(data.begin(), data.end(), 0.f); }
};

struct IndexBox {
    Index3 min = Index3::Zero();
    Index3 max = Index3::Constant(-1); // empty when max < min

    bool empty() const {
        return max.x() < min.x() || max.y() < min.y() || max.z() < min.z();
    }
    Index3 extent() const { return max - min + Index3::Ones(); }
    int64_t volume() const {
        if (empty()) return 0;
        Index3 e = extent();
        return int64_t(e.x()) * e.y() * e.z();
    }
    bool contains(const Index3& i) const {
        return i.x() >= min.x() && i.x() <= max.x() && i.y() >= min.y() && i.y() <= max.y() &&
               i.z() >= min.z() && i.z() <= max.z();
    }
    void expand(const Index3& i) {
        if (empty()) {
            min = max = i;
        } else {
            min = min.cwiseMin(i);
            max = max.cwiseMax(i);
        }
    }
};

// One frame's worth of voxel updates in canonical (sorted, merged) form.
struct UpdateBatch {
    struct Entry {
        int64_t voxel;  // linear grid index
        int32_t pixel;  // linear raster index of the originating pixel
        double target;  // banded tsdf target
    };
    struct Group {
        int64_t voxel;
        int32_t begin; // first entry index
        int32_t count; // multiplicity m
        double target_sum;
        uint32_t weight_before; // W before this frame's update (for feature integration)
    };

    std::vector<Entry> entries; // sorted by (voxel, pixel, target)
    std::vector<Group> groups;
    IndexBox bbox; // bounding box of updated voxels (grid indices)

    int64_t dropped_out_of_grid = 0;
    int64_t dropped_behind_camera = 0;
    int64_t invalid_pixels = 0;

    bool empty() const { return groups.empty(); }
};

std::optional<IndexBox> observed_bbox(const std::vector<const SensorShapeState*>& states);

// Copies `field` over `box`; positions outside the grid are filled with pad_value.
template <typename T>
Field3<T> extract_chunk(const Field3<T>& field, const IndexBox& box, T pad_value);

// Canonicalize raw entries: sort by (voxel, pixel, target) and merge per voxel.
// weight_before is left 0; the integrator fills it before applying the batch.
UpdateBatch aggregate_updates(std::vector<UpdateBatch::Entry> entries, const GridGeometry& geom);

// Grid file I/O: one-line JSON header + '\n' + raw little-endian payload.
// Scalar fields store float32, weights uint32, features float32 interleaved.
void save_tsdf_grid(const std::string& path, const GridGeometry& geom, const Field3<double>& v);
void save_weight_grid(const std::string& path, const GridGeometry& geom,
                      const Field3<uint32_t>& w);
void save_feature_grid(const std::string& path, const GridGeometry& geom, const FeatureGrid& f);

struct LoadedGrid {
    GridGeometry geom;
    int channels = 1;
    std::string value_type; // "f32" or "u32"
    std::vector<float> f32;
    std::vector<uint32_t> u32;
};
LoadedGrid load_grid(const std::string& path);
Field3<double> load_tsdf_grid(const std::string& path, GridGeometry* geom_out = nullptr);
Field3<uint32_t> load_weight_grid(const std::string& path, GridGeometry* geom_out = nullptr);

extern template Field3<double> extract_chunk<double>(const Field3<double>&, const IndexBox&,
                                                     double);
extern template Field3<float> extract_chunk<float>(const Field3<float>&, const IndexBox&, float);
extern template Field3<uint32_t> extract_chunk<uint32_t>(const Field3<uint32_t>&, const IndexBox&,
                                                         uint32_t);

} // namespace voxfuse
