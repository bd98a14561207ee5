#include "voxfuse/integration.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace voxfuse {

using nlohmann::json;

void DepthFrame::validate() const {
    intrinsics.validate();
    pose.validate();
    if (depth.size() != size_t(intrinsics.width) * intrinsics.height)
        throw IntegrationError("depth frame raster size does not match intrinsics");
}

void IntegrationConfig::validate() const {
    if (samples_per_ray < 2)
        throw IntegrationError("integration: samples_per_ray must be >= 2");
    if (!(band > 0))
        throw IntegrationError("integration: band must be positive");
    if (omega_max < 1)
        throw IntegrationError("integration: omega_max must be >= 1");
    if (border_mask < 0)
        throw IntegrationError("integration: border_mask must be >= 0");
    if (!(min_depth >= 0) || !(max_depth > min_depth))
        throw IntegrationError("integration: bad depth validity range");
}

UpdateBatch integrate_shape(SensorShapeState& state, const GridGeometry& geom,
                            const DepthFrame& frame, const IntegrationConfig& cfg) {
    cfg.validate();
    frame.validate();
    if (state.tsdf.dims != geom.dims)
        throw IntegrationError("integrate_shape: state dims do not match grid geometry");

    const Intrinsics& K = frame.intrinsics;
    const int W = K.width, H = K.height, border = cfg.border_mask;
    const Vec3 cam = frame.pose.camera_center();
    const int T = cfg.samples_per_ray;
    const double step = cfg.band / (T - 1);
    const double half = 0.5 * cfg.band;

    std::vector<UpdateBatch::Entry> raw;
    raw.reserve(size_t(W) * H);
    int64_t dropped_grid = 0, dropped_cam = 0, invalid = 0;

    for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
            const int32_t pix = v * W + u;
            const float d = frame.depth[size_t(pix)];
            if (v < border || v >= H - border || u < border || u >= W - border) continue;
            if (!(d > 0.f) || std::isnan(d) || d < cfg.min_depth || d > cfg.max_depth) {
                ++invalid;
                continue;
            }
            const Vec3 x_world = unproject_pixel(u, v, d, K, frame.pose);
            const Vec3 ray = x_world - cam;
            const double ray_len = ray.norm();
            if (ray_len == 0.0)
                throw IntegrationError("integrate_shape: surface point coincides with camera");
            const Vec3 dir = ray / ray_len;
            for (int k = 0; k < T; ++k) {
                const double offset = k * step - half;
                if (ray_len + offset <= 0.0) { // sample at or behind the camera center
                    ++dropped_cam;
                    continue;
                }
                const Vec3 sample = x_world + offset * dir;
                VoxelLookup lk = world_to_voxel(sample, geom.origin, geom.voxel_size, geom.dims);
                if (!lk.in_grid) {
                    ++dropped_grid;
                    continue;
                }
                raw.push_back({geom.linear(lk.index), pix, half - k * step});
            }
        }
    }

    UpdateBatch batch = aggregate_updates(std::move(raw), geom);
    batch.dropped_out_of_grid = dropped_grid;
    batch.dropped_behind_camera = dropped_cam;
    batch.invalid_pixels = invalid;

    for (auto& g : batch.groups) {
        uint32_t w = state.weight[g.voxel];
        g.weight_before = w;
        state.tsdf[g.voxel] = (double(w) * state.tsdf[g.voxel] + g.target_sum) / (w + g.count);
        state.weight[g.voxel] = std::min<uint64_t>(cfg.omega_max, uint64_t(w) + g.count);
    }
    return batch;
}

void integrate_features(FeatureGrid& grid, const UpdateBatch& batch, const float* features,
                        int channels) {
    if (grid.channels != channels)
        throw IntegrationError("integrate_features: channel count mismatch");
    std::vector<double> sum(static_cast<size_t>(channels), 0.0);
    for (const auto& g : batch.groups) {
        std::fill(sum.begin(), sum.end(), 0.0);
        for (int32_t e = g.begin; e < g.begin + g.count; ++e) {
            const float* f = features + size_t(batch.entries[e].pixel) * channels;
            for (int c = 0; c < channels; ++c) sum[size_t(c)] += f[c];
        }
        float* dst = grid.voxel(g.voxel);
        const double denom = double(g.weight_before) + g.count;
        for (int c = 0; c < channels; ++c) {
            double updated = (double(g.weight_before) * dst[c] + sum[size_t(c)]) / denom;
            if (!std::isfinite(updated))
                throw IntegrationError("integrate_features: non-finite feature update");
            dst[c] = static_cast<float>(updated);
        }
    }
}

void integrate_features_planar(FeatureGrid& grid, const UpdateBatch& batch,
                               const double* features, int64_t raster, int channels) {
    if (grid.channels != channels)
        throw IntegrationError("integrate_features: channel count mismatch");
    std::vector<double> sum(static_cast<size_t>(channels), 0.0);
    for (const auto& g : batch.groups) {
        std::fill(sum.begin(), sum.end(), 0.0);
        for (int32_t e = g.begin; e < g.begin + g.count; ++e) {
            const int64_t pix = batch.entries[size_t(e)].pixel;
            for (int c = 0; c < channels; ++c)
                sum[size_t(c)] += features[int64_t(c) * raster + pix];
        }
        float* dst = grid.voxel(g.voxel);
        const double denom = double(g.weight_before) + g.count;
        for (int c = 0; c < channels; ++c) {
            double updated = (double(g.weight_before) * dst[c] + sum[size_t(c)]) / denom;
            if (!std::isfinite(updated))
                throw IntegrationError("integrate_features: non-finite feature update");
            dst[c] = static_cast<float>(updated);
        }
    }
}

void save_depth_frame(const std::string& stem, const DepthFrame& frame) {
    {
        std::ofstream f(stem + ".bin", std::ios::binary);
        if (!f)
            throw IntegrationError("cannot write depth raster: " + stem + ".bin");
        f.write(reinterpret_cast<const char*>(frame.depth.data()),
                std::streamsize(frame.depth.size() * sizeof(float)));
    }
    json side;
    side["intrinsics"] = {{"fx", frame.intrinsics.fx}, {"fy", frame.intrinsics.fy},
                          {"cx", frame.intrinsics.cx}, {"cy", frame.intrinsics.cy},
                          {"width", frame.intrinsics.width},
                          {"height", frame.intrinsics.height}};
    std::vector<double> pose_rm; // row-major 3x4 camera-to-world
    pose_rm.reserve(12);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) pose_rm.push_back(frame.pose.rotation(r, c));
        pose_rm.push_back(frame.pose.translation[r]);
    }
    side["pose"] = pose_rm;
    side["sensor_id"] = frame.sensor_id;
    side["timestamp"] = frame.timestamp;
    std::ofstream jf(stem + ".json");
    if (!jf)
        throw IntegrationError("cannot write frame sidecar: " + stem + ".json");
    jf << side.dump(2) << "\n";
}

DepthFrame load_depth_frame(const std::string& stem) {
    std::ifstream jf(stem + ".json");
    if (!jf)
        throw IntegrationError("cannot open frame sidecar: " + stem + ".json");
    json side = json::parse(jf);

    DepthFrame frame;
    const auto& K = side.at("intrinsics");
    frame.intrinsics.fx = K.at("fx").get<double>();
    frame.intrinsics.fy = K.at("fy").get<double>();
    frame.intrinsics.cx = K.at("cx").get<double>();
    frame.intrinsics.cy = K.at("cy").get<double>();
    frame.intrinsics.width = K.at("width").get<int>();
    frame.intrinsics.height = K.at("height").get<int>();

    const auto& p = side.at("pose");
    if (p.size() != 12)
        throw IntegrationError("frame sidecar pose must be a row-major 3x4 matrix");
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) frame.pose.rotation(r, c) = p[size_t(r * 4 + c)].get<double>();
        frame.pose.translation[r] = p[size_t(r * 4 + 3)].get<double>();
    }
    frame.sensor_id = side.at("sensor_id").get<int>();
    frame.timestamp = side.at("timestamp").get<double>();

    frame.depth.resize(size_t(frame.intrinsics.width) * frame.intrinsics.height);
    std::ifstream f(stem + ".bin", std::ios::binary);
    if (!f)
        throw IntegrationError("cannot open depth raster: " + stem + ".bin");
    f.read(reinterpret_cast<char*>(frame.depth.data()),
           std::streamsize(frame.depth.size() * sizeof(float)));
    if (!f)
        throw IntegrationError("depth raster truncated: " + stem + ".bin");
    frame.validate();
    return frame;
}

} // namespace voxfuse
