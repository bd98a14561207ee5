#pragma once

#include "voxfuse/integration.hpp"
#include "voxfuse/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <map>

namespace testutil {

using voxfuse::DepthFrame;
using voxfuse::Index3;
using voxfuse::Intrinsics;
using voxfuse::Pose;
using voxfuse::Vec3;

// Independent scalar TSDF-Fusion reference: plain per-frame loops and a map,
// no shared machinery with the engine. Within-frame hits on one voxel are
// merged into a single moving-average step, the contract the engine states.
class ReferenceTsdfFusion {
public:
    ReferenceTsdfFusion(const Vec3& origin, double voxel_size, const Index3& dims, int samples,
                        double band, uint32_t omega_max, int border, double min_d, double max_d)
        : origin_(origin), voxel_(voxel_size), dims_(dims), samples_(samples), band_(band),
          omega_max_(omega_max), border_(border), min_d_(min_d), max_d_(max_d) {
        v_.assign(size_t(dims.x()) * dims.y() * dims.z(), 0.0);
        w_.assign(v_.size(), 0);
    }

    void integrate(const DepthFrame& f) {
        std::map<int64_t, std::pair<double, int>> frame_updates;
        const Intrinsics& K = f.intrinsics;
        const Vec3 cam = f.pose.translation;
        for (int v = border_; v < K.height - border_; ++v)
            for (int u = border_; u < K.width - border_; ++u) {
                const double d = f.depth[size_t(v) * K.width + u];
                if (!(d > 0) || d < min_d_ || d > max_d_) continue;
                Vec3 pc(d * (u - K.cx) / K.fx, d * (v - K.cy) / K.fy, d);
                Vec3 pw = f.pose.rotation * pc + f.pose.translation;
                Vec3 dir = (pw - cam).normalized();
                const double ray_len = (pw - cam).norm();
                const double step = band_ / (samples_ - 1);
                for (int k = 0; k < samples_; ++k) {
                    const double off = k * step - 0.5 * band_;
                    if (ray_len + off <= 0.0) continue;
                    Vec3 p = pw + off * dir;
                    const long ix = std::lround((p.x() - origin_.x()) / voxel_);
                    const long iy = std::lround((p.y() - origin_.y()) / voxel_);
                    const long iz = std::lround((p.z() - origin_.z()) / voxel_);
                    if (ix < 0 || ix >= dims_.x() || iy < 0 || iy >= dims_.y() || iz < 0 ||
                        iz >= dims_.z())
                        continue;
                    const int64_t lin = (int64_t(iz) * dims_.y() + iy) * dims_.x() + ix;
                    auto& acc = frame_updates[lin];
                    acc.first += 0.5 * band_ - k * step;
                    acc.second += 1;
                }
            }
        for (const auto& [lin, acc] : frame_updates) {
            const uint32_t w = w_[size_t(lin)];
            v_[size_t(lin)] = (double(w) * v_[size_t(lin)] + acc.first) / (w + acc.second);
            w_[size_t(lin)] = uint32_t(std::min<uint64_t>(omega_max_, uint64_t(w) + acc.second));
        }
    }

    double value(int64_t lin) const { return v_[size_t(lin)]; }
    uint32_t weight(int64_t lin) const { return w_[size_t(lin)]; }
    size_t size() const { return v_.size(); }

private:
    Vec3 origin_;
    double voxel_;
    Index3 dims_;
    int samples_;
    double band_;
    uint32_t omega_max_;
    int border_;
    double min_d_, max_d_;
    std::vector<double> v_;
    std::vector<uint32_t> w_;
};

inline DepthFrame constant_depth_frame(int width, int height, float depth, double fx = 40.0) {
    DepthFrame f;
    f.intrinsics.fx = f.intrinsics.fy = fx;
    f.intrinsics.cx = (width - 1) / 2.0;
    f.intrinsics.cy = (height - 1) / 2.0;
    f.intrinsics.width = width;
    f.intrinsics.height = height;
    f.depth.assign(size_t(width) * height, depth);
    return f;
}

} // namespace testutil
