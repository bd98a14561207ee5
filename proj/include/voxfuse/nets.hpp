#pragma once

#include "voxfuse/grid.hpp"
#include "voxfuse/ops.hpp"
#include "voxfuse/rng.hpp"

#include <string>
#include <vector>

namespace voxfuse::nn {

struct Conv2dParams {
    Tensor w; // [Co, Ci*9]
    Tensor b; // [Co]
};

struct Conv3dParams {
    Tensor w; // [Co, Ci*27] or [Co, Ci] for 1x1x1
    Tensor b;
};

// Per-sensor 2D feature extractor: `blocks` residual blocks of
// (3x3 conv, tanh, 3x3 conv, tanh); the final 4-channel map is L2-normalized
// per pixel and the input depth is appended as the last channel.
class FeatureNet {
public:
    FeatureNet() = default;
    FeatureNet(int blocks, int in_channels, int hidden, const std::string& prefix, Rng& rng);

    // depth: [1,H,W] (or [in_channels,H,W]); returns [hidden+1, H, W]
    Tensor forward(const Tensor& input) const;
    std::vector<Tensor> parameters() const;
    int out_channels() const { return hidden_ + 1; }
    int blocks() const { return int(convs_.size()) / 2; }

private:
    int hidden_ = 4;
    int in_channels_ = 1;
    std::vector<Conv2dParams> convs_; // two per block
};

// Shared 3D weighting head: two 3x3x3 replication-padded convolutions with
// ReLU (12 -> 32 -> 16 channels) and a 1x1x1 sigmoid head.
class WeightingNet {
public:
    WeightingNet() = default;
    WeightingNet(int in_channels, const std::string& prefix, Rng& rng);

    // chunk: [in_channels, D, H, W]; returns alpha in (0,1), [1, D, H, W]
    Tensor forward(const Tensor& chunk) const;
    std::vector<Tensor> parameters() const;
    int in_channels() const { return in_channels_; }

private:
    int in_channels_ = 12;
    Conv3dParams c1_, c2_, head_;
};

// The full trainable stack: one feature net per sensor + the shared
// weighting net.
struct NetworkStack {
    FeatureNet feature[2];
    WeightingNet weighting;
    int feature_channels = 5; // n

    NetworkStack() = default;
    NetworkStack(int blocks, int hidden, uint64_t seed);
    std::vector<Tensor> parameters() const;
    int64_t parameter_count() const;
};

// Assemble the weighting-net input chunk over `box` from both sensors'
// feature grids and tanh-transformed weight counters:
// channels = [F1 (n), tanh(W1), F2 (n), tanh(W2)].
std::vector<double> make_weighting_input(const FeatureGrid& f1, const Field3<uint32_t>& w1,
                                         const FeatureGrid& f2, const Field3<uint32_t>& w2,
                                         const IndexBox& box);

// Chunked inference: windows of side d, stride d/2, only each window's
// central d/2 region kept; origins are clamped at the box borders so every
// voxel is written exactly once. Returns alpha over `box`.
Field3<double> sliding_window_alpha(const WeightingNet& net, const FeatureGrid& f1,
                                    const Field3<uint32_t>& w1, const FeatureGrid& f2,
                                    const Field3<uint32_t>& w2, const IndexBox& box, int d);

// Checkpoint: one-line JSON manifest (names, shapes, offsets) + '\n' +
// little-endian float32 payload. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const std::vector<Tensor>& params);
void load_checkpoint(const std::string& path, const std::vector<Tensor>& params);

} // namespace voxfuse::nn
