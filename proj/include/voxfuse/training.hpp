#pragma once

#include "voxfuse/fusion.hpp"
#include "voxfuse/integration.hpp"
#include "voxfuse/nets.hpp"
#include "voxfuse/rng.hpp"

#include <optional>

namespace voxfuse {

struct LossConfig {
    double lambda1 = 1.0 / 60.0;
    double lambda2 = 1.0 / 600.0;
    double eta = 0.04; // inlier threshold, meters

    void validate() const;
};

struct TrainConfig {
    double lr = 1e-4;
    int accumulation = 20; // frames per optimizer step
    double reset_prob = 0.01;
    int chunk_side = 64; // d
    int min_update_indices = 2000;
    int max_attempts = 600;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int epochs = 1;
    bool shuffle = true;
    int checkpoint_every = 0; // optimizer steps between checkpoints; 0 = final only

    void validate() const;
};

struct GroundTruthGrid {
    Field3<double> v;
    double half_band = 0.05; // |v| <= half_band everywhere
};

// Loss terms over one chunk. Arrays are chunk-flattened (x fastest), length
// equal to alpha's voxel count. cls holds VoxelSet codes; update_mask marks
// this frame's update voxels inside the chunk.
struct LossBreakdown {
    nn::Tensor total;
    double lf = 0, lin1 = 0, lin2 = 0, lout1 = 0, lout2 = 0;
    int64_t n_f = 0, n_in1 = 0, n_in2 = 0, n_out1 = 0, n_out2 = 0;

    bool empty() const { return n_f + n_in1 + n_in2 + n_out1 + n_out2 == 0; }
    double value() const { return total.defined() ? total.item() : 0.0; }
};

LossBreakdown compute_loss(const nn::Tensor& alpha, const std::vector<double>& v1,
                           const std::vector<double>& v2, const std::vector<uint8_t>& cls,
                           const std::vector<double>& gt, const std::vector<uint8_t>& update_mask,
                           const LossConfig& cfg);

// Uniformly sample a chunk of side min(d, bbox side) inside bbox until it
// holds at least min_indices update voxels; nullopt after max_attempts.
std::optional<IndexBox> sample_training_chunk(const IndexBox& bbox,
                                              const std::vector<Index3>& update_voxels, int d,
                                              int min_indices, int max_attempts, Rng& rng);

struct AdamState {
    std::vector<std::vector<double>> m, v;
    int64_t t = 0;

    void init(const std::vector<nn::Tensor>& params);
};

// Standard bias-corrected Adam on the accumulated grads; grads are untouched.
void adam_update(const std::vector<nn::Tensor>& params, AdamState& state, double lr, double beta1,
                 double beta2, double eps);

struct TrainLogRow {
    int64_t step = 0;
    int64_t frames_seen = 0;
    double loss = 0, lf = 0, lin1 = 0, lin2 = 0, lout1 = 0, lout2 = 0;
};

// Online end-to-end trainer over the two per-sensor grids.
class Trainer {
public:
    Trainer(const GridGeometry& geom, const IntegrationConfig& icfg, const LossConfig& lcfg,
            const TrainConfig& tcfg, nn::NetworkStack* nets, uint64_t seed);

    struct StepResult {
        bool contributed = false; // gradient accumulated from this frame
        bool optimizer_stepped = false;
        bool nan = false;
        double loss = 0.0;
    };
    StepResult train_step(const DepthFrame& frame, const GroundTruthGrid& gt);

    const std::vector<TrainLogRow>& log() const { return log_; }
    SensorShapeState& state(int sensor) { return state_[sensor]; }
    FeatureGrid& features(int sensor) { return fgrid_[sensor]; }
    int64_t optimizer_steps() const { return opt_steps_; }
    int64_t frames_seen() const { return frames_seen_; }
    AdamState& adam() { return adam_; }
    Rng& rng() { return rng_; }
    double last_chunk_loss() const { return last_loss_; }

    // for resumable training state
    struct Counters {
        int64_t accum_count = 0, opt_steps = 0, frames_seen = 0;
        double win[6] = {0, 0, 0, 0, 0, 0};
        double last_loss = 0;
    };
    Counters counters() const;
    void restore_counters(const Counters& c);

private:
    GridGeometry geom_;
    IntegrationConfig icfg_;
    LossConfig lcfg_;
    TrainConfig tcfg_;
    nn::NetworkStack* nets_;
    SensorShapeState state_[2];
    FeatureGrid fgrid_[2];
    std::vector<nn::Tensor> params_;
    AdamState adam_;
    Rng rng_;
    int64_t accum_count_ = 0;
    int64_t opt_steps_ = 0;
    int64_t frames_seen_ = 0;
    double last_loss_ = 0.0;
    double win_loss_ = 0, win_lf_ = 0, win_lin1_ = 0, win_lin2_ = 0, win_lout1_ = 0,
           win_lout2_ = 0;
    std::vector<TrainLogRow> log_;
};

} // namespace voxfuse
