#pragma once

#include "voxfuse/sim.hpp"
#include "voxfuse/training.hpp"

#include <string>
#include <vector>

namespace voxfuse {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// marks unrecoverable numeric failures (exit code 3)
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    uint64_t seed = 0;
    std::string dataset_dir;
    std::string output_dir;
    std::string checkpoint; // fuse input / train resume source

    // simulate
    std::string scene_preset = "tabletop";
    int poses = 120;
    double orbit_radius = 1.05;
    double orbit_height = 0.45;
    double orbit_radius2 = 0.90; // second, steeper ring (0 disables)
    double orbit_height2 = 1.00;
    Vec3 orbit_target = Vec3(0.0, 0.0, 0.12);
    GridGeometry grid;
    Intrinsics intrinsics;
    Scene scene;
    std::vector<SensorModel> sensors;

    // schedule
    std::string schedule = "alternate"; // alternate | agent_chunks
    std::vector<int> divisors = {1, 1};
    int agent_chunk = 100;

    // networks
    int feature_blocks = 6;
    int feature_hidden = 4; // n = hidden + 1
    int window_side = 64;   // d for sliding-window inference

    IntegrationConfig integration;
    LossConfig loss;
    TrainConfig train;

    // fuse options
    bool baseline_only = false;
    bool no_filter = false;

    void validate() const;
};

// Defaults carry the stock constants; presets fill scene/sensors/schedule.
RunConfig default_config(const std::string& preset = "tabletop");

// Strict parse: unknown keys raise ConfigError naming the key.
RunConfig load_config_file(const std::string& path);
void apply_config_json(RunConfig& cfg, const std::string& json_text, const std::string& origin);
std::string config_to_json(const RunConfig& cfg);

// Stream order for training/fusion from the dataset's pose list.
std::vector<FrameRef> build_stream(size_t n_poses, const std::string& schedule,
                                   const std::vector<int>& divisors, int agent_chunk);
// Shuffled variant for one training epoch: pose order is permuted per sensor,
// the sensor slot pattern is preserved.
std::vector<FrameRef> shuffle_stream(const std::vector<FrameRef>& stream, uint64_t seed,
                                     int epoch);

} // namespace voxfuse
