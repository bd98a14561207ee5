#pragma once

#include "voxfuse/config.hpp"
#include "voxfuse/metrics.hpp"

#include <map>
#include <string>

namespace voxfuse {

// Dataset generation: scene manifest, per-frame rasters + sidecars, GT grid.
void run_simulate(const RunConfig& cfg);

// Online end-to-end training; writes checkpoints, loss.csv, manifest.json and
// a resumable train_state.bin into cfg.output_dir. Throws NumericError on a
// NaN loss after saving the last good checkpoint.
void run_train(const RunConfig& cfg, const std::string& resume_state = "");

// Integrate the full stream, run chunked weighting inference, fuse, filter
// and export grids + meshes + stats. baseline_only skips the network.
void run_fuse(const RunConfig& cfg);

// Seven-metric comparison table over {sensor1, sensor2, tsdf-baseline, fused}
// (or one grid/mesh pair when single_grid is set). Returns rows by name.
std::map<std::string, MetricsReport> run_eval(const RunConfig& cfg, const std::string& fuse_dir,
                                              double tau = 0.02,
                                              const std::string& single_grid = "",
                                              const std::string& single_mesh = "");

} // namespace voxfuse
