#include "voxfuse/runner.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace voxfuse;

namespace {

struct CommonArgs {
    std::string config_file;
    std::string json_overrides; // merged after the file
    bool has_seed = false;
    uint64_t seed = 0;
    std::string dataset, output, checkpoint;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_file, "JSON config file");
    cmd->add_option("--set", args.json_overrides,
                    "inline JSON object merged over the config file, e.g. "
                    "'{\"train\":{\"epochs\":4}}'");
    cmd->add_option("--seed", args.seed, "run seed")->each([&](const std::string&) {
        args.has_seed = true;
    });
    cmd->add_option("--dataset", args.dataset, "dataset directory");
    cmd->add_option("--output", args.output, "output directory");
    cmd->add_option("--checkpoint", args.checkpoint, "parameter checkpoint path");
}

RunConfig resolve(const CommonArgs& args, const std::string& preset_flag) {
    RunConfig cfg = default_config(preset_flag.empty() ? "tabletop" : preset_flag);
    if (!args.config_file.empty()) {
        std::ifstream f(args.config_file);
        if (!f)
            throw ConfigError("cannot open config file: " + args.config_file);
        std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        apply_config_json(cfg, text, args.config_file);
    }
    if (!args.json_overrides.empty()) apply_config_json(cfg, args.json_overrides, "--set");
    // explicit flags take precedence over file and --set
    if (args.has_seed) cfg.seed = args.seed;
    if (!args.dataset.empty()) cfg.dataset_dir = args.dataset;
    if (!args.output.empty()) cfg.output_dir = args.output;
    if (!args.checkpoint.empty()) cfg.checkpoint = args.checkpoint;
    if (!preset_flag.empty() && preset_flag != cfg.scene_preset) {
        RunConfig preset = default_config(preset_flag);
        preset.seed = cfg.seed;
        preset.dataset_dir = cfg.dataset_dir;
        preset.output_dir = cfg.output_dir;
        preset.checkpoint = cfg.checkpoint;
        cfg = preset;
    }
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"voxfuse: online two-sensor depth fusion with a learned voxel weighting"};
    app.require_subcommand(1);

    CommonArgs sim_args, train_args, fuse_args, eval_args;
    std::string sim_preset;
    int sim_poses = -1;

    CLI::App* sim = app.add_subcommand("simulate", "generate a synthetic two-sensor dataset");
    add_common(sim, sim_args);
    sim->add_option("--scene", sim_preset, "scene preset: tabletop, tabletop_clean, multi_agent");
    sim->add_option("--poses", sim_poses, "trajectory pose count");

    std::string resume_state;
    CLI::App* train = app.add_subcommand("train", "online end-to-end training on a dataset");
    add_common(train, train_args);
    train->add_option("--resume", resume_state, "resume from a train_state.bin");

    std::vector<int> fuse_divisors;
    bool baseline_only = false, no_filter = false;
    CLI::App* fuse = app.add_subcommand("fuse", "integrate a stream and export fused outputs");
    add_common(fuse, fuse_args);
    fuse->add_option("--divisors", fuse_divisors, "per-sensor sampling-rate divisors (two ints)");
    fuse->add_flag("--baseline-only", baseline_only, "multi-sensor TSDF-Fusion baseline only");
    fuse->add_flag("--no-filter", no_filter, "skip the learned outlier filter");

    std::string fuse_dir, single_grid, single_mesh;
    double tau = 0.02;
    CLI::App* eval = app.add_subcommand("eval", "seven-metric comparison against ground truth");
    add_common(eval, eval_args);
    eval->add_option("--fuse-dir", fuse_dir, "directory produced by the fuse command");
    eval->add_option("--grid", single_grid, "evaluate a single TSDF grid file instead");
    eval->add_option("--mesh", single_mesh, "mesh for --grid (extracted when omitted)");
    eval->add_option("--tau", tau, "mesh F-score distance threshold in meters");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) {
            RunConfig cfg = resolve(sim_args, sim_preset);
            if (sim_poses > 0) cfg.poses = sim_poses;
            run_simulate(cfg);
        } else if (train->parsed()) {
            RunConfig cfg = resolve(train_args, "");
            run_train(cfg, resume_state);
        } else if (fuse->parsed()) {
            RunConfig cfg = resolve(fuse_args, "");
            if (!fuse_divisors.empty()) {
                if (fuse_divisors.size() != 2)
                    throw ConfigError("--divisors needs exactly two integers");
                cfg.divisors = fuse_divisors;
            }
            if (baseline_only) cfg.baseline_only = true;
            if (no_filter) cfg.no_filter = true;
            run_fuse(cfg);
        } else if (eval->parsed()) {
            RunConfig cfg = resolve(eval_args, "");
            if (fuse_dir.empty() && single_grid.empty())
                throw ConfigError("eval: --fuse-dir or --grid required");
            run_eval(cfg, fuse_dir, tau, single_grid, single_mesh);
        }
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
