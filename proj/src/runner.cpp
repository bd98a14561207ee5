#include "voxfuse/runner.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace voxfuse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f)
        throw ConfigError("cannot write " + path.string());
    f << text;
}

void write_loss_csv(const fs::path& path, const std::vector<TrainLogRow>& rows) {
    std::ofstream f(path);
    if (!f)
        throw ConfigError("cannot write " + path.string());
    f << "step,frames_seen,loss,l_f,l_in1,l_in2,l_out1,l_out2\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%lld,%lld,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                      (long long)r.step, (long long)r.frames_seen, r.loss, r.lf, r.lin1, r.lin2,
                      r.lout1, r.lout2);
        f << buf;
    }
}

// ---- resumable training state ----

struct StreamPos {
    int epoch = 0;
    int64_t index = 0; // next frame within the epoch's stream
};

void save_train_state(const fs::path& path, Trainer& trainer,
                      const std::vector<nn::Tensor>& params, const AdamState& adam,
                      const SensorShapeState* states, const FeatureGrid* fgrids,
                      const StreamPos& pos, const std::string& rng_state) {
    const Trainer::Counters c = trainer.counters();
    json h;
    h["format"] = "voxfuse-trainstate-v1";
    h["epoch"] = pos.epoch;
    h["index"] = pos.index;
    h["adam_t"] = adam.t;
    h["opt_steps"] = c.opt_steps;
    h["frames_seen"] = c.frames_seen;
    h["accum_count"] = c.accum_count;
    h["win"] = {c.win[0], c.win[1], c.win[2], c.win[3], c.win[4], c.win[5]};
    h["last_loss"] = c.last_loss;
    h["rng"] = rng_state;

    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw ConfigError("cannot write train state: " + path.string());
    std::string hs = h.dump();
    f.write(hs.data(), std::streamsize(hs.size()));
    f.put('\n');
    auto put_doubles = [&](const std::vector<double>& v) {
        f.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * 8));
    };
    for (const auto& p : params) {
        put_doubles(p.values());
        p.node().ensure_grad();
        put_doubles(p.grad());
    }
    for (size_t i = 0; i < params.size(); ++i) {
        put_doubles(adam.m[i]);
        put_doubles(adam.v[i]);
    }
    for (int s = 0; s < 2; ++s) {
        put_doubles(states[s].tsdf.data);
        f.write(reinterpret_cast<const char*>(states[s].weight.data.data()),
                std::streamsize(states[s].weight.data.size() * 4));
        f.write(reinterpret_cast<const char*>(fgrids[s].data.data()),
                std::streamsize(fgrids[s].data.size() * 4));
    }
    if (!f)
        throw ConfigError("short write on train state: " + path.string());
}

StreamPos load_train_state(const fs::path& path, Trainer& trainer,
                           const std::vector<nn::Tensor>& params, AdamState& adam,
                           SensorShapeState* states, FeatureGrid* fgrids) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw ConfigError("cannot open train state: " + path.string());
    std::string line;
    if (!std::getline(f, line))
        throw ConfigError("train state missing header: " + path.string());
    json h = json::parse(line);
    if (h.value("format", "") != "voxfuse-trainstate-v1")
        throw ConfigError("unknown train state format");
    StreamPos pos{h.at("epoch").get<int>(), h.at("index").get<int64_t>()};
    trainer.rng().load_state(h.at("rng").get<std::string>());

    Trainer::Counters c;
    c.opt_steps = h.at("opt_steps").get<int64_t>();
    c.frames_seen = h.at("frames_seen").get<int64_t>();
    c.accum_count = h.at("accum_count").get<int64_t>();
    for (int i = 0; i < 6; ++i) c.win[i] = h.at("win")[size_t(i)].get<double>();
    c.last_loss = h.at("last_loss").get<double>();
    trainer.restore_counters(c);

    auto get_doubles = [&](std::vector<double>& v) {
        f.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size() * 8));
    };
    for (const auto& p : params) {
        get_doubles(p.values());
        p.node().ensure_grad();
        get_doubles(p.grad());
    }
    if (adam.m.size() != params.size()) adam.init(params);
    adam.t = h.at("adam_t").get<int64_t>();
    for (size_t i = 0; i < params.size(); ++i) {
        get_doubles(adam.m[i]);
        get_doubles(adam.v[i]);
    }
    for (int s = 0; s < 2; ++s) {
        get_doubles(states[s].tsdf.data);
        f.read(reinterpret_cast<char*>(states[s].weight.data.data()),
               std::streamsize(states[s].weight.data.size() * 4));
        f.read(reinterpret_cast<char*>(fgrids[s].data.data()),
               std::streamsize(fgrids[s].data.size() * 4));
    }
    if (!f)
        throw ConfigError("train state truncated: " + path.string());
    return pos;
}

} // namespace

void run_simulate(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.output_dir.empty())
        throw ConfigError("simulate: output dir required");
    Trajectory traj = orbit_trajectory(cfg.poses, cfg.orbit_radius, cfg.orbit_height,
                                       cfg.orbit_target, 30.0, cfg.orbit_radius2,
                                       cfg.orbit_height2);
    traj.sensor_divisors = cfg.divisors;
    generate_dataset(cfg.output_dir, cfg.scene, cfg.grid, cfg.intrinsics, traj, cfg.sensors,
                     cfg.integration.band, cfg.seed);
    write_text(fs::path(cfg.output_dir) / "config.json", config_to_json(cfg) + "\n");
    std::cout << "dataset written to " << cfg.output_dir << " (" << cfg.poses
              << " poses, 2 sensors)\n";
}

void run_train(const RunConfig& cfg, const std::string& resume_state) {
    cfg.validate();
    if (cfg.dataset_dir.empty() || cfg.output_dir.empty())
        throw ConfigError("train: dataset and output dirs required");
    Dataset ds = load_dataset(cfg.dataset_dir);
    fs::create_directories(cfg.output_dir);
    const fs::path out(cfg.output_dir);

    GroundTruthGrid gt{ds.load_gt(), 0.5 * cfg.integration.band};
    nn::NetworkStack nets(cfg.feature_blocks, cfg.feature_hidden, cfg.seed);
    Trainer trainer(ds.grid, cfg.integration, cfg.loss, cfg.train, &nets, cfg.seed);
    std::vector<nn::Tensor> params = nets.parameters();

    StreamPos pos;
    if (!resume_state.empty())
        pos = load_train_state(resume_state, trainer, params, trainer.adam(), &trainer.state(0),
                               &trainer.features(0));

    const std::vector<FrameRef> base_stream =
        build_stream(ds.trajectory.poses.size(), cfg.schedule, cfg.divisors, cfg.agent_chunk);

    write_text(out / "manifest.json", config_to_json(cfg) + "\n");
    const auto t0 = std::chrono::steady_clock::now();
    bool aborted = false;

    for (int epoch = pos.epoch; epoch < cfg.train.epochs && !aborted; ++epoch) {
        std::vector<FrameRef> stream =
            cfg.train.shuffle ? shuffle_stream(base_stream, cfg.seed, epoch) : base_stream;
        int64_t start = epoch == pos.epoch ? pos.index : 0;
        for (int64_t i = start; i < int64_t(stream.size()); ++i) {
            DepthFrame frame = ds.load_frame(stream[size_t(i)]);
            Trainer::StepResult res = trainer.train_step(frame, gt);
            if (res.nan) {
                nn::save_checkpoint((out / "checkpoint_last_good.ckpt").string(), params);
                write_loss_csv(out / "loss.csv", trainer.log());
                throw NumericError("train: loss diverged (NaN); last good checkpoint saved");
            }
            if (res.optimizer_stepped && cfg.train.checkpoint_every > 0 &&
                trainer.optimizer_steps() % cfg.train.checkpoint_every == 0) {
                char name[64];
                std::snprintf(name, sizeof name, "checkpoint_step%06lld.ckpt",
                              (long long)trainer.optimizer_steps());
                nn::save_checkpoint((out / name).string(), params);
            }
        }
        StreamPos next{epoch + 1, 0};
        save_train_state(out / "train_state.bin", trainer, params, trainer.adam(),
                         &trainer.state(0), &trainer.features(0), next,
                         trainer.rng().save_state());
    }

    nn::save_checkpoint((out / "checkpoint_final.ckpt").string(), params);
    write_loss_csv(out / "loss.csv", trainer.log());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "trained " << trainer.frames_seen() << " frames, "
              << trainer.optimizer_steps() << " optimizer steps in " << std::fixed
              << std::setprecision(1) << secs << " s\n";
}

void run_fuse(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.dataset_dir.empty() || cfg.output_dir.empty())
        throw ConfigError("fuse: dataset and output dirs required");
    Dataset ds = load_dataset(cfg.dataset_dir);
    fs::create_directories(cfg.output_dir);
    const fs::path out(cfg.output_dir);

    nn::NetworkStack nets(cfg.feature_blocks, cfg.feature_hidden, cfg.seed);
    if (!cfg.baseline_only) {
        if (cfg.checkpoint.empty())
            throw ConfigError("fuse: checkpoint required (or use baseline_only)");
        nn::load_checkpoint(cfg.checkpoint, nets.parameters());
    }

    SensorShapeState state[2] = {SensorShapeState(ds.grid.dims), SensorShapeState(ds.grid.dims)};
    FeatureGrid fgrid[2] = {FeatureGrid(ds.grid.dims, nets.feature_channels),
                            FeatureGrid(ds.grid.dims, nets.feature_channels)};
    SensorShapeState baseline(ds.grid.dims);

    const std::vector<FrameRef> stream =
        build_stream(ds.trajectory.poses.size(), cfg.schedule, cfg.divisors, cfg.agent_chunk);

    std::ofstream timing(out / "timing.csv");
    timing << "frame,sensor,pose,ms\n";
    nn::NoGradGuard guard;
    double total_ms = 0;
    for (size_t i = 0; i < stream.size(); ++i) {
        const FrameRef& ref = stream[i];
        DepthFrame frame = ds.load_frame(ref);
        const auto t0 = std::chrono::steady_clock::now();
        // multi-sensor TSDF-Fusion baseline: both sensors into one grid
        integrate_shape(baseline, ds.grid, frame, cfg.integration);
        if (!cfg.baseline_only) {
            UpdateBatch batch = integrate_shape(state[ref.sensor], ds.grid, frame, cfg.integration);
            std::vector<double> raster(frame.depth.begin(), frame.depth.end());
            nn::Tensor input = nn::Tensor::constant(
                {1, frame.intrinsics.height, frame.intrinsics.width}, std::move(raster));
            nn::Tensor feats = nets.feature[ref.sensor].forward(input);
            integrate_features_planar(fgrid[ref.sensor], batch, feats.values().data(),
                                      int64_t(frame.intrinsics.width) * frame.intrinsics.height,
                                      nets.feature_channels);
        }
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        total_ms += ms;
        char row[96];
        std::snprintf(row, sizeof row, "%zu,%d,%d,%.3f\n", i, ref.sensor, ref.pose_index, ms);
        timing << row;
    }

    if (cfg.baseline_only) {
        save_tsdf_grid((out / "baseline.grid").string(), ds.grid, baseline.tsdf);
        save_weight_grid((out / "w_baseline.grid").string(), ds.grid, baseline.weight);
        Mesh mesh = marching_cubes(baseline.tsdf, weight_valid_mask(baseline.weight), ds.grid);
        save_ply((out / "baseline.ply").string(), mesh);
        std::cout << "baseline fusion done: " << stream.size() << " frames, "
                  << (1000.0 * double(stream.size()) / total_ms) << " fps\n";
        return;
    }

    auto bbox = observed_bbox({&state[0], &state[1]});
    if (!bbox)
        throw ConfigError("fuse: nothing was observed");

    Field3<double> alpha_box =
        nn::sliding_window_alpha(nets.weighting, fgrid[0], state[0].weight, fgrid[1],
                                 state[1].weight, *bbox, cfg.window_side);
    Field3<double> alpha(ds.grid.dims, 0.5);
    for (int z = bbox->min.z(); z <= bbox->max.z(); ++z)
        for (int y = bbox->min.y(); y <= bbox->max.y(); ++y)
            for (int x = bbox->min.x(); x <= bbox->max.x(); ++x)
                alpha.at(x, y, z) =
                    alpha_box.at(x - bbox->min.x(), y - bbox->min.y(), z - bbox->min.z());

    VoxelSetMask mask = classify_voxels(state[0].weight, state[1].weight);
    Field3<double> fused = fuse(state[0].tsdf, state[1].tsdf, alpha, mask);
    FilteredWeights filtered = cfg.no_filter
                                   ? FilteredWeights{state[0].weight, state[1].weight}
                                   : outlier_filter(mask, alpha, state[0].weight, state[1].weight);

    // filter efficacy bookkeeping on single-sensor voxels
    Field3<double> gt = ds.load_gt();
    int64_t n_c1 = 0, n_c2 = 0, n_c12 = 0;
    int64_t out_before = 0, out_after = 0, in_before = 0, in_after = 0;
    for (int64_t l = 0; l < fused.size(); ++l) {
        const VoxelSet c = mask.cls[l];
        if (c == VoxelSet::c12) {
            ++n_c12;
            continue;
        }
        if (c == VoxelSet::none) continue;
        (c == VoxelSet::c1 ? n_c1 : n_c2)++;
        const bool outlier = std::abs(fused[l] - gt[l]) > cfg.loss.eta;
        const bool survives = filtered.w1[l] > 0 || filtered.w2[l] > 0;
        (outlier ? out_before : in_before)++;
        if (survives) (outlier ? out_after : in_after)++;
    }

    save_tsdf_grid((out / "fused.grid").string(), ds.grid, fused);
    save_tsdf_grid((out / "alpha.grid").string(), ds.grid, alpha);
    save_tsdf_grid((out / "v_s0.grid").string(), ds.grid, state[0].tsdf);
    save_tsdf_grid((out / "v_s1.grid").string(), ds.grid, state[1].tsdf);
    save_weight_grid((out / "w_s0.grid").string(), ds.grid, state[0].weight);
    save_weight_grid((out / "w_s1.grid").string(), ds.grid, state[1].weight);
    save_weight_grid((out / "w_filtered_s0.grid").string(), ds.grid, filtered.w1);
    save_weight_grid((out / "w_filtered_s1.grid").string(), ds.grid, filtered.w2);
    save_tsdf_grid((out / "baseline.grid").string(), ds.grid, baseline.tsdf);
    save_weight_grid((out / "w_baseline.grid").string(), ds.grid, baseline.weight);

    save_ply((out / "fused.ply").string(),
             marching_cubes(fused, weight_union_mask(filtered.w1, filtered.w2), ds.grid));
    save_ply((out / "sensor0.ply").string(),
             marching_cubes(state[0].tsdf, weight_valid_mask(state[0].weight), ds.grid));
    save_ply((out / "sensor1.ply").string(),
             marching_cubes(state[1].tsdf, weight_valid_mask(state[1].weight), ds.grid));
    save_ply((out / "baseline.ply").string(),
             marching_cubes(baseline.tsdf, weight_valid_mask(baseline.weight), ds.grid));

    json stats;
    stats["frames"] = stream.size();
    stats["c1_voxels"] = n_c1;
    stats["c2_voxels"] = n_c2;
    stats["c12_voxels"] = n_c12;
    stats["single_outliers_before_filter"] = out_before;
    stats["single_outliers_after_filter"] = out_after;
    stats["single_inliers_before_filter"] = in_before;
    stats["single_inliers_after_filter"] = in_after;
    write_text(out / "stats.json", stats.dump(2) + "\n");

    std::cout << "fused " << stream.size() << " frames at "
              << (1000.0 * double(stream.size()) / total_ms) << " fps (integration)\n";
}

std::map<std::string, MetricsReport> run_eval(const RunConfig& cfg, const std::string& fuse_dir,
                                              double tau, const std::string& single_grid,
                                              const std::string& single_mesh) {
    if (cfg.dataset_dir.empty())
        throw ConfigError("eval: dataset dir required");
    Dataset ds = load_dataset(cfg.dataset_dir);
    Field3<double> gt = ds.load_gt();
    Mesh gt_mesh = marching_cubes(gt, all_valid_mask(ds.grid.dims), ds.grid);

    std::map<std::string, MetricsReport> rows;
    const fs::path dir(fuse_dir);

    auto eval_one = [&](const std::string& name, const Field3<double>& v,
                        const Field3<uint8_t>& mask, const Mesh& mesh) {
        MetricsReport rep;
        auto gm = grid_metrics_masked(v, mask, gt);
        if (!gm)
            throw ConfigError("eval: no valid voxels for " + name);
        rep.grid = *gm;
        rep.mesh = mesh_fscore(mesh, gt_mesh, tau);
        rows[name] = rep;
    };

    if (!single_grid.empty()) {
        GridGeometry geom;
        Field3<double> v = load_tsdf_grid(single_grid, &geom);
        if (geom.dims != ds.grid.dims)
            throw ConfigError("eval: grid dims do not match the dataset");
        Mesh mesh = single_mesh.empty() ? marching_cubes(v, all_valid_mask(geom.dims), ds.grid)
                                        : load_ply(single_mesh);
        eval_one("grid", v, all_valid_mask(geom.dims), mesh);
    } else {
        Field3<double> v0 = load_tsdf_grid((dir / "v_s0.grid").string());
        Field3<double> v1 = load_tsdf_grid((dir / "v_s1.grid").string());
        Field3<uint32_t> w0 = load_weight_grid((dir / "w_s0.grid").string());
        Field3<uint32_t> w1 = load_weight_grid((dir / "w_s1.grid").string());
        Field3<double> fused = load_tsdf_grid((dir / "fused.grid").string());
        Field3<uint32_t> wf0 = load_weight_grid((dir / "w_filtered_s0.grid").string());
        Field3<uint32_t> wf1 = load_weight_grid((dir / "w_filtered_s1.grid").string());
        Field3<double> base = load_tsdf_grid((dir / "baseline.grid").string());
        Field3<uint32_t> wb = load_weight_grid((dir / "w_baseline.grid").string());

        eval_one("sensor1", v0, weight_valid_mask(w0), load_ply((dir / "sensor0.ply").string()));
        eval_one("sensor2", v1, weight_valid_mask(w1), load_ply((dir / "sensor1.ply").string()));
        eval_one("tsdf-baseline", base, weight_valid_mask(wb),
                 load_ply((dir / "baseline.ply").string()));
        eval_one("fused", fused, weight_union_mask(wf0, wf1),
                 load_ply((dir / "fused.ply").string()));
    }

    // table, one row per model
    std::printf("%-14s %10s %10s %7s %7s %7s %7s %7s\n", "model", "MSE", "MAD", "IoU", "Acc", "F",
                "P", "R");
    for (const auto& [name, rep] : rows)
        std::printf("%-14s %10.3e %10.4f %7.3f %7.3f %7.2f %7.2f %7.2f\n", name.c_str(),
                    rep.grid.mse, rep.grid.mad, rep.grid.iou, rep.grid.acc, rep.mesh.f,
                    rep.mesh.p, rep.mesh.r);

    if (!cfg.output_dir.empty()) {
        fs::create_directories(cfg.output_dir);
        json all;
        for (const auto& [name, rep] : rows) {
            rep.save((fs::path(cfg.output_dir) / ("metrics_" + name + ".json")).string());
            all[name] = {{"mad", rep.grid.mad}, {"mse", rep.grid.mse}, {"iou", rep.grid.iou},
                         {"acc", rep.grid.acc}, {"f", rep.mesh.f},     {"p", rep.mesh.p},
                         {"r", rep.mesh.r},     {"n_voxels", rep.grid.n}};
        }
        write_text(fs::path(cfg.output_dir) / "eval.json", all.dump(2) + "\n");
    }
    return rows;
}

} // namespace voxfuse
