#include "voxfuse/config.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <set>

namespace voxfuse {

using nlohmann::json;

void RunConfig::validate() const {
    grid.validate();
    intrinsics.validate();
    integration.validate();
    loss.validate();
    train.validate();
    if (sensors.size() != 2)
        throw ConfigError("config: exactly two sensors are required");
    for (const auto& s : sensors) s.validate();
    if (divisors.size() != 2 || divisors[0] < 1 || divisors[1] < 1)
        throw ConfigError("config: divisors must be two integers >= 1");
    if (schedule != "alternate" && schedule != "agent_chunks")
        throw ConfigError("config: schedule must be alternate or agent_chunks");
    if (feature_blocks < 1 || feature_hidden < 1 || window_side < 2)
        throw ConfigError("config: bad network knobs");
    if (poses < 1 || agent_chunk < 1)
        throw ConfigError("config: poses and agent_chunk must be >= 1");
}

namespace {

Scene tabletop_scene() {
    Scene s;
    Primitive floor;
    floor.kind = Primitive::Kind::plane;
    floor.center = Vec3(0, 0, 1); // unit normal; solid below z = 0
    floor.radius = 0.0;
    Primitive ball;
    ball.kind = Primitive::Kind::sphere;
    ball.center = Vec3(0.28, -0.10, 0.14); // sunk 2 cm into the floor
    ball.radius = 0.16;
    Primitive crate;
    crate.kind = Primitive::Kind::box;
    crate.center = Vec3(-0.28, 0.12, 0.09);
    crate.half = Vec3(0.16, 0.12, 0.11);
    Primitive pebble;
    pebble.kind = Primitive::Kind::sphere;
    pebble.center = Vec3(-0.05, -0.30, 0.07);
    pebble.radius = 0.09;
    s.primitives = {floor, ball, crate, pebble};
    return s;
}

SensorModel tof_preset() {
    SensorModel s;
    s.kind = SensorModel::Kind::tof_like;
    s.sigma_a = 0.0012;
    s.sigma_b = 0.0035;
    s.quant_step = 0.004;
    s.outlier_rate = 0.01;
    s.blob_magnitude = 0.45;
    s.blob_sigma = 0.02;
    s.blob_radius_px = 2;
    s.outlier_region = +1; // world x > 0
    s.region_threshold = 0.0;
    return s;
}

SensorModel stereo_preset() {
    SensorModel s;
    s.kind = SensorModel::Kind::stereo_like;
    s.sigma_a = 0.0028;
    s.sigma_b = 0.006;
    s.edge_gain = 3.0;
    s.grad_ref = 0.02;
    s.edge_min_factor = 0.15;
    s.outlier_rate = 0.01;
    s.blob_magnitude = 0.45;
    s.blob_sigma = 0.02;
    s.blob_radius_px = 2;
    s.outlier_region = -1; // world x < 0
    s.region_threshold = 0.0;
    return s;
}

} // namespace

RunConfig default_config(const std::string& preset) {
    RunConfig cfg;
    cfg.grid.origin = Vec3(-0.72, -0.72, -0.04);
    cfg.grid.voxel_size = 0.01;
    cfg.grid.dims = Index3(145, 145, 49);
    cfg.intrinsics.fx = cfg.intrinsics.fy = 212.0;
    cfg.intrinsics.cx = cfg.intrinsics.cy = 127.5;
    cfg.intrinsics.width = cfg.intrinsics.height = 256;
    cfg.scene = tabletop_scene();
    cfg.scene_preset = preset;

    if (preset == "tabletop") {
        cfg.sensors = {tof_preset(), stereo_preset()};
    } else if (preset == "tabletop_clean") {
        SensorModel a = tof_preset(), b = stereo_preset();
        a.sigma_a = a.sigma_b = 0.0;
        a.quant_step = 0.0;
        a.outlier_rate = 0.0;
        b.sigma_a = b.sigma_b = 0.0;
        b.outlier_rate = 0.0;
        cfg.sensors = {a, b};
    } else if (preset == "multi_agent") {
        SensorModel a = tof_preset();
        a.outlier_region = 0;
        a.outlier_rate = 0.005;
        cfg.sensors = {a, a};
        cfg.schedule = "agent_chunks";
        cfg.loss.lambda1 = 1.0 / 1200.0;
        cfg.loss.lambda2 = 1.0 / 12000.0;
    } else {
        throw ConfigError("unknown scene preset: " + preset);
    }
    return cfg;
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key))
            throw ConfigError("unknown config key: " + where + key);
}

Vec3 get_vec3(const json& j) {
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

void apply_sensor_json(SensorModel& s, const json& j, const std::string& where) {
    check_keys(j,
               {"kind", "sigma_a", "sigma_b", "quant_step", "edge_gain", "grad_ref",
                "edge_min_factor", "outlier_rate", "blob_magnitude", "blob_sigma",
                "blob_radius_px", "outlier_region", "region_threshold", "min_depth", "max_depth"},
               where);
    if (j.contains("kind")) {
        const std::string kind = j["kind"].get<std::string>();
        if (kind == "tof_like")
            s.kind = SensorModel::Kind::tof_like;
        else if (kind == "stereo_like")
            s.kind = SensorModel::Kind::stereo_like;
        else
            throw ConfigError("unknown sensor kind: " + kind);
    }
    if (j.contains("sigma_a")) s.sigma_a = j["sigma_a"].get<double>();
    if (j.contains("sigma_b")) s.sigma_b = j["sigma_b"].get<double>();
    if (j.contains("quant_step")) s.quant_step = j["quant_step"].get<double>();
    if (j.contains("edge_gain")) s.edge_gain = j["edge_gain"].get<double>();
    if (j.contains("grad_ref")) s.grad_ref = j["grad_ref"].get<double>();
    if (j.contains("edge_min_factor")) s.edge_min_factor = j["edge_min_factor"].get<double>();
    if (j.contains("outlier_rate")) s.outlier_rate = j["outlier_rate"].get<double>();
    if (j.contains("blob_magnitude")) s.blob_magnitude = j["blob_magnitude"].get<double>();
    if (j.contains("blob_sigma")) s.blob_sigma = j["blob_sigma"].get<double>();
    if (j.contains("blob_radius_px")) s.blob_radius_px = j["blob_radius_px"].get<int>();
    if (j.contains("outlier_region")) s.outlier_region = j["outlier_region"].get<int>();
    if (j.contains("region_threshold")) s.region_threshold = j["region_threshold"].get<double>();
    if (j.contains("min_depth")) s.min_depth = j["min_depth"].get<double>();
    if (j.contains("max_depth")) s.max_depth = j["max_depth"].get<double>();
}

} // namespace

void apply_config_json(RunConfig& cfg, const std::string& json_text, const std::string& origin) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError("cannot parse config " + origin + ": " + e.what());
    }
    check_keys(j,
               {"seed", "dataset", "output", "checkpoint", "scene_preset", "poses",
                "orbit_radius", "orbit_height", "orbit_radius2", "orbit_height2",
                "orbit_target", "grid", "intrinsics", "sensors",
                "schedule", "divisors", "agent_chunk", "network", "integration", "loss", "train",
                "baseline_only", "no_filter"},
               "");

    if (j.contains("scene_preset")) {
        // re-derive preset defaults first so later keys override them
        const std::string preset = j["scene_preset"].get<std::string>();
        RunConfig fresh = default_config(preset);
        fresh.seed = cfg.seed;
        fresh.dataset_dir = cfg.dataset_dir;
        fresh.output_dir = cfg.output_dir;
        fresh.checkpoint = cfg.checkpoint;
        cfg = fresh;
    }
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("dataset")) cfg.dataset_dir = j["dataset"].get<std::string>();
    if (j.contains("output")) cfg.output_dir = j["output"].get<std::string>();
    if (j.contains("checkpoint")) cfg.checkpoint = j["checkpoint"].get<std::string>();
    if (j.contains("poses")) cfg.poses = j["poses"].get<int>();
    if (j.contains("orbit_radius")) cfg.orbit_radius = j["orbit_radius"].get<double>();
    if (j.contains("orbit_height")) cfg.orbit_height = j["orbit_height"].get<double>();
    if (j.contains("orbit_radius2")) cfg.orbit_radius2 = j["orbit_radius2"].get<double>();
    if (j.contains("orbit_height2")) cfg.orbit_height2 = j["orbit_height2"].get<double>();
    if (j.contains("orbit_target")) cfg.orbit_target = get_vec3(j["orbit_target"]);
    if (j.contains("grid")) {
        const auto& g = j["grid"];
        check_keys(g, {"origin", "voxel_size", "dims"}, "grid.");
        if (g.contains("origin")) cfg.grid.origin = get_vec3(g["origin"]);
        if (g.contains("voxel_size")) cfg.grid.voxel_size = g["voxel_size"].get<double>();
        if (g.contains("dims"))
            cfg.grid.dims = Index3(g["dims"][0].get<int>(), g["dims"][1].get<int>(),
                                   g["dims"][2].get<int>());
    }
    if (j.contains("intrinsics")) {
        const auto& k = j["intrinsics"];
        check_keys(k, {"fx", "fy", "cx", "cy", "width", "height"}, "intrinsics.");
        if (k.contains("fx")) cfg.intrinsics.fx = k["fx"].get<double>();
        if (k.contains("fy")) cfg.intrinsics.fy = k["fy"].get<double>();
        if (k.contains("cx")) cfg.intrinsics.cx = k["cx"].get<double>();
        if (k.contains("cy")) cfg.intrinsics.cy = k["cy"].get<double>();
        if (k.contains("width")) cfg.intrinsics.width = k["width"].get<int>();
        if (k.contains("height")) cfg.intrinsics.height = k["height"].get<int>();
    }
    if (j.contains("sensors")) {
        const auto& arr = j["sensors"];
        if (!arr.is_array() || arr.size() != 2)
            throw ConfigError("config: sensors must be an array of two objects");
        for (size_t i = 0; i < 2; ++i)
            apply_sensor_json(cfg.sensors[i], arr[i], "sensors[" + std::to_string(i) + "].");
    }
    if (j.contains("schedule")) cfg.schedule = j["schedule"].get<std::string>();
    if (j.contains("divisors")) cfg.divisors = j["divisors"].get<std::vector<int>>();
    if (j.contains("agent_chunk")) cfg.agent_chunk = j["agent_chunk"].get<int>();
    if (j.contains("network")) {
        const auto& n = j["network"];
        check_keys(n, {"blocks", "hidden", "window"}, "network.");
        if (n.contains("blocks")) cfg.feature_blocks = n["blocks"].get<int>();
        if (n.contains("hidden")) cfg.feature_hidden = n["hidden"].get<int>();
        if (n.contains("window")) cfg.window_side = n["window"].get<int>();
    }
    if (j.contains("integration")) {
        const auto& n = j["integration"];
        check_keys(n, {"samples_per_ray", "band", "omega_max", "border_mask", "min_depth",
                       "max_depth"},
                   "integration.");
        if (n.contains("samples_per_ray"))
            cfg.integration.samples_per_ray = n["samples_per_ray"].get<int>();
        if (n.contains("band")) cfg.integration.band = n["band"].get<double>();
        if (n.contains("omega_max")) cfg.integration.omega_max = n["omega_max"].get<uint32_t>();
        if (n.contains("border_mask")) cfg.integration.border_mask = n["border_mask"].get<int>();
        if (n.contains("min_depth")) cfg.integration.min_depth = n["min_depth"].get<double>();
        if (n.contains("max_depth")) cfg.integration.max_depth = n["max_depth"].get<double>();
    }
    if (j.contains("loss")) {
        const auto& n = j["loss"];
        check_keys(n, {"lambda1", "lambda2", "eta"}, "loss.");
        if (n.contains("lambda1")) cfg.loss.lambda1 = n["lambda1"].get<double>();
        if (n.contains("lambda2")) cfg.loss.lambda2 = n["lambda2"].get<double>();
        if (n.contains("eta")) cfg.loss.eta = n["eta"].get<double>();
    }
    if (j.contains("train")) {
        const auto& n = j["train"];
        check_keys(n,
                   {"lr", "accumulation", "reset_prob", "chunk_side", "min_update_indices",
                    "max_attempts", "beta1", "beta2", "eps", "epochs", "shuffle",
                    "checkpoint_every"},
                   "train.");
        if (n.contains("lr")) cfg.train.lr = n["lr"].get<double>();
        if (n.contains("accumulation")) cfg.train.accumulation = n["accumulation"].get<int>();
        if (n.contains("reset_prob")) cfg.train.reset_prob = n["reset_prob"].get<double>();
        if (n.contains("chunk_side")) cfg.train.chunk_side = n["chunk_side"].get<int>();
        if (n.contains("min_update_indices"))
            cfg.train.min_update_indices = n["min_update_indices"].get<int>();
        if (n.contains("max_attempts")) cfg.train.max_attempts = n["max_attempts"].get<int>();
        if (n.contains("beta1")) cfg.train.beta1 = n["beta1"].get<double>();
        if (n.contains("beta2")) cfg.train.beta2 = n["beta2"].get<double>();
        if (n.contains("eps")) cfg.train.eps = n["eps"].get<double>();
        if (n.contains("epochs")) cfg.train.epochs = n["epochs"].get<int>();
        if (n.contains("shuffle")) cfg.train.shuffle = n["shuffle"].get<bool>();
        if (n.contains("checkpoint_every"))
            cfg.train.checkpoint_every = n["checkpoint_every"].get<int>();
    }
    if (j.contains("baseline_only")) cfg.baseline_only = j["baseline_only"].get<bool>();
    if (j.contains("no_filter")) cfg.no_filter = j["no_filter"].get<bool>();
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw ConfigError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    RunConfig cfg = default_config();
    apply_config_json(cfg, text, path);
    cfg.validate();
    return cfg;
}

std::string config_to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["dataset"] = cfg.dataset_dir;
    j["output"] = cfg.output_dir;
    j["checkpoint"] = cfg.checkpoint;
    j["scene_preset"] = cfg.scene_preset;
    j["poses"] = cfg.poses;
    j["orbit_radius"] = cfg.orbit_radius;
    j["orbit_height"] = cfg.orbit_height;
    j["orbit_radius2"] = cfg.orbit_radius2;
    j["orbit_height2"] = cfg.orbit_height2;
    j["orbit_target"] = {cfg.orbit_target.x(), cfg.orbit_target.y(), cfg.orbit_target.z()};
    j["grid"] = {{"origin", {cfg.grid.origin.x(), cfg.grid.origin.y(), cfg.grid.origin.z()}},
                 {"voxel_size", cfg.grid.voxel_size},
                 {"dims", {cfg.grid.dims.x(), cfg.grid.dims.y(), cfg.grid.dims.z()}}};
    j["intrinsics"] = {{"fx", cfg.intrinsics.fx},       {"fy", cfg.intrinsics.fy},
                       {"cx", cfg.intrinsics.cx},       {"cy", cfg.intrinsics.cy},
                       {"width", cfg.intrinsics.width}, {"height", cfg.intrinsics.height}};
    j["schedule"] = cfg.schedule;
    j["divisors"] = cfg.divisors;
    j["agent_chunk"] = cfg.agent_chunk;
    j["network"] = {{"blocks", cfg.feature_blocks},
                    {"hidden", cfg.feature_hidden},
                    {"window", cfg.window_side}};
    j["integration"] = {{"samples_per_ray", cfg.integration.samples_per_ray},
                        {"band", cfg.integration.band},
                        {"omega_max", cfg.integration.omega_max},
                        {"border_mask", cfg.integration.border_mask},
                        {"min_depth", cfg.integration.min_depth},
                        {"max_depth", cfg.integration.max_depth}};
    j["loss"] = {{"lambda1", cfg.loss.lambda1},
                 {"lambda2", cfg.loss.lambda2},
                 {"eta", cfg.loss.eta}};
    j["train"] = {{"lr", cfg.train.lr},
                  {"accumulation", cfg.train.accumulation},
                  {"reset_prob", cfg.train.reset_prob},
                  {"chunk_side", cfg.train.chunk_side},
                  {"min_update_indices", cfg.train.min_update_indices},
                  {"max_attempts", cfg.train.max_attempts},
                  {"beta1", cfg.train.beta1},
                  {"beta2", cfg.train.beta2},
                  {"eps", cfg.train.eps},
                  {"epochs", cfg.train.epochs},
                  {"shuffle", cfg.train.shuffle},
                  {"checkpoint_every", cfg.train.checkpoint_every}};
    j["baseline_only"] = cfg.baseline_only;
    j["no_filter"] = cfg.no_filter;
    return j.dump(2);
}

std::vector<FrameRef> build_stream(size_t n_poses, const std::string& schedule,
                                   const std::vector<int>& divisors, int agent_chunk) {
    std::vector<FrameRef> stream;
    auto stem_of = [](int sensor, int pose) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "frames/s%d_p%06d", sensor, pose);
        return std::string(buf);
    };
    if (schedule == "alternate") {
        for (size_t p = 0; p < n_poses; ++p)
            for (int s = 0; s < 2; ++s)
                if (p % size_t(divisors[size_t(s)]) == 0)
                    stream.push_back({s, int(p), stem_of(s, int(p))});
    } else if (schedule == "agent_chunks") {
        // consecutive pose blocks assigned to alternating agents, streams
        // interleaved frame by frame
        std::vector<int> agent_poses[2];
        for (size_t p = 0; p < n_poses; ++p) agent_poses[(p / size_t(agent_chunk)) % 2].push_back(int(p));
        const size_t n = std::max(agent_poses[0].size(), agent_poses[1].size());
        for (size_t i = 0; i < n; ++i)
            for (int a = 0; a < 2; ++a)
                if (i < agent_poses[a].size())
                    stream.push_back({a, agent_poses[a][i], stem_of(a, agent_poses[a][i])});
    } else {
        throw ConfigError("unknown schedule: " + schedule);
    }
    return stream;
}

std::vector<FrameRef> shuffle_stream(const std::vector<FrameRef>& stream, uint64_t seed,
                                     int epoch) {
    // permute each sensor's pose sequence, keep the slot pattern
    std::vector<FrameRef> out = stream;
    for (int s = 0; s < 2; ++s) {
        std::vector<size_t> slots;
        for (size_t i = 0; i < stream.size(); ++i)
            if (stream[i].sensor == s) slots.push_back(i);
        Rng rng(derive_seed(seed, 0x5f5f + uint64_t(epoch), uint64_t(s)));
        std::vector<size_t> perm(slots.size());
        for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        for (size_t i = perm.size(); i > 1; --i)
            std::swap(perm[i - 1], perm[size_t(rng.uniform_int(0, int64_t(i) - 1))]);
        for (size_t i = 0; i < slots.size(); ++i) out[slots[i]] = stream[slots[perm[i]]];
    }
    return out;
}

} // namespace voxfuse
