#include "voxfuse/sim.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace voxfuse {

namespace fs = std::filesystem;
using nlohmann::json;

double Primitive::sdf(const Vec3& p) const {
    switch (kind) {
    case Kind::sphere:
        return (p - center).norm() - radius;
    case Kind::box: {
        Vec3 q = (p - center).cwiseAbs() - half;
        Vec3 qpos = q.cwiseMax(0.0);
        return qpos.norm() + std::min(q.maxCoeff(), 0.0);
    }
    case Kind::plane:
        return center.dot(p) - radius; // center = unit normal, radius = offset
    case Kind::room: {
        Vec3 q = (p - center).cwiseAbs() - half;
        Vec3 qpos = q.cwiseMax(0.0);
        return -(qpos.norm() + std::min(q.maxCoeff(), 0.0));
    }
    }
    return 0.0;
}

double Scene::sdf(const Vec3& p) const {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& prim : primitives) d = std::min(d, prim.sdf(p));
    return d;
}

double scene_sdf(const Scene& scene, const Vec3& p) { return scene.sdf(p); }

void SensorModel::validate() const {
    if (sigma_a < 0 || sigma_b < 0)
        throw SimError("sensor: sigma coefficients must be nonnegative");
    if (outlier_rate < 0 || outlier_rate > 1)
        throw SimError("sensor: outlier_rate must be in [0,1]");
    if (quant_step < 0)
        throw SimError("sensor: quant_step must be nonnegative");
    if (!(max_depth > min_depth) || min_depth < 0)
        throw SimError("sensor: bad validity range");
}

Trajectory orbit_trajectory(int n_poses, double radius, double height, const Vec3& target,
                            double fps, double radius2, double height2) {
    if (n_poses < 1)
        throw SimError("trajectory needs at least one pose");
    Trajectory traj;
    traj.sensor_divisors = {1, 1};
    for (int i = 0; i < n_poses; ++i) {
        const double angle = 2.0 * M_PI * i / n_poses;
        const bool second = radius2 > 0.0 && (i % 2 == 1);
        const double r = second ? radius2 : radius;
        const double h = second ? height2 : height;
        Vec3 pos(target.x() + r * std::cos(angle), target.y() + r * std::sin(angle), h);
        Vec3 fwd = (target - pos).normalized();
        Vec3 right = fwd.cross(Vec3(0, 0, 1));
        if (right.norm() < 1e-9) right = Vec3(1, 0, 0);
        right.normalize();
        Vec3 down = fwd.cross(right).normalized();
        // columns: x right, y down (image v grows downward), z forward
        Pose pose;
        pose.rotation.col(0) = right;
        pose.rotation.col(1) = down;
        pose.rotation.col(2) = fwd;
        pose.translation = pos;
        pose.validate();
        traj.poses.push_back(pose);
        traj.timestamps.push_back(double(i) / fps);
    }
    return traj;
}

std::vector<float> render_depth(const Scene& scene, const Intrinsics& K, const Pose& pose,
                                double t_max) {
    K.validate();
    pose.validate();
    std::vector<float> depth(size_t(K.width) * K.height, 0.f);
    const Vec3 cam = pose.camera_center();

#pragma omp parallel for schedule(static)
    for (int v = 0; v < K.height; ++v) {
        for (int u = 0; u < K.width; ++u) {
            Vec3 dir_cam((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
            dir_cam.normalize();
            const Vec3 dir = pose.rotation * dir_cam;
            double t = 0.0;
            bool hit = false;
            for (int step = 0; step < 512; ++step) {
                const double d = scene.sdf(cam + t * dir);
                if (d < 1e-5) {
                    hit = true;
                    break;
                }
                t += d;
                if (t > t_max) break;
            }
            if (hit) {
                // two refinement steps tighten the hit to well below 1e-5
                t += scene.sdf(cam + t * dir);
                t += scene.sdf(cam + t * dir);
                depth[size_t(v) * K.width + u] = float(t * dir_cam.z());
            }
        }
    }
    return depth;
}

namespace {

int disc_area(int r) {
    int n = 0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            if (dx * dx + dy * dy <= r * r) ++n;
    return n;
}

// |grad D| in meters/pixel from central differences; misses count like
// strong discontinuities
std::vector<double> depth_gradient(const std::vector<float>& d, int W, int H) {
    std::vector<double> g(d.size(), 0.0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double c = d[size_t(y) * W + x];
            const double xm = x > 0 ? d[size_t(y) * W + x - 1] : c;
            const double xp = x + 1 < W ? d[size_t(y) * W + x + 1] : c;
            const double ym = y > 0 ? d[size_t(y - 1) * W + x] : c;
            const double yp = y + 1 < H ? d[size_t(y + 1) * W + x] : c;
            const double gx = 0.5 * (xp - xm), gy = 0.5 * (yp - ym);
            g[size_t(y) * W + x] = std::sqrt(gx * gx + gy * gy);
        }
    return g;
}

} // namespace

DepthFrame apply_sensor(const std::vector<float>& clean, const Intrinsics& K, const Pose& pose,
                        int sensor_id, double timestamp, const SensorModel& model, Rng& rng) {
    model.validate();
    if (clean.size() != size_t(K.width) * K.height)
        throw SimError("apply_sensor: raster size mismatch");

    DepthFrame frame;
    frame.intrinsics = K;
    frame.pose = pose;
    frame.sensor_id = sensor_id;
    frame.timestamp = timestamp;
    frame.depth = clean;

    const int W = K.width, H = K.height;
    const std::vector<double> grad =
        model.kind == SensorModel::Kind::stereo_like ? depth_gradient(clean, W, H)
                                                     : std::vector<double>();

    // measurement noise, then quantization
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const size_t i = size_t(y) * W + x;
            const double z = clean[i];
            const double n = rng.normal(); // one draw per pixel keeps the stream aligned
            if (!(z > 0)) continue;
            double sigma = model.sigma_a + model.sigma_b * z * z;
            if (model.kind == SensorModel::Kind::stereo_like) {
                double factor = model.edge_gain / (1.0 + grad[i] / model.grad_ref);
                factor = std::clamp(factor, model.edge_min_factor, model.edge_gain);
                sigma *= factor;
            }
            double d = z + sigma * n;
            if (model.kind == SensorModel::Kind::tof_like && model.quant_step > 0)
                d = std::round(d / model.quant_step) * model.quant_step;
            frame.depth[i] = float(d);
        }

    // outlier blobs, gated to the sensor's world-space outlier region
    if (model.outlier_rate > 0) {
        const int r = model.blob_radius_px;
        std::vector<size_t> seeds;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const size_t i = size_t(y) * W + x;
                const double u = rng.uniform();
                if (u >= model.outlier_rate) continue;
                if (!(clean[i] > 0)) continue;
                if (model.outlier_region != 0) {
                    const Vec3 p = unproject_pixel(x, y, clean[i], K, pose);
                    if (model.outlier_region > 0 && !(p.x() > model.region_threshold)) continue;
                    if (model.outlier_region < 0 && !(p.x() < model.region_threshold)) continue;
                }
                seeds.push_back(i);
            }
        for (size_t s : seeds) {
            const int sy = int(s) / W, sx = int(s) % W;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    if (dx * dx + dy * dy > r * r) continue;
                    const int x = sx + dx, y = sy + dy;
                    if (x < 0 || x >= W || y < 0 || y >= H) continue;
                    const size_t i = size_t(y) * W + x;
                    if (!(frame.depth[i] > 0)) continue;
                    const double jitter =
                        std::clamp(rng.normal() * model.blob_sigma, -3.0 * model.blob_sigma,
                                   3.0 * model.blob_sigma);
                    frame.depth[i] = float(frame.depth[i] + model.blob_magnitude + jitter);
                }
        }
    }

    // validity clipping
    for (auto& d : frame.depth)
        if (!(d >= model.min_depth && d <= model.max_depth)) d = 0.f;
    return frame;
}

Field3<double> make_gt_grid(const Scene& scene, const GridGeometry& geom, double band) {
    geom.validate();
    const double half = 0.5 * band;
    Field3<double> gt(geom.dims);
#pragma omp parallel for schedule(static)
    for (int z = 0; z < geom.dims.z(); ++z)
        for (int y = 0; y < geom.dims.y(); ++y)
            for (int x = 0; x < geom.dims.x(); ++x)
                gt.at(x, y, z) =
                    std::clamp(scene.sdf(geom.voxel_center({x, y, z})), -half, half);
    return gt;
}

// ---- manifest serialization ----

namespace {

json primitive_to_json(const Primitive& p) {
    json j;
    switch (p.kind) {
    case Primitive::Kind::sphere:
        j["kind"] = "sphere";
        j["center"] = {p.center.x(), p.center.y(), p.center.z()};
        j["radius"] = p.radius;
        break;
    case Primitive::Kind::box:
        j["kind"] = "box";
        j["center"] = {p.center.x(), p.center.y(), p.center.z()};
        j["half"] = {p.half.x(), p.half.y(), p.half.z()};
        break;
    case Primitive::Kind::plane:
        j["kind"] = "plane";
        j["normal"] = {p.center.x(), p.center.y(), p.center.z()};
        j["offset"] = p.radius;
        break;
    case Primitive::Kind::room:
        j["kind"] = "room";
        j["center"] = {p.center.x(), p.center.y(), p.center.z()};
        j["half"] = {p.half.x(), p.half.y(), p.half.z()};
        break;
    }
    return j;
}

Primitive primitive_from_json(const json& j) {
    Primitive p;
    const std::string kind = j.at("kind").get<std::string>();
    auto vec = [&](const char* key) {
        return Vec3(j.at(key)[0].get<double>(), j.at(key)[1].get<double>(),
                    j.at(key)[2].get<double>());
    };
    if (kind == "sphere") {
        p.kind = Primitive::Kind::sphere;
        p.center = vec("center");
        p.radius = j.at("radius").get<double>();
    } else if (kind == "box") {
        p.kind = Primitive::Kind::box;
        p.center = vec("center");
        p.half = vec("half");
    } else if (kind == "plane") {
        p.kind = Primitive::Kind::plane;
        p.center = vec("normal");
        p.radius = j.at("offset").get<double>();
    } else if (kind == "room") {
        p.kind = Primitive::Kind::room;
        p.center = vec("center");
        p.half = vec("half");
    } else {
        throw SimError("unknown primitive kind: " + kind);
    }
    return p;
}

json sensor_to_json(const SensorModel& s) {
    json j;
    j["kind"] = s.kind == SensorModel::Kind::tof_like ? "tof_like" : "stereo_like";
    j["sigma_a"] = s.sigma_a;
    j["sigma_b"] = s.sigma_b;
    j["quant_step"] = s.quant_step;
    j["edge_gain"] = s.edge_gain;
    j["grad_ref"] = s.grad_ref;
    j["edge_min_factor"] = s.edge_min_factor;
    j["outlier_rate"] = s.outlier_rate;
    j["blob_magnitude"] = s.blob_magnitude;
    j["blob_sigma"] = s.blob_sigma;
    j["blob_radius_px"] = s.blob_radius_px;
    j["outlier_region"] = s.outlier_region;
    j["region_threshold"] = s.region_threshold;
    j["min_depth"] = s.min_depth;
    j["max_depth"] = s.max_depth;
    return j;
}

SensorModel sensor_from_json(const json& j) {
    SensorModel s;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "tof_like")
        s.kind = SensorModel::Kind::tof_like;
    else if (kind == "stereo_like")
        s.kind = SensorModel::Kind::stereo_like;
    else
        throw SimError("unknown sensor kind: " + kind);
    s.sigma_a = j.at("sigma_a").get<double>();
    s.sigma_b = j.at("sigma_b").get<double>();
    s.quant_step = j.value("quant_step", 0.0);
    s.edge_gain = j.value("edge_gain", 1.0);
    s.grad_ref = j.value("grad_ref", 0.02);
    s.edge_min_factor = j.value("edge_min_factor", 0.15);
    s.outlier_rate = j.value("outlier_rate", 0.0);
    s.blob_magnitude = j.value("blob_magnitude", 0.45);
    s.blob_sigma = j.value("blob_sigma", 0.02);
    s.blob_radius_px = j.value("blob_radius_px", 2);
    s.outlier_region = j.value("outlier_region", 0);
    s.region_threshold = j.value("region_threshold", 0.0);
    s.min_depth = j.value("min_depth", 0.5);
    s.max_depth = j.value("max_depth", 3.0);
    s.validate();
    return s;
}

} // namespace

DepthFrame Dataset::load_frame(const FrameRef& ref) const {
    return load_depth_frame((fs::path(dir) / ref.stem).string());
}

Field3<double> Dataset::load_gt() const {
    return load_tsdf_grid((fs::path(dir) / gt_grid_file).string());
}

Dataset generate_dataset(const std::string& dir, const Scene& scene, const GridGeometry& grid,
                         const Intrinsics& K, const Trajectory& traj,
                         const std::vector<SensorModel>& sensors, double band, uint64_t seed) {
    if (sensors.size() != 2)
        throw SimError("datasets carry exactly two sensors");
    grid.validate();
    K.validate();

    fs::create_directories(fs::path(dir) / "frames");

    Dataset ds;
    ds.dir = dir;
    ds.grid = grid;
    ds.scene = scene;
    ds.sensors = sensors;
    ds.intrinsics = K;
    ds.trajectory = traj;
    ds.seed = seed;

    for (size_t p = 0; p < traj.poses.size(); ++p) {
        const std::vector<float> clean = render_depth(scene, K, traj.poses[p]);
        for (int s = 0; s < 2; ++s) {
            // substream: splitmix64 over (seed, pose index, sensor id)
            Rng rng(derive_seed(seed, p, uint64_t(s) + 1));
            DepthFrame frame = apply_sensor(clean, K, traj.poses[p], s, traj.timestamps[p],
                                            sensors[size_t(s)], rng);
            char stem[64];
            std::snprintf(stem, sizeof stem, "frames/s%d_p%06zu", s, p);
            save_depth_frame((fs::path(dir) / stem).string(), frame);
            ds.frames.push_back({s, int(p), stem});
        }
    }

    Field3<double> gt = make_gt_grid(scene, grid, band);
    save_tsdf_grid((fs::path(dir) / ds.gt_grid_file).string(), grid, gt);

    json manifest;
    manifest["format"] = "voxfuse-dataset-v1";
    manifest["seed"] = seed;
    manifest["band"] = band;
    manifest["grid"] = {{"origin", {grid.origin.x(), grid.origin.y(), grid.origin.z()}},
                        {"voxel_size", grid.voxel_size},
                        {"dims", {grid.dims.x(), grid.dims.y(), grid.dims.z()}}};
    json prims = json::array();
    for (const auto& p : scene.primitives) prims.push_back(primitive_to_json(p));
    manifest["scene"] = {{"primitives", prims}};
    manifest["sensors"] = {sensor_to_json(sensors[0]), sensor_to_json(sensors[1])};
    manifest["intrinsics"] = {{"fx", K.fx}, {"fy", K.fy},     {"cx", K.cx},
                              {"cy", K.cy}, {"width", K.width}, {"height", K.height}};
    json poses = json::array();
    for (size_t p = 0; p < traj.poses.size(); ++p) {
        json row = json::array();
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) row.push_back(traj.poses[p].rotation(r, c));
            row.push_back(traj.poses[p].translation[r]);
        }
        poses.push_back({{"pose", row}, {"timestamp", traj.timestamps[p]}});
    }
    manifest["trajectory"] = poses;
    manifest["sensor_divisors"] = traj.sensor_divisors;
    json frames = json::array();
    for (const auto& f : ds.frames)
        frames.push_back({{"sensor", f.sensor}, {"pose", f.pose_index}, {"stem", f.stem}});
    manifest["frames"] = frames;
    manifest["gt_grid"] = ds.gt_grid_file;

    std::ofstream mf(fs::path(dir) / "scene.json");
    if (!mf)
        throw SimError("cannot write dataset manifest in " + dir);
    mf << manifest.dump(2) << "\n";
    return ds;
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "scene.json");
    if (!mf)
        throw SimError("cannot open dataset manifest in " + dir);
    json manifest = json::parse(mf);
    if (manifest.value("format", "") != "voxfuse-dataset-v1")
        throw SimError("unknown dataset format in " + dir);

    Dataset ds;
    ds.dir = dir;
    ds.seed = manifest.at("seed").get<uint64_t>();
    const auto& g = manifest.at("grid");
    ds.grid.origin = Vec3(g.at("origin")[0].get<double>(), g.at("origin")[1].get<double>(),
                          g.at("origin")[2].get<double>());
    ds.grid.voxel_size = g.at("voxel_size").get<double>();
    ds.grid.dims = Index3(g.at("dims")[0].get<int>(), g.at("dims")[1].get<int>(),
                          g.at("dims")[2].get<int>());
    ds.grid.validate();
    for (const auto& p : manifest.at("scene").at("primitives"))
        ds.scene.primitives.push_back(primitive_from_json(p));
    for (const auto& s : manifest.at("sensors")) ds.sensors.push_back(sensor_from_json(s));
    const auto& K = manifest.at("intrinsics");
    ds.intrinsics.fx = K.at("fx").get<double>();
    ds.intrinsics.fy = K.at("fy").get<double>();
    ds.intrinsics.cx = K.at("cx").get<double>();
    ds.intrinsics.cy = K.at("cy").get<double>();
    ds.intrinsics.width = K.at("width").get<int>();
    ds.intrinsics.height = K.at("height").get<int>();
    for (const auto& p : manifest.at("trajectory")) {
        Pose pose;
        const auto& row = p.at("pose");
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) pose.rotation(r, c) = row[size_t(r * 4 + c)].get<double>();
            pose.translation[r] = row[size_t(r * 4 + 3)].get<double>();
        }
        ds.trajectory.poses.push_back(pose);
        ds.trajectory.timestamps.push_back(p.at("timestamp").get<double>());
    }
    ds.trajectory.sensor_divisors = manifest.at("sensor_divisors").get<std::vector<int>>();
    for (const auto& f : manifest.at("frames"))
        ds.frames.push_back({f.at("sensor").get<int>(), f.at("pose").get<int>(),
                             f.at("stem").get<std::string>()});
    ds.gt_grid_file = manifest.at("gt_grid").get<std::string>();
    return ds;
}

} // namespace voxfuse
