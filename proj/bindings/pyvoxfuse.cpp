#include "voxfuse/runner.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace voxfuse;

namespace {

Field3<double> field_from_array(const py::array_t<double, py::array::c_style>& a) {
    if (a.ndim() != 3)
        throw std::invalid_argument("expected a 3d array (z, y, x)");
    Field3<double> f(Index3(int(a.shape(2)), int(a.shape(1)), int(a.shape(0))));
    std::copy(a.data(), a.data() + a.size(), f.data.begin());
    return f;
}

Field3<uint32_t> weights_from_array(const py::array_t<uint32_t, py::array::c_style>& a) {
    if (a.ndim() != 3)
        throw std::invalid_argument("expected a 3d array (z, y, x)");
    Field3<uint32_t> f(Index3(int(a.shape(2)), int(a.shape(1)), int(a.shape(0))));
    std::copy(a.data(), a.data() + a.size(), f.data.begin());
    return f;
}

template <typename T>
py::array_t<T> field_to_array(const Field3<T>& f) {
    py::array_t<T> a({f.dims.z(), f.dims.y(), f.dims.x()});
    std::copy(f.data.begin(), f.data.end(), a.mutable_data());
    return a;
}

// Per-sensor online state plus the trained stack, driven frame by frame.
class OnlineFusion {
public:
    OnlineFusion(const GridGeometry& geom, const IntegrationConfig& cfg, int blocks, int hidden,
                 uint64_t seed)
        : geom_(geom), cfg_(cfg), nets_(blocks, hidden, seed),
          state_{SensorShapeState(geom.dims), SensorShapeState(geom.dims)},
          features_{FeatureGrid(geom.dims, nets_.feature_channels),
                    FeatureGrid(geom.dims, nets_.feature_channels)} {
        geom_.validate();
        cfg_.validate();
    }

    void load_checkpoint(const std::string& path) {
        nn::load_checkpoint(path, nets_.parameters());
    }

    size_t integrate(const DepthFrame& frame) {
        nn::NoGradGuard guard;
        const int s = frame.sensor_id;
        if (s < 0 || s > 1)
            throw std::invalid_argument("sensor_id must be 0 or 1");
        UpdateBatch batch = integrate_shape(state_[s], geom_, frame, cfg_);
        std::vector<double> raster(frame.depth.begin(), frame.depth.end());
        nn::Tensor input = nn::Tensor::constant(
            {1, frame.intrinsics.height, frame.intrinsics.width}, std::move(raster));
        nn::Tensor feats = nets_.feature[s].forward(input);
        integrate_features_planar(features_[s], batch, feats.values().data(),
                                  int64_t(frame.intrinsics.width) * frame.intrinsics.height,
                                  nets_.feature_channels);
        return batch.groups.size();
    }

    py::dict fuse_now(int window, bool filter) {
        auto bbox = observed_bbox({&state_[0], &state_[1]});
        if (!bbox)
            throw std::runtime_error("nothing observed yet");
        Field3<double> alpha_box = nn::sliding_window_alpha(
            nets_.weighting, features_[0], state_[0].weight, features_[1], state_[1].weight,
            *bbox, window);
        Field3<double> alpha(geom_.dims, 0.5);
        for (int z = bbox->min.z(); z <= bbox->max.z(); ++z)
            for (int y = bbox->min.y(); y <= bbox->max.y(); ++y)
                for (int x = bbox->min.x(); x <= bbox->max.x(); ++x)
                    alpha.at(x, y, z) = alpha_box.at(x - bbox->min.x(), y - bbox->min.y(),
                                                     z - bbox->min.z());
        VoxelSetMask mask = classify_voxels(state_[0].weight, state_[1].weight);
        Field3<double> fused = fuse(state_[0].tsdf, state_[1].tsdf, alpha, mask);
        FilteredWeights fw = filter ? outlier_filter(mask, alpha, state_[0].weight,
                                                     state_[1].weight)
                                    : FilteredWeights{state_[0].weight, state_[1].weight};
        py::dict out;
        out["tsdf"] = field_to_array(fused);
        out["alpha"] = field_to_array(alpha);
        out["weight1"] = field_to_array(fw.w1);
        out["weight2"] = field_to_array(fw.w2);
        return out;
    }

    py::array_t<double> sensor_tsdf(int s) { return field_to_array(state_[s].tsdf); }
    py::array_t<uint32_t> sensor_weight(int s) { return field_to_array(state_[s].weight); }
    int64_t parameter_count() const { return nets_.parameter_count(); }

private:
    GridGeometry geom_;
    IntegrationConfig cfg_;
    nn::NetworkStack nets_;
    SensorShapeState state_[2];
    FeatureGrid features_[2];
};

} // namespace

PYBIND11_MODULE(pyvoxfuse, m) {
    m.doc() = "online two-sensor TSDF fusion with a learned voxel weighting";

    py::class_<Intrinsics>(m, "Intrinsics")
        .def(py::init([](double fx, double fy, double cx, double cy, int width, int height) {
                 Intrinsics k{fx, fy, cx, cy, width, height};
                 k.validate();
                 return k;
             }),
             py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"), py::arg("width"),
             py::arg("height"))
        .def_readonly("fx", &Intrinsics::fx)
        .def_readonly("fy", &Intrinsics::fy)
        .def_readonly("width", &Intrinsics::width)
        .def_readonly("height", &Intrinsics::height);

    py::class_<Pose>(m, "Pose")
        .def(py::init([](const Eigen::Matrix3d& rotation, const Vec3& translation) {
                 Pose p{rotation, translation};
                 p.validate();
                 return p;
             }),
             py::arg("rotation"), py::arg("translation"))
        .def_property_readonly("rotation", [](const Pose& p) { return p.rotation; })
        .def_property_readonly("translation", [](const Pose& p) { return p.translation; });

    py::class_<GridGeometry>(m, "GridGeometry")
        .def(py::init([](const Vec3& origin, double voxel_size, const Index3& dims) {
                 GridGeometry g{origin, voxel_size, dims};
                 g.validate();
                 return g;
             }),
             py::arg("origin"), py::arg("voxel_size"), py::arg("dims"))
        .def_property_readonly("dims", [](const GridGeometry& g) { return g.dims; })
        .def_readonly("voxel_size", &GridGeometry::voxel_size);

    py::class_<IntegrationConfig>(m, "IntegrationConfig")
        .def(py::init<>())
        .def_readwrite("samples_per_ray", &IntegrationConfig::samples_per_ray)
        .def_readwrite("band", &IntegrationConfig::band)
        .def_readwrite("omega_max", &IntegrationConfig::omega_max)
        .def_readwrite("border_mask", &IntegrationConfig::border_mask)
        .def_readwrite("min_depth", &IntegrationConfig::min_depth)
        .def_readwrite("max_depth", &IntegrationConfig::max_depth);

    py::class_<DepthFrame>(m, "DepthFrame")
        .def(py::init([](const Intrinsics& K, const Pose& pose, int sensor_id, double timestamp,
                         py::array_t<float, py::array::c_style> depth) {
                 DepthFrame f;
                 f.intrinsics = K;
                 f.pose = pose;
                 f.sensor_id = sensor_id;
                 f.timestamp = timestamp;
                 f.depth.assign(depth.data(), depth.data() + depth.size());
                 f.validate();
                 return f;
             }),
             py::arg("intrinsics"), py::arg("pose"), py::arg("sensor_id"), py::arg("timestamp"),
             py::arg("depth"))
        .def_readonly("sensor_id", &DepthFrame::sensor_id)
        .def_property_readonly("depth", [](const DepthFrame& f) {
            py::array_t<float> a({f.intrinsics.height, f.intrinsics.width});
            std::copy(f.depth.begin(), f.depth.end(), a.mutable_data());
            return a;
        });

    m.def("unproject_pixel", &unproject_pixel, py::arg("u"), py::arg("v"), py::arg("depth"),
          py::arg("intrinsics"), py::arg("pose"));
    m.def(
        "project_point",
        [](const Vec3& x, const Intrinsics& K, const Pose& p) {
            PixelDepth r = project_point(x, K, p);
            return py::make_tuple(r.u, r.v, r.depth);
        },
        py::arg("point"), py::arg("intrinsics"), py::arg("pose"));
    m.def(
        "sample_ray_band",
        [](const Vec3& x, const Vec3& cam, int samples, double band) {
            RayBand b = sample_ray_band(x, cam, samples, band);
            py::array_t<double> pts({int(b.samples.size()), 3});
            for (size_t i = 0; i < b.samples.size(); ++i)
                for (int c = 0; c < 3; ++c) pts.mutable_at(int(i), c) = b.samples[i][c];
            py::array_t<double> targets(int(b.tsdf_targets.size()));
            std::copy(b.tsdf_targets.begin(), b.tsdf_targets.end(), targets.mutable_data());
            return py::make_tuple(pts, targets);
        },
        py::arg("surface_point"), py::arg("camera_center"), py::arg("samples"), py::arg("band"));

    // synthetic data
    py::class_<Scene>(m, "Scene");
    py::class_<SensorModel>(m, "SensorModel")
        .def_readwrite("outlier_rate", &SensorModel::outlier_rate)
        .def_readwrite("sigma_a", &SensorModel::sigma_a)
        .def_readwrite("sigma_b", &SensorModel::sigma_b)
        .def_readwrite("quant_step", &SensorModel::quant_step)
        .def_readwrite("min_depth", &SensorModel::min_depth)
        .def_readwrite("max_depth", &SensorModel::max_depth);
    m.def("tabletop_scene", []() { return default_config("tabletop").scene; });
    m.def("tof_sensor_preset", []() { return default_config("tabletop").sensors[0]; });
    m.def("stereo_sensor_preset", []() { return default_config("tabletop").sensors[1]; });
    m.def("scene_sdf", &scene_sdf, py::arg("scene"), py::arg("point"));
    m.def(
        "render_depth",
        [](const Scene& s, const Intrinsics& K, const Pose& p) {
            std::vector<float> d = render_depth(s, K, p);
            py::array_t<float> a({K.height, K.width});
            std::copy(d.begin(), d.end(), a.mutable_data());
            return a;
        },
        py::arg("scene"), py::arg("intrinsics"), py::arg("pose"));
    m.def(
        "orbit_pose",
        [](int index, int count, double radius, double height, const Vec3& target) {
            return orbit_trajectory(count, radius, height, target).poses[size_t(index)];
        },
        py::arg("index"), py::arg("count"), py::arg("radius"), py::arg("height"),
        py::arg("target"));
    m.def(
        "apply_sensor",
        [](py::array_t<float, py::array::c_style> clean, const Intrinsics& K, const Pose& pose,
           int sensor_id, const SensorModel& model, uint64_t seed) {
            std::vector<float> d(clean.data(), clean.data() + clean.size());
            Rng rng(seed);
            return apply_sensor(d, K, pose, sensor_id, 0.0, model, rng);
        },
        py::arg("clean"), py::arg("intrinsics"), py::arg("pose"), py::arg("sensor_id"),
        py::arg("model"), py::arg("seed"));
    m.def(
        "make_gt_grid",
        [](const Scene& s, const GridGeometry& g, double band) {
            return field_to_array(make_gt_grid(s, g, band));
        },
        py::arg("scene"), py::arg("geometry"), py::arg("band") = 0.1);

    // fusion + meshing + metrics over numpy grids (z, y, x)
    m.def(
        "fuse_grids",
        [](py::array_t<double, py::array::c_style> v1, py::array_t<double, py::array::c_style> v2,
           py::array_t<double, py::array::c_style> alpha,
           py::array_t<uint32_t, py::array::c_style> w1,
           py::array_t<uint32_t, py::array::c_style> w2) {
            Field3<double> fv1 = field_from_array(v1), fv2 = field_from_array(v2),
                           fa = field_from_array(alpha);
            Field3<uint32_t> fw1 = weights_from_array(w1), fw2 = weights_from_array(w2);
            VoxelSetMask mask = classify_voxels(fw1, fw2);
            return field_to_array(fuse(fv1, fv2, fa, mask));
        },
        py::arg("v1"), py::arg("v2"), py::arg("alpha"), py::arg("w1"), py::arg("w2"));
    m.def(
        "outlier_filter",
        [](py::array_t<double, py::array::c_style> alpha,
           py::array_t<uint32_t, py::array::c_style> w1,
           py::array_t<uint32_t, py::array::c_style> w2) {
            Field3<double> fa = field_from_array(alpha);
            Field3<uint32_t> fw1 = weights_from_array(w1), fw2 = weights_from_array(w2);
            FilteredWeights fw = outlier_filter(classify_voxels(fw1, fw2), fa, fw1, fw2);
            return py::make_tuple(field_to_array(fw.w1), field_to_array(fw.w2));
        },
        py::arg("alpha"), py::arg("w1"), py::arg("w2"));
    m.def(
        "marching_cubes",
        [](py::array_t<double, py::array::c_style> v,
           py::array_t<uint32_t, py::array::c_style> w, const GridGeometry& geom) {
            Field3<double> fv = field_from_array(v);
            Mesh mesh = marching_cubes(fv, weight_valid_mask(weights_from_array(w)), geom);
            py::array_t<double> verts({int(mesh.vertices.size()), 3});
            for (size_t i = 0; i < mesh.vertices.size(); ++i)
                for (int c = 0; c < 3; ++c) verts.mutable_at(int(i), c) = mesh.vertices[i][c];
            py::array_t<int> tris({int(mesh.triangles.size()), 3});
            for (size_t i = 0; i < mesh.triangles.size(); ++i)
                for (int c = 0; c < 3; ++c)
                    tris.mutable_at(int(i), c) = mesh.triangles[i][size_t(c)];
            return py::make_tuple(verts, tris);
        },
        py::arg("tsdf"), py::arg("weights"), py::arg("geometry"));
    m.def(
        "grid_metrics",
        [](py::array_t<double, py::array::c_style> v,
           py::array_t<uint32_t, py::array::c_style> w,
           py::array_t<double, py::array::c_style> gt) {
            auto r = grid_metrics(field_from_array(v), weights_from_array(w),
                                  field_from_array(gt));
            if (!r)
                throw std::runtime_error("no valid voxels to evaluate");
            py::dict d;
            d["mad"] = r->mad;
            d["mse"] = r->mse;
            d["iou"] = r->iou;
            d["acc"] = r->acc;
            d["n"] = r->n;
            return d;
        },
        py::arg("tsdf"), py::arg("weights"), py::arg("gt"));
    m.def(
        "mesh_fscore",
        [](py::array_t<double, py::array::c_style> pred_verts,
           py::array_t<double, py::array::c_style> gt_verts, double tau) {
            Mesh a, b;
            for (py::ssize_t i = 0; i < pred_verts.shape(0); ++i)
                a.vertices.emplace_back(pred_verts.at(i, 0), pred_verts.at(i, 1),
                                        pred_verts.at(i, 2));
            for (py::ssize_t i = 0; i < gt_verts.shape(0); ++i)
                b.vertices.emplace_back(gt_verts.at(i, 0), gt_verts.at(i, 1), gt_verts.at(i, 2));
            FScore s = mesh_fscore(a, b, tau);
            return py::make_tuple(s.f, s.p, s.r);
        },
        py::arg("pred_vertices"), py::arg("gt_vertices"), py::arg("tau") = 0.02);

    py::class_<OnlineFusion>(m, "OnlineFusion")
        .def(py::init<const GridGeometry&, const IntegrationConfig&, int, int, uint64_t>(),
             py::arg("geometry"), py::arg("config"), py::arg("blocks") = 6,
             py::arg("hidden") = 4, py::arg("seed") = 0)
        .def("load_checkpoint", &OnlineFusion::load_checkpoint, py::arg("path"))
        .def("integrate", &OnlineFusion::integrate, py::arg("frame"),
             "integrate one depth frame; returns the number of updated voxels")
        .def("fuse", &OnlineFusion::fuse_now, py::arg("window") = 64, py::arg("filter") = true)
        .def("sensor_tsdf", &OnlineFusion::sensor_tsdf, py::arg("sensor"))
        .def("sensor_weight", &OnlineFusion::sensor_weight, py::arg("sensor"))
        .def_property_readonly("parameter_count", &OnlineFusion::parameter_count);
}
