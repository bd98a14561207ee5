#include "voxfuse/integration.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <filesystem>

using namespace voxfuse;

namespace {

// one valid pixel at the principal point looking down +z
DepthFrame single_pixel_frame(float depth) {
    DepthFrame f = testutil::constant_depth_frame(3, 3, 0.f, 30.0);
    f.depth[4] = depth; // center pixel (1,1); cx = cy = 1
    return f;
}

GridGeometry unit_geom() {
    GridGeometry g;
    g.origin = Vec3(-0.32, -0.32, 0.0);
    g.voxel_size = 0.01;
    g.dims = Index3(64, 64, 64);
    return g;
}

IntegrationConfig unit_cfg() {
    IntegrationConfig cfg;
    cfg.border_mask = 0;
    cfg.min_depth = 0.05;
    cfg.max_depth = 3.0;
    return cfg;
}

} // namespace

TEST_CASE("integrate_shape applies the moving average to a fresh voxel") {
    GridGeometry g = unit_geom();
    SensorShapeState st(g.dims);
    IntegrationConfig cfg = unit_cfg();
    DepthFrame f = single_pixel_frame(0.30f);

    UpdateBatch batch = integrate_shape(st, g, f, cfg);
    REQUIRE_FALSE(batch.empty());
    // sample k=0 carries target +l/2 = +0.05 at depth 0.25 on the optical axis
    auto lk = world_to_voxel(Vec3(0, 0, 0.25), g.origin, g.voxel_size, g.dims);
    REQUIRE(lk.in_grid);
    CHECK(st.tsdf[g.linear(lk.index)] == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(st.weight[g.linear(lk.index)] == 1);
}

TEST_CASE("integrate_shape keeps weights clipped at omega_max") {
    GridGeometry g = unit_geom();
    SensorShapeState st(g.dims);
    IntegrationConfig cfg = unit_cfg();
    DepthFrame f = single_pixel_frame(0.30f);

    auto lk = world_to_voxel(Vec3(0, 0, 0.25), g.origin, g.voxel_size, g.dims);
    const int64_t lin = g.linear(lk.index);
    st.weight[lin] = 500; // at the cap, V = 0
    integrate_shape(st, g, f, cfg);
    CHECK(st.weight[lin] == 500);
    CHECK(st.tsdf[lin] == doctest::Approx(0.05 / 501.0).epsilon(1e-12));
}

TEST_CASE("border mask drops edge pixels") {
    GridGeometry g;
    g.origin = Vec3(-1.5, -1.5, 0);
    g.voxel_size = 0.01;
    g.dims = Index3(300, 300, 260);
    SensorShapeState st(g.dims);
    IntegrationConfig cfg;
    cfg.border_mask = 10;
    cfg.min_depth = 0.5;
    cfg.max_depth = 3.0;

    DepthFrame f = testutil::constant_depth_frame(256, 256, 0.f, 220.0);
    f.depth[size_t(128) * 256 + 5] = 2.0f; // (u=5, v=128) inside the masked border
    UpdateBatch batch = integrate_shape(st, g, f, cfg);
    CHECK(batch.empty());

    // all pixels invalid -> empty batch flagged through invalid_pixels
    DepthFrame dead = testutil::constant_depth_frame(256, 256, 0.f, 220.0);
    UpdateBatch none = integrate_shape(st, g, dead, cfg);
    CHECK(none.empty());
    CHECK(none.invalid_pixels > 0);
}

TEST_CASE("raster size mismatch is fatal") {
    GridGeometry g = unit_geom();
    SensorShapeState st(g.dims);
    DepthFrame f = single_pixel_frame(0.3f);
    f.depth.pop_back();
    CHECK_THROWS_AS(integrate_shape(st, g, f, unit_cfg()), IntegrationError);
}

TEST_CASE("samples behind the camera are clipped and counted") {
    GridGeometry g = unit_geom();
    SensorShapeState st(g.dims);
    IntegrationConfig cfg = unit_cfg();
    cfg.min_depth = 0.01;
    // depth 0.03 < l/2: near-end band samples land behind the camera center
    DepthFrame f = single_pixel_frame(0.03f);
    UpdateBatch batch = integrate_shape(st, g, f, cfg);
    CHECK(batch.dropped_behind_camera > 0);
}

TEST_CASE("integrate_features follows pre-frame weights") {
    GridGeometry g = unit_geom();
    FeatureGrid fg(g.dims, 5);

    UpdateBatch batch;
    batch.entries = {{g.linear({1, 1, 1}), 0, 0.0}};
    batch.groups = {{g.linear({1, 1, 1}), 0, 1, 0.0, 0}};

    SUBCASE("fresh voxel takes the feature verbatim") {
        std::vector<float> feats = {1, 0, 0, 0, 0};
        integrate_features(fg, batch, feats.data(), 5);
        const float* v = fg.voxel(batch.groups[0].voxel);
        CHECK(v[0] == doctest::Approx(1.0));
        CHECK(v[1] == doctest::Approx(0.0));
    }
    SUBCASE("second observation averages with W_prev = 1") {
        float* dst = fg.voxel(batch.groups[0].voxel);
        dst[0] = 1.f;
        batch.groups[0].weight_before = 1;
        std::vector<float> feats = {0, 1, 0, 0, 0};
        integrate_features(fg, batch, feats.data(), 5);
        CHECK(dst[0] == doctest::Approx(0.5));
        CHECK(dst[1] == doctest::Approx(0.5));
    }
    SUBCASE("empty batch leaves the grid untouched") {
        UpdateBatch empty;
        std::vector<float> feats = {9, 9, 9, 9, 9};
        integrate_features(fg, empty, feats.data(), 5);
        for (float v : fg.data) CHECK(v == 0.f);
    }
    SUBCASE("channel mismatch is fatal") {
        std::vector<float> feats = {1, 2, 3};
        CHECK_THROWS_AS(integrate_features(fg, batch, feats.data(), 3), IntegrationError);
    }
}

TEST_CASE("weights grow monotonically and values stay inside the band") {
    GridGeometry g = unit_geom();
    SensorShapeState st(g.dims);
    IntegrationConfig cfg = unit_cfg();
    cfg.omega_max = 25;

    DepthFrame f = testutil::constant_depth_frame(24, 24, 0.30f, 30.0);
    Field3<uint32_t> prev = st.weight;
    for (int i = 0; i < 6; ++i) {
        integrate_shape(st, g, f, cfg);
        for (int64_t l = 0; l < st.weight.size(); ++l) {
            CHECK(st.weight[l] >= prev[l]);
            CHECK(st.weight[l] <= cfg.omega_max);
            CHECK(std::abs(st.tsdf[l]) <= 0.05 + 1e-12);
        }
        prev = st.weight;
    }
}

TEST_CASE("repeating a noise-free frame leaves the grid unchanged") {
    GridGeometry g = unit_geom();
    SensorShapeState st(g.dims);
    IntegrationConfig cfg = unit_cfg();
    DepthFrame f = testutil::constant_depth_frame(24, 24, 0.30f, 30.0);

    integrate_shape(st, g, f, cfg);
    Field3<double> before = st.tsdf;
    integrate_shape(st, g, f, cfg);
    for (int64_t l = 0; l < st.tsdf.size(); ++l)
        CHECK(std::abs(st.tsdf[l] - before[l]) < 1e-9);
}

TEST_CASE("engine matches the independent scalar reference") {
    GridGeometry g = unit_geom();
    SensorShapeState st(g.dims);
    IntegrationConfig cfg = unit_cfg();
    cfg.omega_max = 40; // force clipping within a few frames

    testutil::ReferenceTsdfFusion ref(g.origin, g.voxel_size, g.dims, cfg.samples_per_ray,
                                      cfg.band, cfg.omega_max, cfg.border_mask, cfg.min_depth,
                                      cfg.max_depth);

    Rng rng(11);
    for (int i = 0; i < 8; ++i) {
        DepthFrame f = testutil::constant_depth_frame(24, 24, 0.f, 30.0);
        for (auto& d : f.depth) d = float(0.28 + 0.04 * rng.uniform());
        f.pose.translation = Vec3(0.01 * i, -0.005 * i, -0.02 * i);
        integrate_shape(st, g, f, cfg);
        ref.integrate(f);
    }
    for (int64_t l = 0; l < st.tsdf.size(); ++l) {
        REQUIRE(st.weight[l] == ref.weight(l));
        REQUIRE(std::abs(st.tsdf[l] - ref.value(l)) < 1e-9);
    }
}

TEST_CASE("depth frames round-trip through disk") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "voxfuse_frame_io";
    fs::create_directories(dir);

    DepthFrame f = testutil::constant_depth_frame(16, 12, 1.25f, 20.0);
    f.sensor_id = 1;
    f.timestamp = 3.5;
    f.pose.rotation = Eigen::AngleAxisd(0.4, Vec3(0, 0, 1).normalized()).toRotationMatrix();
    f.pose.translation = Vec3(0.1, 0.2, 0.3);
    const std::string stem = (dir / "frame").string();
    save_depth_frame(stem, f);
    DepthFrame g = load_depth_frame(stem);
    CHECK(g.sensor_id == 1);
    CHECK(g.timestamp == 3.5);
    CHECK(g.intrinsics.width == 16);
    CHECK((g.pose.rotation - f.pose.rotation).cwiseAbs().maxCoeff() < 1e-15);
    REQUIRE(g.depth.size() == f.depth.size());
    for (size_t i = 0; i < g.depth.size(); ++i) REQUIRE(g.depth[i] == f.depth[i]);
}
