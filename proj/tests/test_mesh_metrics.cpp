#include "voxfuse/metrics.hpp"
#include "voxfuse/rng.hpp"

#include <doctest.h>

#include <filesystem>

using namespace voxfuse;

namespace {

// brute-force F-score oracle, O(n^2), same < tau predicate
FScore fscore_brute(const Mesh& pred, const Mesh& gt, double tau) {
    FScore s;
    s.pred_empty = pred.vertices.empty();
    s.gt_empty = gt.vertices.empty();
    if (s.pred_empty || s.gt_empty) return s;
    auto count_hits = [tau](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
        int64_t hits = 0;
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) best = std::min(best, (p - q).squaredNorm());
            if (best < tau * tau) ++hits;
        }
        return hits;
    };
    s.p = 100.0 * double(count_hits(pred.vertices, gt.vertices)) / double(pred.vertices.size());
    s.r = 100.0 * double(count_hits(gt.vertices, pred.vertices)) / double(gt.vertices.size());
    s.f = (s.p + s.r) > 0 ? 2.0 * s.p * s.r / (s.p + s.r) : 0.0;
    return s;
}

GridGeometry sphere_geom() {
    GridGeometry g;
    g.origin = Vec3(-0.35, -0.35, -0.35);
    g.voxel_size = 0.01;
    g.dims = Index3(71, 71, 71);
    return g;
}

Field3<double> sphere_sdf_grid(const GridGeometry& g, double r) {
    Field3<double> v(g.dims);
    for (int z = 0; z < g.dims.z(); ++z)
        for (int y = 0; y < g.dims.y(); ++y)
            for (int x = 0; x < g.dims.x(); ++x)
                v.at(x, y, z) = g.voxel_center({x, y, z}).norm() - r;
    return v;
}

} // namespace

TEST_CASE("all-positive grids produce an empty mesh") {
    GridGeometry g = sphere_geom();
    Field3<double> v(g.dims, 0.05);
    Mesh m = marching_cubes(v, all_valid_mask(g.dims), g);
    CHECK(m.empty());
    CHECK(m.triangles.empty());
}

TEST_CASE("marching cubes recovers an analytic sphere") {
    GridGeometry g = sphere_geom();
    Field3<double> v = sphere_sdf_grid(g, 0.3);
    Mesh m = marching_cubes(v, all_valid_mask(g.dims), g);
    REQUIRE_FALSE(m.empty());

    double max_err = 0, mean_err = 0;
    for (const auto& p : m.vertices) {
        const double err = std::abs(p.norm() - 0.3);
        max_err = std::max(max_err, err);
        mean_err += err;
    }
    mean_err /= double(m.vertices.size());
    CHECK(max_err < 0.01);
    CHECK(mean_err < 0.003);

    // outward orientation for positive-outside fields
    double dot_sum = 0;
    for (const auto& t : m.triangles) {
        const Vec3 a = m.vertices[size_t(t[0])], b = m.vertices[size_t(t[1])],
                   c = m.vertices[size_t(t[2])];
        Vec3 n = (b - a).cross(c - a);
        const double nn = n.norm();
        if (nn < 1e-18) continue;
        Vec3 centroid = (a + b + c) / 3.0;
        dot_sum += n.dot(centroid.normalized()) / nn;
    }
    CHECK(dot_sum / double(m.triangles.size()) > 0.9);
}

TEST_CASE("zero crossings interpolate linearly") {
    GridGeometry g;
    g.origin = Vec3(0, 0, 0);
    g.voxel_size = 0.01;
    g.dims = Index3(4, 3, 3);
    Field3<double> v(g.dims, 0.01);
    for (int z = 0; z < 3; ++z)
        for (int y = 0; y < 3; ++y) {
            v.at(2, y, z) = -0.01;
            v.at(3, y, z) = -0.01;
        }
    Mesh m = marching_cubes(v, all_valid_mask(g.dims), g);
    REQUIRE_FALSE(m.empty());
    for (const auto& p : m.vertices)
        CHECK(std::abs(p.x() - 0.015) < 1e-9); // midpoint between +0.01 and -0.01
}

TEST_CASE("masked cells emit no triangles") {
    GridGeometry g = sphere_geom();
    Field3<double> v = sphere_sdf_grid(g, 0.3);
    Field3<uint8_t> mask(g.dims, 0); // nothing valid
    Mesh m = marching_cubes(v, mask, g);
    CHECK(m.empty());

    // half-masked: mesh only on the valid side
    for (int z = 0; z < g.dims.z(); ++z)
        for (int y = 0; y < g.dims.y(); ++y)
            for (int x = 0; x < g.dims.x(); ++x)
                mask.at(x, y, z) = g.voxel_center({x, y, z}).x() < 0 ? 1 : 0;
    Mesh half = marching_cubes(v, mask, g);
    REQUIRE_FALSE(half.empty());
    for (const auto& p : half.vertices) CHECK(p.x() <= 0.0 + 1e-12);
}

TEST_CASE("grid metrics on hand-enumerated cases") {
    GridGeometry g;
    g.dims = Index3(2, 1, 1);
    Field3<double> v(g.dims), gt(g.dims);
    Field3<uint32_t> w(g.dims, 1);

    SUBCASE("perfect prediction") {
        v.data = {0.01, -0.02};
        gt.data = {0.01, -0.02};
        auto m = grid_metrics(v, w, gt);
        REQUIRE(m.has_value());
        CHECK(m->mad == 0.0);
        CHECK(m->mse == 0.0);
        CHECK(m->iou == 1.0);
        CHECK(m->acc == 1.0);
    }
    SUBCASE("signs (-,-) vs (-,+): tn=1, fp=1") {
        v.data = {-0.01, -0.01};
        gt.data = {-0.01, 0.01};
        auto m = grid_metrics(v, w, gt);
        REQUIRE(m.has_value());
        // tn=1 (both negative), fn=1 (pred occupied... gt free -> pred<0, gt>=0)
        CHECK(m->iou == doctest::Approx(0.5)); // tn/(tn+fp+fn) = 1/2
        CHECK(m->acc == doctest::Approx(0.5));
    }
    SUBCASE("constant offset") {
        v.data = {0.02, 0.03};
        gt.data = {0.01, 0.02};
        auto m = grid_metrics(v, w, gt);
        REQUIRE(m.has_value());
        CHECK(m->mad == doctest::Approx(0.01));
        CHECK(m->mse == doctest::Approx(1e-4));
    }
    SUBCASE("empty mask is undefined") {
        Field3<uint32_t> none(g.dims, 0);
        CHECK_FALSE(grid_metrics(v, none, gt).has_value());
    }
    SUBCASE("symmetry of the error terms") {
        Rng rng(4);
        Field3<double> a(g.dims), b(g.dims);
        a.data = {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
        b.data = {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
        auto m1 = grid_metrics(a, w, b), m2 = grid_metrics(b, w, a);
        CHECK(m1->mad == doctest::Approx(m2->mad).epsilon(1e-15));
        CHECK(m1->mse == doctest::Approx(m2->mse).epsilon(1e-15));
    }
}

TEST_CASE("mesh F-score basics") {
    Mesh gt;
    Rng rng(8);
    for (int i = 0; i < 200; ++i)
        gt.vertices.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));

    SUBCASE("identical meshes score 100") {
        FScore s = mesh_fscore(gt, gt, 0.02);
        CHECK(s.p == doctest::Approx(100.0));
        CHECK(s.r == doctest::Approx(100.0));
        CHECK(s.f == doctest::Approx(100.0));
    }
    SUBCASE("a 3-tau translation drops everything for well-spaced meshes") {
        // vertices on a sparse lattice, spacing >> tau
        Mesh lattice, moved;
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) lattice.vertices.emplace_back(0.2 * i, 0.2 * j, 0.0);
        moved = lattice;
        for (auto& p : moved.vertices) p += Vec3(0.06, 0, 0); // 3 * tau
        FScore s = mesh_fscore(moved, lattice, 0.02);
        CHECK(s.p == 0.0);
        CHECK(s.r == 0.0);
        CHECK(s.f == 0.0);
    }
    SUBCASE("harmonic mean identity") {
        FScore s;
        s.p = 40.0;
        s.r = 60.0;
        const double f = 2 * s.p * s.r / (s.p + s.r);
        CHECK(f == doctest::Approx(48.0));
    }
    SUBCASE("empty meshes flag and zero") {
        Mesh empty;
        FScore s = mesh_fscore(empty, gt, 0.02);
        CHECK(s.pred_empty);
        CHECK(s.p == 0.0);
        CHECK(s.f == 0.0);
    }
}

TEST_CASE("accelerated F-score equals brute force exactly") {
    Rng rng(12);
    for (int trial = 0; trial < 4; ++trial) {
        Mesh a, b;
        const int na = 150 + trial * 40, nb = 120 + trial * 55;
        for (int i = 0; i < na; ++i)
            a.vertices.emplace_back(rng.uniform(0, 0.3), rng.uniform(0, 0.3),
                                    rng.uniform(0, 0.3));
        for (int i = 0; i < nb; ++i)
            b.vertices.emplace_back(rng.uniform(0, 0.3), rng.uniform(0, 0.3),
                                    rng.uniform(0, 0.3));
        FScore fast = mesh_fscore(a, b, 0.02);
        FScore slow = fscore_brute(a, b, 0.02);
        CHECK(fast.p == slow.p);
        CHECK(fast.r == slow.r);
        CHECK(fast.f == slow.f);
        // harmonic identity within 1e-9
        if (fast.p + fast.r > 0)
            CHECK(std::abs(fast.f - 2 * fast.p * fast.r / (fast.p + fast.r)) < 1e-9);
    }
}

TEST_CASE("ply files round-trip") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "voxfuse_ply";
    fs::create_directories(dir);

    GridGeometry g = sphere_geom();
    Mesh m = marching_cubes(sphere_sdf_grid(g, 0.22), all_valid_mask(g.dims), g);
    REQUIRE_FALSE(m.empty());
    const std::string path = (dir / "m.ply").string();
    save_ply(path, m);
    Mesh back = load_ply(path);
    REQUIRE(back.vertices.size() == m.vertices.size());
    REQUIRE(back.triangles.size() == m.triangles.size());
    for (size_t i = 0; i < m.vertices.size(); ++i)
        CHECK((back.vertices[i] - m.vertices[i]).norm() < 1e-7);
    for (size_t i = 0; i < m.triangles.size(); ++i) CHECK(back.triangles[i] == m.triangles[i]);
}

TEST_CASE("metrics reports round-trip through the parser") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "voxfuse_report";
    fs::create_directories(dir);
    MetricsReport r;
    r.grid = {0.0123, 4.5e-4, 0.91, 0.95, 1234};
    r.mesh.f = 61.5;
    r.mesh.p = 55.0;
    r.mesh.r = 69.7;
    const std::string path = (dir / "rep.json").string();
    r.save(path);
    MetricsReport back = MetricsReport::load(path);
    CHECK(back.grid.mad == r.grid.mad);
    CHECK(back.grid.n == r.grid.n);
    CHECK(back.mesh.f == r.mesh.f);
}
