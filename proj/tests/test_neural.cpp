#include "voxfuse/nets.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>

using namespace voxfuse;
using nn::Tensor;

namespace {

// central finite difference through an arbitrary re-run forward closure
double numeric_grad(const std::function<double()>& forward, double& slot, double eps = 1e-5) {
    const double saved = slot;
    slot = saved + eps;
    const double hi = forward();
    slot = saved - eps;
    const double lo = forward();
    slot = saved;
    return (hi - lo) / (2.0 * eps);
}

double rel_err(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-10});
    return std::abs(a - b) / denom;
}

std::vector<double> random_values(size_t n, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

std::string read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("feature net emits n = hidden+1 channels with unit-norm features") {
    Rng rng(1);
    nn::FeatureNet net(6, 1, 4, "f", rng);
    Tensor depth = Tensor::constant({1, 6, 7}, random_values(42, 2, 0.5, 2.5));
    Tensor out = net.forward(depth);
    REQUIRE(out.shape() == std::vector<int>{5, 6, 7});

    const int64_t P = 42;
    for (int64_t p = 0; p < P; ++p) {
        double n2 = 0;
        for (int c = 0; c < 4; ++c) {
            double v = out.values()[size_t(c) * P + size_t(p)];
            n2 += v * v;
        }
        CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-6);
        // channel 5 carries the raw depth
        CHECK(out.values()[size_t(4) * P + size_t(p)] == depth.values()[size_t(p)]);
    }
}

TEST_CASE("all-zero feature net parameters produce (0,0,0,0,depth)") {
    Rng rng(1);
    nn::FeatureNet net(6, 1, 4, "f", rng);
    for (auto& p : net.parameters()) std::fill(p.values().begin(), p.values().end(), 0.0);
    Tensor depth = Tensor::constant({1, 3, 3}, random_values(9, 5, 0.5, 2.0));
    Tensor out = net.forward(depth);
    for (int c = 0; c < 4; ++c)
        for (int64_t p = 0; p < 9; ++p) CHECK(out.values()[size_t(c) * 9 + size_t(p)] == 0.0);
    for (int64_t p = 0; p < 9; ++p)
        CHECK(out.values()[size_t(4) * 9 + size_t(p)] == depth.values()[size_t(p)]);
}

TEST_CASE("feature net rejects NaN input") {
    Rng rng(1);
    nn::FeatureNet net(2, 1, 4, "f", rng);
    std::vector<double> vals(9, 1.0);
    vals[4] = std::nan("");
    CHECK_THROWS_AS(net.forward(Tensor::constant({1, 3, 3}, vals)), nn::NeuralError);
}

TEST_CASE("weighting net shape and range") {
    Rng rng(2);
    nn::WeightingNet net(12, "g", rng);
    Tensor in = Tensor::constant({12, 4, 5, 6}, random_values(12 * 4 * 5 * 6, 3));
    Tensor a = net.forward(in);
    REQUIRE(a.shape() == std::vector<int>{1, 4, 5, 6});
    for (double v : a.values()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("zero weighting parameters give alpha = 0.5 everywhere") {
    Rng rng(2);
    nn::WeightingNet net(12, "g", rng);
    for (auto& p : net.parameters()) std::fill(p.values().begin(), p.values().end(), 0.0);
    Tensor in = Tensor::constant({12, 3, 3, 3}, random_values(12 * 27, 4));
    Tensor a = net.forward(in);
    for (double v : a.values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("channel mismatch into the weighting net is fatal") {
    Rng rng(2);
    nn::WeightingNet net(12, "g", rng);
    Tensor in = Tensor::constant({11, 2, 2, 2}, random_values(11 * 8, 5));
    CHECK_THROWS_AS(net.forward(in), nn::NeuralError);
}

TEST_CASE("parameter counts match the published budget") {
    nn::NetworkStack nets(6, 4, 7);
    int64_t g_params = 0;
    for (const auto& p : nets.weighting.parameters()) g_params += p.numel();
    CHECK(g_params == 24257);
    CHECK(std::abs(double(g_params) - 24300.0) / 24300.0 < 0.10);

    const int64_t total = nets.parameter_count();
    CHECK(std::abs(double(total) - 27700.0) / 27700.0 < 0.10);

    int64_t f_params = 0;
    for (const auto& p : nets.feature[0].parameters()) f_params += p.numel();
    CHECK(f_params == 1668);
}

TEST_CASE("replication padding preserves constant inputs through conv1") {
    Tensor w = Tensor::parameter({8, 2 * 27}, "w");
    Tensor b = Tensor::parameter({8}, "b");
    w.values() = random_values(size_t(w.numel()), 6);
    b.values() = random_values(size_t(b.numel()), 7);
    Tensor in = Tensor::constant({2, 5, 5, 5}, std::vector<double>(2 * 125, 0.75));
    Tensor out = nn::conv3d_3x3_replpad(in, w, b);
    // constant input + replication padding -> constant pre-activation,
    // borders included
    for (int co = 0; co < 8; ++co) {
        const double first = out.values()[size_t(co) * 125];
        for (int64_t p = 0; p < 125; ++p)
            CHECK(out.values()[size_t(co) * 125 + size_t(p)] ==
                  doctest::Approx(first).epsilon(1e-12));
    }
}

TEST_CASE("elementwise and reduction gradients match finite differences") {
    const int n = 12;
    Tensor x = Tensor::parameter({n}, "x");
    x.values() = random_values(n, 11, -2.0, 2.0);
    std::vector<uint8_t> mask(n, 0);
    for (int i = 0; i < n; i += 2) mask[size_t(i)] = 1;

    auto forward = [&]() {
        Tensor h = nn::tanh_op(x);
        h = nn::sigmoid_op(h);
        h = nn::abs_op(nn::affine_scalar(h, 2.0, -0.8));
        return nn::masked_mean(h, mask).item();
    };

    Tensor h = nn::tanh_op(x);
    h = nn::sigmoid_op(h);
    h = nn::abs_op(nn::affine_scalar(h, 2.0, -0.8));
    Tensor loss = nn::masked_mean(h, mask);
    nn::backward(loss);

    for (int i = 0; i < n; ++i) {
        const double fd = numeric_grad(forward, x.values()[size_t(i)]);
        CHECK(rel_err(fd, x.grad()[size_t(i)]) < 1e-6);
    }
}

TEST_CASE("conv2d gradients match finite differences") {
    const int Ci = 2, Co = 3, H = 4, W = 5;
    Tensor x = Tensor::parameter({Ci, H, W}, "x");
    Tensor w = Tensor::parameter({Co, Ci * 9}, "w");
    Tensor b = Tensor::parameter({Co}, "b");
    x.values() = random_values(size_t(x.numel()), 21);
    w.values() = random_values(size_t(w.numel()), 22);
    b.values() = random_values(size_t(b.numel()), 23);
    std::vector<uint8_t> mask(size_t(Co) * H * W, 1);

    auto forward2d = [&]() {
        return nn::masked_mean(nn::abs_op(nn::conv2d_3x3(x, w, b)), mask).item();
    };
    Tensor loss = nn::masked_mean(nn::abs_op(nn::conv2d_3x3(x, w, b)), mask);
    nn::backward(loss);
    for (Tensor* t : {&x, &w, &b}) {
        Rng pick(77);
        for (int trial = 0; trial < 10; ++trial) {
            const size_t i = size_t(pick.uniform_int(0, t->numel() - 1));
            const double fd = numeric_grad(forward2d, t->values()[i]);
            CHECK(rel_err(fd, t->grad()[i]) < 1e-5);
        }
    }
}

TEST_CASE("conv3d and head gradients match finite differences") {
    const int Ci = 3, Co = 4, D = 3, H = 4, W = 3;
    Tensor x = Tensor::parameter({Ci, D, H, W}, "x");
    Tensor w1 = Tensor::parameter({Co, Ci * 27}, "w1");
    Tensor b1 = Tensor::parameter({Co}, "b1");
    Tensor w2 = Tensor::parameter({1, Co}, "w2");
    Tensor b2 = Tensor::parameter({1}, "b2");
    x.values() = random_values(size_t(x.numel()), 31);
    w1.values() = random_values(size_t(w1.numel()), 32, -0.3, 0.3);
    b1.values() = random_values(size_t(b1.numel()), 33, -0.3, 0.3);
    w2.values() = random_values(size_t(w2.numel()), 34, -0.5, 0.5);
    b2.values() = random_values(size_t(b2.numel()), 35, -0.5, 0.5);
    std::vector<uint8_t> mask(size_t(D) * H * W, 1);

    auto forward3d = [&]() {
        Tensor h = nn::relu_op(nn::conv3d_3x3_replpad(x, w1, b1));
        Tensor a = nn::sigmoid_op(nn::conv3d_1x1(h, w2, b2));
        return nn::masked_mean(a, mask).item();
    };
    {
        Tensor h = nn::relu_op(nn::conv3d_3x3_replpad(x, w1, b1));
        Tensor a = nn::sigmoid_op(nn::conv3d_1x1(h, w2, b2));
        nn::backward(nn::masked_mean(a, mask));
    }
    for (Tensor* t : {&x, &w1, &b1, &w2, &b2}) {
        Rng pick(78);
        for (int trial = 0; trial < 8; ++trial) {
            const size_t i = size_t(pick.uniform_int(0, t->numel() - 1));
            const double fd = numeric_grad(forward3d, t->values()[i], 1e-5);
            CHECK(rel_err(fd, t->grad()[i]) < 1e-5);
        }
    }
}

TEST_CASE("normalization, scatter and grouping gradients match finite differences") {
    const int C = 4, H = 3, W = 3;
    Tensor x = Tensor::parameter({C, H, W}, "x");
    x.values() = random_values(size_t(x.numel()), 41);

    std::vector<int32_t> pixels = {0, 3, 3, 7, 8};
    std::vector<int32_t> offsets = {0, 1, 3, 5};
    std::vector<double> scale = {0.5, 1.0, 0.25};
    std::vector<double> shift = random_values(3 * C, 42, -0.2, 0.2);
    std::vector<int64_t> positions = {1, 4, 6};
    std::vector<double> base = random_values(size_t(C) * 8, 43);
    std::vector<uint8_t> mask(size_t(C) * 8, 1);

    auto forward = [&]() {
        Tensor f = nn::l2_normalize_dim0(x);
        Tensor sums = nn::group_pixel_sums(f, pixels, offsets);
        Tensor rows = nn::rows_affine(sums, scale, shift);
        Tensor grid = nn::scatter_rows({C, 2, 2, 2}, base, rows, positions);
        return nn::masked_mean(nn::abs_op(grid), mask).item();
    };
    {
        Tensor f = nn::l2_normalize_dim0(x);
        Tensor sums = nn::group_pixel_sums(f, pixels, offsets);
        Tensor rows = nn::rows_affine(sums, scale, shift);
        Tensor grid = nn::scatter_rows({C, 2, 2, 2}, base, rows, positions);
        nn::backward(nn::masked_mean(nn::abs_op(grid), mask));
    }
    for (int i = 0; i < int(x.numel()); ++i) {
        const double fd = numeric_grad(forward, x.values()[size_t(i)]);
        CHECK(rel_err(fd, x.grad()[size_t(i)]) < 1e-5);
    }
}

TEST_CASE("trivial backward facts") {
    SUBCASE("zero upstream gradient leaves parameter gradients zero") {
        Tensor x = Tensor::parameter({4}, "x");
        x.values() = {1, 2, 3, 4};
        Tensor y = nn::affine_scalar(x, 0.0, 1.0); // dy/dx = 0
        std::vector<uint8_t> mask(4, 1);
        nn::backward(nn::masked_mean(y, mask));
        for (double g : x.grad()) CHECK(g == 0.0);
    }
    SUBCASE("single-element L1 at x > 0 has unit gradient") {
        Tensor x = Tensor::parameter({1}, "x");
        x.values() = {0.7};
        std::vector<uint8_t> mask = {1};
        nn::backward(nn::masked_mean(nn::abs_op(x), mask));
        CHECK(x.grad()[0] == doctest::Approx(1.0));
    }
    SUBCASE("backward without a recorded graph is fatal") {
        Tensor c = Tensor::scalar(1.0);
        CHECK_THROWS_AS(nn::backward(c), nn::NeuralError);
        nn::NoGradGuard guard;
        Tensor x = Tensor::parameter({1}, "x");
        x.values() = {2.0};
        Tensor y = nn::abs_op(x); // not recorded
        CHECK_THROWS_AS(nn::backward(y), nn::NeuralError);
    }
}

TEST_CASE("sliding window covers boxes smaller than the window in one pass") {
    nn::NetworkStack nets(2, 4, 99);
    Index3 dims(20, 18, 16);
    FeatureGrid f1(dims, 5), f2(dims, 5);
    Field3<uint32_t> w1(dims, 0), w2(dims, 0);
    for (int z = 2; z < 10; ++z)
        for (int y = 2; y < 10; ++y)
            for (int x = 2; x < 10; ++x) w1.at(x, y, z) = uint32_t(1 + (x + y + z) % 5);

    IndexBox box{Index3(2, 2, 2), Index3(9, 9, 9)};
    Field3<double> alpha = nn::sliding_window_alpha(nets.weighting, f1, w1, f2, w2, box, 64);
    CHECK(alpha.dims == Index3(8, 8, 8));
    for (double v : alpha.data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("weighting input layout: unobserved sensor contributes zeros") {
    Index3 dims(4, 4, 4);
    FeatureGrid f1(dims, 5), f2(dims, 5);
    Field3<uint32_t> w1(dims, 3), w2(dims, 0);
    for (size_t i = 0; i < f1.data.size(); ++i) f1.data[i] = 0.25f;
    IndexBox box{Index3(0, 0, 0), Index3(3, 3, 3)};
    std::vector<double> in = nn::make_weighting_input(f1, w1, f2, w2, box);
    const int64_t vox = 64;
    for (int c = 0; c < 5; ++c)
        for (int64_t p = 0; p < vox; ++p)
            CHECK(in[size_t(c) * vox + size_t(p)] == doctest::Approx(0.25));
    for (int64_t p = 0; p < vox; ++p) {
        CHECK(in[size_t(5) * vox + size_t(p)] == doctest::Approx(std::tanh(3.0)));
        for (int c = 6; c < 12; ++c) CHECK(in[size_t(c) * vox + size_t(p)] == 0.0);
    }
}

TEST_CASE("sliding window equals a single window on a mid-size grid") {
    // d = 16 window over a 24-cube: origins clamp to {0, 8}; the receptive
    // field (radius 2) stays clear of each window's written region
    nn::NetworkStack nets(2, 4, 123);
    Index3 dims(24, 24, 24);
    FeatureGrid f1(dims, 5), f2(dims, 5);
    Field3<uint32_t> w1(dims, 0), w2(dims, 0);
    Rng rng(31);
    for (int64_t l = 0; l < w1.size(); ++l) {
        w1[l] = uint32_t(rng.uniform_int(0, 6));
        w2[l] = uint32_t(rng.uniform_int(0, 3));
    }
    for (auto& v : f1.data) v = float(rng.uniform(-1, 1));
    for (auto& v : f2.data) v = float(rng.uniform(-1, 1));

    IndexBox box{Index3(0, 0, 0), Index3(23, 23, 23)};
    Field3<double> tiled = nn::sliding_window_alpha(nets.weighting, f1, w1, f2, w2, box, 16);
    Field3<double> single = nn::sliding_window_alpha(nets.weighting, f1, w1, f2, w2, box, 64);
    REQUIRE(tiled.dims == single.dims);
    for (int64_t l = 0; l < tiled.size(); ++l) REQUIRE(tiled[l] == single[l]);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "voxfuse_ckpt";
    fs::create_directories(dir);

    nn::NetworkStack nets(3, 4, 2024);
    const std::string p1 = (dir / "a.ckpt").string(), p2 = (dir / "b.ckpt").string();
    nn::save_checkpoint(p1, nets.parameters());

    nn::NetworkStack other(3, 4, 1);
    nn::load_checkpoint(p1, other.parameters());
    nn::save_checkpoint(p2, other.parameters());
    CHECK(read_bytes(p1) == read_bytes(p2));

    nn::NetworkStack wrong(4, 4, 1);
    CHECK_THROWS_AS(nn::load_checkpoint(p1, wrong.parameters()), nn::NeuralError);
}
