#include "voxfuse/training.hpp"

#include <doctest.h>

using namespace voxfuse;
using nn::Tensor;

namespace {

LossConfig stock_loss() { return LossConfig{}; }

} // namespace

TEST_CASE("compute_loss matches the hand-derived single-voxel cases") {
    LossConfig cfg = stock_loss();

    SUBCASE("C12 voxel with perfect fusion contributes zero") {
        Tensor alpha = Tensor::constant({1, 1, 1, 1}, {0.5});
        // v1 = v2 = gt -> fused == gt regardless of alpha
        LossBreakdown l = compute_loss(alpha, {0.02}, {0.02}, {uint8_t(VoxelSet::c12)}, {0.02},
                                       {1}, cfg);
        CHECK(l.lf == doctest::Approx(0.0));
        CHECK(l.value() == doctest::Approx(0.0));
        CHECK(l.n_f == 1);
    }
    SUBCASE("C1 inlier pulls alpha toward 1") {
        Tensor alpha = Tensor::constant({1, 1, 1, 1}, {0.8});
        LossBreakdown l = compute_loss(alpha, {0.03}, {0.0}, {uint8_t(VoxelSet::c1)}, {0.02}, {1},
                                       cfg); // |v1-gt| = 0.01 < eta
        CHECK(l.lin1 == doctest::Approx(0.2));
        CHECK(l.lout1 == 0.0);
        CHECK(l.value() == doctest::Approx(cfg.lambda1 * 0.2));
    }
    SUBCASE("C1 outlier pulls alpha toward 0") {
        Tensor alpha = Tensor::constant({1, 1, 1, 1}, {0.8});
        LossBreakdown l = compute_loss(alpha, {0.12}, {0.0}, {uint8_t(VoxelSet::c1)}, {0.02}, {1},
                                       cfg); // error 0.10 > eta
        CHECK(l.lout1 == doctest::Approx(0.8));
        CHECK(l.lin1 == 0.0);
        CHECK(l.value() == doctest::Approx(cfg.lambda2 * 0.8));
    }
    SUBCASE("error exactly at eta counts as outlier") {
        Tensor alpha = Tensor::constant({1, 1, 1, 1}, {0.6});
        LossBreakdown l = compute_loss(alpha, {0.04}, {0.0}, {uint8_t(VoxelSet::c1)}, {0.0}, {1},
                                       cfg); // |v1 - gt| is bitwise equal to eta
        CHECK(l.n_out1 == 1);
        CHECK(l.n_in1 == 0);
    }
    SUBCASE("empty update mask flags a no-op step") {
        Tensor alpha = Tensor::constant({1, 1, 1, 1}, {0.5});
        LossBreakdown l =
            compute_loss(alpha, {0.0}, {0.0}, {uint8_t(VoxelSet::c12)}, {0.02}, {0}, cfg);
        CHECK(l.empty());
        CHECK(l.value() == 0.0);
    }
}

TEST_CASE("perfect alpha labels zero the confidence terms") {
    LossConfig cfg = stock_loss();
    // voxel 0: C1 inlier (alpha 1), voxel 1: C1 outlier (alpha 0),
    // voxels 2,3: C2 mirrored
    Tensor alpha = Tensor::constant({1, 1, 1, 4}, {1.0, 0.0, 0.0, 1.0});
    std::vector<double> v1 = {0.02, 0.05, 0.0, 0.0};
    std::vector<double> v2 = {0.0, 0.0, 0.021, 0.05};
    std::vector<double> gt = {0.02, -0.05, 0.02, -0.049};
    std::vector<uint8_t> cls = {uint8_t(VoxelSet::c1), uint8_t(VoxelSet::c1),
                                uint8_t(VoxelSet::c2), uint8_t(VoxelSet::c2)};
    LossBreakdown l = compute_loss(alpha, v1, v2, cls, gt, {1, 1, 1, 1}, cfg);
    CHECK(l.lin1 == doctest::Approx(0.0));
    CHECK(l.lout1 == doctest::Approx(0.0));
    CHECK(l.lin2 == doctest::Approx(0.0));
    CHECK(l.lout2 == doctest::Approx(0.0));
}

TEST_CASE("loss terms are bounded and the gradient wrt alpha matches finite differences") {
    LossConfig cfg = stock_loss();
    Rng rng(17);
    const int n = 64;
    std::vector<double> v1(n), v2(n), gt(n), a(n);
    std::vector<uint8_t> cls(n), update(n, 1);
    for (int i = 0; i < n; ++i) {
        v1[size_t(i)] = rng.uniform(-0.05, 0.05);
        v2[size_t(i)] = rng.uniform(-0.05, 0.05);
        gt[size_t(i)] = rng.uniform(-0.05, 0.05);
        a[size_t(i)] = rng.uniform(0.02, 0.98);
        cls[size_t(i)] = uint8_t(rng.uniform_int(0, 3));
    }
    Tensor alpha = Tensor::parameter({1, 4, 4, 4}, "alpha");
    alpha.values() = a;
    LossBreakdown l = compute_loss(alpha, v1, v2, cls, gt, update, cfg);
    CHECK(l.value() >= 0.0);
    CHECK(l.lin1 >= 0.0);
    CHECK(l.lin1 <= 1.0);
    CHECK(l.lout1 >= 0.0);
    CHECK(l.lout1 <= 1.0);
    nn::backward(l.total);

    for (int i = 0; i < n; i += 7) {
        const double saved = alpha.values()[size_t(i)];
        const double eps = 1e-6;
        alpha.values()[size_t(i)] = saved + eps;
        const double hi = compute_loss(alpha, v1, v2, cls, gt, update, cfg).value();
        alpha.values()[size_t(i)] = saved - eps;
        const double lo = compute_loss(alpha, v1, v2, cls, gt, update, cfg).value();
        alpha.values()[size_t(i)] = saved;
        const double fd = (hi - lo) / (2 * eps);
        CHECK(std::abs(fd - alpha.grad()[size_t(i)]) <
              1e-4 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("sample_training_chunk follows the shrink/skip rules") {
    Rng rng(3);

    SUBCASE("bbox smaller than d collapses to the whole bbox") {
        IndexBox bbox{Index3(10, 10, 10), Index3(39, 39, 39)}; // 30^3
        std::vector<Index3> voxels;
        for (int i = 0; i < 3000; ++i)
            voxels.push_back(Index3(10 + i % 30, 10 + (i / 30) % 30, 10 + (i / 900) % 30));
        auto box = sample_training_chunk(bbox, voxels, 64, 2000, 600, rng);
        REQUIRE(box.has_value());
        CHECK(box->min == bbox.min);
        CHECK(box->max == bbox.max);
    }
    SUBCASE("too few update indices -> skip after max_attempts") {
        IndexBox bbox{Index3(0, 0, 0), Index3(99, 99, 99)};
        std::vector<Index3> voxels(10, Index3(5, 5, 5));
        auto box = sample_training_chunk(bbox, voxels, 64, 2000, 600, rng);
        CHECK_FALSE(box.has_value());
    }
    SUBCASE("dense updates accepted with the full side") {
        IndexBox bbox{Index3(0, 0, 0), Index3(127, 127, 127)};
        std::vector<Index3> voxels;
        Rng vr(9);
        for (int i = 0; i < 60000; ++i)
            voxels.push_back(Index3(int(vr.uniform_int(0, 127)), int(vr.uniform_int(0, 127)),
                                    int(vr.uniform_int(0, 127))));
        auto box = sample_training_chunk(bbox, voxels, 64, 2000, 600, rng);
        REQUIRE(box.has_value());
        CHECK(box->extent() == Index3(64, 64, 64));
        CHECK(bbox.contains(box->min));
        CHECK(bbox.contains(box->max));
    }
}

TEST_CASE("adam update behaviour") {
    auto make_params = [] {
        Tensor p = Tensor::parameter({3}, "p");
        p.values() = {1.0, -2.0, 0.5};
        p.node().ensure_grad();
        return std::vector<Tensor>{p};
    };

    SUBCASE("zero gradient leaves fresh parameters unchanged") {
        auto params = make_params();
        AdamState st;
        st.init(params);
        adam_update(params, st, 1e-2, 0.9, 0.999, 1e-8);
        CHECK(params[0].values() == std::vector<double>{1.0, -2.0, 0.5});
    }
    SUBCASE("first step moves along the bias-corrected sign direction") {
        auto params = make_params();
        params[0].grad() = {0.3, -0.7, 0.0};
        AdamState st;
        st.init(params);
        adam_update(params, st, 1e-2, 0.9, 0.999, 1e-8);
        // bias-corrected first step ~= -lr * sign(g)
        CHECK(params[0].values()[0] == doctest::Approx(1.0 - 1e-2).epsilon(1e-5));
        CHECK(params[0].values()[1] == doctest::Approx(-2.0 + 1e-2).epsilon(1e-5));
        CHECK(params[0].values()[2] == 0.5);
    }
    SUBCASE("two identical runs agree bit-exactly") {
        auto run = [&make_params]() {
            auto params = make_params();
            AdamState st;
            st.init(params);
            Rng rng(77);
            for (int i = 0; i < 50; ++i) {
                for (auto& g : params[0].grad()) g = rng.uniform(-1, 1);
                adam_update(params, st, 1e-3, 0.9, 0.999, 1e-8);
            }
            return params[0].values();
        };
        CHECK(run() == run());
    }
}

TEST_CASE("config validation catches bad values") {
    LossConfig l;
    l.eta = 0.0;
    CHECK_THROWS_AS(l.validate(), IntegrationError);
    TrainConfig t;
    t.reset_prob = 1.5;
    CHECK_THROWS_AS(t.validate(), IntegrationError);
    t = TrainConfig{};
    t.accumulation = 0;
    CHECK_THROWS_AS(t.validate(), IntegrationError);
}
