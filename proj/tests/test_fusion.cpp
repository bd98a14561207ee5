#include "voxfuse/fusion.hpp"
#include "voxfuse/rng.hpp"

#include <doctest.h>

using namespace voxfuse;

namespace {

const Index3 kDims(3, 2, 2);

Field3<uint32_t> weights(std::initializer_list<uint32_t> v) {
    Field3<uint32_t> f(kDims, 0);
    std::copy(v.begin(), v.end(), f.data.begin());
    return f;
}

Field3<double> values(std::initializer_list<double> v) {
    Field3<double> f(kDims, 0.0);
    std::copy(v.begin(), v.end(), f.data.begin());
    return f;
}

} // namespace

TEST_CASE("classify_voxels matches the set definitions") {
    Field3<uint32_t> w1(kDims, 0), w2(kDims, 0);
    w1.at(0, 0, 0) = 3;                       // C1
    w1.at(1, 0, 0) = 1;
    w2.at(1, 0, 0) = 1;                       // C12
    w2.at(2, 0, 0) = 4;                       // C2
    VoxelSetMask m = classify_voxels(w1, w2);
    CHECK(m.cls.at(0, 0, 0) == VoxelSet::c1);
    CHECK(m.cls.at(1, 0, 0) == VoxelSet::c12);
    CHECK(m.cls.at(2, 0, 0) == VoxelSet::c2);
    CHECK(m.cls.at(0, 1, 0) == VoxelSet::none);
}

TEST_CASE("fuse follows the case table") {
    Field3<uint32_t> w1(kDims, 0), w2(kDims, 0);
    w1.at(0, 0, 0) = 2;
    w2.at(0, 0, 0) = 2; // C12
    w1.at(1, 0, 0) = 5; // C1
    w2.at(2, 0, 0) = 1; // C2
    VoxelSetMask m = classify_voxels(w1, w2);

    Field3<double> v1(kDims, 0.0), v2(kDims, 0.0), alpha(kDims, 0.0);
    v1.at(0, 0, 0) = 0.04;
    v2.at(0, 0, 0) = -0.04;
    alpha.at(0, 0, 0) = 0.25;
    v1.at(1, 0, 0) = 0.03;
    alpha.at(1, 0, 0) = 0.1; // ignored on C1
    v2.at(2, 0, 0) = -0.02;

    Field3<double> fused = fuse(v1, v2, alpha, m);
    CHECK(fused.at(0, 0, 0) == doctest::Approx(-0.02));
    CHECK(fused.at(1, 0, 0) == doctest::Approx(0.03));
    CHECK(fused.at(2, 0, 0) == doctest::Approx(-0.02));
    CHECK(fused.at(0, 1, 0) == 0.0); // unobserved

    SUBCASE("alpha = 1 selects sensor 1 exactly on C12") {
        alpha.at(0, 0, 0) = 1.0;
        Field3<double> f2 = fuse(v1, v2, alpha, m);
        CHECK(f2.at(0, 0, 0) == v1.at(0, 0, 0));
    }
}

TEST_CASE("fused C12 values stay inside the convex hull and are monotone in alpha") {
    Rng rng(5);
    Field3<uint32_t> w1(kDims, 1), w2(kDims, 1);
    VoxelSetMask m = classify_voxels(w1, w2);
    Field3<double> v1(kDims), v2(kDims), alpha(kDims);
    for (int64_t l = 0; l < v1.size(); ++l) {
        v1[l] = rng.uniform(-0.05, 0.05);
        v2[l] = rng.uniform(-0.05, 0.05);
        alpha[l] = rng.uniform(0.0, 1.0);
    }
    Field3<double> fused = fuse(v1, v2, alpha, m);
    for (int64_t l = 0; l < fused.size(); ++l) {
        CHECK(fused[l] >= std::min(v1[l], v2[l]) - 1e-15);
        CHECK(fused[l] <= std::max(v1[l], v2[l]) + 1e-15);
    }

    // monotone in alpha at fixed v1 > v2
    Field3<double> lo(kDims, -0.02), hi(kDims, 0.04);
    Field3<double> a1(kDims, 0.2), a2(kDims, 0.7);
    Field3<double> f1 = fuse(hi, lo, a1, m), f2 = fuse(hi, lo, a2, m);
    for (int64_t l = 0; l < f1.size(); ++l) CHECK(f2[l] > f1[l]);
}

TEST_CASE("sensor swap with mirrored alpha yields the identical fused grid") {
    Rng rng(6);
    Field3<uint32_t> w1(kDims), w2(kDims);
    Field3<double> v1(kDims), v2(kDims), alpha(kDims), mirrored(kDims);
    for (int64_t l = 0; l < v1.size(); ++l) {
        w1[l] = uint32_t(rng.uniform_int(0, 2));
        w2[l] = uint32_t(rng.uniform_int(0, 2));
        v1[l] = rng.uniform(-0.05, 0.05);
        v2[l] = rng.uniform(-0.05, 0.05);
        alpha[l] = rng.uniform(0.0, 1.0);
        mirrored[l] = 1.0 - alpha[l];
    }
    Field3<double> a = fuse(v1, v2, alpha, classify_voxels(w1, w2));
    Field3<double> b = fuse(v2, v1, mirrored, classify_voxels(w2, w1));
    for (int64_t l = 0; l < a.size(); ++l) CHECK(a[l] == doctest::Approx(b[l]).epsilon(1e-15));
}

TEST_CASE("outlier filter on single-sensor voxels") {
    Field3<uint32_t> w1(kDims, 0), w2(kDims, 0);
    Field3<double> alpha(kDims, 0.5);

    w1.at(0, 0, 0) = 5;
    alpha.at(0, 0, 0) = 0.3; // C1, low confidence -> removed
    w1.at(1, 0, 0) = 7;
    alpha.at(1, 0, 0) = 0.9; // C1, confident -> kept
    w1.at(2, 0, 0) = 4;
    w2.at(2, 0, 0) = 9;
    alpha.at(2, 0, 0) = 0.01; // C12 -> untouched
    w2.at(0, 1, 0) = 3;
    alpha.at(0, 1, 0) = 0.2; // C2: alpha_2 = 0.8 -> kept
    w2.at(1, 1, 0) = 3;
    alpha.at(1, 1, 0) = 0.8; // C2: alpha_2 = 0.2 -> removed
    w1.at(2, 1, 0) = 6;
    alpha.at(2, 1, 0) = 0.5; // boundary: strict inequality removes

    VoxelSetMask m = classify_voxels(w1, w2);
    FilteredWeights fw = outlier_filter(m, alpha, w1, w2);
    CHECK(fw.w1.at(0, 0, 0) == 0);
    CHECK(fw.w1.at(1, 0, 0) == 7);
    CHECK(fw.w1.at(2, 0, 0) == 4);
    CHECK(fw.w2.at(2, 0, 0) == 9);
    CHECK(fw.w2.at(0, 1, 0) == 3);
    CHECK(fw.w2.at(1, 1, 0) == 0);
    CHECK(fw.w1.at(2, 1, 0) == 0);

    // filtered weights are always 0 or the original
    for (int64_t l = 0; l < fw.w1.size(); ++l) {
        CHECK((fw.w1[l] == 0 || fw.w1[l] == w1[l]));
        CHECK((fw.w2[l] == 0 || fw.w2[l] == w2[l]));
    }
}
