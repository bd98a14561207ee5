#include "voxfuse/fusion.hpp"

namespace voxfuse {

VoxelSetMask classify_voxels(const Field3<uint32_t>& w1, const Field3<uint32_t>& w2) {
    if (w1.dims != w2.dims)
        throw GridError("classify_voxels: weight grids differ in shape");
    VoxelSetMask mask;
    mask.cls = Field3<VoxelSet>(w1.dims, VoxelSet::none);
    for (int64_t l = 0; l < w1.size(); ++l) {
        const bool a = w1[l] > 0, b = w2[l] > 0;
        mask.cls[l] = a && b ? VoxelSet::c12 : (a ? VoxelSet::c1 : (b ? VoxelSet::c2 : VoxelSet::none));
    }
    return mask;
}

Field3<double> fuse(const Field3<double>& v1, const Field3<double>& v2,
                    const Field3<double>& alpha, const VoxelSetMask& mask) {
    if (v1.dims != v2.dims || v1.dims != alpha.dims || v1.dims != mask.cls.dims)
        throw GridError("fuse: field shapes differ");
    Field3<double> out(v1.dims, 0.0);
    for (int64_t l = 0; l < v1.size(); ++l) {
        switch (mask.cls[l]) {
        case VoxelSet::c12:
            out[l] = alpha[l] * v1[l] + (1.0 - alpha[l]) * v2[l];
            break;
        case VoxelSet::c1:
            out[l] = v1[l];
            break;
        case VoxelSet::c2:
            out[l] = v2[l];
            break;
        case VoxelSet::none:
            break;
        }
    }
    return out;
}

FilteredWeights outlier_filter(const VoxelSetMask& mask, const Field3<double>& alpha,
                               const Field3<uint32_t>& w1, const Field3<uint32_t>& w2) {
    if (w1.dims != w2.dims || w1.dims != alpha.dims || w1.dims != mask.cls.dims)
        throw GridError("outlier_filter: field shapes differ");
    FilteredWeights out{w1, w2};
    for (int64_t l = 0; l < w1.size(); ++l) {
        if (mask.cls[l] == VoxelSet::c1 && !(alpha[l] > 0.5)) out.w1[l] = 0;
        if (mask.cls[l] == VoxelSet::c2 && !((1.0 - alpha[l]) > 0.5)) out.w2[l] = 0;
    }
    return out;
}

} // namespace voxfuse
