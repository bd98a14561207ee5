#pragma once

#include "voxfuse/tensor.hpp"

#include <cstdint>
#include <vector>

namespace voxfuse::nn {

// --- elementwise ---
Tensor tanh_op(const Tensor& x);
Tensor relu_op(const Tensor& x);
Tensor sigmoid_op(const Tensor& x);
Tensor abs_op(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
// out = scale * x + shift (scalars)
Tensor affine_scalar(const Tensor& x, double scale, double shift);
// out_i = scale_i * x_i + shift_i (constant coefficient fields)
Tensor affine_fields(const Tensor& x, std::vector<double> scale, std::vector<double> shift);

// --- shape / assembly ---
// concatenate along dim 0; all trailing dims must match
Tensor concat_dim0(const std::vector<Tensor>& parts);
// out = base values with out[c * n_pos_total + positions[g]] = rows[g * C + c]
// base provides constant background; gradients flow only into rows.
Tensor scatter_rows(std::vector<int> shape, std::vector<double> base, const Tensor& rows,
                    const std::vector<int64_t>& positions);

// --- reductions ---
// mean of x over mask != 0; 0 if the mask is empty (flagged via count_out)
Tensor masked_mean(const Tensor& x, const std::vector<uint8_t>& mask, int64_t* count_out = nullptr);
// sum_i coeff_i * scalar_i
Tensor weighted_sum(const std::vector<Tensor>& scalars, const std::vector<double>& coeffs);

// --- per-pixel feature plumbing ---
// x: [C,H,W] features; entry_pixels[e] indexes H*W; groups given by offsets
// (size M+1). out[g,c] = sum over entries of group g of x[c, pixel].
Tensor group_pixel_sums(const Tensor& x, const std::vector<int32_t>& entry_pixels,
                        const std::vector<int32_t>& group_offsets);
// out[g,c] = scale[g] * x[g,c] + shift[g*C + c]
Tensor rows_affine(const Tensor& x, const std::vector<double>& scale,
                   const std::vector<double>& shift);

// --- convolutions ---
// x: [Ci,H,W]; w: [Co, Ci*9] (logical [Co,Ci,3,3], offset index fastest);
// zero padding 1. Returns [Co,H,W].
Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b);
// x: [Ci,D,H,W]; w: [Co, Ci*27] (logical [Co,Ci,3,3,3]); replication padding 1.
Tensor conv3d_3x3_replpad(const Tensor& x, const Tensor& w, const Tensor& b);
// x: [Ci,D,H,W]; w: [Co,Ci]
Tensor conv3d_1x1(const Tensor& x, const Tensor& w, const Tensor& b);

// per-position L2 normalization across dim 0 of [C,H,W]; norm floor eps
Tensor l2_normalize_dim0(const Tensor& x, double eps = 1e-8);

} // namespace voxfuse::nn
