#include "voxfuse/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace voxfuse::nn {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;

Tensor make_node(std::vector<int> shape, std::vector<std::shared_ptr<Node>> parents,
                 std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value.assign(size_t(numel_of(shape)), 0.0);
    n->shape = std::move(shape);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    if (grad_enabled() && rg) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(n);
}

void check_same_numel(const Tensor& a, const Tensor& b, const char* what) {
    if (a.numel() != b.numel())
        throw NeuralError(std::string(what) + ": shape mismatch");
}

} // namespace

Tensor tanh_op(const Tensor& x) {
    auto xp = x.ptr();
    Tensor out = make_node(x.shape(), {xp}, [xp](Node& self) {
        for (size_t i = 0; i < self.value.size(); ++i)
            xp->grad[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
    });
    auto& v = out.values();
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(xp->value[i]);
    return out;
}

Tensor relu_op(const Tensor& x) {
    auto xp = x.ptr();
    Tensor out = make_node(x.shape(), {xp}, [xp](Node& self) {
        for (size_t i = 0; i < self.value.size(); ++i)
            if (xp->value[i] > 0.0) xp->grad[i] += self.grad[i];
    });
    auto& v = out.values();
    for (size_t i = 0; i < v.size(); ++i) v[i] = xp->value[i] > 0.0 ? xp->value[i] : 0.0;
    return out;
}

Tensor sigmoid_op(const Tensor& x) {
    auto xp = x.ptr();
    Tensor out = make_node(x.shape(), {xp}, [xp](Node& self) {
        for (size_t i = 0; i < self.value.size(); ++i)
            xp->grad[i] += self.grad[i] * self.value[i] * (1.0 - self.value[i]);
    });
    auto& v = out.values();
    for (size_t i = 0; i < v.size(); ++i) {
        double z = xp->value[i];
        v[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
    return out;
}

Tensor abs_op(const Tensor& x) {
    auto xp = x.ptr();
    Tensor out = make_node(x.shape(), {xp}, [xp](Node& self) {
        for (size_t i = 0; i < self.value.size(); ++i)
            xp->grad[i] += self.grad[i] * (xp->value[i] < 0.0 ? -1.0 : 1.0);
    });
    auto& v = out.values();
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::abs(xp->value[i]);
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_numel(a, b, "add");
    auto ap = a.ptr(), bp = b.ptr();
    Tensor out = make_node(a.shape(), {ap, bp}, [ap, bp](Node& self) {
        if (ap->requires_grad)
            for (size_t i = 0; i < self.value.size(); ++i) ap->grad[i] += self.grad[i];
        if (bp->requires_grad)
            for (size_t i = 0; i < self.value.size(); ++i) bp->grad[i] += self.grad[i];
    });
    auto& v = out.values();
    for (size_t i = 0; i < v.size(); ++i) v[i] = ap->value[i] + bp->value[i];
    return out;
}

Tensor affine_scalar(const Tensor& x, double scale, double shift) {
    auto xp = x.ptr();
    Tensor out = make_node(x.shape(), {xp}, [xp, scale](Node& self) {
        for (size_t i = 0; i < self.value.size(); ++i) xp->grad[i] += self.grad[i] * scale;
    });
    auto& v = out.values();
    for (size_t i = 0; i < v.size(); ++i) v[i] = scale * xp->value[i] + shift;
    return out;
}

Tensor affine_fields(const Tensor& x, std::vector<double> scale, std::vector<double> shift) {
    if (int64_t(scale.size()) != x.numel() || int64_t(shift.size()) != x.numel())
        throw NeuralError("affine_fields: coefficient size mismatch");
    auto xp = x.ptr();
    auto sc = std::make_shared<std::vector<double>>(std::move(scale));
    Tensor out = make_node(x.shape(), {xp}, [xp, sc](Node& self) {
        for (size_t i = 0; i < self.value.size(); ++i) xp->grad[i] += self.grad[i] * (*sc)[i];
    });
    auto& v = out.values();
    for (size_t i = 0; i < v.size(); ++i) v[i] = (*sc)[i] * xp->value[i] + shift[i];
    return out;
}

Tensor concat_dim0(const std::vector<Tensor>& parts) {
    if (parts.empty())
        throw NeuralError("concat_dim0: no inputs");
    std::vector<int> shape = parts[0].shape();
    int64_t inner = numel_of(shape) / shape[0];
    int total0 = 0;
    std::vector<std::shared_ptr<Node>> parents;
    for (const auto& p : parts) {
        if (numel_of(p.shape()) / p.shape()[0] != inner)
            throw NeuralError("concat_dim0: trailing dims mismatch");
        total0 += p.shape()[0];
        parents.push_back(p.ptr());
    }
    shape[0] = total0;
    auto parents_copy = parents;
    Tensor out = make_node(shape, std::move(parents), [parents_copy, inner](Node& self) {
        size_t off = 0;
        for (const auto& p : parents_copy) {
            size_t n = p->value.size();
            if (p->requires_grad)
                for (size_t i = 0; i < n; ++i) p->grad[i] += self.grad[off + i];
            off += n;
        }
    });
    auto& v = out.values();
    size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.values().begin(), p.values().end(), v.begin() + long(off));
        off += p.values().size();
    }
    return out;
}

Tensor scatter_rows(std::vector<int> shape, std::vector<double> base, const Tensor& rows,
                    const std::vector<int64_t>& positions) {
    if (int64_t(base.size()) != numel_of(shape))
        throw NeuralError("scatter_rows: base size mismatch");
    const int C = shape[0];
    const int64_t npos = numel_of(shape) / C;
    if (rows.shape().size() != 2 || rows.shape()[0] != int(positions.size()) ||
        rows.shape()[1] != C)
        throw NeuralError("scatter_rows: rows must be [M, C]");
    auto rp = rows.ptr();
    auto pos = std::make_shared<std::vector<int64_t>>(positions);
    Tensor out = make_node(std::move(shape), {rp}, [rp, pos, C, npos](Node& self) {
        for (size_t g = 0; g < pos->size(); ++g)
            for (int c = 0; c < C; ++c)
                rp->grad[g * size_t(C) + size_t(c)] +=
                    self.grad[size_t(c) * size_t(npos) + size_t((*pos)[g])];
    });
    auto& v = out.values();
    v = std::move(base);
    for (size_t g = 0; g < positions.size(); ++g) {
        if (positions[g] < 0 || positions[g] >= npos)
            throw NeuralError("scatter_rows: position out of range");
        for (int c = 0; c < C; ++c)
            v[size_t(c) * size_t(npos) + size_t(positions[g])] =
                rp->value[g * size_t(C) + size_t(c)];
    }
    return out;
}

Tensor masked_mean(const Tensor& x, const std::vector<uint8_t>& mask, int64_t* count_out) {
    if (int64_t(mask.size()) != x.numel())
        throw NeuralError("masked_mean: mask size mismatch");
    int64_t count = 0;
    double sum = 0.0;
    for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) {
            ++count;
            sum += x.values()[i];
        }
    if (count_out) *count_out = count;
    auto xp = x.ptr();
    auto m = std::make_shared<std::vector<uint8_t>>(mask);
    Tensor out = make_node({1}, {xp}, [xp, m, count](Node& self) {
        if (count == 0) return;
        const double g = self.grad[0] / double(count);
        for (size_t i = 0; i < m->size(); ++i)
            if ((*m)[i]) xp->grad[i] += g;
    });
    out.values()[0] = count > 0 ? sum / double(count) : 0.0;
    return out;
}

Tensor weighted_sum(const std::vector<Tensor>& scalars, const std::vector<double>& coeffs) {
    if (scalars.size() != coeffs.size() || scalars.empty())
        throw NeuralError("weighted_sum: size mismatch");
    std::vector<std::shared_ptr<Node>> parents;
    for (const auto& s : scalars) {
        if (s.numel() != 1)
            throw NeuralError("weighted_sum: inputs must be scalars");
        parents.push_back(s.ptr());
    }
    auto parents_copy = parents;
    auto cf = std::make_shared<std::vector<double>>(coeffs);
    Tensor out = make_node({1}, std::move(parents), [parents_copy, cf](Node& self) {
        for (size_t i = 0; i < parents_copy.size(); ++i)
            if (parents_copy[i]->requires_grad)
                parents_copy[i]->grad[0] += self.grad[0] * (*cf)[i];
    });
    double v = 0.0;
    for (size_t i = 0; i < scalars.size(); ++i) v += coeffs[i] * scalars[i].item();
    out.values()[0] = v;
    return out;
}

Tensor group_pixel_sums(const Tensor& x, const std::vector<int32_t>& entry_pixels,
                        const std::vector<int32_t>& group_offsets) {
    if (x.shape().size() != 3)
        throw NeuralError("group_pixel_sums: features must be [C,H,W]");
    const int C = x.shape()[0];
    const int64_t P = int64_t(x.shape()[1]) * x.shape()[2];
    const int M = int(group_offsets.size()) - 1;
    auto xp = x.ptr();
    auto pix = std::make_shared<std::vector<int32_t>>(entry_pixels);
    auto off = std::make_shared<std::vector<int32_t>>(group_offsets);
    Tensor out = make_node({M, C}, {xp}, [xp, pix, off, C, P](Node& self) {
        const int m = int(off->size()) - 1;
        for (int g = 0; g < m; ++g)
            for (int32_t e = (*off)[size_t(g)]; e < (*off)[size_t(g) + 1]; ++e) {
                const int64_t p = (*pix)[size_t(e)];
                for (int c = 0; c < C; ++c)
                    xp->grad[size_t(c) * size_t(P) + size_t(p)] +=
                        self.grad[size_t(g) * size_t(C) + size_t(c)];
            }
    });
    auto& v = out.values();
    for (int g = 0; g < M; ++g)
        for (int32_t e = group_offsets[size_t(g)]; e < group_offsets[size_t(g) + 1]; ++e) {
            const int64_t p = entry_pixels[size_t(e)];
            if (p < 0 || p >= P)
                throw NeuralError("group_pixel_sums: pixel index out of range");
            for (int c = 0; c < C; ++c)
                v[size_t(g) * size_t(C) + size_t(c)] += xp->value[size_t(c) * size_t(P) + size_t(p)];
        }
    return out;
}

Tensor rows_affine(const Tensor& x, const std::vector<double>& scale,
                   const std::vector<double>& shift) {
    if (x.shape().size() != 2)
        throw NeuralError("rows_affine: input must be [M,C]");
    const int M = x.shape()[0], C = x.shape()[1];
    if (int64_t(scale.size()) != M || int64_t(shift.size()) != int64_t(M) * C)
        throw NeuralError("rows_affine: coefficient size mismatch");
    auto xp = x.ptr();
    auto sc = std::make_shared<std::vector<double>>(scale);
    Tensor out = make_node(x.shape(), {xp}, [xp, sc, C](Node& self) {
        const int m = int(sc->size());
        for (int g = 0; g < m; ++g)
            for (int c = 0; c < C; ++c)
                xp->grad[size_t(g) * size_t(C) + size_t(c)] +=
                    self.grad[size_t(g) * size_t(C) + size_t(c)] * (*sc)[size_t(g)];
    });
    auto& v = out.values();
    for (int g = 0; g < M; ++g)
        for (int c = 0; c < C; ++c) {
            size_t i = size_t(g) * size_t(C) + size_t(c);
            v[i] = scale[size_t(g)] * xp->value[i] + shift[i];
        }
    return out;
}

// ---------------- convolutions ----------------

namespace {

// zero-padded copy of [C,H,W] into [C,H+2,W+2]
std::vector<double> pad2d_zero(const std::vector<double>& x, int C, int H, int W) {
    const int Hp = H + 2, Wp = W + 2;
    std::vector<double> p(size_t(C) * Hp * Wp, 0.0);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            std::copy(&x[(size_t(c) * H + y) * W], &x[(size_t(c) * H + y) * W] + W,
                      &p[(size_t(c) * Hp + (y + 1)) * Wp + 1]);
    return p;
}

// im2col for a 3x3 window over padded [C,H+2,W+2]: rows (c*9+k), cols (y*W+x)
void im2col2d(const std::vector<double>& padded, int C, int H, int W, MatRM& M) {
    const int Wp = W + 2;
    M.resize(C * 9, int64_t(H) * W);
    for (int c = 0; c < C; ++c)
        for (int k = 0; k < 9; ++k) {
            const int dy = k / 3, dx = k % 3; // offsets 0..2 over the padded frame
            double* row = M.row(c * 9 + k).data();
            for (int y = 0; y < H; ++y) {
                const double* src = &padded[(size_t(c) * (H + 2) + (y + dy)) * Wp + dx];
                std::copy(src, src + W, row + int64_t(y) * W);
            }
        }
}

// replication-padded copy of [C,D,H,W] into [C,D+2,H+2,W+2]
std::vector<double> pad3d_repl(const std::vector<double>& x, int C, int D, int H, int W) {
    const int Dp = D + 2, Hp = H + 2, Wp = W + 2;
    std::vector<double> p(size_t(C) * Dp * Hp * Wp);
    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    for (int c = 0; c < C; ++c)
        for (int pz = 0; pz < Dp; ++pz) {
            const int z = clampi(pz - 1, D - 1);
            for (int py = 0; py < Hp; ++py) {
                const int y = clampi(py - 1, H - 1);
                const double* src = &x[((size_t(c) * D + z) * H + y) * W];
                double* dst = &p[((size_t(c) * Dp + pz) * Hp + py) * Wp];
                dst[0] = src[0];
                std::copy(src, src + W, dst + 1);
                dst[Wp - 1] = src[W - 1];
            }
        }
    return p;
}

// im2col for one output slice z of a 3x3x3 window
void im2col3d_slice(const std::vector<double>& padded, int C, int D, int H, int W, int z,
                    MatRM& M) {
    const int Hp = H + 2, Wp = W + 2;
    M.resize(C * 27, int64_t(H) * W);
    for (int c = 0; c < C; ++c)
        for (int k = 0; k < 27; ++k) {
            const int dz = k / 9, dy = (k / 3) % 3, dx = k % 3;
            double* row = M.row(c * 27 + k).data();
            const size_t plane = (size_t(c) * (D + 2) + (z + dz)) * Hp;
            for (int y = 0; y < H; ++y) {
                const double* src = &padded[(plane + (y + dy)) * Wp + dx];
                std::copy(src, src + W, row + int64_t(y) * W);
            }
        }
}

} // namespace

namespace {
// scratch buffers persist across calls; conv kernels are memory-bound and
// reallocation dominates otherwise
thread_local MatRM tl_cols2d;
thread_local MatRM tl_gcols2d;
thread_local std::vector<double> tl_gpad2d;
} // namespace

Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.shape().size() != 3)
        throw NeuralError("conv2d_3x3: input must be [C,H,W]");
    const int Ci = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const int Co = w.shape()[0];
    if (w.shape().size() != 2 || w.shape()[1] != Ci * 9 || b.shape()[0] != Co)
        throw NeuralError("conv2d_3x3: weight shape mismatch");

    auto xp = x.ptr(), wp = w.ptr(), bp = b.ptr();
    Tensor out =
        make_node({Co, H, W}, {xp, wp, bp}, [xp, wp, bp, Ci, Co, H, W](Node& self) {
            const int64_t N = int64_t(H) * W;
            MatRM& M = tl_cols2d;
            im2col2d(pad2d_zero(xp->value, Ci, H, W), Ci, H, W, M);
            MapM g(self.grad.data(), Co, N);
            if (bp->requires_grad) {
                MapM gb(bp->grad.data(), Co, 1);
                gb.noalias() += g.rowwise().sum();
            }
            if (wp->requires_grad) {
                MapM gw(wp->grad.data(), Co, Ci * 9);
                gw.noalias() += g * M.transpose();
            }
            if (xp->requires_grad) {
                MapC wm(wp->value.data(), Co, Ci * 9);
                MatRM& gcols = tl_gcols2d;
                gcols.resize(Ci * 9, N);
                gcols.noalias() = wm.transpose() * g; // (Ci*9) x N
                const int Wp = W + 2;
                tl_gpad2d.assign(size_t(Ci) * (H + 2) * Wp, 0.0);
                std::vector<double>& gpad = tl_gpad2d;
                for (int c = 0; c < Ci; ++c)
                    for (int k = 0; k < 9; ++k) {
                        const int dy = k / 3, dx = k % 3;
                        const double* row = gcols.row(c * 9 + k).data();
                        for (int y = 0; y < H; ++y) {
                            double* dst = &gpad[(size_t(c) * (H + 2) + (y + dy)) * Wp + dx];
                            const double* src = row + int64_t(y) * W;
                            for (int i = 0; i < W; ++i) dst[i] += src[i];
                        }
                    }
                for (int c = 0; c < Ci; ++c)
                    for (int y = 0; y < H; ++y) {
                        const double* src = &gpad[(size_t(c) * (H + 2) + (y + 1)) * Wp + 1];
                        double* dst = &xp->grad[(size_t(c) * H + y) * W];
                        for (int i = 0; i < W; ++i) dst[i] += src[i];
                    }
            }
        });

    const int64_t N = int64_t(H) * W;
    MatRM& M = tl_cols2d;
    im2col2d(pad2d_zero(xp->value, Ci, H, W), Ci, H, W, M);
    MapM o(out.values().data(), Co, N);
    MapC wm(wp->value.data(), Co, Ci * 9);
    o.noalias() = wm * M;
    for (int co = 0; co < Co; ++co) o.row(co).array() += bp->value[size_t(co)];
    return out;
}

Tensor conv3d_3x3_replpad(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.shape().size() != 4)
        throw NeuralError("conv3d_3x3_replpad: input must be [C,D,H,W]");
    const int Ci = x.shape()[0], D = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int Co = w.shape()[0];
    if (w.shape().size() != 2 || w.shape()[1] != Ci * 27 || b.shape()[0] != Co)
        throw NeuralError("conv3d_3x3_replpad: weight shape mismatch");

    auto xp = x.ptr(), wp = w.ptr(), bp = b.ptr();
    Tensor out = make_node(
        {Co, D, H, W}, {xp, wp, bp}, [xp, wp, bp, Ci, Co, D, H, W](Node& self) {
            const int64_t N = int64_t(H) * W;
            const int Dp = D + 2, Hp = H + 2, Wp = W + 2;
            std::vector<double> padded = pad3d_repl(xp->value, Ci, D, H, W);
            if (bp->requires_grad) {
                MapM g(self.grad.data(), Co, int64_t(D) * N);
                MapM gb(bp->grad.data(), Co, 1);
                gb.noalias() += g.rowwise().sum();
            }
            MapC wm(wp->value.data(), Co, Ci * 27);

            // fixed slab count keeps the combine order (and the result)
            // independent of the thread count
            const int slabs = std::min(4, D);
            std::vector<int> z0(size_t(slabs) + 1);
            for (int s = 0; s <= slabs; ++s) z0[size_t(s)] = int(int64_t(s) * D / slabs);
            std::vector<MatRM> gw_part;
            gw_part.resize(size_t(slabs));
            std::vector<std::vector<double>> gpad_part;
            gpad_part.resize(size_t(slabs));

#pragma omp parallel for schedule(static)
            for (int s = 0; s < slabs; ++s) {
                const int zlo = z0[size_t(s)], zhi = z0[size_t(s) + 1];
                const int planes = zhi - zlo + 2; // writes reach z+2 in padded coords
                MatRM M, gcols;
                if (wp->requires_grad) gw_part[size_t(s)] = MatRM::Zero(Co, Ci * 27);
                if (xp->requires_grad)
                    gpad_part[size_t(s)].assign(size_t(Ci) * planes * Hp * Wp, 0.0);
                for (int z = zlo; z < zhi; ++z) {
                    im2col3d_slice(padded, Ci, D, H, W, z, M);
                    Eigen::Map<MatRM, 0, Eigen::OuterStride<>> gslice(
                        self.grad.data() + int64_t(z) * N, Co, N,
                        Eigen::OuterStride<>(int64_t(D) * N));
                    if (wp->requires_grad) gw_part[size_t(s)].noalias() += gslice * M.transpose();
                    if (xp->requires_grad) {
                        gcols.resize(Ci * 27, N);
                        gcols.noalias() = wm.transpose() * gslice;
                        std::vector<double>& gpad = gpad_part[size_t(s)];
                        for (int c = 0; c < Ci; ++c)
                            for (int k = 0; k < 27; ++k) {
                                const int dz = k / 9, dy = (k / 3) % 3, dx = k % 3;
                                const double* row = gcols.row(c * 27 + k).data();
                                const size_t plane = (size_t(c) * planes + (z - zlo + dz)) * Hp;
                                for (int y = 0; y < H; ++y) {
                                    double* dst = &gpad[(plane + (y + dy)) * Wp + dx];
                                    const double* src = row + int64_t(y) * W;
                                    for (int i = 0; i < W; ++i) dst[i] += src[i];
                                }
                            }
                    }
                }
            }

            if (wp->requires_grad) {
                MapM gw(wp->grad.data(), Co, Ci * 27);
                for (int s = 0; s < slabs; ++s) gw.noalias() += gw_part[size_t(s)];
            }
            if (xp->requires_grad) {
                // fold each slab in order through the replication-pad adjoint
                auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
                for (int s = 0; s < slabs; ++s) {
                    const int zlo = z0[size_t(s)], zhi = z0[size_t(s) + 1];
                    const int planes = zhi - zlo + 2;
                    const std::vector<double>& gpad = gpad_part[size_t(s)];
                    for (int c = 0; c < Ci; ++c)
                        for (int pl = 0; pl < planes; ++pl) {
                            const int pz = zlo + pl; // padded-coordinate plane index
                            if (pz >= Dp) continue;
                            const int z = clampi(pz - 1, D - 1);
                            for (int py = 0; py < Hp; ++py) {
                                const int y = clampi(py - 1, H - 1);
                                const double* src = &gpad[((size_t(c) * planes + pl) * Hp + py) * Wp];
                                double* dst = &xp->grad[((size_t(c) * D + z) * H + y) * W];
                                dst[0] += src[0];
                                for (int i = 0; i < W; ++i) dst[i] += src[i + 1];
                                dst[W - 1] += src[Wp - 1];
                            }
                        }
                }
            }
        });

    const int64_t N = int64_t(H) * W;
    std::vector<double> padded = pad3d_repl(xp->value, Ci, D, H, W);
    MapC wm(wp->value.data(), Co, Ci * 27);
#pragma omp parallel for schedule(static)
    for (int z = 0; z < D; ++z) {
        thread_local MatRM M;
        im2col3d_slice(padded, Ci, D, H, W, z, M);
        Eigen::Map<MatRM, 0, Eigen::OuterStride<>> oslice(
            out.values().data() + int64_t(z) * N, Co, N, Eigen::OuterStride<>(int64_t(D) * N));
        oslice.noalias() = wm * M;
        for (int co = 0; co < Co; ++co) oslice.row(co).array() += bp->value[size_t(co)];
    }
    return out;
}

Tensor conv3d_1x1(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.shape().size() != 4)
        throw NeuralError("conv3d_1x1: input must be [C,D,H,W]");
    const int Ci = x.shape()[0];
    const int64_t N = int64_t(x.shape()[1]) * x.shape()[2] * x.shape()[3];
    const int Co = w.shape()[0];
    if (w.shape().size() != 2 || w.shape()[1] != Ci || b.shape()[0] != Co)
        throw NeuralError("conv3d_1x1: weight shape mismatch");

    auto xp = x.ptr(), wp = w.ptr(), bp = b.ptr();
    Tensor out = make_node({Co, x.shape()[1], x.shape()[2], x.shape()[3]}, {xp, wp, bp},
                           [xp, wp, bp, Ci, Co, N](Node& self) {
                               MapM g(self.grad.data(), Co, N);
                               if (bp->requires_grad) {
                                   MapM gb(bp->grad.data(), Co, 1);
                                   gb.noalias() += g.rowwise().sum();
                               }
                               MapC xm(xp->value.data(), Ci, N);
                               if (wp->requires_grad) {
                                   MapM gw(wp->grad.data(), Co, Ci);
                                   gw.noalias() += g * xm.transpose();
                               }
                               if (xp->requires_grad) {
                                   MapC wm(wp->value.data(), Co, Ci);
                                   MapM gx(xp->grad.data(), Ci, N);
                                   gx.noalias() += wm.transpose() * g;
                               }
                           });
    MapM o(out.values().data(), Co, N);
    MapC wm(wp->value.data(), Co, Ci);
    MapC xm(xp->value.data(), Ci, N);
    o.noalias() = wm * xm;
    for (int co = 0; co < Co; ++co) o.row(co).array() += bp->value[size_t(co)];
    return out;
}

Tensor l2_normalize_dim0(const Tensor& x, double eps) {
    if (x.shape().size() != 3)
        throw NeuralError("l2_normalize_dim0: input must be [C,H,W]");
    const int C = x.shape()[0];
    const int64_t P = int64_t(x.shape()[1]) * x.shape()[2];
    auto xp = x.ptr();
    Tensor out = make_node(x.shape(), {xp}, [xp, C, P, eps](Node& self) {
        for (int64_t p = 0; p < P; ++p) {
            double n2 = 0.0;
            for (int c = 0; c < C; ++c) {
                double v = xp->value[size_t(c) * size_t(P) + size_t(p)];
                n2 += v * v;
            }
            const double n = std::sqrt(n2);
            if (n > eps) {
                double dot = 0.0;
                for (int c = 0; c < C; ++c)
                    dot += self.grad[size_t(c) * size_t(P) + size_t(p)] *
                           self.value[size_t(c) * size_t(P) + size_t(p)];
                for (int c = 0; c < C; ++c) {
                    const size_t i = size_t(c) * size_t(P) + size_t(p);
                    xp->grad[i] += (self.grad[i] - self.value[i] * dot) / n;
                }
            } else {
                for (int c = 0; c < C; ++c) {
                    const size_t i = size_t(c) * size_t(P) + size_t(p);
                    xp->grad[i] += self.grad[i] / eps;
                }
            }
        }
    });
    auto& v = out.values();
    for (int64_t p = 0; p < P; ++p) {
        double n2 = 0.0;
        for (int c = 0; c < C; ++c) {
            double a = xp->value[size_t(c) * size_t(P) + size_t(p)];
            n2 += a * a;
        }
        const double denom = std::max(std::sqrt(n2), eps);
        for (int c = 0; c < C; ++c) {
            const size_t i = size_t(c) * size_t(P) + size_t(p);
            v[i] = xp->value[i] / denom;
        }
    }
    return out;
}

} // namespace voxfuse::nn
