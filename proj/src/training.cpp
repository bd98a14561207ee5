#include "voxfuse/training.hpp"

#include <cmath>

namespace voxfuse {

using nn::Tensor;

void LossConfig::validate() const {
    if (lambda1 < 0 || lambda2 < 0)
        throw IntegrationError("loss: lambda weights must be nonnegative");
    if (!(eta > 0))
        throw IntegrationError("loss: eta must be positive");
}

void TrainConfig::validate() const {
    if (!(lr > 0) || accumulation < 1 || chunk_side < 1 || min_update_indices < 1 ||
        max_attempts < 1 || epochs < 1)
        throw IntegrationError("train config: all counts and rates must be positive");
    if (reset_prob < 0 || reset_prob > 1)
        throw IntegrationError("train config: reset_prob must be in [0,1]");
}

LossBreakdown compute_loss(const Tensor& alpha, const std::vector<double>& v1,
                           const std::vector<double>& v2, const std::vector<uint8_t>& cls,
                           const std::vector<double>& gt, const std::vector<uint8_t>& update_mask,
                           const LossConfig& cfg) {
    cfg.validate();
    const size_t n = size_t(alpha.numel());
    if (v1.size() != n || v2.size() != n || cls.size() != n || gt.size() != n ||
        update_mask.size() != n)
        throw IntegrationError("compute_loss: field sizes do not match the chunk");

    std::vector<uint8_t> mask_f(n, 0), in1(n, 0), out1(n, 0), in2(n, 0), out2(n, 0);
    for (size_t i = 0; i < n; ++i) {
        if (!update_mask[i]) continue;
        switch (VoxelSet(cls[i])) {
        case VoxelSet::c12:
            mask_f[i] = 1;
            break;
        case VoxelSet::c1:
            // only sensor 1 integrated: V_t = V1; error at or above eta
            // counts as outlier
            (std::abs(v1[i] - gt[i]) < cfg.eta ? in1[i] : out1[i]) = 1;
            break;
        case VoxelSet::c2:
            (std::abs(v2[i] - gt[i]) < cfg.eta ? in2[i] : out2[i]) = 1;
            break;
        case VoxelSet::none:
            break;
        }
    }

    // fused = alpha * (v1 - v2) + v2 on C12 (masked elsewhere)
    std::vector<double> scale(n), shift_fused(n), neg_gt(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        scale[i] = v1[i] - v2[i];
        shift_fused[i] = v2[i] - gt[i];
    }
    Tensor err_f = nn::abs_op(nn::affine_fields(alpha, std::move(scale), std::move(shift_fused)));

    LossBreakdown out;
    Tensor lf = nn::masked_mean(err_f, mask_f, &out.n_f);
    Tensor alpha2 = nn::affine_scalar(alpha, -1.0, 1.0);
    Tensor lin1 = nn::masked_mean(nn::abs_op(nn::affine_scalar(alpha, 1.0, -1.0)), in1, &out.n_in1);
    Tensor lin2 =
        nn::masked_mean(nn::abs_op(nn::affine_scalar(alpha2, 1.0, -1.0)), in2, &out.n_in2);
    Tensor lout1 = nn::masked_mean(nn::abs_op(alpha), out1, &out.n_out1);
    Tensor lout2 = nn::masked_mean(nn::abs_op(alpha2), out2, &out.n_out2);

    out.total = nn::weighted_sum({lf, lin1, lin2, lout1, lout2},
                                 {1.0, cfg.lambda1, cfg.lambda1, cfg.lambda2, cfg.lambda2});
    out.lf = lf.item();
    out.lin1 = lin1.item();
    out.lin2 = lin2.item();
    out.lout1 = lout1.item();
    out.lout2 = lout2.item();
    return out;
}

std::optional<IndexBox> sample_training_chunk(const IndexBox& bbox,
                                              const std::vector<Index3>& update_voxels, int d,
                                              int min_indices, int max_attempts, Rng& rng) {
    if (bbox.empty()) return std::nullopt;
    const Index3 ext = bbox.extent();
    const Index3 side(std::min(d, ext.x()), std::min(d, ext.y()), std::min(d, ext.z()));
    const bool can_succeed = int64_t(update_voxels.size()) >= min_indices;

    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        IndexBox box;
        // three draws per attempt, degenerate axes included, to keep the
        // stream layout fixed
        for (int a = 0; a < 3; ++a)
            box.min[a] = bbox.min[a] + int(rng.uniform_int(0, ext[a] - side[a]));
        box.max = box.min + side - Index3::Ones();
        if (!can_succeed) continue;
        int64_t count = 0;
        for (const auto& u : update_voxels)
            if (box.contains(u)) ++count;
        if (count >= min_indices) return box;
    }
    return std::nullopt;
}

void AdamState::init(const std::vector<Tensor>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
        m.emplace_back(size_t(p.numel()), 0.0);
        v.emplace_back(size_t(p.numel()), 0.0);
    }
    t = 0;
}

void adam_update(const std::vector<Tensor>& params, AdamState& state, double lr, double beta1,
                 double beta2, double eps) {
    if (state.m.size() != params.size()) state.init(params);
    ++state.t;
    const double bc1 = 1.0 - std::pow(beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(beta2, double(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].values();
        auto& g = params[i].grad();
        if (g.size() != p.size()) continue; // never touched by backward
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (size_t j = 0; j < p.size(); ++j) {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

Trainer::Trainer(const GridGeometry& geom, const IntegrationConfig& icfg, const LossConfig& lcfg,
                 const TrainConfig& tcfg, nn::NetworkStack* nets, uint64_t seed)
    : geom_(geom), icfg_(icfg), lcfg_(lcfg), tcfg_(tcfg), nets_(nets),
      rng_(derive_seed(seed, 0x7e41)) {
    geom_.validate();
    icfg_.validate();
    lcfg_.validate();
    tcfg_.validate();
    state_[0] = SensorShapeState(geom.dims);
    state_[1] = SensorShapeState(geom.dims);
    fgrid_[0] = FeatureGrid(geom.dims, nets->feature_channels);
    fgrid_[1] = FeatureGrid(geom.dims, nets->feature_channels);
    params_ = nets->parameters();
    adam_.init(params_);
    for (auto& p : params_) p.node().ensure_grad();
}

Trainer::Counters Trainer::counters() const {
    Counters c;
    c.accum_count = accum_count_;
    c.opt_steps = opt_steps_;
    c.frames_seen = frames_seen_;
    c.win[0] = win_loss_;
    c.win[1] = win_lf_;
    c.win[2] = win_lin1_;
    c.win[3] = win_lin2_;
    c.win[4] = win_lout1_;
    c.win[5] = win_lout2_;
    c.last_loss = last_loss_;
    return c;
}

void Trainer::restore_counters(const Counters& c) {
    accum_count_ = c.accum_count;
    opt_steps_ = c.opt_steps;
    frames_seen_ = c.frames_seen;
    win_loss_ = c.win[0];
    win_lf_ = c.win[1];
    win_lin1_ = c.win[2];
    win_lin2_ = c.win[3];
    win_lout1_ = c.win[4];
    win_lout2_ = c.win[5];
    last_loss_ = c.last_loss;
}

namespace {

// chunk gathers; all x-fastest over the box, matching tensor layout [.., z, y, x]
std::vector<double> gather_scalar(const Field3<double>& f, const IndexBox& box) {
    const Index3 e = box.extent();
    std::vector<double> out(size_t(box.volume()));
    size_t p = 0;
    for (int z = box.min.z(); z <= box.max.z(); ++z)
        for (int y = box.min.y(); y <= box.max.y(); ++y)
            for (int x = box.min.x(); x <= box.max.x(); ++x) out[p++] = f.at(x, y, z);
    (void)e;
    return out;
}

std::vector<uint32_t> gather_weight(const Field3<uint32_t>& f, const IndexBox& box) {
    std::vector<uint32_t> out(size_t(box.volume()));
    size_t p = 0;
    for (int z = box.min.z(); z <= box.max.z(); ++z)
        for (int y = box.min.y(); y <= box.max.y(); ++y)
            for (int x = box.min.x(); x <= box.max.x(); ++x) out[p++] = f.at(x, y, z);
    return out;
}

// channel-planar [C][z][y][x] doubles from an interleaved feature grid
std::vector<double> gather_features(const FeatureGrid& f, const IndexBox& box) {
    const int C = f.channels;
    const int64_t vox = box.volume();
    std::vector<double> out(size_t(C) * size_t(vox));
    int64_t p = 0;
    for (int z = box.min.z(); z <= box.max.z(); ++z)
        for (int y = box.min.y(); y <= box.max.y(); ++y)
            for (int x = box.min.x(); x <= box.max.x(); ++x, ++p) {
                const float* v = f.voxel((int64_t(z) * f.dims.y() + y) * f.dims.x() + x);
                for (int c = 0; c < C; ++c) out[size_t(c) * size_t(vox) + size_t(p)] = v[c];
            }
    return out;
}

std::vector<double> tanh_weights(const std::vector<uint32_t>& w) {
    std::vector<double> out(w.size());
    for (size_t i = 0; i < w.size(); ++i) out[i] = std::tanh(double(w[i]));
    return out;
}

} // namespace

Trainer::StepResult Trainer::train_step(const DepthFrame& frame, const GroundTruthGrid& gt) {
    StepResult res;
    const int s = frame.sensor_id;
    if (s < 0 || s > 1)
        throw IntegrationError("train_step: sensor id must be 0 or 1");
    ++frames_seen_;

    UpdateBatch batch = integrate_shape(state_[s], geom_, frame, icfg_);

    // per-pixel features, recorded for the chunk path
    const Intrinsics& K = frame.intrinsics;
    std::vector<double> draster(frame.depth.begin(), frame.depth.end());
    Tensor depth_in = Tensor::constant({1, K.height, K.width}, std::move(draster));
    Tensor feats = nets_->feature[s].forward(depth_in);
    const int C = nets_->feature_channels;
    const int64_t raster = int64_t(K.width) * K.height;

    std::optional<IndexBox> chunk;
    if (!batch.empty()) {
        std::vector<Index3> voxels;
        voxels.reserve(batch.groups.size());
        for (const auto& g : batch.groups) voxels.push_back(geom_.unlinear(g.voxel));
        chunk = sample_training_chunk(batch.bbox, voxels, tcfg_.chunk_side,
                                      tcfg_.min_update_indices, tcfg_.max_attempts, rng_);
    }

    // the differentiable feature path needs pre-update grid values for the
    // in-chunk groups; collect them before the storage update
    std::vector<int32_t> entry_pixels, group_offsets{0};
    std::vector<double> row_scale, row_shift;
    std::vector<int64_t> positions;
    if (chunk) {
        const Index3 ce = chunk->extent();
        for (const auto& g : batch.groups) {
            const Index3 gi = geom_.unlinear(g.voxel);
            if (!chunk->contains(gi)) continue;
            for (int32_t e = g.begin; e < g.begin + g.count; ++e)
                entry_pixels.push_back(batch.entries[size_t(e)].pixel);
            group_offsets.push_back(int32_t(entry_pixels.size()));
            const double denom = double(g.weight_before) + g.count;
            row_scale.push_back(1.0 / denom);
            const float* old = fgrid_[s].voxel(g.voxel);
            for (int c = 0; c < C; ++c)
                row_shift.push_back(double(g.weight_before) * old[c] / denom);
            positions.push_back((int64_t(gi.z() - chunk->min.z()) * ce.y() +
                                 (gi.y() - chunk->min.y())) *
                                    ce.x() +
                                (gi.x() - chunk->min.x()));
        }
    }

    integrate_features_planar(fgrid_[s], batch, feats.values().data(), raster, C);

    if (chunk && !positions.empty()) {
        const Index3 ce = chunk->extent();
        const int64_t vox = chunk->volume();

        Tensor sums = nn::group_pixel_sums(feats, entry_pixels, group_offsets);
        Tensor new_rows = nn::rows_affine(sums, row_scale, row_shift);

        Tensor fcur = nn::scatter_rows({C, ce.z(), ce.y(), ce.x()},
                                       gather_features(fgrid_[s], *chunk), new_rows, positions);
        std::vector<uint32_t> w_cur = gather_weight(state_[s].weight, *chunk);
        std::vector<uint32_t> w_oth = gather_weight(state_[1 - s].weight, *chunk);
        Tensor tw_cur = Tensor::constant({1, ce.z(), ce.y(), ce.x()}, tanh_weights(w_cur));
        Tensor tw_oth = Tensor::constant({1, ce.z(), ce.y(), ce.x()}, tanh_weights(w_oth));
        Tensor foth = Tensor::constant({C, ce.z(), ce.y(), ce.x()},
                                       gather_features(fgrid_[1 - s], *chunk));

        Tensor input = s == 0 ? nn::concat_dim0({fcur, tw_cur, foth, tw_oth})
                              : nn::concat_dim0({foth, tw_oth, fcur, tw_cur});
        Tensor alpha = nets_->weighting.forward(input);

        const std::vector<uint32_t>& w1 = s == 0 ? w_cur : w_oth;
        const std::vector<uint32_t>& w2 = s == 0 ? w_oth : w_cur;
        std::vector<uint8_t> cls(size_t(vox), uint8_t(VoxelSet::none));
        for (size_t i = 0; i < cls.size(); ++i) {
            const bool a = w1[i] > 0, b = w2[i] > 0;
            cls[i] = uint8_t(a && b ? VoxelSet::c12 : (a ? VoxelSet::c1 : (b ? VoxelSet::c2 : VoxelSet::none)));
        }
        std::vector<uint8_t> update_mask(size_t(vox), 0);
        for (int64_t p : positions) update_mask[size_t(p)] = 1;

        LossBreakdown loss = compute_loss(
            alpha, gather_scalar(state_[0].tsdf, *chunk), gather_scalar(state_[1].tsdf, *chunk),
            cls, gather_scalar(gt.v, *chunk), update_mask, lcfg_);

        if (!loss.empty()) {
            const double lv = loss.value();
            if (std::isnan(lv)) {
                res.nan = true;
                return res;
            }
            nn::backward(loss.total);
            res.contributed = true;
            res.loss = lv;
            last_loss_ = lv;
            ++accum_count_;
            win_loss_ += lv;
            win_lf_ += loss.lf;
            win_lin1_ += loss.lin1;
            win_lin2_ += loss.lin2;
            win_lout1_ += loss.lout1;
            win_lout2_ += loss.lout2;

            if (accum_count_ == tcfg_.accumulation) {
                adam_update(params_, adam_, tcfg_.lr, tcfg_.beta1, tcfg_.beta2, tcfg_.eps);
                for (auto& p : params_) p.node().zero_grad();
                ++opt_steps_;
                const double k = double(accum_count_);
                log_.push_back({opt_steps_, frames_seen_, win_loss_ / k, win_lf_ / k,
                                win_lin1_ / k, win_lin2_ / k, win_lout1_ / k, win_lout2_ / k});
                win_loss_ = win_lf_ = win_lin1_ = win_lin2_ = win_lout1_ = win_lout2_ = 0;
                accum_count_ = 0;
                res.optimizer_stepped = true;
            }
        }
    }

    // random grid reset at each frame integration
    if (rng_.uniform() < tcfg_.reset_prob) {
        state_[0].reset();
        state_[1].reset();
        fgrid_[0].reset();
        fgrid_[1].reset();
    }
    return res;
}

} // namespace voxfuse
