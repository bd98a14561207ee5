#include "voxfuse/metrics.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <unordered_map>

namespace voxfuse {

using nlohmann::json;

std::optional<GridMetrics> grid_metrics_masked(const Field3<double>& v,
                                               const Field3<uint8_t>& mask,
                                               const Field3<double>& gt) {
    if (v.dims != mask.dims || v.dims != gt.dims)
        throw GridError("grid_metrics: shape mismatch");
    GridMetrics m;
    int64_t tn = 0, tp = 0, fp = 0, fn = 0;
    double mad = 0, mse = 0;
    for (int64_t l = 0; l < v.size(); ++l) {
        if (!mask[l]) continue;
        ++m.n;
        const double e = v[l] - gt[l];
        mad += std::abs(e);
        mse += e * e;
        const bool occ = v[l] < 0, occ_gt = gt[l] < 0;
        if (occ && occ_gt)
            ++tn;
        else if (!occ && !occ_gt)
            ++tp;
        else if (!occ && occ_gt)
            ++fp;
        else
            ++fn;
    }
    if (m.n == 0) return std::nullopt;
    m.mad = mad / double(m.n);
    m.mse = mse / double(m.n);
    const int64_t iou_den = tn + fp + fn;
    m.iou = iou_den > 0 ? double(tn) / double(iou_den) : 1.0;
    m.acc = double(tn + tp) / double(m.n);
    return m;
}

std::optional<GridMetrics> grid_metrics(const Field3<double>& v, const Field3<uint32_t>& w,
                                        const Field3<double>& gt) {
    return grid_metrics_masked(v, weight_valid_mask(w), gt);
}

namespace {

struct CellKey {
    int64_t x, y, z;
    bool operator==(const CellKey& o) const { return x == o.x && y == o.y && z == o.z; }
};
struct CellHash {
    size_t operator()(const CellKey& k) const {
        return size_t(k.x * 73856093ll ^ k.y * 19349663ll ^ k.z * 83492791ll);
    }
};

class PointHashGrid {
public:
    PointHashGrid(const std::vector<Vec3>& pts, double cell) : pts_(pts), cell_(cell) {
        cells_.reserve(pts.size());
        for (size_t i = 0; i < pts.size(); ++i) cells_[key(pts[i])].push_back(int(i));
    }

    // true when some point lies strictly within tau of q (tau == cell size)
    bool has_neighbor_within(const Vec3& q, double tau) const {
        const double tau2 = tau * tau;
        const CellKey c = key(q);
        for (int64_t dz = -1; dz <= 1; ++dz)
            for (int64_t dy = -1; dy <= 1; ++dy)
                for (int64_t dx = -1; dx <= 1; ++dx) {
                    auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
                    if (it == cells_.end()) continue;
                    for (int i : it->second)
                        if ((pts_[size_t(i)] - q).squaredNorm() < tau2) return true;
                }
        return false;
    }

private:
    CellKey key(const Vec3& p) const {
        return {int64_t(std::floor(p.x() / cell_)), int64_t(std::floor(p.y() / cell_)),
                int64_t(std::floor(p.z() / cell_))};
    }
    const std::vector<Vec3>& pts_;
    double cell_;
    std::unordered_map<CellKey, std::vector<int>, CellHash> cells_;
};

} // namespace

FScore mesh_fscore(const Mesh& pred, const Mesh& gt, double tau) {
    FScore s;
    s.pred_empty = pred.vertices.empty();
    s.gt_empty = gt.vertices.empty();
    if (s.pred_empty || s.gt_empty) return s; // P or R stays 0, flagged

    {
        PointHashGrid grid(gt.vertices, tau);
        int64_t hits = 0;
        for (const auto& p : pred.vertices)
            if (grid.has_neighbor_within(p, tau)) ++hits;
        s.p = 100.0 * double(hits) / double(pred.vertices.size());
    }
    {
        PointHashGrid grid(pred.vertices, tau);
        int64_t hits = 0;
        for (const auto& p : gt.vertices)
            if (grid.has_neighbor_within(p, tau)) ++hits;
        s.r = 100.0 * double(hits) / double(gt.vertices.size());
    }
    s.f = (s.p + s.r) > 0 ? 2.0 * s.p * s.r / (s.p + s.r) : 0.0;
    return s;
}

void MetricsReport::save(const std::string& path) const {
    json j;
    j["mad"] = grid.mad;
    j["mse"] = grid.mse;
    j["iou"] = grid.iou;
    j["acc"] = grid.acc;
    j["n_voxels"] = grid.n;
    j["f"] = mesh.f;
    j["p"] = mesh.p;
    j["r"] = mesh.r;
    std::ofstream f(path);
    if (!f)
        throw GridError("cannot write metrics report: " + path);
    f << j.dump(2) << "\n";
}

MetricsReport MetricsReport::load(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw GridError("cannot open metrics report: " + path);
    json j = json::parse(f);
    MetricsReport r;
    r.grid.mad = j.at("mad").get<double>();
    r.grid.mse = j.at("mse").get<double>();
    r.grid.iou = j.at("iou").get<double>();
    r.grid.acc = j.at("acc").get<double>();
    r.grid.n = j.at("n_voxels").get<int64_t>();
    r.mesh.f = j.at("f").get<double>();
    r.mesh.p = j.at("p").get<double>();
    r.mesh.r = j.at("r").get<double>();
    return r;
}

} // namespace voxfuse
