#include "voxfuse/grid.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstring>
#include <fstream>

namespace voxfuse {

using nlohmann::json;

void GridGeometry::validate() const {
    if (!(voxel_size > 0))
        throw GridError("grid: voxel size must be positive");
    if (dims.x() < 1 || dims.y() < 1 || dims.z() < 1)
        throw GridError("grid: dims must all be >= 1");
}

std::optional<IndexBox> observed_bbox(const std::vector<const SensorShapeState*>& states) {
    IndexBox box;
    for (const SensorShapeState* s : states) {
        const Index3& d = s->weight.dims;
        for (int z = 0; z < d.z(); ++z)
            for (int y = 0; y < d.y(); ++y) {
                const uint32_t* row = &s->weight.at(0, y, z);
                for (int x = 0; x < d.x(); ++x)
                    if (row[x] > 0) box.expand({x, y, z});
            }
    }
    if (box.empty()) return std::nullopt;
    return box;
}

template <typename T>
Field3<T> extract_chunk(const Field3<T>& field, const IndexBox& box, T pad_value) {
    if (box.empty())
        throw GridError("extract_chunk: empty box");
    Index3 e = box.extent();
    Field3<T> out(e, pad_value);
    int x0 = std::max(box.min.x(), 0), x1 = std::min(box.max.x(), field.dims.x() - 1);
    int y0 = std::max(box.min.y(), 0), y1 = std::min(box.max.y(), field.dims.y() - 1);
    int z0 = std::max(box.min.z(), 0), z1 = std::min(box.max.z(), field.dims.z() - 1);
    for (int z = z0; z <= z1; ++z)
        for (int y = y0; y <= y1; ++y) {
            if (x1 < x0) continue;
            const T* src = &field.at(x0, y, z);
            T* dst = &out.at(x0 - box.min.x(), y - box.min.y(), z - box.min.z());
            std::copy(src, src + (x1 - x0 + 1), dst);
        }
    return out;
}

template Field3<double> extract_chunk<double>(const Field3<double>&, const IndexBox&, double);
template Field3<float> extract_chunk<float>(const Field3<float>&, const IndexBox&, float);
template Field3<uint32_t> extract_chunk<uint32_t>(const Field3<uint32_t>&, const IndexBox&,
                                                  uint32_t);

UpdateBatch aggregate_updates(std::vector<UpdateBatch::Entry> entries, const GridGeometry& geom) {
    UpdateBatch batch;
    // Full ordering makes the result independent of the raw entry order,
    // including the floating-point group sums.
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.voxel != b.voxel) return a.voxel < b.voxel;
        if (a.pixel != b.pixel) return a.pixel < b.pixel;
        return a.target < b.target;
    });
    batch.entries = std::move(entries);
    for (size_t i = 0; i < batch.entries.size();) {
        UpdateBatch::Group g;
        g.voxel = batch.entries[i].voxel;
        g.begin = static_cast<int32_t>(i);
        g.target_sum = 0.0;
        g.weight_before = 0;
        size_t j = i;
        for (; j < batch.entries.size() && batch.entries[j].voxel == g.voxel; ++j)
            g.target_sum += batch.entries[j].target;
        g.count = static_cast<int32_t>(j - i);
        batch.groups.push_back(g);
        batch.bbox.expand(geom.unlinear(g.voxel));
        i = j;
    }
    return batch;
}

namespace {

json geom_header(const GridGeometry& geom, int channels, const char* value_type) {
    json h;
    h["dims"] = {geom.dims.x(), geom.dims.y(), geom.dims.z()};
    h["origin"] = {geom.origin.x(), geom.origin.y(), geom.origin.z()};
    h["voxel_size"] = geom.voxel_size;
    h["channels"] = channels;
    h["value_type"] = value_type;
    h["axis_order"] = "zyx"; // payload: x fastest, then y, then z; channels fastest of all
    return h;
}

void write_grid_file(const std::string& path, const json& header, const void* payload,
                     size_t bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw GridError("cannot open grid file for writing: " + path);
    std::string h = header.dump();
    f.write(h.data(), std::streamsize(h.size()));
    f.put('\n');
    f.write(static_cast<const char*>(payload), std::streamsize(bytes));
    if (!f)
        throw GridError("short write on grid file: " + path);
}

} // namespace

void save_tsdf_grid(const std::string& path, const GridGeometry& geom, const Field3<double>& v) {
    std::vector<float> f32(v.data.size());
    for (size_t i = 0; i < f32.size(); ++i) f32[i] = static_cast<float>(v.data[i]);
    write_grid_file(path, geom_header(geom, 1, "f32"), f32.data(), f32.size() * sizeof(float));
}

void save_weight_grid(const std::string& path, const GridGeometry& geom,
                      const Field3<uint32_t>& w) {
    write_grid_file(path, geom_header(geom, 1, "u32"), w.data.data(),
                    w.data.size() * sizeof(uint32_t));
}

void save_feature_grid(const std::string& path, const GridGeometry& geom, const FeatureGrid& f) {
    write_grid_file(path, geom_header(geom, f.channels, "f32"), f.data.data(),
                    f.data.size() * sizeof(float));
}

LoadedGrid load_grid(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw GridError("cannot open grid file: " + path);
    std::string line;
    if (!std::getline(f, line))
        throw GridError("grid file missing header: " + path);
    json h = json::parse(line);

    LoadedGrid g;
    g.geom.dims = Index3(h.at("dims")[0].get<int>(), h.at("dims")[1].get<int>(),
                         h.at("dims")[2].get<int>());
    g.geom.origin = Vec3(h.at("origin")[0].get<double>(), h.at("origin")[1].get<double>(),
                         h.at("origin")[2].get<double>());
    g.geom.voxel_size = h.at("voxel_size").get<double>();
    g.channels = h.at("channels").get<int>();
    g.value_type = h.at("value_type").get<std::string>();
    g.geom.validate();

    size_t count = size_t(g.geom.voxel_count()) * g.channels;
    if (g.value_type == "f32") {
        g.f32.resize(count);
        f.read(reinterpret_cast<char*>(g.f32.data()), std::streamsize(count * sizeof(float)));
    } else if (g.value_type == "u32") {
        g.u32.resize(count);
        f.read(reinterpret_cast<char*>(g.u32.data()), std::streamsize(count * sizeof(uint32_t)));
    } else {
        throw GridError("grid file has unknown value_type: " + g.value_type);
    }
    if (!f)
        throw GridError("grid file truncated: " + path);
    return g;
}

Field3<double> load_tsdf_grid(const std::string& path, GridGeometry* geom_out) {
    LoadedGrid g = load_grid(path);
    if (g.value_type != "f32" || g.channels != 1)
        throw GridError("not a scalar f32 grid: " + path);
    if (geom_out) *geom_out = g.geom;
    Field3<double> out(g.geom.dims);
    for (size_t i = 0; i < g.f32.size(); ++i) out.data[i] = g.f32[i];
    return out;
}

Field3<uint32_t> load_weight_grid(const std::string& path, GridGeometry* geom_out) {
    LoadedGrid g = load_grid(path);
    if (g.value_type != "u32" || g.channels != 1)
        throw GridError("not a u32 grid: " + path);
    if (geom_out) *geom_out = g.geom;
    Field3<uint32_t> out(g.geom.dims);
    out.data = std::move(g.u32);
    return out;
}

} // namespace voxfuse
