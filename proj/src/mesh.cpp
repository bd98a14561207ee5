#include "voxfuse/mesh.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace voxfuse {

namespace detail {
extern const int kMcEdgeTable[256];
extern const int kMcTriTable[256][16];
} // namespace detail

Field3<uint8_t> weight_valid_mask(const Field3<uint32_t>& w) {
    Field3<uint8_t> m(w.dims, 0);
    for (int64_t l = 0; l < w.size(); ++l) m[l] = w[l] > 0 ? 1 : 0;
    return m;
}

Field3<uint8_t> weight_union_mask(const Field3<uint32_t>& w1, const Field3<uint32_t>& w2) {
    if (w1.dims != w2.dims)
        throw GridError("weight_union_mask: shape mismatch");
    Field3<uint8_t> m(w1.dims, 0);
    for (int64_t l = 0; l < w1.size(); ++l) m[l] = (w1[l] > 0 || w2[l] > 0) ? 1 : 0;
    return m;
}

Field3<uint8_t> all_valid_mask(const Index3& dims) { return Field3<uint8_t>(dims, 1); }

namespace {

// cube corner offsets, Bourke order
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
// each cube edge as (canonical base corner offset, axis)
struct EdgeDef {
    int bx, by, bz, axis;
};
constexpr EdgeDef kEdge[12] = {
    {0, 0, 0, 0}, {1, 0, 0, 1}, {0, 1, 0, 0}, {0, 0, 0, 1},
    {0, 0, 1, 0}, {1, 0, 1, 1}, {0, 1, 1, 0}, {0, 0, 1, 1},
    {0, 0, 0, 2}, {1, 0, 0, 2}, {1, 1, 0, 2}, {0, 1, 0, 2},
};

} // namespace

Mesh marching_cubes(const Field3<double>& v, const Field3<uint8_t>& valid,
                    const GridGeometry& geom, double iso) {
    if (v.dims != valid.dims)
        throw GridError("marching_cubes: value/mask shape mismatch");
    Mesh mesh;
    const Index3 d = v.dims;
    // key: (linear index of edge base voxel) * 3 + axis
    std::unordered_map<int64_t, int> edge_vertex;
    edge_vertex.reserve(4096);

    auto vertex_on_edge = [&](int x, int y, int z, int axis) -> int {
        const int64_t base = (int64_t(z) * d.y() + y) * d.x() + x;
        const int64_t key = base * 3 + axis;
        auto it = edge_vertex.find(key);
        if (it != edge_vertex.end()) return it->second;
        const int x2 = x + (axis == 0), y2 = y + (axis == 1), z2 = z + (axis == 2);
        const double v0 = v.at(x, y, z), v1 = v.at(x2, y2, z2);
        double t = (v1 != v0) ? (iso - v0) / (v1 - v0) : 0.5;
        t = std::clamp(t, 0.0, 1.0);
        Vec3 p0 = geom.voxel_center({x, y, z});
        Vec3 p1 = geom.voxel_center({x2, y2, z2});
        const int idx = int(mesh.vertices.size());
        mesh.vertices.push_back(p0 + t * (p1 - p0));
        edge_vertex.emplace(key, idx);
        return idx;
    };

    for (int z = 0; z + 1 < d.z(); ++z)
        for (int y = 0; y + 1 < d.y(); ++y)
            for (int x = 0; x + 1 < d.x(); ++x) {
                bool all_valid = true;
                int cube = 0;
                for (int c = 0; c < 8; ++c) {
                    const int cx = x + kCorner[c][0], cy = y + kCorner[c][1],
                              cz = z + kCorner[c][2];
                    if (!valid.at(cx, cy, cz)) {
                        all_valid = false;
                        break;
                    }
                    if (v.at(cx, cy, cz) < iso) cube |= 1 << c;
                }
                if (!all_valid) continue;
                if (detail::kMcEdgeTable[cube] == 0) continue;

                int ev[12];
                for (int e = 0; e < 12; ++e)
                    if (detail::kMcEdgeTable[cube] & (1 << e))
                        ev[e] = vertex_on_edge(x + kEdge[e].bx, y + kEdge[e].by, z + kEdge[e].bz,
                                               kEdge[e].axis);
                const int* tri = detail::kMcTriTable[cube];
                for (int t = 0; tri[t] != -1; t += 3)
                    // reversed winding: inside is negative here, the tables
                    // assume inside below iso with opposite normal convention
                    mesh.triangles.push_back({ev[tri[t]], ev[tri[t + 2]], ev[tri[t + 1]]});
            }
    return mesh;
}

void save_ply(const std::string& path, const Mesh& mesh) {
    std::ofstream f(path);
    if (!f)
        throw GridError("cannot write mesh: " + path);
    f << "ply\nformat ascii 1.0\n";
    f << "element vertex " << mesh.vertices.size() << "\n";
    f << "property float x\nproperty float y\nproperty float z\n";
    f << "element face " << mesh.triangles.size() << "\n";
    f << "property list uchar int vertex_indices\nend_header\n";
    char buf[96];
    for (const auto& p : mesh.vertices) {
        std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", p.x(), p.y(), p.z());
        f << buf;
    }
    for (const auto& t : mesh.triangles) f << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
    if (!f)
        throw GridError("short write on mesh: " + path);
}

Mesh load_ply(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw GridError("cannot open mesh: " + path);
    std::string line;
    size_t n_vert = 0, n_face = 0;
    bool header_done = false;
    while (std::getline(f, line)) {
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "element") {
            std::string what;
            size_t n;
            ss >> what >> n;
            if (what == "vertex") n_vert = n;
            if (what == "face") n_face = n;
        } else if (tok == "end_header") {
            header_done = true;
            break;
        }
    }
    if (!header_done)
        throw GridError("not a ply file: " + path);
    Mesh mesh;
    mesh.vertices.reserve(n_vert);
    for (size_t i = 0; i < n_vert; ++i) {
        double x, y, z;
        f >> x >> y >> z;
        mesh.vertices.emplace_back(x, y, z);
    }
    mesh.triangles.reserve(n_face);
    for (size_t i = 0; i < n_face; ++i) {
        int n, a, b, c;
        f >> n >> a >> b >> c;
        if (n != 3)
            throw GridError("only triangle meshes are supported: " + path);
        mesh.triangles.push_back({a, b, c});
    }
    if (!f)
        throw GridError("truncated ply: " + path);
    return mesh;
}

} // namespace voxfuse
