#include "voxfuse/nets.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace voxfuse::nn {

using nlohmann::json;

namespace {

// uniform fan-in init, bound 1/sqrt(fan_in)
void init_uniform(Tensor& t, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(double(fan_in));
    for (auto& v : t.values()) v = rng.uniform(-bound, bound);
}

Conv2dParams make_conv2d(int ci, int co, const std::string& name, Rng& rng) {
    Conv2dParams p;
    p.w = Tensor::parameter({co, ci * 9}, name + ".weight");
    p.b = Tensor::parameter({co}, name + ".bias");
    init_uniform(p.w, ci * 9, rng);
    init_uniform(p.b, ci * 9, rng);
    return p;
}

Conv3dParams make_conv3d(int ci, int co, int k, const std::string& name, Rng& rng) {
    Conv3dParams p;
    p.w = Tensor::parameter({co, ci * k}, name + ".weight");
    p.b = Tensor::parameter({co}, name + ".bias");
    init_uniform(p.w, ci * k, rng);
    init_uniform(p.b, ci * k, rng);
    return p;
}

} // namespace

FeatureNet::FeatureNet(int blocks, int in_channels, int hidden, const std::string& prefix,
                       Rng& rng)
    : hidden_(hidden), in_channels_(in_channels) {
    if (blocks < 1)
        throw NeuralError("feature net needs at least one block");
    for (int b = 0; b < blocks; ++b) {
        const int ci = b == 0 ? in_channels : hidden;
        convs_.push_back(
            make_conv2d(ci, hidden, prefix + ".block" + std::to_string(b) + ".conv0", rng));
        convs_.push_back(
            make_conv2d(hidden, hidden, prefix + ".block" + std::to_string(b) + ".conv1", rng));
    }
}

Tensor FeatureNet::forward(const Tensor& input) const {
    if (input.shape().size() != 3 || input.shape()[0] != in_channels_)
        throw NeuralError("feature net: bad input shape");
    for (double v : input.values())
        if (std::isnan(v))
            throw NeuralError("feature net: NaN in input raster");

    Tensor h;
    for (size_t b = 0; b < convs_.size() / 2; ++b) {
        const Tensor& src = b == 0 ? input : h;
        Tensor t = tanh_op(conv2d_3x3(src, convs_[2 * b].w, convs_[2 * b].b));
        t = tanh_op(conv2d_3x3(t, convs_[2 * b + 1].w, convs_[2 * b + 1].b));
        h = b == 0 ? t : add(t, h); // residual chaining from the second block on
    }
    Tensor normalized = l2_normalize_dim0(h);
    // depth goes in raw as the last channel
    Tensor depth_channel = input;
    if (in_channels_ != 1) {
        // keep only the first input channel (depth) when RGB is attached
        std::vector<double> d(input.values().begin(),
                              input.values().begin() + long(numel_of(input.shape()) / in_channels_));
        depth_channel = Tensor::constant({1, input.shape()[1], input.shape()[2]}, std::move(d));
    }
    return concat_dim0({normalized, depth_channel});
}

std::vector<Tensor> FeatureNet::parameters() const {
    std::vector<Tensor> out;
    for (const auto& c : convs_) {
        out.push_back(c.w);
        out.push_back(c.b);
    }
    return out;
}

WeightingNet::WeightingNet(int in_channels, const std::string& prefix, Rng& rng)
    : in_channels_(in_channels) {
    c1_ = make_conv3d(in_channels, 32, 27, prefix + ".conv1", rng);
    c2_ = make_conv3d(32, 16, 27, prefix + ".conv2", rng);
    head_ = make_conv3d(16, 1, 1, prefix + ".head", rng);
}

Tensor WeightingNet::forward(const Tensor& chunk) const {
    if (chunk.shape().size() != 4 || chunk.shape()[0] != in_channels_)
        throw NeuralError("weighting net: input channel count mismatch");
    Tensor h = relu_op(conv3d_3x3_replpad(chunk, c1_.w, c1_.b));
    h = relu_op(conv3d_3x3_replpad(h, c2_.w, c2_.b));
    return sigmoid_op(conv3d_1x1(h, head_.w, head_.b));
}

std::vector<Tensor> WeightingNet::parameters() const {
    return {c1_.w, c1_.b, c2_.w, c2_.b, head_.w, head_.b};
}

NetworkStack::NetworkStack(int blocks, int hidden, uint64_t seed) {
    Rng rng(derive_seed(seed, 0xf00d));
    feature[0] = FeatureNet(blocks, 1, hidden, "f1", rng);
    feature[1] = FeatureNet(blocks, 1, hidden, "f2", rng);
    feature_channels = hidden + 1;
    weighting = WeightingNet(2 * (feature_channels + 1), "g", rng);
}

std::vector<Tensor> NetworkStack::parameters() const {
    std::vector<Tensor> out;
    for (const auto& f : {feature[0], feature[1]}) {
        auto p = f.parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    auto p = weighting.parameters();
    out.insert(out.end(), p.begin(), p.end());
    return out;
}

int64_t NetworkStack::parameter_count() const {
    int64_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
}

std::vector<double> make_weighting_input(const FeatureGrid& f1, const Field3<uint32_t>& w1,
                                         const FeatureGrid& f2, const Field3<uint32_t>& w2,
                                         const IndexBox& box) {
    const int n = f1.channels;
    const Index3 e = box.extent();
    const int64_t vox = int64_t(e.x()) * e.y() * e.z();
    std::vector<double> input(size_t(2 * (n + 1)) * vox, 0.0);

    const Index3 dims = w1.dims;
    auto in_grid = [&](int x, int y, int z) {
        return x >= 0 && x < dims.x() && y >= 0 && y < dims.y() && z >= 0 && z < dims.z();
    };

    int64_t p = 0;
    for (int z = box.min.z(); z <= box.max.z(); ++z)
        for (int y = box.min.y(); y <= box.max.y(); ++y)
            for (int x = box.min.x(); x <= box.max.x(); ++x, ++p) {
                if (!in_grid(x, y, z)) continue; // outside the grid stays zero
                const int64_t l = (int64_t(z) * dims.y() + y) * dims.x() + x;
                const float* a = f1.voxel(l);
                const float* b = f2.voxel(l);
                for (int c = 0; c < n; ++c) input[size_t(c) * size_t(vox) + size_t(p)] = a[c];
                input[size_t(n) * size_t(vox) + size_t(p)] = std::tanh(double(w1[l]));
                for (int c = 0; c < n; ++c)
                    input[size_t(n + 1 + c) * size_t(vox) + size_t(p)] = b[c];
                input[size_t(2 * n + 1) * size_t(vox) + size_t(p)] = std::tanh(double(w2[l]));
            }
    return input;
}

namespace {

// Window origins along one axis: stride d/2, last origin clamped to size-d.
std::vector<int> window_origins(int size, int d) {
    std::vector<int> o;
    if (size <= d) {
        o.push_back(0);
        return o;
    }
    for (int s = 0;; s += d / 2) {
        if (s + d >= size) {
            o.push_back(size - d);
            break;
        }
        o.push_back(s);
    }
    return o;
}

// Write range per window: boundaries at the midpoints of consecutive window
// overlaps (the central-d/2 rule), extended to the box edges at the ends.
void write_ranges(const std::vector<int>& origins, int size, int d, std::vector<int>& lo,
                  std::vector<int>& hi) {
    const int k = int(origins.size());
    lo.resize(k);
    hi.resize(k);
    for (int i = 0; i < k; ++i) {
        lo[i] = i == 0 ? 0 : (origins[i - 1] + origins[i] + d) / 2;
        hi[i] = i + 1 == k ? size : (origins[i] + origins[i + 1] + d) / 2;
    }
}

} // namespace

Field3<double> sliding_window_alpha(const WeightingNet& net, const FeatureGrid& f1,
                                    const Field3<uint32_t>& w1, const FeatureGrid& f2,
                                    const Field3<uint32_t>& w2, const IndexBox& box, int d) {
    if (box.empty())
        throw NeuralError("sliding_window_alpha: empty box");
    NoGradGuard guard;
    const Index3 e = box.extent();
    Field3<double> alpha(e, 0.0);

    const std::vector<int> ox = window_origins(e.x(), d);
    const std::vector<int> oy = window_origins(e.y(), d);
    const std::vector<int> oz = window_origins(e.z(), d);
    std::vector<int> lx, hx, ly, hy, lz, hz;
    write_ranges(ox, e.x(), d, lx, hx);
    write_ranges(oy, e.y(), d, ly, hy);
    write_ranges(oz, e.z(), d, lz, hz);

    for (size_t iz = 0; iz < oz.size(); ++iz)
        for (size_t iy = 0; iy < oy.size(); ++iy)
            for (size_t ix = 0; ix < ox.size(); ++ix) {
                IndexBox win;
                win.min = box.min + Index3(ox[ix], oy[iy], oz[iz]);
                win.max = win.min + Index3(std::min(d, e.x()), std::min(d, e.y()),
                                           std::min(d, e.z())) -
                          Index3::Ones();
                const Index3 we = win.extent();
                Tensor input = Tensor::constant({net.in_channels(), we.z(), we.y(), we.x()},
                                                make_weighting_input(f1, w1, f2, w2, win));
                Tensor a = net.forward(input);
                const auto& av = a.values();
                for (int z = lz[iz]; z < hz[iz]; ++z)
                    for (int y = ly[iy]; y < hy[iy]; ++y)
                        for (int x = lx[ix]; x < hx[ix]; ++x) {
                            const int wz = z - oz[iz];
                            const int wy = y - oy[iy];
                            const int wx = x - ox[ix];
                            alpha.at(x, y, z) =
                                av[(size_t(wz) * we.y() + wy) * we.x() + wx];
                        }
            }
    return alpha;
}

void save_checkpoint(const std::string& path, const std::vector<Tensor>& params) {
    json manifest;
    manifest["format"] = "voxfuse-params-v1";
    json layers = json::array();
    int64_t offset = 0;
    for (const auto& p : params) {
        json l;
        l["name"] = p.node().name;
        l["shape"] = p.shape();
        l["offset"] = offset;
        offset += p.numel();
        layers.push_back(l);
    }
    manifest["layers"] = layers;

    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw NeuralError("cannot write checkpoint: " + path);
    std::string h = manifest.dump();
    f.write(h.data(), std::streamsize(h.size()));
    f.put('\n');
    for (const auto& p : params) {
        std::vector<float> f32(p.values().size());
        for (size_t i = 0; i < f32.size(); ++i) f32[i] = static_cast<float>(p.values()[i]);
        f.write(reinterpret_cast<const char*>(f32.data()),
                std::streamsize(f32.size() * sizeof(float)));
    }
    if (!f)
        throw NeuralError("short write on checkpoint: " + path);
}

void load_checkpoint(const std::string& path, const std::vector<Tensor>& params) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw NeuralError("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(f, line))
        throw NeuralError("checkpoint missing manifest: " + path);
    json manifest = json::parse(line);
    if (manifest.value("format", "") != "voxfuse-params-v1")
        throw NeuralError("unknown checkpoint format in " + path);
    const auto& layers = manifest.at("layers");
    if (layers.size() != params.size())
        throw NeuralError("checkpoint layer count does not match the model");
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& l = layers[i];
        if (l.at("name").get<std::string>() != params[i].node().name)
            throw NeuralError("checkpoint layer name mismatch: " +
                              l.at("name").get<std::string>());
        std::vector<int> shape = l.at("shape").get<std::vector<int>>();
        if (shape != params[i].shape())
            throw NeuralError("checkpoint layer shape mismatch for " + params[i].node().name);
        std::vector<float> f32(params[i].values().size());
        f.read(reinterpret_cast<char*>(f32.data()), std::streamsize(f32.size() * sizeof(float)));
        for (size_t j = 0; j < f32.size(); ++j) params[i].values()[j] = f32[j];
    }
    if (!f)
        throw NeuralError("checkpoint truncated: " + path);
}

} // namespace voxfuse::nn
