#include "irt/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace irt {

std::string arch_name(Arch a) { return a == Arch::Small ? "small" : "pool"; }

Arch arch_from_name(const std::string& s) {
    if (s == "small") return Arch::Small;
    if (s == "pool") return Arch::Pool;
    throw std::invalid_argument("unknown architecture '" + s +
                                "' (expected small|pool)");
}

std::size_t Network::spatial_units() const {
    std::size_t h = in_h, w = in_w;
    for (const auto& blk : blocks) {
        const std::size_t kh = blk.w.shape[2], kw = blk.w.shape[3];
        if (h + 2 * blk.pad < kh || w + 2 * blk.pad < kw)
            throw ShapeError("network: input " + shape_str({in_ch, in_h, in_w}) +
                             " too small for architecture " + arch_name(arch));
        h = (h + 2 * blk.pad - kh) / blk.stride + 1;
        w = (w + 2 * blk.pad - kw) / blk.stride + 1;
        if (blk.pool_after) {
            if (h < 2 || w < 2)
                throw ShapeError("network: input too small for pooling stage");
            h = (h - 2) / 2 + 1;
            w = (w - 2) / 2 + 1;
        }
    }
    return h * w;
}

std::vector<Tensor*> Network::parameters() {
    std::vector<Tensor*> out;
    for (auto& blk : blocks) {
        out.push_back(&blk.w);
        out.push_back(&blk.b);
    }
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
}

std::vector<const Tensor*> Network::parameters() const {
    std::vector<const Tensor*> out;
    for (const auto& blk : blocks) {
        out.push_back(&blk.w);
        out.push_back(&blk.b);
    }
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
}

namespace {

Tensor he_normal(std::vector<std::size_t> shape, std::size_t fan_in,
                 std::mt19937& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> dist(
        0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
    for (float& v : t.data) v = dist(rng);
    return t;
}

}  // namespace

Network build_network(Arch arch, std::size_t in_ch, std::size_t in_h,
                      std::size_t in_w, std::size_t num_classes,
                      std::uint64_t seed) {
    Network net;
    net.arch = arch;
    net.in_ch = in_ch;
    net.in_h = in_h;
    net.in_w = in_w;
    net.num_classes = num_classes;
    std::mt19937 rng(static_cast<std::uint32_t>(seed));

    auto conv = [&](std::size_t oc, std::size_t ic, std::size_t k,
                    std::size_t stride, bool pool_after) {
        ConvBlock blk;
        blk.w = he_normal({oc, ic, k, k}, ic * k * k, rng);
        blk.b = Tensor({oc});
        blk.stride = stride;
        blk.pad = k / 2;
        blk.pool_after = pool_after;
        net.blocks.push_back(std::move(blk));
    };

    std::size_t feat;
    if (arch == Arch::Small) {
        conv(16, in_ch, 3, 1, false);
        conv(32, 16, 3, 2, false);
        conv(100, 32, 3, 2, false);
        feat = 100;
    } else {
        conv(32, in_ch, 3, 1, true);
        conv(64, 32, 3, 1, true);
        feat = 64;
    }
    net.head_w = he_normal({num_classes, feat}, feat, rng);
    net.head_b = Tensor({num_classes});
    net.spatial_units();  // validates input/architecture compatibility
    return net;
}

std::vector<Var> param_leaves(const Network& net, Graph& g, bool requires_grad) {
    std::vector<Var> out;
    for (const auto& blk : net.blocks) {
        out.push_back(g.leaf(blk.w, requires_grad));
        out.push_back(g.leaf(blk.b, requires_grad));
    }
    out.push_back(g.leaf(net.head_w, requires_grad));
    out.push_back(g.leaf(net.head_b, requires_grad));
    return out;
}

NetTrace trace_with(const Network& net, Graph& g, Var x,
                    const std::vector<Var>& params) {
    if (params.size() != net.blocks.size() * 2 + 2)
        throw std::invalid_argument("trace_with: wrong parameter count");
    NetTrace t;
    t.params = params;
    Var h = x;
    for (std::size_t i = 0; i < net.blocks.size(); ++i) {
        const auto& blk = net.blocks[i];
        h = g.relu(g.conv2d(h, params[2 * i], params[2 * i + 1], blk.stride,
                            blk.pad));
        if (blk.pool_after) h = g.maxpool(h, 2, 2);
    }
    t.features = h;
    t.head_w = params[params.size() - 2];
    t.head_b = params[params.size() - 1];
    t.logits = g.dense(g.global_avg_pool(h), t.head_w, t.head_b);
    return t;
}

NetTrace trace(const Network& net, Graph& g, Var x, bool params_require_grad) {
    return trace_with(net, g, x, param_leaves(net, g, params_require_grad));
}

ForwardResult forward(const Network& net, const Tensor& batch) {
    if (batch.rank() != 4 || batch.shape[1] != net.in_ch ||
        batch.shape[2] != net.in_h || batch.shape[3] != net.in_w)
        throw ShapeError("forward", batch.shape,
                         {batch.rank() == 4 ? batch.shape[0] : 1, net.in_ch,
                          net.in_h, net.in_w});
    Graph g;
    Var x = g.constant(batch);
    NetTrace t = trace(net, g, x, false);
    const Tensor& feat = g.value(t.features);
    ForwardResult out;
    out.logits = g.value(t.logits);
    out.features =
        feat.reshaped({feat.shape[0], feat.shape[1], feat.shape[2] * feat.shape[3]});
    return out;
}

int predict(const Network& net, const Tensor& x) {
    Tensor logits = forward(net, x).logits;
    const std::size_t C = logits.shape[1];
    int best = 0;
    for (std::size_t c = 1; c < C; ++c)
        if (logits.data[c] > logits.data[best]) best = static_cast<int>(c);
    return best;
}

// --- checkpoint format ---

namespace {

constexpr char kMagic[4] = {'I', 'R', 'C', '1'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw CheckpointTruncationError("checkpoint truncated while reading u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw CheckpointTruncationError("checkpoint truncated while reading u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape) write_u64(os, d);
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * 4));
}

std::pair<std::string, Tensor> read_tensor(std::istream& is) {
    const std::uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
        throw CheckpointTruncationError("checkpoint truncated inside tensor name");
    const std::uint32_t rank = read_u32(is);
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i)
        shape[i] = static_cast<std::size_t>(read_u64(is));
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * 4)))
        throw CheckpointTruncationError("checkpoint truncated mid-tensor '" + name +
                                        "'");
    return {std::move(name), std::move(t)};
}

}  // namespace

void save_checkpoint(const Network& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    // meta carries the architecture tag and input geometry as a tensor so
    // the container stays pure name/dims/f32 records
    Tensor meta({5},
                {net.arch == Arch::Small ? 0.0f : 1.0f, static_cast<float>(net.in_ch),
                 static_cast<float>(net.in_h), static_cast<float>(net.in_w),
                 static_cast<float>(net.num_classes)});
    const auto params = net.parameters();
    write_u32(os, static_cast<std::uint32_t>(params.size() + 1));
    write_tensor(os, "meta", meta);
    for (std::size_t i = 0; i < net.blocks.size(); ++i) {
        write_tensor(os, "conv" + std::to_string(i) + ".w", net.blocks[i].w);
        write_tensor(os, "conv" + std::to_string(i) + ".b", net.blocks[i].b);
    }
    write_tensor(os, "head.w", net.head_w);
    write_tensor(os, "head.b", net.head_b);
    if (!os) throw IoError("write failure on '" + path + "'");
}

Network load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    char magic[4];
    if (!is.read(magic, 4))
        throw CheckpointTruncationError("checkpoint shorter than magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointMagicError("bad checkpoint magic in '" + path + "'");
    const std::uint32_t version = read_u32(is);
    if (version != kVersion)
        throw CheckpointVersionError("unsupported checkpoint version " +
                                     std::to_string(version));
    const std::uint32_t count = read_u32(is);
    if (count < 3) throw CheckpointTruncationError("checkpoint has too few tensors");

    auto [meta_name, meta] = read_tensor(is);
    if (meta_name != "meta" || meta.numel() != 5)
        throw CheckpointMagicError("checkpoint missing meta record");
    Network net = build_network(meta.data[0] == 0.0f ? Arch::Small : Arch::Pool,
                                static_cast<std::size_t>(meta.data[1]),
                                static_cast<std::size_t>(meta.data[2]),
                                static_cast<std::size_t>(meta.data[3]),
                                static_cast<std::size_t>(meta.data[4]), 0);
    auto params = net.parameters();
    if (count - 1 != params.size())
        throw CheckpointTruncationError("checkpoint tensor count mismatch");
    for (Tensor* p : params) {
        auto [name, t] = read_tensor(is);
        if (t.shape != p->shape)
            throw ShapeError("checkpoint tensor '" + name + "'", t.shape, p->shape);
        *p = std::move(t);
    }
    return net;
}

}  // namespace irt
