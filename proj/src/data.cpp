#include "irt/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>

namespace irt {

Tensor Dataset::image(std::size_t i) const {
    const std::size_t px = images.shape[1] * images.shape[2] * images.shape[3];
    Tensor out({1, images.shape[1], images.shape[2], images.shape[3]});
    std::memcpy(out.data.data(), images.data.data() + i * px, px * sizeof(float));
    return out;
}

namespace {

std::uint32_t read_be_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw IdxTruncationError("IDX file '" + path + "' truncated in header");
    return (static_cast<std::uint32_t>(b[0]) << 24) |
           (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | b[3];
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imf(images_path, std::ios::binary);
    if (!imf) throw IoError("cannot open '" + images_path + "'");
    std::ifstream lbf(labels_path, std::ios::binary);
    if (!lbf) throw IoError("cannot open '" + labels_path + "'");

    const std::uint32_t im_magic = read_be_u32(imf, images_path);
    if (im_magic != 0x00000803u)
        throw IdxMagicError("bad IDX image magic in '" + images_path + "'");
    const std::uint32_t lb_magic = read_be_u32(lbf, labels_path);
    if (lb_magic != 0x00000801u)
        throw IdxMagicError("bad IDX label magic in '" + labels_path + "'");

    const std::size_t n = read_be_u32(imf, images_path);
    const std::size_t h = read_be_u32(imf, images_path);
    const std::size_t w = read_be_u32(imf, images_path);
    const std::size_t n_labels = read_be_u32(lbf, labels_path);
    if (n != n_labels)
        throw IdxCountMismatchError("IDX count mismatch: " + std::to_string(n) +
                                    " images vs " + std::to_string(n_labels) +
                                    " labels");

    std::vector<unsigned char> raw(n * h * w);
    if (!imf.read(reinterpret_cast<char*>(raw.data()),
                  static_cast<std::streamsize>(raw.size())))
        throw IdxTruncationError("IDX file '" + images_path + "' truncated in data");
    std::vector<unsigned char> raw_labels(n);
    if (!lbf.read(reinterpret_cast<char*>(raw_labels.data()),
                  static_cast<std::streamsize>(n)))
        throw IdxTruncationError("IDX file '" + labels_path + "' truncated in data");

    Dataset d;
    d.images = Tensor({n, 1, h, w});
    for (std::size_t i = 0; i < raw.size(); ++i)
        d.images.data[i] = static_cast<float>(raw[i]) / 255.0f;
    d.labels.assign(raw_labels.begin(), raw_labels.end());
    return d;
}

Dataset synth_two_class(std::size_t n, std::size_t size, std::uint64_t seed) {
    if (n % 2 != 0)
        throw std::invalid_argument("synth_two_class: n must be even");
    std::mt19937 rng(static_cast<std::uint32_t>(seed));
    std::uniform_real_distribution<float> noise(0.0f, 0.15f);
    Dataset d;
    d.images = Tensor({n, 1, size, size});
    d.labels.resize(n);
    d.split = "synth";
    const std::size_t half = size / 2;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        d.labels[i] = label;
        float* img = d.images.data.data() + i * size * size;
        for (std::size_t r = 0; r < size; ++r) {
            const bool bright = label == 0 ? r < half : r >= half;
            for (std::size_t c = 0; c < size; ++c)
                img[r * size + c] =
                    bright ? 0.85f + noise(rng) : noise(rng);
        }
    }
    for (float& v : d.images.data) v = std::min(1.0f, std::max(0.0f, v));
    return d;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937 rng(static_cast<std::uint32_t>(seed));
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

Dataset subset(const Dataset& d, const std::vector<std::size_t>& idx) {
    const std::size_t px = d.images.shape[1] * d.images.shape[2] * d.images.shape[3];
    Dataset out;
    out.images = Tensor({idx.size(), d.images.shape[1], d.images.shape[2],
                         d.images.shape[3]});
    out.labels.resize(idx.size());
    out.split = d.split;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::memcpy(out.images.data.data() + i * px,
                    d.images.data.data() + idx[i] * px, px * sizeof(float));
        out.labels[i] = d.labels[idx[i]];
    }
    return out;
}

}  // namespace irt
