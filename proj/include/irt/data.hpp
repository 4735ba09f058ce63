#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "irt/tensor.hpp"

namespace irt {

struct Dataset {
    Tensor images;            // [n,1,H,W], pixels in [0,1]
    std::vector<int> labels;  // values in [0,C)
    std::string split;

    std::size_t size() const { return labels.size(); }
    Tensor image(std::size_t i) const;  // [1,1,H,W] view copy
};

struct IdxMagicError : IoError {
    using IoError::IoError;
};
struct IdxTruncationError : IoError {
    using IoError::IoError;
};
struct IdxCountMismatchError : IoError {
    using IoError::IoError;
};

// MNIST IDX pair: big-endian magic 0x803 (images) / 0x801 (labels),
// u8 pixels scaled by 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Two linearly separable classes (bright top half vs bottom half plus
// noise), deterministic per seed. n must be even.
Dataset synth_two_class(std::size_t n, std::size_t size, std::uint64_t seed);

// Seeded shuffle then prefix; the sweep/sample convention everywhere.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);
Dataset subset(const Dataset& d, const std::vector<std::size_t>& idx);

}  // namespace irt
