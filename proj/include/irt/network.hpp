#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "irt/graph.hpp"
#include "irt/tensor.hpp"

namespace irt {

enum class Arch { Small, Pool };

std::string arch_name(Arch a);
Arch arch_from_name(const std::string& s);

struct ConvBlock {
    Tensor w;  // [OC,IC,KH,KW]
    Tensor b;  // [OC]
    std::size_t stride = 1;
    std::size_t pad = 1;
    bool pool_after = false;  // 2x2 stride-2 max pool
};

// CNN with the fixed tail `global average pooling -> dense`, which is
// what makes CAM sum exactly to the pre-bias logit.
struct Network {
    Arch arch = Arch::Small;
    std::size_t in_ch = 1, in_h = 28, in_w = 28;
    std::size_t num_classes = 10;
    std::vector<ConvBlock> blocks;
    Tensor head_w;  // [C,K]
    Tensor head_b;  // [C]

    std::size_t feature_channels() const { return head_w.shape[1]; }
    std::size_t spatial_units() const;  // u, per-channel size at the penultimate layer

    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
};

Network build_network(Arch arch, std::size_t in_ch, std::size_t in_h,
                      std::size_t in_w, std::size_t num_classes,
                      std::uint64_t seed);

// Network subgraph wired onto a caller-owned tape.
struct NetTrace {
    Var logits;       // [N,C]
    Var features;     // [N,K,H,W], post-ReLU penultimate maps
    Var head_w;       // [C,K]
    Var head_b;       // [C]
    std::vector<Var> params;  // conv w/b pairs then head w/b
};

NetTrace trace(const Network& net, Graph& g, Var x, bool params_require_grad);

// Parameter leaves in the same order as Network::parameters(); lets two
// traces of the same net share one set of leaves on one tape.
std::vector<Var> param_leaves(const Network& net, Graph& g, bool requires_grad);
NetTrace trace_with(const Network& net, Graph& g, Var x,
                    const std::vector<Var>& params);

struct ForwardResult {
    Tensor logits;    // [N,C]
    Tensor features;  // [N,K,u]
};

ForwardResult forward(const Network& net, const Tensor& batch);

int predict(const Network& net, const Tensor& x);  // single example [1,C,H,W]

// --- checkpoint I/O, magic "IRC1", little-endian ---
struct CheckpointMagicError : IoError {
    using IoError::IoError;
};
struct CheckpointVersionError : IoError {
    using IoError::IoError;
};
struct CheckpointTruncationError : IoError {
    using IoError::IoError;
};

void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

}  // namespace irt
