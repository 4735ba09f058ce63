#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "irt/tensor.hpp"

namespace irt::kernels {

// Parallel variants split work over disjoint output slices, so results
// are bit-identical to the serial reference at any thread count.
enum class Exec { Serial, Parallel };

// Process-wide default used by the graph ops; tests pin Serial to
// compare against the reference.
Exec default_exec();
void set_default_exec(Exec e);
void set_num_threads(int n);
int num_threads();

struct ConvDims {
    std::size_t batch, in_ch, in_h, in_w;
    std::size_t out_ch, k_h, k_w;
    std::size_t stride, pad;
    std::size_t out_h, out_w;
};

ConvDims conv_dims(const std::vector<std::size_t>& x_shape,
                   const std::vector<std::size_t>& w_shape, std::size_t stride,
                   std::size_t pad);

// x: [N,IC,H,W], w: [OC,IC,KH,KW], b: [OC] (optional, may be null) -> [N,OC,OH,OW]
void conv2d_forward(const float* x, const float* w, const float* b, float* y,
                    const ConvDims& d, Exec e);
void conv2d_backward_input(const float* gy, const float* w, float* gx,
                           const ConvDims& d, Exec e);
void conv2d_backward_weights(const float* gy, const float* x, float* gw,
                             float* gb, const ConvDims& d, Exec e);

struct PoolDims {
    std::size_t batch, ch, in_h, in_w;
    std::size_t k, stride;
    std::size_t out_h, out_w;
};

PoolDims pool_dims(const std::vector<std::size_t>& x_shape, std::size_t k,
                   std::size_t stride);

// Ties route the gradient to the first (row-major) maximal element;
// argmax records the winning flat offset within the input plane.
void maxpool_forward(const float* x, float* y, std::int32_t* argmax,
                     const PoolDims& d, Exec e);
void maxpool_backward(const float* gy, const std::int32_t* argmax, float* gx,
                      const PoolDims& d, Exec e);

void relu_forward(const float* x, float* y, std::size_t n, Exec e);
// ReLU'(0) = 0.
void relu_backward(const float* gy, const float* x, float* gx, std::size_t n,
                   Exec e);

}  // namespace irt::kernels
