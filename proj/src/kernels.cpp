#include "irt/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace irt::kernels {

namespace {
std::atomic<Exec> g_exec{Exec::Parallel};
std::atomic<int> g_threads{0};  // 0 = runtime default
}  // namespace

Exec default_exec() { return g_exec.load(); }
void set_default_exec(Exec e) { g_exec.store(e); }

void set_num_threads(int n) {
    g_threads.store(n);
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#endif
}

int num_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

ConvDims conv_dims(const std::vector<std::size_t>& xs,
                   const std::vector<std::size_t>& ws, std::size_t stride,
                   std::size_t pad) {
    if (xs.size() != 4 || ws.size() != 4)
        throw ShapeError("conv2d: expected rank-4 input/weight, got " +
                         shape_str(xs) + " and " + shape_str(ws));
    if (xs[1] != ws[1]) throw ShapeError("conv2d", xs, ws);
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
    ConvDims d;
    d.batch = xs[0];
    d.in_ch = xs[1];
    d.in_h = xs[2];
    d.in_w = xs[3];
    d.out_ch = ws[0];
    d.k_h = ws[2];
    d.k_w = ws[3];
    d.stride = stride;
    d.pad = pad;
    if (d.in_h + 2 * pad < d.k_h || d.in_w + 2 * pad < d.k_w)
        throw ShapeError("conv2d: kernel " + shape_str(ws) +
                         " larger than padded input " + shape_str(xs));
    d.out_h = (d.in_h + 2 * pad - d.k_h) / stride + 1;
    d.out_w = (d.in_w + 2 * pad - d.k_w) / stride + 1;
    return d;
}

namespace {

// Valid output range [lo, hi) for one kernel offset k: the outputs whose
// source index o*stride + k - pad lands inside [0, in). Hoisting this
// out of the pixel loops removes the per-pixel bounds branch so the
// inner loops vectorize; the arithmetic is unchanged (out-of-range taps
// contributed nothing).
inline void valid_range(std::size_t k, std::size_t pad, std::size_t stride,
                        std::size_t in, std::size_t out, std::size_t& lo,
                        std::size_t& hi) {
    lo = pad > k ? (pad - k + stride - 1) / stride : 0;
    hi = in + pad > k ? std::min(out, (in + pad - k + stride - 1) / stride) : 0;
    if (hi < lo) hi = lo;
}

inline void conv_forward_one(const float* x, const float* w, const float* b,
                             float* y, const ConvDims& d, std::size_t n,
                             std::size_t oc) {
    const std::size_t plane = d.in_h * d.in_w;
    const std::size_t oplane = d.out_h * d.out_w;
    float* yp = y + (n * d.out_ch + oc) * oplane;
    const float bias = b ? b[oc] : 0.0f;
    std::fill(yp, yp + oplane, bias);
    for (std::size_t ic = 0; ic < d.in_ch; ++ic) {
        const float* xp = x + (n * d.in_ch + ic) * plane;
        const float* wp = w + ((oc * d.in_ch + ic) * d.k_h) * d.k_w;
        for (std::size_t kh = 0; kh < d.k_h; ++kh) {
            std::size_t oh_lo, oh_hi;
            valid_range(kh, d.pad, d.stride, d.in_h, d.out_h, oh_lo, oh_hi);
            for (std::size_t kw = 0; kw < d.k_w; ++kw) {
                const float wv = wp[kh * d.k_w + kw];
                if (wv == 0.0f) continue;
                std::size_t ow_lo, ow_hi;
                valid_range(kw, d.pad, d.stride, d.in_w, d.out_w, ow_lo, ow_hi);
                const std::ptrdiff_t cb =
                    (std::ptrdiff_t)kw - (std::ptrdiff_t)d.pad;
                for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                    const float* xrow =
                        xp + (oh * d.stride + kh - d.pad) * d.in_w;
                    float* yrow = yp + oh * d.out_w;
                    for (std::size_t ow = ow_lo; ow < ow_hi; ++ow)
                        yrow[ow] +=
                            wv * xrow[(std::ptrdiff_t)(ow * d.stride) + cb];
                }
            }
        }
    }
}

inline void conv_backward_input_one(const float* gy, const float* w, float* gx,
                                    const ConvDims& d, std::size_t n,
                                    std::size_t ic) {
    const std::size_t plane = d.in_h * d.in_w;
    const std::size_t oplane = d.out_h * d.out_w;
    float* gxp = gx + (n * d.in_ch + ic) * plane;
    std::fill(gxp, gxp + plane, 0.0f);
    for (std::size_t oc = 0; oc < d.out_ch; ++oc) {
        const float* gyp = gy + (n * d.out_ch + oc) * oplane;
        const float* wp = w + ((oc * d.in_ch + ic) * d.k_h) * d.k_w;
        for (std::size_t kh = 0; kh < d.k_h; ++kh) {
            std::size_t oh_lo, oh_hi;
            valid_range(kh, d.pad, d.stride, d.in_h, d.out_h, oh_lo, oh_hi);
            for (std::size_t kw = 0; kw < d.k_w; ++kw) {
                const float wv = wp[kh * d.k_w + kw];
                if (wv == 0.0f) continue;
                std::size_t ow_lo, ow_hi;
                valid_range(kw, d.pad, d.stride, d.in_w, d.out_w, ow_lo, ow_hi);
                const std::ptrdiff_t cb =
                    (std::ptrdiff_t)kw - (std::ptrdiff_t)d.pad;
                for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                    const float* gyrow = gyp + oh * d.out_w;
                    float* gxrow =
                        gxp + (oh * d.stride + kh - d.pad) * d.in_w;
                    for (std::size_t ow = ow_lo; ow < ow_hi; ++ow)
                        gxrow[(std::ptrdiff_t)(ow * d.stride) + cb] +=
                            wv * gyrow[ow];
                }
            }
        }
    }
}

inline void conv_backward_weights_one(const float* gy, const float* x,
                                      float* gw, float* gb, const ConvDims& d,
                                      std::size_t oc) {
    const std::size_t plane = d.in_h * d.in_w;
    const std::size_t oplane = d.out_h * d.out_w;
    float* gwp = gw + oc * d.in_ch * d.k_h * d.k_w;
    std::fill(gwp, gwp + d.in_ch * d.k_h * d.k_w, 0.0f);
    double gbias = 0.0;
    for (std::size_t n = 0; n < d.batch; ++n) {
        const float* gyp = gy + (n * d.out_ch + oc) * oplane;
        if (gb)
            for (std::size_t i = 0; i < oplane; ++i) gbias += gyp[i];
        for (std::size_t ic = 0; ic < d.in_ch; ++ic) {
            const float* xp = x + (n * d.in_ch + ic) * plane;
            for (std::size_t kh = 0; kh < d.k_h; ++kh) {
                std::size_t oh_lo, oh_hi;
                valid_range(kh, d.pad, d.stride, d.in_h, d.out_h, oh_lo, oh_hi);
                for (std::size_t kw = 0; kw < d.k_w; ++kw) {
                    std::size_t ow_lo, ow_hi;
                    valid_range(kw, d.pad, d.stride, d.in_w, d.out_w, ow_lo,
                                ow_hi);
                    const std::ptrdiff_t cb =
                        (std::ptrdiff_t)kw - (std::ptrdiff_t)d.pad;
                    float acc = 0.0f;
                    for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                        const float* xrow =
                            xp + (oh * d.stride + kh - d.pad) * d.in_w;
                        const float* gyrow = gyp + oh * d.out_w;
                        for (std::size_t ow = ow_lo; ow < ow_hi; ++ow)
                            acc += gyrow[ow] *
                                   xrow[(std::ptrdiff_t)(ow * d.stride) + cb];
                    }
                    gwp[(ic * d.k_h + kh) * d.k_w + kw] += acc;
                }
            }
        }
    }
    if (gb) gb[oc] = static_cast<float>(gbias);
}

}  // namespace

void conv2d_forward(const float* x, const float* w, const float* b, float* y,
                    const ConvDims& d, Exec e) {
    const std::ptrdiff_t total =
        static_cast<std::ptrdiff_t>(d.batch * d.out_ch);
    if (e == Exec::Parallel) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < total; ++i)
            conv_forward_one(x, w, b, y, d, i / d.out_ch, i % d.out_ch);
    } else {
        for (std::ptrdiff_t i = 0; i < total; ++i)
            conv_forward_one(x, w, b, y, d, i / d.out_ch, i % d.out_ch);
    }
}

void conv2d_backward_input(const float* gy, const float* w, float* gx,
                           const ConvDims& d, Exec e) {
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(d.batch * d.in_ch);
    if (e == Exec::Parallel) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < total; ++i)
            conv_backward_input_one(gy, w, gx, d, i / d.in_ch, i % d.in_ch);
    } else {
        for (std::ptrdiff_t i = 0; i < total; ++i)
            conv_backward_input_one(gy, w, gx, d, i / d.in_ch, i % d.in_ch);
    }
}

void conv2d_backward_weights(const float* gy, const float* x, float* gw,
                             float* gb, const ConvDims& d, Exec e) {
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(d.out_ch);
    if (e == Exec::Parallel) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t oc = 0; oc < total; ++oc)
            conv_backward_weights_one(gy, x, gw, gb, d, oc);
    } else {
        for (std::ptrdiff_t oc = 0; oc < total; ++oc)
            conv_backward_weights_one(gy, x, gw, gb, d, oc);
    }
}

PoolDims pool_dims(const std::vector<std::size_t>& xs, std::size_t k,
                   std::size_t stride) {
    if (xs.size() != 4)
        throw ShapeError("maxpool: expected rank-4 input, got " + shape_str(xs));
    if (k == 0 || stride == 0)
        throw std::invalid_argument("maxpool: window and stride must be >= 1");
    if (xs[2] < k || xs[3] < k)
        throw ShapeError("maxpool: window " + std::to_string(k) +
                         " larger than input " + shape_str(xs));
    PoolDims d;
    d.batch = xs[0];
    d.ch = xs[1];
    d.in_h = xs[2];
    d.in_w = xs[3];
    d.k = k;
    d.stride = stride;
    d.out_h = (xs[2] - k) / stride + 1;
    d.out_w = (xs[3] - k) / stride + 1;
    return d;
}

namespace {

inline void maxpool_one(const float* x, float* y, std::int32_t* argmax,
                        const PoolDims& d, std::size_t nc) {
    const std::size_t plane = d.in_h * d.in_w;
    const std::size_t oplane = d.out_h * d.out_w;
    const float* xp = x + nc * plane;
    float* yp = y + nc * oplane;
    std::int32_t* ap = argmax + nc * oplane;
    for (std::size_t oh = 0; oh < d.out_h; ++oh) {
        for (std::size_t ow = 0; ow < d.out_w; ++ow) {
            float best = xp[oh * d.stride * d.in_w + ow * d.stride];
            std::int32_t besti =
                static_cast<std::int32_t>(oh * d.stride * d.in_w + ow * d.stride);
            for (std::size_t kh = 0; kh < d.k; ++kh) {
                for (std::size_t kw = 0; kw < d.k; ++kw) {
                    const std::size_t idx =
                        (oh * d.stride + kh) * d.in_w + (ow * d.stride + kw);
                    if (xp[idx] > best) {  // strict: first maximum wins ties
                        best = xp[idx];
                        besti = static_cast<std::int32_t>(idx);
                    }
                }
            }
            yp[oh * d.out_w + ow] = best;
            ap[oh * d.out_w + ow] = besti;
        }
    }
}

}  // namespace

void maxpool_forward(const float* x, float* y, std::int32_t* argmax,
                     const PoolDims& d, Exec e) {
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(d.batch * d.ch);
    if (e == Exec::Parallel) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < total; ++i) maxpool_one(x, y, argmax, d, i);
    } else {
        for (std::ptrdiff_t i = 0; i < total; ++i) maxpool_one(x, y, argmax, d, i);
    }
}

void maxpool_backward(const float* gy, const std::int32_t* argmax, float* gx,
                      const PoolDims& d, Exec) {
    const std::size_t plane = d.in_h * d.in_w;
    const std::size_t oplane = d.out_h * d.out_w;
    std::memset(gx, 0, d.batch * d.ch * plane * sizeof(float));
    // Scatter stays serial; windows may overlap when stride < k.
    for (std::size_t nc = 0; nc < d.batch * d.ch; ++nc) {
        const float* gyp = gy + nc * oplane;
        const std::int32_t* ap = argmax + nc * oplane;
        float* gxp = gx + nc * plane;
        for (std::size_t i = 0; i < oplane; ++i) gxp[ap[i]] += gyp[i];
    }
}

void relu_forward(const float* x, float* y, std::size_t n, Exec e) {
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(n);
    if (e == Exec::Parallel) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < total; ++i)
            y[i] = x[i] > 0.0f ? x[i] : 0.0f;
    } else {
        for (std::ptrdiff_t i = 0; i < total; ++i)
            y[i] = x[i] > 0.0f ? x[i] : 0.0f;
    }
}

void relu_backward(const float* gy, const float* x, float* gx, std::size_t n,
                   Exec e) {
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(n);
    if (e == Exec::Parallel) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < total; ++i)
            gx[i] = x[i] > 0.0f ? gy[i] : 0.0f;
    } else {
        for (std::ptrdiff_t i = 0; i < total; ++i)
            gx[i] = x[i] > 0.0f ? gy[i] : 0.0f;
    }
}

}  // namespace irt::kernels
