// Interpretation maps: completeness, closed-form oracles, and
// cross-method identities.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "irt/discrepancy.hpp"
#include "irt/interpret.hpp"
#include "irt/network.hpp"

using namespace irt;

namespace {

Tensor random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
    Tensor x({1, 1, h, w});
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    for (auto& v : x.data) v = d(rng);
    return x;
}

// Independent CAM: run the forward pass, then average feature maps by
// head weights without going through the interpret module.
std::vector<float> cam_by_hand(const Network& net, const Tensor& x, int c) {
    ForwardResult r = forward(net, x);
    std::size_t k = net.feature_channels(), u = net.spatial_units();
    std::vector<float> out(u, 0.0f);
    for (std::size_t ch = 0; ch < k; ++ch) {
        float w = net.head_w.data[(std::size_t)c * k + ch];
        for (std::size_t i = 0; i < u; ++i)
            out[i] += w * r.features.data[ch * u + i] / (float)u;
    }
    return out;
}

}  // namespace

TEST_CASE("cam matches the by-hand weighted feature average") {
    std::mt19937_64 rng(1);
    Network net = build_network(Arch::Small, 1, 12, 12, 4, 3);
    Tensor x = random_image(12, 12, rng);
    for (int c = 0; c < 4; ++c) {
        InterpMap m = cam(net, x, c);
        auto ref = cam_by_hand(net, x, c);
        REQUIRE(m.values.size() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i)
            CHECK(m.values[i] == doctest::Approx(ref[i]).epsilon(1e-6));
    }
}

TEST_CASE("cam completeness: map sums to the pre-bias logit") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        Network net = build_network(trial % 2 ? Arch::Pool : Arch::Small, 1,
                                    14, 14, 5, (std::uint64_t)trial);
        Tensor x = random_image(14, 14, rng);
        Tensor pre = prebias_logits(net, x);
        for (int c = 0; c < 5; ++c) {
            InterpMap m = cam(net, x, c);
            double s = 0.0;
            for (float v : m.values) s += v;
            CHECK(std::abs(s - pre.data[c]) <= 1e-4);
        }
    }
}

TEST_CASE("gradcam equals cam on gap-head networks") {
    std::mt19937_64 rng(3);
    Network net = build_network(Arch::Small, 1, 12, 12, 3, 7);
    Tensor x = random_image(12, 12, rng);
    for (int c = 0; c < 3; ++c) {
        InterpMap a = cam(net, x, c);
        InterpMap b = gradcam(net, x, c);
        REQUIRE(a.values.size() == b.values.size());
        for (std::size_t i = 0; i < a.values.size(); ++i)
            CHECK(std::abs(a.values[i] - b.values[i]) <= 1e-5);
    }
}

TEST_CASE("gradcam weights equal head weights over u on gap heads") {
    std::mt19937_64 rng(4);
    Network net = build_network(Arch::Small, 1, 10, 10, 3, 11);
    Tensor x = random_image(10, 10, rng);
    std::size_t k = net.feature_channels(), u = net.spatial_units();
    auto w = gradcam_weights(net, x, 1);
    REQUIRE(w.size() == k);
    for (std::size_t ch = 0; ch < k; ++ch)
        CHECK(w[ch] == doctest::Approx(net.head_w.data[k + ch] / (double)u)
                           .epsilon(1e-4));
}

TEST_CASE("gradcampp matches an independent closed-form recomputation") {
    // Exponential-score variant: weights alpha_k * relu(S * g_k) with
    // alpha_k = g_k^2 / (2 g_k^2 + g_k^3 sum_i A_{k,i}) and S = exp(f_c),
    // rebuilt here from raw per-channel gradients obtained by finite
    // differences on the feature tensor.
    std::mt19937_64 rng(5);
    Network net = build_network(Arch::Small, 1, 10, 10, 3, 2);
    Tensor x = random_image(10, 10, rng);
    int c = 0;
    InterpMap pp = gradcampp(net, x, c);
    ForwardResult r = forward(net, x);
    std::size_t k = net.feature_channels(), u = net.spatial_units();
    // per-channel df_c/dA on a gap head is head_w[c,k]/u, independent
    // of position; derive it from the dense head directly.
    double S = std::exp((double)r.logits.data[c]);
    std::vector<float> ref(u, 0.0f);
    for (std::size_t ch = 0; ch < k; ++ch) {
        double gk = net.head_w.data[(std::size_t)c * k + ch];
        double sumA = 0.0;
        for (std::size_t i = 0; i < u; ++i)
            sumA += r.features.data[ch * u + i];
        double denom = 2.0 * gk * gk + gk * gk * gk * sumA;
        double alpha = denom != 0.0 ? gk * gk / denom : 0.0;
        double wk = alpha * std::max(0.0, S * gk);
        for (std::size_t i = 0; i < u; ++i)
            ref[i] += (float)(wk * r.features.data[ch * u + i]);
    }
    REQUIRE(pp.values.size() == u);
    for (std::size_t i = 0; i < u; ++i)
        CHECK(pp.values[i] ==
              doctest::Approx(ref[i]).epsilon(1e-3).scale(1e-6));
}

TEST_CASE("ig is exact on linear models for any step count") {
    // GAP + dense over the raw input is linear; IG with a zero baseline
    // must recover f(x) - f(0) exactly, even at m = 1.
    Network net = build_network(Arch::Small, 1, 8, 8, 3, 1);
    // strip conv blocks so the map input->features is identity-like:
    // instead, test on the full net's linearization surrogate: build a
    // genuinely linear net by zeroing conv nonlinearity via weights.
    std::mt19937_64 rng(6);
    Tensor x = random_image(8, 8, rng);
    // linear surrogate: single 1x1 conv, no relu effect if weights
    // positive and input nonnegative
    Network lin = build_network(Arch::Small, 1, 8, 8, 3, 1);
    for (auto* p : lin.parameters())
        for (auto& v : p->data) v = std::abs(v);
    Tensor base({1, 1, 8, 8});
    Tensor pre_x = prebias_logits(lin, x);
    Tensor pre_b = prebias_logits(lin, base);
    for (int m : {1, 4, 64}) {
        InterpMap a = ig(lin, x, 1, base, m);
        double s = 0.0;
        for (float v : a.values) s += v;
        // positive-weight relu nets are linear on nonnegative inputs
        CHECK(std::abs(s - (pre_x.data[1] - pre_b.data[1])) <= 1e-3);
    }
}

TEST_CASE("ig completeness residual shrinks with the step count") {
    std::mt19937_64 rng(7);
    Network net = build_network(Arch::Small, 1, 12, 12, 4, 5);
    // with zero conv biases a relu net is exactly linear along the ray
    // from the zero baseline and IG is exact for any m; random biases
    // put relu kinks on the path so the Riemann error is real
    std::normal_distribution<float> bias(0.0f, 0.2f);
    for (auto& blk : net.blocks)
        for (auto& v : blk.b.data) v = bias(rng);
    Tensor base({1, 1, 12, 12});
    double r8 = 0.0, r128 = 0.0;
    int n = 20;
    for (int t = 0; t < n; ++t) {
        Tensor x = random_image(12, 12, rng);
        double target = prebias_logits(net, x).data[2] -
                        prebias_logits(net, base).data[2];
        auto resid = [&](int m) {
            InterpMap a = ig(net, x, 2, base, m);
            double s = 0.0;
            for (float v : a.values) s += v;
            return std::abs(s - target);
        };
        r8 += resid(8);
        r128 += resid(128);
    }
    CHECK(r128 <= 0.25 * r8 + 1e-9);
}

TEST_CASE("interpreter names round-trip") {
    for (auto k : {Interpreter::CAM, Interpreter::GradCAM,
                   Interpreter::GradCAMpp, Interpreter::IG, Interpreter::Repr})
        CHECK(interpreter_from_name(interpreter_name(k)) == k);
    CHECK_THROWS(interpreter_from_name("nonsense"));
}

TEST_CASE("repr map is the flattened feature tensor") {
    std::mt19937_64 rng(8);
    Network net = build_network(Arch::Small, 1, 10, 10, 3, 4);
    Tensor x = random_image(10, 10, rng);
    InterpMap m = repr(net, x);
    ForwardResult r = forward(net, x);
    REQUIRE(m.values.size() == r.features.numel());
    for (std::size_t i = 0; i < m.values.size(); ++i)
        CHECK(m.values[i] == r.features.data[i]);
    CHECK(m.class_label == -1);
}

TEST_CASE("input_gradient matches finite differences") {
    std::mt19937_64 rng(9);
    Network net = build_network(Arch::Small, 1, 8, 8, 3, 6);
    Tensor x = random_image(8, 8, rng);
    Tensor g = input_gradient(net, x, 1);
    REQUIRE(g.numel() == x.numel());
    // directional derivative: per-pixel differences sit at the float32
    // noise floor, the aggregate along a random direction does not
    // relu kinks sit close to x (zero conv biases), so h must be small
    // enough that the secant stays on the local linear pieces
    std::uniform_real_distribution<float> dir(-1.0f, 1.0f);
    const double h = 1e-4;
    for (int trial = 0; trial < 4; ++trial) {
        Tensor d(x.shape);
        for (auto& v : d.data) v = dir(rng);
        Tensor xp = x, xm = x;
        double dot = 0.0;
        for (std::size_t i = 0; i < x.numel(); ++i) {
            xp.data[i] += (float)h * d.data[i];
            xm.data[i] -= (float)h * d.data[i];
            dot += (double)g.data[i] * d.data[i];
        }
        double fd = (prebias_logits(net, xp).data[1] -
                     prebias_logits(net, xm).data[1]) /
                    (2 * h);
        CHECK(dot == doctest::Approx(fd).epsilon(3e-2).scale(1e-3));
    }
}

TEST_CASE("cam_all_classes node agrees with per-class cam") {
    std::mt19937_64 rng(10);
    Network net = build_network(Arch::Small, 1, 10, 10, 4, 8);
    Tensor x = random_image(10, 10, rng);
    Graph g;
    Var xin = g.constant(x);
    NetTrace t = trace(net, g, xin, false);
    Var all = cam_all_classes(g, t);
    const Tensor& v = g.value(all);
    std::size_t u = net.spatial_units();
    REQUIRE(v.shape == std::vector<std::size_t>{1, 4, u});
    for (int c = 0; c < 4; ++c) {
        InterpMap m = cam(net, x, c);
        for (std::size_t i = 0; i < u; ++i)
            CHECK(v.data[(std::size_t)c * u + i] ==
                  doctest::Approx(m.values[i]).epsilon(1e-5));
    }
}
