#include "irt/interpret.hpp"

#include <cmath>
#include <stdexcept>

namespace irt {

std::string interpreter_name(Interpreter k) {
    switch (k) {
        case Interpreter::CAM: return "cam";
        case Interpreter::GradCAM: return "gradcam";
        case Interpreter::GradCAMpp: return "gradcampp";
        case Interpreter::IG: return "ig";
        case Interpreter::Repr: return "repr";
    }
    return "?";
}

Interpreter interpreter_from_name(const std::string& s) {
    if (s == "cam") return Interpreter::CAM;
    if (s == "gradcam") return Interpreter::GradCAM;
    if (s == "gradcampp") return Interpreter::GradCAMpp;
    if (s == "ig") return Interpreter::IG;
    if (s == "repr") return Interpreter::Repr;
    throw std::invalid_argument("unknown interpreter '" + s + "'");
}

namespace {

void check_class(const Network& net, int c) {
    if (c < 0 || static_cast<std::size_t>(c) >= net.num_classes)
        throw std::out_of_range("class label " + std::to_string(c) +
                                " outside [0," + std::to_string(net.num_classes) +
                                ")");
}

}  // namespace

InterpMap cam(const Network& net, const Tensor& x, int c) {
    check_class(net, c);
    ForwardResult fr = forward(net, x);
    const std::size_t K = net.feature_channels();
    const std::size_t u = fr.features.shape[2];
    InterpMap m;
    m.kind = Interpreter::CAM;
    m.class_label = c;
    m.values.assign(u, 0.0f);
    const float inv_u = 1.0f / static_cast<float>(u);
    for (std::size_t k = 0; k < K; ++k) {
        const float w = net.head_w.data[static_cast<std::size_t>(c) * K + k];
        const float* a = fr.features.data.data() + k * u;
        for (std::size_t i = 0; i < u; ++i) m.values[i] += inv_u * w * a[i];
    }
    return m;
}

std::vector<float> gradcam_weights(const Network& net, const Tensor& x, int c) {
    check_class(net, c);
    // Gradient of logit c w.r.t. the penultimate maps, taken on a fresh
    // tape where the feature tensor is the leaf.
    ForwardResult fr = forward(net, x);
    const std::size_t K = fr.features.shape[1], u = fr.features.shape[2];
    std::size_t fh = net.in_h, fw = net.in_w;
    // recover feature plane geometry from u (square not assumed)
    Graph g;
    Var a = g.leaf(fr.features.reshaped({1, K, u, 1}), true);
    Var w = g.constant(net.head_w);
    Var b = g.constant(net.head_b);
    Var logits = g.dense(g.global_avg_pool(a), w, b);
    Tensor onehot({1, net.num_classes});
    onehot.data[static_cast<std::size_t>(c)] = 1.0f;
    g.backward(g.sum_all(g.mul(logits, g.constant(onehot))));
    Tensor ga = g.grad(a);
    (void)fh;
    (void)fw;
    std::vector<float> weights(K, 0.0f);
    const float inv_u = 1.0f / static_cast<float>(u);
    for (std::size_t k = 0; k < K; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < u; ++i) acc += ga.data[k * u + i];
        weights[k] = static_cast<float>(acc) * inv_u;
    }
    return weights;
}

InterpMap gradcam(const Network& net, const Tensor& x, int c) {
    ForwardResult fr = forward(net, x);
    std::vector<float> w = gradcam_weights(net, x, c);
    const std::size_t K = fr.features.shape[1], u = fr.features.shape[2];
    InterpMap m;
    m.kind = Interpreter::GradCAM;
    m.class_label = c;
    m.values.assign(u, 0.0f);
    const float inv_u = 1.0f / static_cast<float>(u);
    for (std::size_t k = 0; k < K; ++k) {
        // gradient weight already carries the 1/u of the GAP head, so the
        // per-pixel combination mirrors the CAM formula: u * w_k / u = w_k
        const float wk = w[k] * static_cast<float>(u);
        const float* a = fr.features.data.data() + k * u;
        for (std::size_t i = 0; i < u; ++i) m.values[i] += inv_u * wk * a[i];
    }
    return m;
}

InterpMap gradcampp(const Network& net, const Tensor& x, int c) {
    // Exponential-score variant: with S = exp(f_c) the second and third
    // derivatives needed by the ++ weights reduce to powers of the
    // first-order gradient g, alpha = g^2 S / (2 g^2 S + g^3 S sum_j A_j).
    check_class(net, c);
    ForwardResult fr = forward(net, x);
    const std::size_t K = fr.features.shape[1], u = fr.features.shape[2];
    std::vector<float> gw = gradcam_weights(net, x, c);  // per-channel df/dA (x 1/u)
    const float fc = fr.logits.data[static_cast<std::size_t>(c)];
    const double S = std::exp(static_cast<double>(fc));
    InterpMap m;
    m.kind = Interpreter::GradCAMpp;
    m.class_label = c;
    m.values.assign(u, 0.0f);
    const float inv_u = 1.0f / static_cast<float>(u);
    for (std::size_t k = 0; k < K; ++k) {
        const double gk = static_cast<double>(gw[k]) * u;  // df_c/dA_{k,i}
        const float* a = fr.features.data.data() + k * u;
        double sum_a = 0.0;
        for (std::size_t i = 0; i < u; ++i) sum_a += a[i];
        const double g2 = gk * gk * S;
        const double g3 = gk * gk * gk * S;
        const double denom = 2.0 * g2 + g3 * sum_a;
        const double alpha = denom != 0.0 ? g2 / denom : 0.0;
        const double grad_rel = std::max(0.0, S * gk);  // relu of d exp(f)/dA
        const double wk = alpha * grad_rel * static_cast<double>(u);
        for (std::size_t i = 0; i < u; ++i)
            m.values[i] += static_cast<float>(inv_u * wk * a[i]);
    }
    return m;
}

Tensor input_gradient(const Network& net, const Tensor& x, int c) {
    check_class(net, c);
    Graph g;
    Var xi = g.leaf(x, true);
    NetTrace t = trace(net, g, xi, false);
    Tensor onehot({1, net.num_classes});
    onehot.data[static_cast<std::size_t>(c)] = 1.0f;
    g.backward(g.sum_all(g.mul(t.logits, g.constant(onehot))));
    return g.grad(xi);
}

InterpMap ig(const Network& net, const Tensor& x, int c, const Tensor& baseline,
             int steps) {
    check_class(net, c);
    if (steps < 1) throw std::invalid_argument("ig: steps must be >= 1");
    if (!x.same_shape(baseline)) throw ShapeError("ig", x.shape, baseline.shape);
    const std::size_t d = x.numel();
    std::vector<double> acc(d, 0.0);
    Tensor point(x.shape);
    // right-endpoint Riemann sum, j = 1..m
    for (int j = 1; j <= steps; ++j) {
        const float alpha = static_cast<float>(j) / static_cast<float>(steps);
        for (std::size_t i = 0; i < d; ++i)
            point.data[i] = baseline.data[i] + alpha * (x.data[i] - baseline.data[i]);
        Tensor grad = input_gradient(net, point, c);
        for (std::size_t i = 0; i < d; ++i) acc[i] += grad.data[i];
    }
    InterpMap m;
    m.kind = Interpreter::IG;
    m.class_label = c;
    m.values.resize(d);
    for (std::size_t i = 0; i < d; ++i)
        m.values[i] = static_cast<float>((x.data[i] - baseline.data[i]) * acc[i] /
                                         static_cast<double>(steps));
    return m;
}

InterpMap repr(const Network& net, const Tensor& x) {
    ForwardResult fr = forward(net, x);
    InterpMap m;
    m.kind = Interpreter::Repr;
    m.class_label = -1;
    m.values = fr.features.data;  // [K*u], row-major
    return m;
}

InterpMap make_map(const InterpreterSpec& spec, const Network& net,
                   const Tensor& x, int c) {
    switch (spec.kind) {
        case Interpreter::CAM: return cam(net, x, c);
        case Interpreter::GradCAM: return gradcam(net, x, c);
        case Interpreter::GradCAMpp: return gradcampp(net, x, c);
        case Interpreter::IG:
            return ig(net, x, c, Tensor(x.shape), spec.ig_steps);
        case Interpreter::Repr: return repr(net, x);
    }
    throw std::logic_error("unreachable interpreter kind");
}

Var cam_all_classes(Graph& g, const NetTrace& t) {
    const Tensor& f = g.value(t.features);
    const std::size_t N = f.shape[0], K = f.shape[1], u = f.shape[2] * f.shape[3];
    Var flat = g.reshape(t.features, {N, K, u});
    return g.scale(g.channel_combine(flat, t.head_w),
                   1.0f / static_cast<float>(u));
}

}  // namespace irt
