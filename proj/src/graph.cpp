#include "irt/graph.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace irt {

namespace {
inline float sign0(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }
}  // namespace

std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

bool Tensor::all_finite() const {
    for (float v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

int Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

void Graph::accumulate(int id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape);
        n.has_grad = true;
    }
    for (std::size_t i = 0; i < g.numel(); ++i) n.grad.data[i] += g.data[i];
}

Tensor Graph::grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.has_grad) return n.grad;
    return Tensor(n.value.shape);
}

Var Graph::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.op = "leaf";
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return {this, push(std::move(n))};
}

void Graph::backward(Var out) {
    Node& o = nodes_[out.id];
    if (o.value.numel() != 1)
        throw std::invalid_argument(
            "backward: output is non-scalar " + shape_str(o.value.shape) +
            "; reduce it first");
    for (Node& n : nodes_) {
        n.has_grad = false;
        n.grad = Tensor();
    }
    o.grad = Tensor::scalar(1.0f);
    o.has_grad = true;
    for (int id = out.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (n.has_grad && n.backprop) n.backprop(*this, n);
    }
}

Var Graph::conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad) {
    const Tensor& xv = nodes_[x.id].value;
    const Tensor& wv = nodes_[w.id].value;
    auto d = kernels::conv_dims(xv.shape, wv.shape, stride, pad);
    const bool has_bias = b.id >= 0;
    if (has_bias && nodes_[b.id].value.shape != std::vector<std::size_t>{d.out_ch})
        throw ShapeError("conv2d bias", nodes_[b.id].value.shape, {d.out_ch});
    Node n;
    n.op = "conv2d";
    n.value = Tensor({d.batch, d.out_ch, d.out_h, d.out_w});
    kernels::conv2d_forward(xv.data.data(), wv.data.data(),
                            has_bias ? nodes_[b.id].value.data.data() : nullptr,
                            n.value.data.data(), d, kernels::default_exec());
    n.inputs = {x.id, w.id, b.id};
    n.requires_grad = nodes_[x.id].requires_grad || nodes_[w.id].requires_grad ||
                      (has_bias && nodes_[b.id].requires_grad);
    n.saux[0] = stride;
    n.saux[1] = pad;
    n.backprop = [](Graph& g, Node& self) {
        const int xi = self.inputs[0], wi = self.inputs[1], bi = self.inputs[2];
        const Tensor& xv = g.nodes_[xi].value;
        const Tensor& wv = g.nodes_[wi].value;
        auto d = kernels::conv_dims(xv.shape, wv.shape, self.saux[0], self.saux[1]);
        const auto e = kernels::default_exec();
        if (g.nodes_[xi].requires_grad) {
            Tensor gx(xv.shape);
            kernels::conv2d_backward_input(self.grad.data.data(), wv.data.data(),
                                           gx.data.data(), d, e);
            g.accumulate(xi, gx);
        }
        const bool need_w = g.nodes_[wi].requires_grad;
        const bool need_b = bi >= 0 && g.nodes_[bi].requires_grad;
        if (need_w || need_b) {
            Tensor gw(wv.shape);
            Tensor gb({d.out_ch});
            kernels::conv2d_backward_weights(self.grad.data.data(),
                                             xv.data.data(), gw.data.data(),
                                             need_b ? gb.data.data() : nullptr, d, e);
            if (need_w) g.accumulate(wi, gw);
            if (need_b) g.accumulate(bi, gb);
        }
    };
    return {this, push(std::move(n))};
}

Var Graph::relu(Var x) {
    const Tensor& xv = nodes_[x.id].value;
    Node n;
    n.op = "relu";
    n.value = Tensor(xv.shape);
    kernels::relu_forward(xv.data.data(), n.value.data.data(), xv.numel(),
                          kernels::default_exec());
    n.inputs = {x.id};
    n.requires_grad = nodes_[x.id].requires_grad;
    n.backprop = [](Graph& g, Node& self) {
        const Tensor& xv = g.nodes_[self.inputs[0]].value;
        Tensor gx(xv.shape);
        kernels::relu_backward(self.grad.data.data(), xv.data.data(),
                               gx.data.data(), xv.numel(),
                               kernels::default_exec());
        g.accumulate(self.inputs[0], gx);
    };
    return {this, push(std::move(n))};
}

Var Graph::maxpool(Var x, std::size_t window, std::size_t stride) {
    const Tensor& xv = nodes_[x.id].value;
    auto d = kernels::pool_dims(xv.shape, window, stride);
    Node n;
    n.op = "maxpool";
    n.value = Tensor({d.batch, d.ch, d.out_h, d.out_w});
    n.iaux.resize(n.value.numel());
    kernels::maxpool_forward(xv.data.data(), n.value.data.data(), n.iaux.data(),
                             d, kernels::default_exec());
    n.inputs = {x.id};
    n.requires_grad = nodes_[x.id].requires_grad;
    n.saux[0] = window;
    n.saux[1] = stride;
    n.backprop = [](Graph& g, Node& self) {
        const Tensor& xv = g.nodes_[self.inputs[0]].value;
        auto d = kernels::pool_dims(xv.shape, self.saux[0], self.saux[1]);
        Tensor gx(xv.shape);
        kernels::maxpool_backward(self.grad.data.data(), self.iaux.data(),
                                  gx.data.data(), d, kernels::default_exec());
        g.accumulate(self.inputs[0], gx);
    };
    return {this, push(std::move(n))};
}

Var Graph::global_avg_pool(Var x) {
    const Tensor& xv = nodes_[x.id].value;
    if (xv.rank() != 4)
        throw ShapeError("global_avg_pool: expected rank-4 input, got " +
                         shape_str(xv.shape));
    const std::size_t N = xv.shape[0], C = xv.shape[1],
                      u = xv.shape[2] * xv.shape[3];
    Node n;
    n.op = "gap";
    n.value = Tensor({N, C});
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        double acc = 0.0;
        const float* p = xv.data.data() + nc * u;
        for (std::size_t i = 0; i < u; ++i) acc += p[i];
        n.value.data[nc] = static_cast<float>(acc / static_cast<double>(u));
    }
    n.inputs = {x.id};
    n.requires_grad = nodes_[x.id].requires_grad;
    n.backprop = [](Graph& g, Node& self) {
        const Tensor& xv = g.nodes_[self.inputs[0]].value;
        const std::size_t u = xv.shape[2] * xv.shape[3];
        Tensor gx(xv.shape);
        const float inv = 1.0f / static_cast<float>(u);
        for (std::size_t nc = 0; nc < self.grad.numel(); ++nc) {
            const float gv = self.grad.data[nc] * inv;
            float* p = gx.data.data() + nc * u;
            for (std::size_t i = 0; i < u; ++i) p[i] = gv;
        }
        g.accumulate(self.inputs[0], gx);
    };
    return {this, push(std::move(n))};
}

Var Graph::dense(Var x, Var w, Var b) {
    const Tensor& xv = nodes_[x.id].value;
    const Tensor& wv = nodes_[w.id].value;
    if (xv.rank() != 2 || wv.rank() != 2 || xv.shape[1] != wv.shape[1])
        throw ShapeError("dense", xv.shape, wv.shape);
    const std::size_t N = xv.shape[0], K = xv.shape[1], C = wv.shape[0];
    const bool has_bias = b.id >= 0;
    if (has_bias && nodes_[b.id].value.shape != std::vector<std::size_t>{C})
        throw ShapeError("dense bias", nodes_[b.id].value.shape, {C});
    Node n;
    n.op = "dense";
    n.value = Tensor({N, C});
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t c = 0; c < C; ++c) {
            double acc = has_bias ? nodes_[b.id].value.data[c] : 0.0;
            for (std::size_t k = 0; k < K; ++k)
                acc += static_cast<double>(xv.data[i * K + k]) * wv.data[c * K + k];
            n.value.data[i * C + c] = static_cast<float>(acc);
        }
    n.inputs = {x.id, w.id, b.id};
    n.requires_grad = nodes_[x.id].requires_grad || nodes_[w.id].requires_grad ||
                      (has_bias && nodes_[b.id].requires_grad);
    n.backprop = [](Graph& g, Node& self) {
        const int xi = self.inputs[0], wi = self.inputs[1], bi = self.inputs[2];
        const Tensor& xv = g.nodes_[xi].value;
        const Tensor& wv = g.nodes_[wi].value;
        const std::size_t N = xv.shape[0], K = xv.shape[1], C = wv.shape[0];
        if (g.nodes_[xi].requires_grad) {
            Tensor gx(xv.shape);
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t k = 0; k < K; ++k) {
                    float acc = 0.0f;
                    for (std::size_t c = 0; c < C; ++c)
                        acc += self.grad.data[i * C + c] * wv.data[c * K + k];
                    gx.data[i * K + k] = acc;
                }
            g.accumulate(xi, gx);
        }
        if (g.nodes_[wi].requires_grad) {
            Tensor gw(wv.shape);
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t k = 0; k < K; ++k) {
                    float acc = 0.0f;
                    for (std::size_t i = 0; i < N; ++i)
                        acc += self.grad.data[i * C + c] * xv.data[i * K + k];
                    gw.data[c * K + k] = acc;
                }
            g.accumulate(wi, gw);
        }
        if (bi >= 0 && g.nodes_[bi].requires_grad) {
            Tensor gb({C});
            for (std::size_t c = 0; c < C; ++c) {
                float acc = 0.0f;
                for (std::size_t i = 0; i < N; ++i) acc += self.grad.data[i * C + c];
                gb.data[c] = acc;
            }
            g.accumulate(bi, gb);
        }
    };
    return {this, push(std::move(n))};
}

Var Graph::softmax(Var x) {
    const Tensor& xv = nodes_[x.id].value;
    if (xv.rank() != 2)
        throw ShapeError("softmax: expected rank-2 input, got " + shape_str(xv.shape));
    const std::size_t N = xv.shape[0], C = xv.shape[1];
    Node n;
    n.op = "softmax";
    n.value = Tensor(xv.shape);
    for (std::size_t i = 0; i < N; ++i) {
        const float* row = xv.data.data() + i * C;
        float mx = row[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double denom = 0.0;
        for (std::size_t c = 0; c < C; ++c) denom += std::exp(static_cast<double>(row[c] - mx));
        for (std::size_t c = 0; c < C; ++c)
            n.value.data[i * C + c] =
                static_cast<float>(std::exp(static_cast<double>(row[c] - mx)) / denom);
    }
    n.inputs = {x.id};
    n.requires_grad = nodes_[x.id].requires_grad;
    n.backprop = [](Graph& g, Node& self) {
        const std::size_t N = self.value.shape[0], C = self.value.shape[1];
        Tensor gx(self.value.shape);
        for (std::size_t i = 0; i < N; ++i) {
            const float* p = self.value.data.data() + i * C;
            const float* gy = self.grad.data.data() + i * C;
            double dot = 0.0;
            for (std::size_t c = 0; c < C; ++c) dot += static_cast<double>(gy[c]) * p[c];
            for (std::size_t c = 0; c < C; ++c)
                gx.data[i * C + c] = p[c] * (gy[c] - static_cast<float>(dot));
        }
        g.accumulate(self.inputs[0], gx);
    };
    return {this, push(std::move(n))};
}

Var Graph::cross_entropy_mean(Var logits, const std::vector<int>& labels) {
    const Tensor& xv = nodes_[logits.id].value;
    if (xv.rank() != 2)
        throw ShapeError("cross_entropy: expected rank-2 logits, got " +
                         shape_str(xv.shape));
    const std::size_t N = xv.shape[0], C = xv.shape[1];
    if (labels.size() != N)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(N));
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= C)
            throw std::out_of_range("cross_entropy: label " + std::to_string(y) +
                                    " outside [0," + std::to_string(C) + ")");
    Node n;
    n.op = "cross_entropy";
    n.taux = Tensor(xv.shape);  // probs
    double loss = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        const float* row = xv.data.data() + i * C;
        float mx = row[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double denom = 0.0;
        for (std::size_t c = 0; c < C; ++c) denom += std::exp(static_cast<double>(row[c] - mx));
        for (std::size_t c = 0; c < C; ++c)
            n.taux.data[i * C + c] =
                static_cast<float>(std::exp(static_cast<double>(row[c] - mx)) / denom);
        loss += std::log(denom) - static_cast<double>(row[labels[i]] - mx);
    }
    n.value = Tensor::scalar(static_cast<float>(loss / static_cast<double>(N)));
    n.inputs = {logits.id};
    n.requires_grad = nodes_[logits.id].requires_grad;
    n.iaux.assign(labels.begin(), labels.end());
    n.backprop = [](Graph& g, Node& self) {
        const std::size_t N = self.taux.shape[0], C = self.taux.shape[1];
        Tensor gx(self.taux.shape);
        const float gscale = self.grad.data[0] / static_cast<float>(N);
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t c = 0; c < C; ++c) {
                float v = self.taux.data[i * C + c];
                if (static_cast<std::size_t>(self.iaux[i]) == c) v -= 1.0f;
                gx.data[i * C + c] = gscale * v;
            }
        g.accumulate(self.inputs[0], gx);
    };
    return {this, push(std::move(n))};
}

namespace {
void check_same(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError(op, a.shape, b.shape);
}
}  // namespace

Var Graph::add(Var a, Var b) {
    const Tensor& av = nodes_[a.id].value;
    const Tensor& bv = nodes_[b.id].value;
    check_same("add", av, bv);
    Node n;
    n.op = "add";
    n.value = Tensor(av.shape);
    for (std::size_t i = 0; i < av.numel(); ++i) n.value.data[i] = av.data[i] + bv.data[i];
    n.inputs = {a.id, b.id};
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    n.backprop = [](Graph& g, Node& self) {
        g.accumulate(self.inputs[0], self.grad);
        g.accumulate(self.inputs[1], self.grad);
    };
    return {this, push(std::move(n))};
}

Var Graph::sub(Var a, Var b) {
    const Tensor& av = nodes_[a.id].value;
    const Tensor& bv = nodes_[b.id].value;
    check_same("sub", av, bv);
    Node n;
    n.op = "sub";
    n.value = Tensor(av.shape);
    for (std::size_t i = 0; i < av.numel(); ++i) n.value.data[i] = av.data[i] - bv.data[i];
    n.inputs = {a.id, b.id};
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    n.backprop = [](Graph& g, Node& self) {
        g.accumulate(self.inputs[0], self.grad);
        Tensor neg(self.grad.shape);
        for (std::size_t i = 0; i < neg.numel(); ++i) neg.data[i] = -self.grad.data[i];
        g.accumulate(self.inputs[1], neg);
    };
    return {this, push(std::move(n))};
}

Var Graph::mul(Var a, Var b) {
    const Tensor& av = nodes_[a.id].value;
    const Tensor& bv = nodes_[b.id].value;
    check_same("mul", av, bv);
    Node n;
    n.op = "mul";
    n.value = Tensor(av.shape);
    for (std::size_t i = 0; i < av.numel(); ++i) n.value.data[i] = av.data[i] * bv.data[i];
    n.inputs = {a.id, b.id};
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    n.backprop = [](Graph& g, Node& self) {
        const Tensor& av = g.nodes_[self.inputs[0]].value;
        const Tensor& bv = g.nodes_[self.inputs[1]].value;
        if (g.nodes_[self.inputs[0]].requires_grad) {
            Tensor ga(av.shape);
            for (std::size_t i = 0; i < ga.numel(); ++i)
                ga.data[i] = self.grad.data[i] * bv.data[i];
            g.accumulate(self.inputs[0], ga);
        }
        if (g.nodes_[self.inputs[1]].requires_grad) {
            Tensor gb(bv.shape);
            for (std::size_t i = 0; i < gb.numel(); ++i)
                gb.data[i] = self.grad.data[i] * av.data[i];
            g.accumulate(self.inputs[1], gb);
        }
    };
    return {this, push(std::move(n))};
}

Var Graph::scale(Var a, float s) {
    const Tensor& av = nodes_[a.id].value;
    Node n;
    n.op = "scale";
    n.value = Tensor(av.shape);
    for (std::size_t i = 0; i < av.numel(); ++i) n.value.data[i] = av.data[i] * s;
    n.inputs = {a.id};
    n.requires_grad = nodes_[a.id].requires_grad;
    n.taux = Tensor::scalar(s);
    n.backprop = [](Graph& g, Node& self) {
        Tensor ga(self.grad.shape);
        const float s = self.taux.data[0];
        for (std::size_t i = 0; i < ga.numel(); ++i) ga.data[i] = self.grad.data[i] * s;
        g.accumulate(self.inputs[0], ga);
    };
    return {this, push(std::move(n))};
}

Var Graph::abs(Var a) {
    const Tensor& av = nodes_[a.id].value;
    Node n;
    n.op = "abs";
    n.value = Tensor(av.shape);
    for (std::size_t i = 0; i < av.numel(); ++i) n.value.data[i] = std::fabs(av.data[i]);
    n.inputs = {a.id};
    n.requires_grad = nodes_[a.id].requires_grad;
    n.backprop = [](Graph& g, Node& self) {
        const Tensor& av = g.nodes_[self.inputs[0]].value;
        Tensor ga(av.shape);
        for (std::size_t i = 0; i < ga.numel(); ++i)
            ga.data[i] = self.grad.data[i] * sign0(av.data[i]);
        g.accumulate(self.inputs[0], ga);
    };
    return {this, push(std::move(n))};
}

Var Graph::sqrt(Var a) {
    const Tensor& av = nodes_[a.id].value;
    Node n;
    n.op = "sqrt";
    n.value = Tensor(av.shape);
    for (std::size_t i = 0; i < av.numel(); ++i) {
        if (av.data[i] < 0.0f)
            throw std::domain_error("sqrt: negative input");
        n.value.data[i] = std::sqrt(av.data[i]);
    }
    n.inputs = {a.id};
    n.requires_grad = nodes_[a.id].requires_grad;
    n.backprop = [](Graph& g, Node& self) {
        Tensor ga(self.value.shape);
        for (std::size_t i = 0; i < ga.numel(); ++i)
            ga.data[i] = self.value.data[i] > 0.0f
                             ? self.grad.data[i] * 0.5f / self.value.data[i]
                             : 0.0f;  // subgradient at 0
        g.accumulate(self.inputs[0], ga);
    };
    return {this, push(std::move(n))};
}

Var Graph::sum_last(Var a) {
    const Tensor& av = nodes_[a.id].value;
    if (av.rank() < 2)
        throw ShapeError("sum_last: expected rank >= 2, got " + shape_str(av.shape));
    std::vector<std::size_t> outs(av.shape.begin(), av.shape.end() - 1);
    const std::size_t u = av.shape.back();
    Node n;
    n.op = "sum_last";
    n.value = Tensor(outs);
    for (std::size_t r = 0; r < n.value.numel(); ++r) {
        double acc = 0.0;
        const float* p = av.data.data() + r * u;
        for (std::size_t i = 0; i < u; ++i) acc += p[i];
        n.value.data[r] = static_cast<float>(acc);
    }
    n.inputs = {a.id};
    n.requires_grad = nodes_[a.id].requires_grad;
    n.backprop = [](Graph& g, Node& self) {
        const Tensor& av = g.nodes_[self.inputs[0]].value;
        const std::size_t u = av.shape.back();
        Tensor ga(av.shape);
        for (std::size_t r = 0; r < self.grad.numel(); ++r) {
            float* p = ga.data.data() + r * u;
            for (std::size_t i = 0; i < u; ++i) p[i] = self.grad.data[r];
        }
        g.accumulate(self.inputs[0], ga);
    };
    return {this, push(std::move(n))};
}

Var Graph::sum_all(Var a) {
    const Tensor& av = nodes_[a.id].value;
    Node n;
    n.op = "sum_all";
    n.value = Tensor::scalar(static_cast<float>(av.sum64()));
    n.inputs = {a.id};
    n.requires_grad = nodes_[a.id].requires_grad;
    n.backprop = [](Graph& g, Node& self) {
        const Tensor& av = g.nodes_[self.inputs[0]].value;
        g.accumulate(self.inputs[0], Tensor::full(av.shape, self.grad.data[0]));
    };
    return {this, push(std::move(n))};
}

Var Graph::mean_all(Var a) {
    const Tensor& av = nodes_[a.id].value;
    Node n;
    n.op = "mean_all";
    n.value = Tensor::scalar(
        static_cast<float>(av.sum64() / static_cast<double>(av.numel())));
    n.inputs = {a.id};
    n.requires_grad = nodes_[a.id].requires_grad;
    n.backprop = [](Graph& g, Node& self) {
        const Tensor& av = g.nodes_[self.inputs[0]].value;
        g.accumulate(self.inputs[0],
                     Tensor::full(av.shape, self.grad.data[0] /
                                                static_cast<float>(av.numel())));
    };
    return {this, push(std::move(n))};
}

Var Graph::reshape(Var a, std::vector<std::size_t> shape) {
    const Tensor& av = nodes_[a.id].value;
    Node n;
    n.op = "reshape";
    n.value = av.reshaped(shape);
    n.inputs = {a.id};
    n.requires_grad = nodes_[a.id].requires_grad;
    n.backprop = [](Graph& g, Node& self) {
        const Tensor& av = g.nodes_[self.inputs[0]].value;
        g.accumulate(self.inputs[0], self.grad.reshaped(av.shape));
    };
    return {this, push(std::move(n))};
}

Var Graph::channel_combine(Var x, Var w) {
    const Tensor& xv = nodes_[x.id].value;
    const Tensor& wv = nodes_[w.id].value;
    if (xv.rank() != 3 || wv.rank() != 2 || xv.shape[1] != wv.shape[1])
        throw ShapeError("channel_combine", xv.shape, wv.shape);
    const std::size_t N = xv.shape[0], K = xv.shape[1], u = xv.shape[2],
                      C = wv.shape[0];
    Node n;
    n.op = "channel_combine";
    n.value = Tensor({N, C, u});
    {
        const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(N * C);
#pragma omp parallel for schedule(static) if (kernels::default_exec() == kernels::Exec::Parallel)
        for (std::ptrdiff_t t = 0; t < total; ++t) {
            const std::size_t i = t / C, c = t % C;
            float* out = n.value.data.data() + (i * C + c) * u;
            std::fill(out, out + u, 0.0f);
            for (std::size_t k = 0; k < K; ++k) {
                const float wck = wv.data[c * K + k];
                if (wck == 0.0f) continue;
                const float* xp = xv.data.data() + (i * K + k) * u;
                for (std::size_t j = 0; j < u; ++j) out[j] += wck * xp[j];
            }
        }
    }
    n.inputs = {x.id, w.id};
    n.requires_grad = nodes_[x.id].requires_grad || nodes_[w.id].requires_grad;
    n.backprop = [](Graph& g, Node& self) {
        const Tensor& xv = g.nodes_[self.inputs[0]].value;
        const Tensor& wv = g.nodes_[self.inputs[1]].value;
        const std::size_t N = xv.shape[0], K = xv.shape[1], u = xv.shape[2],
                          C = wv.shape[0];
        if (g.nodes_[self.inputs[0]].requires_grad) {
            Tensor gx(xv.shape);
            const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(N * K);
#pragma omp parallel for schedule(static) if (kernels::default_exec() == kernels::Exec::Parallel)
            for (std::ptrdiff_t t = 0; t < total; ++t) {
                const std::size_t i = t / K, k = t % K;
                float* out = gx.data.data() + (i * K + k) * u;
                for (std::size_t c = 0; c < C; ++c) {
                    const float wck = wv.data[c * K + k];
                    if (wck == 0.0f) continue;
                    const float* gyp = self.grad.data.data() + (i * C + c) * u;
                    for (std::size_t j = 0; j < u; ++j) out[j] += wck * gyp[j];
                }
            }
            g.accumulate(self.inputs[0], gx);
        }
        if (g.nodes_[self.inputs[1]].requires_grad) {
            Tensor gw(wv.shape);
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t k = 0; k < K; ++k) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < N; ++i) {
                        const float* gyp = self.grad.data.data() + (i * C + c) * u;
                        const float* xp = xv.data.data() + (i * K + k) * u;
                        for (std::size_t j = 0; j < u; ++j)
                            acc += static_cast<double>(gyp[j]) * xp[j];
                    }
                    gw.data[c * K + k] = static_cast<float>(acc);
                }
            g.accumulate(self.inputs[1], gw);
        }
    };
    return {this, push(std::move(n))};
}

Var Graph::l1_diff(Var a, Var b) {
    const Tensor& av = nodes_[a.id].value;
    const Tensor& bv = nodes_[b.id].value;
    check_same("l1_diff", av, bv);
    const std::size_t N = av.shape[0], u = av.numel() / N;
    Node n;
    n.op = "l1_diff";
    n.value = Tensor({N});
    for (std::size_t i = 0; i < N; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < u; ++j)
            acc += std::fabs(static_cast<double>(av.data[i * u + j]) -
                             bv.data[i * u + j]);
        n.value.data[i] = static_cast<float>(acc);
    }
    n.inputs = {a.id, b.id};
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    n.backprop = [](Graph& g, Node& self) {
        const Tensor& av = g.nodes_[self.inputs[0]].value;
        const Tensor& bv = g.nodes_[self.inputs[1]].value;
        const std::size_t N = av.shape[0], u = av.numel() / N;
        Tensor ga(av.shape);
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = 0; j < u; ++j)
                ga.data[i * u + j] =
                    self.grad.data[i] * sign0(av.data[i * u + j] - bv.data[i * u + j]);
        if (g.nodes_[self.inputs[0]].requires_grad) g.accumulate(self.inputs[0], ga);
        if (g.nodes_[self.inputs[1]].requires_grad) {
            for (float& v : ga.data) v = -v;
            g.accumulate(self.inputs[1], ga);
        }
    };
    return {this, push(std::move(n))};
}

Var Graph::l2_diff(Var a, Var b) {
    const Tensor& av = nodes_[a.id].value;
    const Tensor& bv = nodes_[b.id].value;
    check_same("l2_diff", av, bv);
    const std::size_t N = av.shape[0], u = av.numel() / N;
    Node n;
    n.op = "l2_diff";
    n.value = Tensor({N});
    for (std::size_t i = 0; i < N; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < u; ++j) {
            const double d = static_cast<double>(av.data[i * u + j]) - bv.data[i * u + j];
            acc += d * d;
        }
        n.value.data[i] = static_cast<float>(std::sqrt(acc));
    }
    n.inputs = {a.id, b.id};
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    n.backprop = [](Graph& g, Node& self) {
        const Tensor& av = g.nodes_[self.inputs[0]].value;
        const Tensor& bv = g.nodes_[self.inputs[1]].value;
        const std::size_t N = av.shape[0], u = av.numel() / N;
        Tensor ga(av.shape);
        for (std::size_t i = 0; i < N; ++i) {
            const float norm = self.value.data[i];
            const float gv = norm > 0.0f ? self.grad.data[i] / norm : 0.0f;
            for (std::size_t j = 0; j < u; ++j)
                ga.data[i * u + j] = gv * (av.data[i * u + j] - bv.data[i * u + j]);
        }
        if (g.nodes_[self.inputs[0]].requires_grad) g.accumulate(self.inputs[0], ga);
        if (g.nodes_[self.inputs[1]].requires_grad) {
            for (float& v : ga.data) v = -v;
            g.accumulate(self.inputs[1], ga);
        }
    };
    return {this, push(std::move(n))};
}

}  // namespace irt
