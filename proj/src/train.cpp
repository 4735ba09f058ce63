#include "irt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include "irt/discrepancy.hpp"
#include "irt/interpret.hpp"

namespace irt {

std::string method_name(TrainMethod m) {
    switch (m) {
        case TrainMethod::Normal: return "normal";
        case TrainMethod::Adv: return "adv";
        case TrainMethod::Int: return "int";
        case TrainMethod::IntAdv: return "int-adv";
        case TrainMethod::Int2: return "int2";
        case TrainMethod::Int2Adv: return "int2-adv";
        case TrainMethod::IntOneClass: return "int-one-class";
    }
    throw std::logic_error("method_name");
}

TrainMethod method_from_name(const std::string& s) {
    for (TrainMethod m :
         {TrainMethod::Normal, TrainMethod::Adv, TrainMethod::Int,
          TrainMethod::IntAdv, TrainMethod::Int2, TrainMethod::Int2Adv,
          TrainMethod::IntOneClass})
        if (method_name(m) == s) return m;
    throw std::invalid_argument("unknown training method '" + s + "'");
}

namespace {

void clip_unit(Tensor& x) {
    for (auto& v : x.data) v = std::min(1.0f, std::max(0.0f, v));
}

void project_ball(Tensor& x, const Tensor& x0, double eps) {
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        float lo = (float)((double)x0.data[i] - eps);
        float hi = (float)((double)x0.data[i] + eps);
        x.data[i] = std::min(hi, std::max(lo, x.data[i]));
    }
}

void sign_ascent(Tensor& x, const Tensor& grad, double step) {
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        float gs = grad.data[i] > 0 ? 1.0f : (grad.data[i] < 0 ? -1.0f : 0.0f);
        x.data[i] += (float)step * gs;
    }
}

// The l1 discrepancy has a zero subgradient exactly at delta = 0, so the
// ascent must start from a point inside the ball. Seeding from the
// example's own pixels keeps the offset deterministic and independent of
// batch layout (single-example and batched runs jitter identically).
void jitter_in_ball(Tensor& x_adv, const Tensor& x, double eps) {
    if (eps <= 0) return;
    std::size_t n = x.shape[0], per = x.numel() / n;
    for (std::size_t e = 0; e < n; ++e) {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (std::size_t i = 0; i < per; ++i) {
            std::uint32_t bits;
            std::memcpy(&bits, &x.data[e * per + i], sizeof(bits));
            h = (h ^ bits) * 0x100000001b3ull;
        }
        std::mt19937_64 rng(h);
        std::uniform_real_distribution<double> d(-eps, eps);
        for (std::size_t i = 0; i < per; ++i) {
            float v = x_adv.data[e * per + i] + (float)d(rng);
            x_adv.data[e * per + i] = std::min(1.0f, std::max(0.0f, v));
        }
    }
}

// Class weights of the soft measure at the current iterate, computed
// off-tape: 1/2 on the true label, 1/2 * softmax elsewhere. one_class
// collapses to an indicator on the true label.
Tensor weight_tensor(const Tensor& logits, const std::vector<int>& y,
                     bool one_class) {
    std::size_t n = logits.shape[0], c = logits.shape[1];
    Tensor w{{n, c}, std::vector<float>(n * c, 0.0f)};
    for (std::size_t i = 0; i < n; ++i) {
        if (one_class) {
            w.data[i * c + (std::size_t)y[i]] = 1.0f;
            continue;
        }
        double mx = logits.data[i * c];
        for (std::size_t j = 1; j < c; ++j)
            mx = std::max(mx, (double)logits.data[i * c + j]);
        double z = 0.0;
        std::vector<double> e(c);
        for (std::size_t j = 0; j < c; ++j) {
            e[j] = std::exp((double)logits.data[i * c + j] - mx);
            z += e[j];
        }
        for (std::size_t j = 0; j < c; ++j)
            w.data[i * c + j] = (float)(0.5 * e[j] / z);
        w.data[i * c + (std::size_t)y[i]] = 0.5f;
    }
    return w;
}

Tensor cam_stack_batch(const Network& net, const Tensor& x) {
    Graph g;
    NetTrace t = trace(net, g, g.constant(x), false);
    return g.value(cam_all_classes(g, t));
}

struct Adam {
    double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<Tensor>*m, *v;
    long long t = 0;

    void step(std::vector<Tensor*> params, const std::vector<Tensor>& grads) {
        ++t;
        double c1 = 1.0 - std::pow(b1, (double)t);
        double c2 = 1.0 - std::pow(b2, (double)t);
        for (std::size_t p = 0; p < params.size(); ++p) {
            Tensor& w = *params[p];
            Tensor& mm = (*m)[p];
            Tensor& vv = (*v)[p];
            const Tensor& gr = grads[p];
            for (std::size_t i = 0; i < w.data.size(); ++i) {
                double gd = gr.data.empty() ? 0.0 : (double)gr.data[i];
                double mi = b1 * (double)mm.data[i] + (1 - b1) * gd;
                double vi = b2 * (double)vv.data[i] + (1 - b2) * gd * gd;
                mm.data[i] = (float)mi;
                vv.data[i] = (float)vi;
                w.data[i] -=
                    (float)(lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
            }
        }
    }
};

}  // namespace

double eps_at(const TrainConfig& cfg, long long step, long long total_steps) {
    if (step <= cfg.warmup_steps) return 0.0;
    long long last = total_steps - 1;
    if (last <= cfg.warmup_steps) return cfg.eps_final;
    double frac = (double)(step - cfg.warmup_steps) /
                  (double)(last - cfg.warmup_steps);
    return cfg.eps_final * std::min(1.0, frac);
}

Tensor inner_max_loss(const Network& net, const Tensor& x,
                      const std::vector<int>& y, double eps, int steps,
                      double step_size) {
    Tensor x_adv = x;
    if (eps <= 0) return x_adv;
    for (int s = 0; s < steps; ++s) {
        Graph g;
        Var xl = g.leaf(x_adv, true);
        NetTrace t = trace(net, g, xl, false);
        g.backward(g.cross_entropy_mean(t.logits, y));
        sign_ascent(x_adv, g.grad(xl), step_size);
        project_ball(x_adv, x, eps);
        clip_unit(x_adv);
    }
    return x_adv;
}

Tensor inner_max_discrepancy(const Network& net, const Tensor& x,
                             const std::vector<int>& y, double eps, int steps,
                             double step_size, bool one_class) {
    Tensor x_adv = x;
    if (eps <= 0) return x_adv;
    Tensor benign = cam_stack_batch(net, x);
    jitter_in_ball(x_adv, x, eps);
    for (int s = 0; s < steps; ++s) {
        Graph g;
        Var xl = g.leaf(x_adv, true);
        NetTrace t = trace(net, g, xl, false);
        Var cams = cam_all_classes(g, t);
        Var per_class = g.sum_last(g.abs(g.sub(cams, g.constant(benign))));
        Tensor w = weight_tensor(g.value(t.logits), y, one_class);
        Var obj = g.sum_all(g.mul(per_class, g.constant(std::move(w))));
        g.backward(obj);
        sign_ascent(x_adv, g.grad(xl), step_size);
        project_ball(x_adv, x, eps);
        clip_unit(x_adv);
    }
    return x_adv;
}

double clean_accuracy(const Network& net, const Dataset& data,
                      std::size_t limit) {
    std::size_t n = data.size();
    if (limit && limit < n) n = limit;
    if (n == 0) return 0.0;
    std::size_t correct = 0;
    const std::size_t chunk = 100;
    std::size_t h = data.images.shape[2], w = data.images.shape[3];
    for (std::size_t base = 0; base < n; base += chunk) {
        std::size_t m = std::min(chunk, n - base);
        Tensor batch{{m, data.images.shape[1], h, w},
                     std::vector<float>(m * data.images.shape[1] * h * w)};
        std::copy_n(data.images.data.begin() + base * batch.data.size() / m,
                    batch.data.size(), batch.data.begin());
        Tensor logits = forward(net, batch).logits;
        std::size_t c = logits.shape[1];
        for (std::size_t i = 0; i < m; ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (logits.data[i * c + j] > logits.data[i * c + best]) best = j;
            if ((int)best == data.labels[base + i]) ++correct;
        }
    }
    return (double)correct / (double)n;
}

TrainState train(Network net, const Dataset& data, const TrainConfig& cfg) {
    if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
    if (cfg.gamma < 0) throw std::invalid_argument("train: gamma < 0");

    TrainState st;
    st.net = std::move(net);
    for (Tensor* p : st.net.parameters()) {
        st.adam_m.emplace_back(p->shape);
        st.adam_v.emplace_back(p->shape);
    }
    Adam adam{cfg.lr};
    adam.m = &st.adam_m;
    adam.v = &st.adam_v;

    const std::size_t n = data.size();
    const std::size_t bs = (std::size_t)cfg.batch_size;
    const long long batches_per_epoch = (long long)((n + bs - 1) / bs);
    const long long total_steps = batches_per_epoch * cfg.epochs;

    // gamma = 0 makes every discrepancy term vanish; fold to the plain
    // method so trajectories match bit for bit.
    TrainMethod method = cfg.method;
    if (cfg.gamma == 0.0) {
        switch (method) {
            case TrainMethod::Int:
            case TrainMethod::IntOneClass:
                method = TrainMethod::Normal;
                break;
            case TrainMethod::Int2Adv:
            case TrainMethod::IntAdv:
                method = TrainMethod::Adv;
                break;
            case TrainMethod::Int2:
                method = TrainMethod::Normal;
                break;
            default:
                break;
        }
    }

    std::ofstream csv;
    if (!cfg.metrics_csv.empty()) {
        csv.open(cfg.metrics_csv);
        if (!csv) throw IoError("train: cannot open metrics csv");
        csv << "step,epoch,eps,loss,clean_acc\n";
    }

    const std::size_t ch = data.images.shape[1], ih = data.images.shape[2],
                      iw = data.images.shape[3];
    const std::size_t px = ch * ih * iw;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto order = shuffled_indices(n, cfg.seed + (std::uint64_t)epoch);
        for (std::size_t base = 0; base < n; base += bs) {
            std::size_t m = std::min(bs, n - base);
            Tensor xb{{m, ch, ih, iw}, std::vector<float>(m * px)};
            std::vector<int> yb(m);
            for (std::size_t i = 0; i < m; ++i) {
                std::size_t src = order[base + i];
                std::copy_n(data.images.data.begin() + src * px, px,
                            xb.data.begin() + i * px);
                yb[i] = data.labels[src];
            }
            double eps = eps_at(cfg, st.step, total_steps);

            // inner perturbation per method
            Tensor xp;
            bool need_xp = method != TrainMethod::Normal;
            if (need_xp) {
                bool disc_inner = method == TrainMethod::Int ||
                                  method == TrainMethod::IntAdv ||
                                  method == TrainMethod::IntOneClass;
                xp = disc_inner
                         ? inner_max_discrepancy(
                               st.net, xb, yb, eps, cfg.inner_steps,
                               cfg.inner_step_size,
                               method == TrainMethod::IntOneClass)
                         : inner_max_loss(st.net, xb, yb, eps, cfg.inner_steps,
                                          cfg.inner_step_size);
            }

            // outer loss on a fresh tape with shared parameter leaves
            Graph g;
            std::vector<Var> params = param_leaves(st.net, g, true);
            bool ce_at_adv = method == TrainMethod::Adv ||
                             method == TrainMethod::IntAdv ||
                             method == TrainMethod::Int2Adv;
            bool has_disc = method == TrainMethod::Int ||
                            method == TrainMethod::IntAdv ||
                            method == TrainMethod::Int2 ||
                            method == TrainMethod::Int2Adv ||
                            method == TrainMethod::IntOneClass;

            NetTrace t_clean = trace_with(st.net, g, g.constant(xb), params);
            Var loss;
            if (ce_at_adv || has_disc) {
                NetTrace t_adv = trace_with(st.net, g, g.constant(xp), params);
                loss = g.cross_entropy_mean(ce_at_adv ? t_adv.logits
                                                      : t_clean.logits,
                                            yb);
                if (has_disc) {
                    Var w;
                    if (method == TrainMethod::IntOneClass) {
                        w = g.constant(
                            weight_tensor(g.value(t_adv.logits), yb, true));
                    } else {
                        w = dtilde_weights(g, t_adv.logits, yb);
                    }
                    Var d = dtilde(g, t_clean, t_adv, w);
                    loss = g.add(loss, g.scale(d, (float)cfg.gamma));
                }
            } else {
                loss = g.cross_entropy_mean(t_clean.logits, yb);
            }
            g.backward(loss);
            double loss_val = (double)g.value(loss).data[0];
            if (!std::isfinite(loss_val))
                throw std::runtime_error(
                    "train: non-finite loss at step " + std::to_string(st.step) +
                    " (epoch " + std::to_string(epoch) + ", eps " +
                    std::to_string(eps) + ")");

            std::vector<Tensor> grads;
            grads.reserve(params.size());
            for (Var p : params) grads.push_back(g.grad(p));
            adam.step(st.net.parameters(), grads);

            MetricRow row{(int)st.step, epoch, eps, loss_val, -1.0};
            st.history.push_back(row);
            ++st.step;

            if (cfg.checkpoint_every > 0 && st.step % cfg.checkpoint_every == 0 &&
                !cfg.checkpoint_prefix.empty())
                save_checkpoint(st.net, cfg.checkpoint_prefix + "-step" +
                                            std::to_string(st.step) + ".irc");
        }
        double acc = clean_accuracy(st.net, data, 500);
        st.history.back().clean_acc = acc;
        if (csv.is_open()) {
            const MetricRow& r = st.history.back();
            csv << r.step << ',' << r.epoch << ',' << r.eps << ',' << r.loss
                << ',' << acc << '\n'
                << std::flush;  // one row per epoch; keep progress visible
        }
    }
    return st;
}

}  // namespace irt
