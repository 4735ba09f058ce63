#include "irt/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <random>
#include <stdexcept>

#include "irt/interpret.hpp"

namespace irt {

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

int runner_up(const Tensor& logits, int avoid) {
    int best = -1;
    for (std::size_t j = 0; j < logits.data.size(); ++j) {
        if ((int)j == avoid) continue;
        if (best < 0 || logits.data[j] > logits.data[best]) best = (int)j;
    }
    return best;
}

struct CeGrad {
    double loss;
    Tensor grad;
    Tensor logits;
};

CeGrad ce_gradient(const Network& net, const Tensor& x, int y) {
    Graph g;
    Var xl = g.leaf(x, true);
    NetTrace t = trace(net, g, xl, false);
    Var loss = g.cross_entropy_mean(t.logits, {y});
    g.backward(loss);
    return {(double)g.value(loss).data[0], g.grad(xl), g.value(t.logits)};
}

// CAM values for every class, [1,C,u], computed off-tape.
Tensor cam_stack(const Network& net, const Tensor& x) {
    ForwardResult fr = forward(net, x);
    std::size_t k = net.feature_channels(), u = net.spatial_units();
    std::size_t c = net.num_classes;
    Tensor out{{1, c, u}, std::vector<float>(c * u, 0.0f)};
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < u; ++i) {
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk)
                acc += (double)net.head_w.data[ci * k + kk] *
                       (double)fr.features.data[kk * u + i];
            out.data[ci * u + i] = (float)(acc / (double)u);
        }
    return out;
}

// One ISA/AAI gradient step's shared scaffolding: trace the current
// iterate with a live input leaf and hand back the pieces.
struct TapeStep {
    Graph g;
    Var x;
    NetTrace t;
    Var cams;  // [1,C,u]
};

TapeStep open_tape(const Network& net, const Tensor& x_adv) {
    TapeStep s;
    s.x = s.g.leaf(x_adv, true);
    s.t = trace(net, s.g, s.x, false);
    s.cams = cam_all_classes(s.g, s.t);
    return s;
}

}  // namespace

AttackOutcome pgd(const Network& net, const Tensor& x, int y,
                  const AttackConfig& cfg) {
    if (cfg.eps < 0 || cfg.step_size <= 0 || cfg.steps < 0)
        throw std::invalid_argument("pgd: bad config");
    AttackOutcome out;
    Tensor x_adv = x;
    if (cfg.rand_init && cfg.eps > 0) {
        std::mt19937_64 rng(cfg.seed);
        std::uniform_real_distribution<double> u(-cfg.eps, cfg.eps);
        for (auto& v : x_adv.data) v = (float)((double)v + u(rng));
        project_ball(x_adv, x, cfg.eps);
        clip_unit(x_adv);
    }
    const bool targeted = cfg.targeted.has_value();
    const int label = targeted ? *cfg.targeted : y;
    const double dir = targeted ? -1.0 : 1.0;  // maximize CE unless targeted
    if (cfg.eps > 0) {
        for (int s = 0; s < cfg.steps; ++s) {
            CeGrad cg = ce_gradient(net, x_adv, label);
            out.loss_trace.push_back(cg.loss);
            for (std::size_t i = 0; i < x_adv.data.size(); ++i) {
                float gs = cg.grad.data[i] > 0 ? 1.0f : (cg.grad.data[i] < 0 ? -1.0f : 0.0f);
                x_adv.data[i] += (float)(dir * cfg.step_size) * gs;
            }
            project_ball(x_adv, x, cfg.eps);
            clip_unit(x_adv);
        }
    }
    Tensor logits = forward(net, x_adv).logits;
    int pred = 0;
    for (std::size_t j = 1; j < logits.data.size(); ++j)
        if (logits.data[j] > logits.data[pred]) pred = (int)j;
    if (targeted) {
        int ru = runner_up(logits, label);
        out.margin = (double)logits.data[ru] - (double)logits.data[label];
        out.success = pred == label;
    } else {
        int ru = runner_up(logits, y);
        out.margin = (double)logits.data[y] - (double)logits.data[ru];
        out.success = pred != y;
    }
    out.x_adv = std::move(x_adv);
    return out;
}

AttackOutcome isa(const Network& net, const Tensor& x, int y, int target,
                  double eps, double tau, double lambda, int steps,
                  double step_size, const DiscrepancySpec* dspec) {
    if (target == y) throw std::invalid_argument("isa: target == y");
    if (tau <= 0) throw std::invalid_argument("isa: tau must be > 0");
    if (step_size <= 0) step_size = eps / 10.0;
    DiscrepancySpec spec{ClassSet::two(y, target), Norm::L1, {}};
    if (dspec) spec = *dspec;
    if (spec.interp.kind != Interpreter::CAM &&
        spec.interp.kind != Interpreter::GradCAM)
        throw std::invalid_argument(
            "isa: only CAM-family discrepancy terms are supported");
    Tensor benign = cam_stack(net, x);
    std::size_t c = net.num_classes;

    // per-class weights for the measure; softmax weights are refreshed
    // from the current iterate's logits each step
    auto class_mask = [&](const Tensor& logits) {
        Tensor mask{{1, c}, std::vector<float>(c, 0.0f)};
        switch (spec.class_set.kind) {
            case ClassSet::OneClass:
                mask.data[spec.class_set.y] = 1.0f;
                break;
            case ClassSet::TwoClass:
                mask.data[spec.class_set.y] = 0.5f;
                mask.data[spec.class_set.y2] = 0.5f;
                break;
            case ClassSet::AllClass:
                for (auto& v : mask.data) v = 1.0f / (float)c;
                break;
            case ClassSet::SoftmaxWeighted: {
                double mx = logits.data[0];
                for (std::size_t j = 1; j < c; ++j)
                    mx = std::max(mx, (double)logits.data[j]);
                double z = 0.0;
                std::vector<double> e(c);
                for (std::size_t j = 0; j < c; ++j) {
                    e[j] = std::exp((double)logits.data[j] - mx);
                    z += e[j];
                }
                for (std::size_t j = 0; j < c; ++j)
                    mask.data[j] = (float)(0.5 * e[j] / z);
                mask.data[spec.class_set.y] = 0.5f;
                break;
            }
        }
        return mask;
    };

    AttackOutcome out;
    Tensor x_adv = x;
    double fgap = 0.0, dval = 0.0;
    for (int s = 0; s < steps && eps > 0; ++s) {
        TapeStep ts = open_tape(net, x_adv);
        Var diff = ts.g.sub(ts.cams, ts.g.constant(benign));
        Var per_class = spec.norm == Norm::L1
                            ? ts.g.sum_last(ts.g.abs(diff))
                            : ts.g.sqrt(ts.g.sum_last(ts.g.mul(diff, diff)));
        Var d = ts.g.sum_all(ts.g.mul(
            per_class, ts.g.constant(class_mask(ts.g.value(ts.t.logits)))));
        const Tensor& lg = ts.g.value(ts.t.logits);
        int ru = runner_up(lg, target);
        fgap = (double)lg.data[ru] - (double)lg.data[target];
        Var total = d;
        if (fgap > -tau) {
            Tensor amask{{1, c}, std::vector<float>(c, 0.0f)};
            amask.data[ru] = 1.0f;
            amask.data[target] = -1.0f;
            Var att = ts.g.sum_all(ts.g.mul(ts.t.logits, ts.g.constant(amask)));
            total = ts.g.add(ts.g.scale(att, (float)lambda), d);
        }
        ts.g.backward(total);
        dval = (double)ts.g.value(d).data[0];
        out.loss_trace.push_back(lambda * std::max(fgap, -tau) + dval);
        Tensor grad = ts.g.grad(ts.x);
        for (std::size_t i = 0; i < x_adv.data.size(); ++i) {
            float gs = grad.data[i] > 0 ? 1.0f : (grad.data[i] < 0 ? -1.0f : 0.0f);
            x_adv.data[i] -= (float)step_size * gs;
        }
        project_ball(x_adv, x, eps);
        clip_unit(x_adv);
    }
    Tensor lg = forward(net, x_adv).logits;
    int ru = runner_up(lg, target);
    fgap = (double)lg.data[ru] - (double)lg.data[target];
    out.margin = fgap;
    out.success = fgap <= -tau + 1e-9;
    out.discrepancy = generic_discrepancy(spec, net, x, x_adv);
    out.lambda_used = lambda;
    out.x_adv = std::move(x_adv);
    return out;
}

AttackOutcome isa_bisect(const Network& net, const Tensor& x, int y, int target,
                         double eps, double tau, double lambda_lo,
                         double lambda_hi, int rounds, int steps,
                         double step_size, const DiscrepancySpec* dspec) {
    if (lambda_hi < lambda_lo)
        throw std::invalid_argument("isa_bisect: lambda_hi < lambda_lo");
    std::vector<std::pair<double, bool>> seen;
    auto run = [&](double lam) {
        AttackOutcome o =
            isa(net, x, y, target, eps, tau, lam, steps, step_size, dspec);
        seen.emplace_back(lam, o.success);
        return o;
    };
    AttackOutcome lo_out = run(lambda_lo);
    if (lo_out.success) return lo_out;  // smallest candidate already works
    AttackOutcome best = run(lambda_hi);
    if (!best.success)
        throw std::runtime_error(
            "isa_bisect: no success at lambda_hi; increase eps or lambda_hi");
    double lo = lambda_lo, hi = lambda_hi;
    for (int r = 0; r < rounds; ++r) {
        double mid = 0.5 * (lo + hi);
        AttackOutcome o = run(mid);
        if (o.success) {
            hi = mid;
            best = std::move(o);
        } else {
            lo = mid;
        }
    }
    // The bisection assumes success is monotone in lambda; note
    // counterexamples rather than failing.
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i + 1 < seen.size(); ++i)
        if (seen[i].second && !seen[i + 1].second)
            std::fprintf(stderr,
                         "isa_bisect: non-monotone success (lambda %.4g ok, "
                         "%.4g not)\n",
                         seen[i].first, seen[i + 1].first);
    return best;
}

AttackOutcome aai(const Network& net, const Tensor& x, int y, double eps,
                  double lambda, const AaiObjective& obj, int steps,
                  double step_size) {
    if (predict(net, x) != y)
        throw std::runtime_error("aai: input is already misclassified");
    Tensor benign = cam_stack(net, x);
    std::size_t c = net.num_classes, u = net.spatial_units();

    // class-y selector over [1,C,u]
    Tensor ymask{{1, c, u}, std::vector<float>(c * u, 0.0f)};
    for (std::size_t i = 0; i < u; ++i) ymask.data[(std::size_t)y * u + i] = 1.0f;
    Tensor topk_mask;
    if (obj.kind == AaiObjective::TopK) {
        std::vector<std::size_t> idx(u);
        for (std::size_t i = 0; i < u; ++i) idx[i] = i;
        std::size_t k = std::min<std::size_t>((std::size_t)obj.k, u);
        std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                          [&](std::size_t a, std::size_t b) {
                              return benign.data[(std::size_t)y * u + a] >
                                     benign.data[(std::size_t)y * u + b];
                          });
        topk_mask = Tensor{{1, c, u}, std::vector<float>(c * u, 0.0f)};
        for (std::size_t i = 0; i < k; ++i)
            topk_mask.data[(std::size_t)y * u + idx[i]] = 1.0f;
    }

    AttackOutcome out;
    Tensor x_adv = x;
    // the l1 map-difference objective has a zero subgradient at
    // delta = 0; start from a deterministic offset inside the ball,
    // seeded from the input pixels
    if (eps > 0) {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (float v : x.data) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, sizeof(bits));
            h = (h ^ bits) * 0x100000001b3ull;
        }
        std::mt19937_64 rng(h);
        std::uniform_real_distribution<double> jd(-eps, eps);
        for (auto& v : x_adv.data)
            v = std::min(1.0f, std::max(0.0f, v + (float)jd(rng)));
    }
    for (int s = 0; s < steps && eps > 0; ++s) {
        TapeStep ts = open_tape(net, x_adv);
        Var interp_term;
        if (obj.kind == AaiObjective::L1OneClass) {
            // minimize -D1: push the class-y map away from benign
            Var d1 = ts.g.sum_all(ts.g.mul(
                ts.g.abs(ts.g.sub(ts.cams, ts.g.constant(benign))),
                ts.g.constant(ymask)));
            interp_term = ts.g.scale(d1, -1.0f);
        } else {
            // minimize total mass left on the benign top-k cells
            interp_term =
                ts.g.sum_all(ts.g.mul(ts.cams, ts.g.constant(topk_mask)));
        }
        const Tensor& lg = ts.g.value(ts.t.logits);
        int ru = runner_up(lg, y);
        double hinge = (double)lg.data[ru] - (double)lg.data[y];
        Var total = interp_term;
        if (hinge > 0) {
            Tensor amask{{1, c}, std::vector<float>(c, 0.0f)};
            amask.data[ru] = 1.0f;
            amask.data[y] = -1.0f;
            Var att = ts.g.sum_all(ts.g.mul(ts.t.logits, ts.g.constant(amask)));
            total = ts.g.add(ts.g.scale(att, (float)lambda), interp_term);
        }
        ts.g.backward(total);
        out.loss_trace.push_back(lambda * std::max(hinge, 0.0) +
                                 (double)ts.g.value(interp_term).data[0]);
        Tensor grad = ts.g.grad(ts.x);
        for (std::size_t i = 0; i < x_adv.data.size(); ++i) {
            float gs = grad.data[i] > 0 ? 1.0f : (grad.data[i] < 0 ? -1.0f : 0.0f);
            x_adv.data[i] -= (float)step_size * gs;
        }
        project_ball(x_adv, x, eps);
        clip_unit(x_adv);
    }
    Tensor lg = forward(net, x_adv).logits;
    int ru = runner_up(lg, y);
    out.margin = (double)lg.data[y] - (double)lg.data[ru];
    out.success = out.margin > 0;  // prediction must remain y
    DiscrepancySpec d1spec{ClassSet::one(y), Norm::L1, {}};
    out.discrepancy = generic_discrepancy(d1spec, net, x, x_adv);
    out.lambda_used = lambda;
    out.x_adv = std::move(x_adv);
    return out;
}

double min_eps(const Network& net, const Tensor& x, int y,
               const AttackConfig& cfg, double tol) {
    if (predict(net, x) != y) return 0.0;
    auto succeeds = [&](double e) {
        AttackConfig c = cfg;
        c.eps = e;
        c.targeted.reset();
        // keep enough step budget to reach the ball surface
        c.step_size = std::max(cfg.step_size, 1.5 * e / std::max(1, cfg.steps));
        return pgd(net, x, y, c).success;
    };
    double hi = cfg.eps;
    if (!succeeds(hi))
        throw std::runtime_error(
            "min_eps: attack fails at the upper bracket; raise cfg.eps");
    double lo = 0.0;
    while (hi - lo > tol) {
        double mid = 0.5 * (lo + hi);
        if (succeeds(mid))
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

}  // namespace irt
