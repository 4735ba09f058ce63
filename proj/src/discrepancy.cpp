#include "irt/discrepancy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace irt {

namespace {

double norm_of_diff(const std::vector<float>& a, const std::vector<float>& b,
                    Norm norm) {
    if (a.size() != b.size())
        throw std::runtime_error("discrepancy: map length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += norm == Norm::L1 ? std::abs(d) : d * d;
    }
    return norm == Norm::L1 ? acc : std::sqrt(acc);
}

std::vector<int> resolve_classes(const ClassSet& cs, std::size_t num_classes,
                                 Interpreter kind) {
    if (kind == Interpreter::Repr) {
        if (cs.kind == ClassSet::AllClass || cs.kind == ClassSet::TwoClass)
            return {-1};  // class-free map, evaluated once
        throw std::invalid_argument(
            "discrepancy: Repr interpreter is class-free; use TwoClass or "
            "AllClass reporting");
    }
    switch (cs.kind) {
        case ClassSet::OneClass:
            return {cs.y};
        case ClassSet::TwoClass:
            if (cs.y == cs.y2)
                throw std::invalid_argument("discrepancy: TwoClass needs y != y'");
            return {cs.y, cs.y2};
        case ClassSet::AllClass: {
            std::vector<int> all(num_classes);
            for (std::size_t i = 0; i < num_classes; ++i) all[i] = (int)i;
            return all;
        }
        case ClassSet::SoftmaxWeighted:
            throw std::invalid_argument(
                "discrepancy: softmax-weighted set has its own entry point");
    }
    throw std::logic_error("discrepancy: bad class set");
}

std::vector<double> softmax_of(const Tensor& logits) {
    std::vector<double> p(logits.data.size());
    double mx = *std::max_element(logits.data.begin(), logits.data.end());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp((double)logits.data[i] - mx);
        z += p[i];
    }
    for (auto& v : p) v /= z;
    return p;
}

}  // namespace

Tensor prebias_logits(const Network& net, const Tensor& x) {
    Tensor f = forward(net, x).logits;
    std::size_t c = net.num_classes;
    std::size_t n = f.data.size() / c;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) f.data[i * c + j] -= net.head_b.data[j];
    return f;
}

double generic_discrepancy(const DiscrepancySpec& spec, const Network& net,
                           const Tensor& x, const Tensor& xp) {
    if (x.shape != xp.shape)
        throw ShapeError("generic_discrepancy", x.shape, xp.shape);
    if (spec.class_set.kind == ClassSet::SoftmaxWeighted)
        return softmax_weighted_discrepancy(net, x, xp, spec.class_set.y,
                                            spec.interp);
    auto classes =
        resolve_classes(spec.class_set, net.num_classes, spec.interp.kind);
    double acc = 0.0;
    for (int c : classes) {
        InterpMap ma = make_map(spec.interp, net, x, c);
        InterpMap mb = make_map(spec.interp, net, xp, c);
        acc += norm_of_diff(ma.values, mb.values, spec.norm);
    }
    return acc / static_cast<double>(classes.size());
}

double two_class_l1(const Network& net, const Tensor& x, const Tensor& xp, int y,
                    int yp, const InterpreterSpec& interp) {
    if (y == yp) throw std::invalid_argument("two_class_l1: y == y'");
    DiscrepancySpec spec{ClassSet::two(y, yp), Norm::L1, interp};
    return generic_discrepancy(spec, net, x, xp);
}

double softmax_weighted_discrepancy(const Network& net, const Tensor& x,
                                    const Tensor& xp, int y,
                                    const InterpreterSpec& interp) {
    if (interp.kind == Interpreter::Repr)
        throw std::invalid_argument(
            "softmax_weighted_discrepancy: needs a per-class interpreter");
    auto p = softmax_of(forward(net, xp).logits);
    double acc = 0.0;
    for (std::size_t c = 0; c < net.num_classes; ++c) {
        InterpMap ma = make_map(interp, net, x, (int)c);
        InterpMap mb = make_map(interp, net, xp, (int)c);
        double l1 = norm_of_diff(ma.values, mb.values, Norm::L1);
        double w = ((int)c == y) ? 0.5 : 0.5 * p[c];
        acc += w * l1;
    }
    return acc;
}

BoundCheck check_prop1(const Network& net, const Tensor& x, const Tensor& xp,
                       int y, int yp) {
    if (y == yp) throw std::invalid_argument("check_prop1: y == y'");
    if (predict(net, x) != y || predict(net, xp) != yp)
        throw std::runtime_error(
            "check_prop1: predictions do not match the claimed labels");
    BoundCheck out;
    out.discrepancy = two_class_l1(net, x, xp, y, yp);
    Tensor f = prebias_logits(net, x);
    out.half_margin = 0.5 * ((double)f.data[y] - (double)f.data[yp]);
    out.holds = out.discrepancy >= out.half_margin - 1e-5;
    return out;
}

NdsResult nds(const DiscrepancySpec& spec, const Network& net, const Tensor& x,
              const Tensor& xp) {
    auto classes =
        resolve_classes(spec.class_set, net.num_classes, spec.interp.kind);
    NdsResult out;
    double acc = 0.0;
    for (int c : classes) {
        InterpMap ma = make_map(spec.interp, net, x, c);
        InterpMap mb = make_map(spec.interp, net, xp, c);
        auto [lo, hi] = std::minmax_element(ma.values.begin(), ma.values.end());
        double range = (double)*hi - (double)*lo;
        if (range <= 0.0) {
            ++out.degenerate_classes;
            continue;
        }
        double term = 0.0;
        for (std::size_t i = 0; i < ma.values.size(); ++i) {
            double d = ((double)ma.values[i] - (double)mb.values[i]) / range;
            term += spec.norm == Norm::L1 ? std::abs(d) : d * d;
        }
        acc += spec.norm == Norm::L1 ? term : std::sqrt(term);
    }
    out.value = acc / static_cast<double>(classes.size());
    return out;
}

double nsl(double nds_low, double nds_high, double eps_low, double eps_high) {
    if (nds_low <= 0.0)
        throw std::invalid_argument("nsl: nds at the base radius must be > 0");
    if (!(eps_high > eps_low) || eps_low <= 0.0)
        throw std::invalid_argument("nsl: need eps_high > eps_low > 0");
    double rel_nds = std::abs(nds_high - nds_low) / nds_low;
    double rel_eps = (eps_high - eps_low) / eps_low;
    return rel_nds / rel_eps;
}

TauResult kendall_tau(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("kendall_tau: equal lengths >= 2 required");
    const std::size_t n = a.size();
    // O(n^2) pair count; maps here are at most a few thousand cells.
    long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double da = (double)a[i] - (double)a[j];
            double db = (double)b[i] - (double)b[j];
            if (da == 0.0 && db == 0.0) continue;
            if (da == 0.0) {
                ++ties_a;
            } else if (db == 0.0) {
                ++ties_b;
            } else if ((da > 0) == (db > 0)) {
                ++concordant;
            } else {
                ++discordant;
            }
        }
    }
    // tau-b: pairs tied in both variables drop out of both denominator
    // factors; pairs tied in one drop out of that factor only.
    double denom_a = (double)(concordant + discordant + ties_a);
    double denom_b = (double)(concordant + discordant + ties_b);
    TauResult out;
    if (denom_a == 0.0 || denom_b == 0.0) {
        out.degenerate = true;
        out.tau = 0.0;
        return out;
    }
    out.tau = (double)(concordant - discordant) / std::sqrt(denom_a * denom_b);
    return out;
}

Var dtilde_weights(Graph& g, Var logits, const std::vector<int>& labels) {
    const auto& shape = g.value(logits).shape;
    std::size_t n = shape[0], c = shape[1];
    if (labels.size() != n)
        throw std::invalid_argument("dtilde_weights: label count != batch size");
    Tensor onehot{{n, c}, std::vector<float>(n * c, 0.0f)};
    Tensor offhot{{n, c}, std::vector<float>(n * c, 0.5f)};
    for (std::size_t i = 0; i < n; ++i) {
        onehot.data[i * c + (std::size_t)labels[i]] = 0.5f;
        offhot.data[i * c + (std::size_t)labels[i]] = 0.0f;
    }
    Var p = g.softmax(logits);
    return g.add(g.constant(std::move(onehot)),
                 g.mul(p, g.constant(std::move(offhot))));
}

Var dtilde(Graph& g, const NetTrace& tx, const NetTrace& txp, Var weights) {
    Var ca = cam_all_classes(g, tx);   // [N,C,u]
    Var cb = cam_all_classes(g, txp);  // [N,C,u]
    Var per_class = g.sum_last(g.abs(g.sub(ca, cb)));  // [N,C]
    Var per_example = g.sum_last(g.mul(per_class, weights));  // [N]
    return g.mean_all(per_example);
}

}  // namespace irt
