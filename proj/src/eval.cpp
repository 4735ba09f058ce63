#include "irt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "irt/discrepancy.hpp"
#include "irt/formats.hpp"
#include "irt/interpret.hpp"

namespace irt {

namespace {

// The sampling convention everywhere: seeded shuffle, then the prefix.
std::vector<std::size_t> sample(const Dataset& data, std::size_t n,
                                std::uint64_t seed) {
    if (data.size() == 0) throw std::invalid_argument("eval: empty dataset");
    auto idx = shuffled_indices(data.size(), seed);
    if (n && n < idx.size()) idx.resize(n);
    return idx;
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw std::invalid_argument("quantile of empty set");
    std::sort(v.begin(), v.end());
    double pos = q * (double)(v.size() - 1);
    std::size_t lo = (std::size_t)pos;
    std::size_t hi = std::min(lo + 1, v.size() - 1);
    double frac = pos - (double)lo;
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace

SweepResult ata_sweep(const Network& net, const Dataset& data,
                      const std::vector<double>& eps_list,
                      const EvalOptions& opt) {
    auto idx = sample(data, opt.n_samples, opt.seed);
    SweepResult r;
    r.axis = "eps";
    r.values = eps_list;
    r.columns = {"ata"};
    r.samples = idx.size();
    r.seed = opt.seed;
    for (double eps : eps_list) {
        std::size_t correct = 0;
        for (std::size_t i : idx) {
            Tensor x = data.image(i);
            int y = data.labels[i];
            if (eps == 0.0) {
                if (predict(net, x) == y) ++correct;
                continue;
            }
            AttackConfig cfg;
            cfg.eps = eps;
            cfg.steps = opt.attack_steps;
            cfg.step_size = opt.attack_step_size;
            if (!pgd(net, x, y, cfg).success) ++correct;
        }
        r.cells.push_back({(double)correct / (double)idx.size()});
    }
    return r;
}

SweepResult multistep_sweep(const Network& net, const Dataset& data,
                            const std::vector<int>& step_list, double eps,
                            const EvalOptions& opt) {
    auto idx = sample(data, opt.n_samples, opt.seed);
    SweepResult r;
    r.axis = "steps";
    r.columns = {"ata"};
    r.samples = idx.size();
    r.seed = opt.seed;
    for (int steps : step_list) {
        r.values.push_back((double)steps);
        std::size_t correct = 0;
        for (std::size_t i : idx) {
            Tensor x = data.image(i);
            int y = data.labels[i];
            if (eps == 0.0) {
                if (predict(net, x) == y) ++correct;
                continue;
            }
            AttackConfig cfg;
            cfg.eps = eps;
            cfg.steps = steps;
            cfg.step_size = opt.attack_step_size;
            if (!pgd(net, x, y, cfg).success) ++correct;
        }
        r.cells.push_back({(double)correct / (double)idx.size()});
    }
    return r;
}

SweepResult aai_sweep(const Network& net, const Dataset& data,
                      const std::vector<double>& eps_list, double lambda,
                      const AaiObjective& obj, const EvalOptions& opt) {
    auto idx = sample(data, opt.n_samples, opt.seed);
    std::vector<std::size_t> kept;
    for (std::size_t i : idx)
        if (predict(net, data.image(i)) == data.labels[i]) kept.push_back(i);
    if (kept.empty())
        throw std::runtime_error("aai_sweep: no correctly classified samples");
    SweepResult r;
    r.axis = "eps";
    r.values = eps_list;
    r.columns = {"tau", "excluded"};
    r.samples = kept.size();
    r.seed = opt.seed;
    double excluded = (double)(idx.size() - kept.size());
    for (double eps : eps_list) {
        double tau_sum = 0.0;
        for (std::size_t i : kept) {
            Tensor x = data.image(i);
            int y = data.labels[i];
            InterpMap before = cam(net, x, y);
            if (eps == 0.0) {
                tau_sum += 1.0;
                continue;
            }
            AttackOutcome o = aai(net, x, y, eps, lambda, obj, opt.attack_steps,
                                  opt.attack_step_size);
            InterpMap after = cam(net, o.x_adv, y);
            tau_sum += kendall_tau(before.values, after.values).tau;
        }
        r.cells.push_back({tau_sum / (double)kept.size(), excluded});
    }
    return r;
}

DecileTable prop1_deciles(const Network& net, const Dataset& data,
                          std::size_t n_success_target, double eps,
                          const EvalOptions& opt) {
    auto idx = sample(data, 0, opt.seed);  // walk the whole shuffle if needed
    std::vector<double> ds, margins, ratios;
    std::size_t violations = 0;
    for (std::size_t i : idx) {
        if (ds.size() >= n_success_target) break;
        Tensor x = data.image(i);
        int y = data.labels[i];
        if (predict(net, x) != y) continue;
        AttackConfig cfg;
        cfg.eps = eps;
        cfg.steps = opt.attack_steps;
        cfg.step_size = opt.attack_step_size;
        AttackOutcome o = pgd(net, x, y, cfg);
        if (!o.success) continue;
        int yp = predict(net, o.x_adv);
        BoundCheck bc = check_prop1(net, x, o.x_adv, y, yp);
        ds.push_back(bc.discrepancy);
        margins.push_back(2.0 * bc.half_margin);
        if (!bc.holds) ++violations;
        if (bc.half_margin > 0) ratios.push_back(bc.discrepancy / bc.half_margin);
    }
    if (ds.size() < 10)
        throw std::runtime_error(
            "prop1_deciles: fewer than 10 successful attacks (got " +
            std::to_string(ds.size()) + ")");
    DecileTable t;
    t.successes = ds.size();
    t.violations = violations;
    for (int k = 0; k < 10; ++k) {
        double q = (double)(k + 1) / 10.0;
        t.discrepancy[k] = quantile(ds, q);
        t.margin[k] = quantile(margins, q);
    }
    t.median_ratio = ratios.empty() ? 0.0 : quantile(ratios, 0.5);
    return t;
}

SweepResult nds_table(const Network& net, const Dataset& data,
                      const std::vector<NdsRow>& specs, double tau,
                      double lambda_hi, const EvalOptions& opt, int isa_steps,
                      int isa_rounds) {
    auto idx = sample(data, opt.n_samples, opt.seed);
    std::vector<double> nds_lo_sum(specs.size(), 0.0),
        nds_hi_sum(specs.size(), 0.0);
    std::vector<std::size_t> used(specs.size(), 0);
    for (std::size_t i : idx) {
        Tensor x = data.image(i);
        int y = data.labels[i];
        if (predict(net, x) != y) continue;
        // the minimal radius and the target class are measure-independent
        AttackConfig mcfg;
        mcfg.eps = 0.6;
        mcfg.steps = opt.attack_steps;
        mcfg.step_size = opt.attack_step_size;
        double eps_star;
        try {
            eps_star = min_eps(net, x, y, mcfg);
        } catch (const std::runtime_error&) {
            continue;  // not attackable inside the bracket
        }
        if (eps_star <= 0.0) continue;
        AttackConfig acfg = mcfg;
        acfg.eps = eps_star;
        int target = predict(net, pgd(net, x, y, acfg).x_adv);
        if (target == y) continue;
        for (std::size_t si = 0; si < specs.size(); ++si) {
            DiscrepancySpec spec = specs[si].spec;
            if (spec.class_set.kind == ClassSet::OneClass ||
                spec.class_set.kind == ClassSet::SoftmaxWeighted)
                spec.class_set.y = y;
            if (spec.class_set.kind == ClassSet::TwoClass)
                spec.class_set = ClassSet::two(y, target);
            double pair[2];
            bool ok = true;
            double radii[2] = {eps_star, 1.6 * eps_star};
            for (int k = 0; k < 2; ++k) {
                try {
                    AttackOutcome o = isa_bisect(net, x, y, target, radii[k],
                                                 tau, 0.0, lambda_hi,
                                                 isa_rounds, isa_steps, -1.0,
                                                 &spec);
                    pair[k] = nds(spec, net, x, o.x_adv).value;
                } catch (const std::runtime_error&) {
                    ok = false;  // failed attacks are excluded from averages
                    break;
                }
            }
            if (!ok || pair[0] <= 0.0) continue;
            nds_lo_sum[si] += pair[0];
            nds_hi_sum[si] += pair[1];
            ++used[si];
        }
    }
    SweepResult r;
    r.axis = "spec";
    r.columns = {"nds", "nsl", "n_used"};
    r.seed = opt.seed;
    r.samples = idx.size();
    for (std::size_t si = 0; si < specs.size(); ++si) {
        if (used[si] == 0)
            throw std::runtime_error("nds_table: no usable examples for spec " +
                                     specs[si].name);
        double mean_lo = nds_lo_sum[si] / (double)used[si];
        double mean_hi = nds_hi_sum[si] / (double)used[si];
        r.values.push_back((double)si);
        r.cells.push_back(
            {mean_lo, nsl(mean_lo, mean_hi, 1.0, 1.6), (double)used[si]});
    }
    return r;
}

SweepResult gamma_sweep(const Dataset& train_data, const Dataset& eval_data,
                        const std::vector<double>& gamma_list,
                        const TrainConfig& base, double ata_eps,
                        const EvalOptions& opt) {
    SweepResult r;
    r.axis = "gamma";
    r.values = gamma_list;
    r.columns = {"clean_acc", "ata"};
    r.samples = opt.n_samples;
    r.seed = opt.seed;
    for (double gamma : gamma_list) {
        TrainConfig cfg = base;
        cfg.method = TrainMethod::Int;
        cfg.gamma = gamma;
        TrainState st = train(build_network(Arch::Small, 1,
                                            train_data.images.shape[2],
                                            train_data.images.shape[3], 10,
                                            cfg.seed),
                              train_data, cfg);
        double clean = clean_accuracy(st.net, eval_data);
        SweepResult ata = ata_sweep(st.net, eval_data, {ata_eps}, opt);
        r.cells.push_back({clean, ata.cells[0][0]});
    }
    return r;
}

double channel_activation(const Network& net, const Tensor& x,
                          std::size_t channel) {
    ForwardResult fr = forward(net, x);
    std::size_t u = net.spatial_units();
    double acc = 0.0;
    for (std::size_t i = 0; i < u; ++i)
        acc += (double)fr.features.data[channel * u + i];
    return acc / (double)u;
}

Tensor visualize_features(const Network& net, const Tensor& seed_image,
                          std::size_t neuron_index, int steps,
                          double step_size) {
    if (neuron_index >= net.feature_channels())
        throw std::invalid_argument("visualize_features: channel out of range");
    Tensor x = seed_image;
    double act = channel_activation(net, x, neuron_index);
    std::size_t u = net.spatial_units();
    for (int s = 0; s < steps; ++s) {
        Graph g;
        Var xl = g.leaf(x, true);
        NetTrace t = trace(net, g, xl, false);
        const auto& fshape = g.value(t.features).shape;
        Tensor mask(fshape);
        std::size_t per_ch = fshape[2] * fshape[3];
        for (std::size_t i = 0; i < per_ch; ++i)
            mask.data[neuron_index * per_ch + i] = 1.0f / (float)u;
        g.backward(g.sum_all(g.mul(t.features, g.constant(std::move(mask)))));
        Tensor grad = g.grad(xl);
        float gmax = 0.0f;
        for (float v : grad.data) gmax = std::max(gmax, std::abs(v));
        if (gmax == 0.0f) break;
        double step = step_size;
        for (int tries = 0; tries < 6; ++tries) {
            Tensor cand = x;
            for (std::size_t i = 0; i < cand.data.size(); ++i)
                cand.data[i] = std::min(
                    1.0f,
                    std::max(0.0f, cand.data[i] +
                                       (float)(step * grad.data[i] / gmax)));
            double cand_act = channel_activation(net, cand, neuron_index);
            if (cand_act >= act) {
                x = std::move(cand);
                act = cand_act;
                break;
            }
            step *= 0.5;  // never accept a decrease
        }
    }
    return x;
}

void write_sweep_csv(const SweepResult& r, const std::string& path) {
    std::vector<std::string> header = {r.axis};
    header.insert(header.end(), r.columns.begin(), r.columns.end());
    CsvWriter csv(path, header);
    for (std::size_t i = 0; i < r.values.size(); ++i) {
        std::vector<std::string> cells = {CsvWriter::num(r.values[i])};
        for (double v : r.cells[i]) cells.push_back(CsvWriter::num(v));
        csv.row(cells);
    }
    csv.close();
}

}  // namespace irt
