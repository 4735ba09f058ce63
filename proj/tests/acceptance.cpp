// End-to-end acceptance gate. Each numbered criterion prints exactly one
// PASS/FAIL line; the process exits nonzero if any criterion fails.
//
// Usage: acceptance <path-to-irt_cli> <assets-dir>
//
// The heavy criteria share three models trained once on the bundled
// 2000-image digit set (normal, int, int2), so the binary runs the
// criteria out of numeric order but reports them in order.

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "irt/attack.hpp"
#include "irt/discrepancy.hpp"
#include "irt/eval.hpp"
#include "irt/formats.hpp"
#include "irt/interpret.hpp"
#include "irt/train.hpp"

using namespace irt;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
    std::printf("criterion %2d: %s  (%s)\n", criterion,
                pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string fmt(double v) { return CsvWriter::num(v); }

Tensor random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
    Tensor x({1, 1, h, w});
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    for (auto& v : x.data) v = d(rng);
    return x;
}

// ---------------------------------------------------------------- C1

// Central finite differences against the tape for one scalar-valued
// builder; returns the number of failing entries.
template <typename F>
int fd_mismatches(F&& build, std::vector<Tensor> inputs, std::size_t wrt,
                  double h) {
    Graph g;
    std::vector<Var> leaves;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        leaves.push_back(g.leaf(inputs[i], i == wrt));
    Var out = build(g, leaves);
    g.backward(out);
    Tensor analytic = g.grad(leaves[wrt]);
    int bad = 0;
    for (std::size_t j = 0; j < inputs[wrt].numel(); ++j) {
        auto eval = [&](float delta) {
            Graph g2;
            std::vector<Var> lv;
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                Tensor t = inputs[i];
                if (i == wrt) t.data[j] += delta;
                lv.push_back(g2.leaf(t, false));
            }
            return (double)g2.value(build(g2, lv)).data[0];
        };
        double fd = (eval((float)h) - eval((float)-h)) / (2.0 * h);
        double an = analytic.data[j];
        double err = std::abs(an - fd);
        double scale = std::max(std::abs(an), std::abs(fd));
        if (err > 1e-5 && err / scale > 1e-3) ++bad;
    }
    return bad;
}

void criterion1() {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<float> d(-1.0f, 1.0f);
    auto rt = [&](std::vector<std::size_t> s) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = d(rng);
        return t;
    };
    int bad = 0, tensors = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = rt({1, 2, 5, 5});
        Tensor w = rt({3, 2, 3, 3});
        Tensor b = rt({3});
        for (std::size_t wrt = 0; wrt < 3; ++wrt)
            bad += fd_mismatches(
                [](Graph& g, std::vector<Var>& v) {
                    return g.sum_all(g.relu(g.conv2d(v[0], v[1], v[2], 1, 1)));
                },
                {x, w, b}, wrt, 1e-2);
        Tensor px = rt({1, 2, 4, 4});
        bad += fd_mismatches(
            [](Graph& g, std::vector<Var>& v) {
                return g.sum_all(g.maxpool(v[0], 2, 2));
            },
            {px}, 0, 2e-3);
        Tensor dx = rt({2, 4}), dw = rt({3, 4}), db = rt({3});
        for (std::size_t wrt = 0; wrt < 3; ++wrt)
            bad += fd_mismatches(
                [](Graph& g, std::vector<Var>& v) {
                    return g.sum_all(g.dense(v[0], v[1], v[2]));
                },
                {dx, dw, db}, wrt, 1e-2);
        Tensor logits = rt({2, 5});
        std::vector<int> labels{1, 3};
        bad += fd_mismatches(
            [&](Graph& g, std::vector<Var>& v) {
                return g.cross_entropy_mean(v[0], labels);
            },
            {logits}, 0, 1e-2);
        bad += fd_mismatches(
            [](Graph& g, std::vector<Var>& v) {
                return g.sum_all(g.global_avg_pool(v[0]));
            },
            {rt({1, 3, 4, 4})}, 0, 1e-2);
        tensors += 9;
    }
    report(1, bad == 0,
           "finite differences, " + std::to_string(tensors) +
               " tensors, mismatching entries: " + std::to_string(bad));
}

// ---------------------------------------------------------------- C2

void criterion2() {
    std::mt19937_64 rng(202);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        Network net = build_network(trial % 2 ? Arch::Pool : Arch::Small, 1,
                                    14, 14, 6, (std::uint64_t)trial);
        Tensor x = random_image(14, 14, rng);
        int c = trial % 6;
        InterpMap m = cam(net, x, c);
        double s = 0.0;
        for (float v : m.values) s += v;
        worst = std::max(worst,
                         std::abs(s - prebias_logits(net, x).data[c]));
    }
    report(2, worst <= 1e-4, "max |sum CAM - prebias logit| = " + fmt(worst));
}

// ---------------------------------------------------------------- C3

void criterion3() {
    std::mt19937_64 rng(303);
    // linear case: positive-weight relu net is linear on nonnegative
    // inputs, so IG must be exact for any m
    Network lin = build_network(Arch::Small, 1, 8, 8, 3, 1);
    for (auto* p : lin.parameters())
        for (auto& v : p->data) v = std::abs(v);
    Tensor base({1, 1, 8, 8});
    double worst_lin = 0.0;
    for (int m : {1, 8, 64}) {
        Tensor x = random_image(8, 8, rng);
        double target = prebias_logits(lin, x).data[1] -
                        prebias_logits(lin, base).data[1];
        InterpMap a = ig(lin, x, 1, base, m);
        double s = 0.0;
        for (float v : a.values) s += v;
        worst_lin = std::max(worst_lin, std::abs(s - target));
    }
    // nonlinear case: random conv biases put relu kinks on the path
    Network net = build_network(Arch::Small, 1, 12, 12, 4, 5);
    std::normal_distribution<float> bias(0.0f, 0.2f);
    for (auto& blk : net.blocks)
        for (auto& v : blk.b.data) v = bias(rng);
    Tensor nb({1, 1, 12, 12});
    double r8 = 0.0, r128 = 0.0;
    for (int t = 0; t < 50; ++t) {
        Tensor x = random_image(12, 12, rng);
        double target = prebias_logits(net, x).data[2] -
                        prebias_logits(net, nb).data[2];
        auto resid = [&](int m) {
            InterpMap a = ig(net, x, 2, nb, m);
            double s = 0.0;
            for (float v : a.values) s += v;
            return std::abs(s - target);
        };
        r8 += resid(8);
        r128 += resid(128);
    }
    bool pass = worst_lin <= 1e-5 && r128 <= 0.25 * r8;
    report(3, pass,
           "linear residual " + fmt(worst_lin) + ", mean residual m=128 " +
               fmt(r128 / 50) + " vs m=8 " + fmt(r8 / 50));
}

// ------------------------------------------------- shared trained nets

struct Models {
    Dataset train_set, test_set;
    Network normal, intnet, int2net;
};

Network train_method(const Dataset& data, TrainMethod m, double gamma) {
    Network net = build_network(Arch::Small, 1, 28, 28, 10, 0);
    TrainConfig cfg;
    cfg.method = m;
    cfg.gamma = gamma;
    cfg.eps_final = 0.3;
    cfg.inner_steps = 5;
    cfg.inner_step_size = 0.1;
    cfg.epochs = 15;
    cfg.batch_size = 50;
    cfg.lr = 3e-3;
    cfg.seed = 0;
    return train(net, data, cfg).net;
}

double ata(const Network& net, const Dataset& data, double eps, int steps,
           std::size_t n) {
    EvalOptions opt;
    opt.n_samples = n;
    opt.attack_steps = steps;
    opt.attack_step_size = 0.01;
    return ata_sweep(net, data, {eps}, opt).cells[0][0];
}

void criterion5(Models& m) {
    double clean_int = clean_accuracy(m.intnet, m.test_set);
    double ata_normal = ata(m.normal, m.test_set, 0.3, 100, 200);
    double ata_int = ata(m.intnet, m.test_set, 0.3, 100, 200);
    double ata_int2 = ata(m.int2net, m.test_set, 0.3, 100, 200);
    bool pass = ata_normal <= 0.05 && ata_int >= 0.40 && clean_int >= 0.85 &&
                std::abs(ata_int2 - ata_int) <= 0.1;
    report(5, pass,
           "ATA(0.3): normal " + fmt(ata_normal) + ", int " + fmt(ata_int) +
               ", int2 " + fmt(ata_int2) + "; int clean " + fmt(clean_int));
}

void criterion4(Models& m) {
    EvalOptions opt;
    opt.attack_steps = 100;
    opt.attack_step_size = 0.01;
    DecileTable t = prop1_deciles(m.normal, m.test_set, 200, 0.3, opt);
    bool pass = t.successes >= 200 && t.violations == 0 &&
                t.median_ratio >= 1.0 && t.median_ratio <= 2.5;
    report(4, pass,
           std::to_string(t.successes) + " successful attacks, " +
               std::to_string(t.violations) + " bound violations, median "
               "D/(margin/2) = " + fmt(t.median_ratio));
}

void criterion6(Models& m) {
    // nonincreasing ATA in eps and in steps; at most one cell may rise,
    // by at most 0.02 sampling noise
    std::vector<std::pair<std::string, const Network*>> nets = {
        {"normal", &m.normal}, {"int", &m.intnet}, {"int2", &m.int2net}};
    int rises = 0;
    double worst_rise = 0.0;
    std::size_t n = 200;
    for (auto& [name, net] : nets) {
        EvalOptions opt;
        opt.n_samples = n;
        opt.attack_steps = 100;
        opt.attack_step_size = 0.01;
        SweepResult re =
            ata_sweep(*net, m.test_set, {0.0, 0.05, 0.1, 0.2, 0.3}, opt);
        for (std::size_t i = 1; i < re.values.size(); ++i) {
            double rise = re.cells[i][0] - re.cells[i - 1][0];
            if (rise > 1e-12) {
                ++rises;
                worst_rise = std::max(worst_rise, rise);
            }
        }
        SweepResult rs =
            multistep_sweep(*net, m.test_set, {1, 10, 100, 200}, 0.3, opt);
        for (std::size_t i = 1; i < rs.values.size(); ++i) {
            double rise = rs.cells[i][0] - rs.cells[i - 1][0];
            if (rise > 1e-12) {
                ++rises;
                worst_rise = std::max(worst_rise, rise);
            }
        }
    }
    bool pass = rises == 0 || (rises <= 3 && worst_rise <= 0.02);
    report(6, pass,
           "monotonicity over 3 nets x (5 eps + 4 step) cells: " +
               std::to_string(rises) + " rises, worst " + fmt(worst_rise));
}

void criterion7(Models& m) {
    std::vector<NdsRow> rows;
    NdsRow two;
    two.name = "l1-2class";
    two.spec.class_set = ClassSet::two(0, 1);  // labels rebound per example
    rows.push_back(two);
    NdsRow one;
    one.name = "l1-1class";
    one.spec.class_set = ClassSet::one(0);
    rows.push_back(one);
    EvalOptions opt;
    opt.n_samples = 50;
    opt.attack_steps = 60;
    opt.attack_step_size = 0.01;
    SweepResult r = nds_table(m.normal, m.test_set, rows, 0.1, 1e4, opt,
                              30, 7);
    // columns: mean nds at eps*, nsl, n_used
    double nds2 = r.cells[0][0], nsl2 = r.cells[0][1];
    double nds1 = r.cells[1][0], nsl1 = r.cells[1][1];
    bool pass = nds2 > nds1 && nsl2 < nsl1;
    report(7, pass,
           "2-class NDS " + fmt(nds2) + " / NSL " + fmt(nsl2) +
               " vs 1-class " + fmt(nds1) + " / " + fmt(nsl1));
}

void criterion8(Models& m) {
    EvalOptions opt;
    opt.n_samples = 100;
    opt.attack_steps = 200;
    opt.attack_step_size = 0.01;
    SweepResult rn = aai_sweep(m.normal, m.test_set, {0.0, 0.3}, 50.0, {},
                               opt);
    SweepResult ri = aai_sweep(m.intnet, m.test_set, {0.0, 0.3}, 50.0, {},
                               opt);
    double tau0_n = rn.cells[0][0], tau_n = rn.cells[1][0];
    double tau0_i = ri.cells[0][0], tau_i = ri.cells[1][0];
    bool pass = tau0_n == 1.0 && tau0_i == 1.0 && tau_i - tau_n >= 0.3;
    report(8, pass,
           "tau at eps 0.3: int " + fmt(tau_i) + " vs normal " + fmt(tau_n) +
               "; at eps 0: " + fmt(tau0_i) + "/" + fmt(tau0_n));
}

// ---------------------------------------------------------------- C9

void criterion9() {
    Dataset data = synth_two_class(100, 12, 21);
    auto run = [&](TrainMethod m, double gamma) {
        Network net = build_network(Arch::Small, 1, 12, 12, 2, 21);
        TrainConfig cfg;
        cfg.method = m;
        cfg.gamma = gamma;
        cfg.epochs = 3;
        cfg.batch_size = 20;
        cfg.lr = 1e-3;
        cfg.eps_final = 0.2;
        cfg.inner_steps = 4;
        cfg.seed = 33;
        return train(net, data, cfg).net;
    };
    auto identical = [](const Network& a, const Network& b) {
        auto pa = a.parameters(), pb = b.parameters();
        for (std::size_t i = 0; i < pa.size(); ++i)
            if (pa[i]->data != pb[i]->data) return false;
        return true;
    };
    bool int_normal = identical(run(TrainMethod::Int, 0.0),
                                run(TrainMethod::Normal, 0.0));
    bool int2_adv = identical(run(TrainMethod::Int2Adv, 0.0),
                              run(TrainMethod::Adv, 0.0));
    // gradcam == cam on gap heads
    std::mt19937_64 rng(909);
    double worst = 0.0;
    for (int t = 0; t < 10; ++t) {
        Network net = build_network(Arch::Small, 1, 10, 10, 4,
                                    (std::uint64_t)t);
        Tensor x = random_image(10, 10, rng);
        for (int c = 0; c < 4; ++c) {
            InterpMap a = cam(net, x, c), b = gradcam(net, x, c);
            for (std::size_t i = 0; i < a.values.size(); ++i)
                worst = std::max(worst,
                                 (double)std::abs(a.values[i] - b.values[i]));
        }
    }
    bool pass = int_normal && int2_adv && worst <= 1e-5;
    report(9, pass,
           std::string("int(g=0)==normal: ") + (int_normal ? "yes" : "no") +
               ", int2adv(g=0)==adv: " + (int2_adv ? "yes" : "no") +
               ", max |gradcam-cam| = " + fmt(worst));
}

// ---------------------------------------------------------------- C10

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), {});
}

int run_cli(const std::string& cli, const std::string& config,
            const std::string& out, const std::string& sub) {
    std::string cmd = cli + " --config " + config + " --out " + out + " " +
                      sub + " >/dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return rc < 0 ? rc : WEXITSTATUS(rc);
}

void criterion10(const std::string& cli, const fs::path& assets) {
    fs::path dir = fs::temp_directory_path() / "irt_accept10";
    fs::create_directories(dir);
    auto cfg = dir / "train.cfg";
    {
        std::ofstream f(cfg);
        f << "dataset = synth\nsynth_n = 80\nsynth_size = 12\n"
             "method = int\ngamma = 0.01\nepochs = 2\nbatch_size = 20\n"
             "lr = 0.001\neps_final = 0.2\ninner_steps = 3\n";
    }
    bool ok = true;
    std::string why;
    int rc1 = run_cli(cli, cfg.string(), (dir / "a").string(), "train");
    int rc2 = run_cli(cli, cfg.string(), (dir / "b").string(), "train");
    if (rc1 != 0 || rc2 != 0) {
        ok = false;
        why = "train exit codes " + std::to_string(rc1) + "/" +
              std::to_string(rc2);
    } else if (slurp(dir / "a" / "model.irc") !=
               slurp(dir / "b" / "model.irc")) {
        ok = false;
        why = "checkpoints differ between identical runs";
    } else if (slurp(dir / "a" / "metrics.csv") !=
               slurp(dir / "b" / "metrics.csv")) {
        ok = false;
        why = "metric CSVs differ between identical runs";
    }
    // checkpoint round trip
    if (ok) {
        Network net = load_checkpoint((dir / "a" / "model.irc").string());
        save_checkpoint(net, (dir / "roundtrip.irc").string());
        if (slurp(dir / "a" / "model.irc") != slurp(dir / "roundtrip.irc")) {
            ok = false;
            why = "checkpoint round trip not bit-identical";
        }
    }
    // corrupted idx inputs must exit with the I/O code (2)
    if (ok) {
        std::string imgs = slurp(assets / "test-images.idx");
        auto badmagic = dir / "badmagic.idx";
        {
            std::string s = imgs;
            s[3] = (char)0x7f;
            std::ofstream f(badmagic, std::ios::binary);
            f.write(s.data(), (std::streamsize)s.size());
        }
        auto trunc = dir / "trunc.idx";
        {
            std::ofstream f(trunc, std::ios::binary);
            f.write(imgs.data(), (std::streamsize)(imgs.size() / 2));
        }
        auto mkcfg = [&](const fs::path& images) {
            auto p = dir / "idx.cfg";
            std::ofstream f(p);
            f << "dataset = idx\ntrain_images = " << images.string()
              << "\ntrain_labels = "
              << (assets / "test-labels.idx").string()
              << "\nmethod = normal\nepochs = 1\nbatch_size = 20\n";
            return p;
        };
        int rc_magic = run_cli(cli, mkcfg(badmagic).string(),
                               (dir / "m").string(), "train");
        int rc_trunc = run_cli(cli, mkcfg(trunc).string(),
                               (dir / "t").string(), "train");
        if (rc_magic != 2 || rc_trunc != 2) {
            ok = false;
            why = "corrupted idx exit codes " + std::to_string(rc_magic) +
                  "/" + std::to_string(rc_trunc) + " (want 2/2)";
        }
    }
    if (ok) why = "byte-identical reruns, round-trip, idx exit codes 2/2";
    report(10, ok, why);
    fs::remove_all(dir);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 3) {
        std::fprintf(stderr, "usage: %s <irt_cli> <assets-dir>\n", argv[0]);
        return 2;
    }
    const std::string cli = argv[1];
    const fs::path assets = argv[2];

    criterion1();
    criterion2();
    criterion3();

    Models m;
    m.train_set = load_idx((assets / "train-images.idx").string(),
                           (assets / "train-labels.idx").string());
    m.test_set = load_idx((assets / "test-images.idx").string(),
                          (assets / "test-labels.idx").string());
    std::printf("-- training shared models (normal/int/int2, 15 epochs)\n");
    std::fflush(stdout);
    m.normal = train_method(m.train_set, TrainMethod::Normal, 0.0);
    m.intnet = train_method(m.train_set, TrainMethod::Int, 0.01);
    m.int2net = train_method(m.train_set, TrainMethod::Int2, 0.01);

    criterion4(m);
    criterion5(m);
    criterion6(m);
    criterion7(m);
    criterion8(m);
    criterion9();
    criterion10(cli, assets);

    if (g_failures) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
