// Experiment driver: train / attack / eval / visualize over the library.
// Exit codes: 0 ok, 1 configuration, 2 file I/O, 3 numeric failure.

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <iostream>

#include "irt/attack.hpp"
#include "irt/discrepancy.hpp"
#include "irt/eval.hpp"
#include "irt/formats.hpp"
#include "irt/interpret.hpp"
#include "irt/train.hpp"

namespace fs = std::filesystem;
using namespace irt;

namespace {

const std::set<std::string> kTrainKeys = {
    "dataset",      "train_images", "train_labels", "subset",
    "arch",         "classes",      "method",       "gamma",
    "eps_final",    "warmup_steps", "inner_steps",  "inner_step_size",
    "epochs",       "batch_size",   "lr",           "checkpoint_every",
    "synth_n",      "synth_size"};

const std::set<std::string> kAttackKeys = {
    "checkpoint", "dataset",   "train_images", "train_labels", "subset",
    "attack",     "eps",       "steps",        "step_size",    "tau",
    "lambda",     "lambda_hi", "n_samples",    "topk",         "objective",
    "export_maps", "synth_n",  "synth_size"};

const std::set<std::string> kEvalKeys = {
    "checkpoint", "dataset",    "train_images", "train_labels",
    "subset",     "sweep",      "eps_list",     "step_list",
    "gamma_list", "eps",        "n_samples",    "attack_steps",
    "step_size",  "lambda",     "tau",          "lambda_hi",
    "n_success",  "isa_steps",  "method",       "epochs",
    "batch_size", "lr",         "inner_steps",  "inner_step_size",
    "eps_final",  "warmup_steps", "synth_n",    "synth_size"};

const std::set<std::string> kVisKeys = {"checkpoint", "dataset", "channel",
                                        "steps",      "step_size", "index",
                                        "train_images", "train_labels",
                                        "synth_n",    "synth_size"};

Dataset load_dataset(const Config& cfg, std::uint64_t seed) {
    std::string kind = cfg.get("dataset", "idx");
    Dataset d;
    if (kind == "synth") {
        d = synth_two_class((std::size_t)cfg.get_int("synth_n", 200),
                            (std::size_t)cfg.get_int("synth_size", 16), seed);
    } else if (kind == "idx") {
        d = load_idx(cfg.get("train_images"), cfg.get("train_labels"));
    } else {
        throw ConfigError("config: dataset must be 'idx' or 'synth'");
    }
    long long sub = cfg.get_int("subset", 0);
    if (sub > 0 && (std::size_t)sub < d.size()) {
        auto idx = shuffled_indices(d.size(), seed);
        idx.resize((std::size_t)sub);
        d = subset(d, idx);
    }
    return d;
}

TrainConfig train_config(const Config& cfg, std::uint64_t seed,
                         const std::string& out) {
    TrainConfig tc;
    tc.method = method_from_name(cfg.get("method", "normal"));
    tc.gamma = cfg.get_double("gamma", 0.01);
    tc.eps_final = cfg.get_double("eps_final", 0.3);
    tc.warmup_steps = (int)cfg.get_int("warmup_steps", 0);
    tc.inner_steps = (int)cfg.get_int("inner_steps", 40);
    tc.inner_step_size = cfg.get_double("inner_step_size", 0.01);
    tc.epochs = (int)cfg.get_int("epochs", 15);
    tc.batch_size = (int)cfg.get_int("batch_size", 50);
    tc.lr = cfg.get_double("lr", 1e-4);
    tc.seed = seed;
    tc.checkpoint_every = (int)cfg.get_int("checkpoint_every", 0);
    tc.checkpoint_prefix = out + "/ckpt";
    tc.metrics_csv = out + "/metrics.csv";
    return tc;
}

int cmd_train(const Config& cfg, std::uint64_t seed, const std::string& out) {
    Dataset data = load_dataset(cfg, seed);
    Arch arch = arch_from_name(cfg.get("arch", "small"));
    std::size_t classes = (std::size_t)cfg.get_int("classes", 10);
    Network net = build_network(arch, data.images.shape[1],
                                data.images.shape[2], data.images.shape[3],
                                classes, seed);
    TrainConfig tc = train_config(cfg, seed, out);
    TrainState st = train(std::move(net), data, tc);
    save_checkpoint(st.net, out + "/model.irc");
    double acc = clean_accuracy(st.net, data);
    std::cout << "train ok: method=" << method_name(tc.method)
              << " steps=" << st.step << " clean_acc=" << acc << "\n";
    return 0;
}

int cmd_attack(const Config& cfg, std::uint64_t seed, const std::string& out) {
    Network net = load_checkpoint(cfg.get("checkpoint"));
    Dataset data = load_dataset(cfg, seed);
    std::string kind = cfg.get("attack", "pgd");
    double eps = cfg.get_double("eps", 0.3);
    int steps = (int)cfg.get_int("steps", 100);
    double step_size = cfg.get_double("step_size", 0.01);
    std::size_t n = (std::size_t)cfg.get_int("n_samples", 50);
    bool export_maps = cfg.get_int("export_maps", 0) != 0;

    auto idx = shuffled_indices(data.size(), seed);
    if (n < idx.size()) idx.resize(n);

    CsvWriter csv(out + "/outcomes.csv",
                  {"index", "success", "margin", "discrepancy", "tau"});
    std::size_t successes = 0, used = 0;
    for (std::size_t i : idx) {
        Tensor x = data.image(i);
        int y = data.labels[i];
        AttackOutcome o;
        if (kind == "pgd") {
            AttackConfig ac;
            ac.eps = eps;
            ac.steps = steps;
            ac.step_size = step_size;
            o = pgd(net, x, y, ac);
            if (o.success) {
                int yp = predict(net, o.x_adv);
                o.discrepancy = two_class_l1(net, x, o.x_adv, y, yp);
            }
        } else if (kind == "isa" || kind == "isa_bisect") {
            if (predict(net, x) != y) continue;
            // target: the runner-up class on the clean input
            Tensor lg = forward(net, x).logits;
            int target = -1;
            for (std::size_t j = 0; j < lg.data.size(); ++j)
                if ((int)j != y &&
                    (target < 0 || lg.data[j] > lg.data[target]))
                    target = (int)j;
            double tau = cfg.get_double("tau", 0.1);
            if (kind == "isa") {
                o = isa(net, x, y, target, eps, tau,
                        cfg.get_double("lambda", 10.0), steps);
            } else {
                try {
                    o = isa_bisect(net, x, y, target, eps, tau, 0.0,
                                   cfg.get_double("lambda_hi", 100.0), 10,
                                   steps);
                } catch (const std::runtime_error&) {
                    continue;  // no success at the bracket: skip the example
                }
            }
        } else if (kind == "aai") {
            if (predict(net, x) != y) continue;
            AaiObjective obj;
            if (cfg.get("objective", "l1") == "topk") {
                obj.kind = AaiObjective::TopK;
                obj.k = (int)cfg.get_int("topk", 8);
            }
            o = aai(net, x, y, eps, cfg.get_double("lambda", 10.0), obj, steps,
                    step_size);
        } else {
            throw ConfigError("config: unknown attack '" + kind + "'");
        }
        InterpMap before = cam(net, x, y);
        InterpMap after = cam(net, o.x_adv, y);
        double tau_v = kendall_tau(before.values, after.values).tau;
        csv.row({std::to_string(i), o.success ? "1" : "0",
                 CsvWriter::num(o.margin),
                 CsvWriter::num(o.discrepancy.value_or(0.0)),
                 CsvWriter::num(tau_v)});
        if (export_maps) {
            std::size_t side = (std::size_t)std::lround(
                std::sqrt((double)before.values.size()));
            float peak = 0.0f;
            for (float v : before.values) peak = std::max(peak, v);
            for (float v : after.values) peak = std::max(peak, v);
            write_pgm(out + "/map-" + std::to_string(i) + "-benign.pgm", side,
                      side, before.values, peak);
            write_pgm(out + "/map-" + std::to_string(i) + "-adv.pgm", side,
                      side, after.values, peak);
        }
        ++used;
        if (o.success) ++successes;
    }
    csv.close();
    std::cout << "attack ok: kind=" << kind << " n=" << used
              << " successes=" << successes << "\n";
    return 0;
}

int cmd_eval(const Config& cfg, std::uint64_t seed, const std::string& out) {
    Network net = load_checkpoint(cfg.get("checkpoint"));
    Dataset data = load_dataset(cfg, seed);
    std::string sweep = cfg.get("sweep");
    EvalOptions opt;
    opt.n_samples = (std::size_t)cfg.get_int("n_samples", 200);
    opt.seed = seed;
    opt.attack_steps = (int)cfg.get_int("attack_steps", 100);
    opt.attack_step_size = cfg.get_double("step_size", 0.01);

    if (sweep == "ata") {
        auto eps = cfg.get_list("eps_list", {0, 0.05, 0.1, 0.2, 0.3});
        write_sweep_csv(ata_sweep(net, data, eps, opt), out + "/ata.csv");
        std::cout << "eval ok: sweep=ata cells=" << eps.size() << "\n";
    } else if (sweep == "multistep") {
        auto sl = cfg.get_list("step_list", {1, 10, 100, 200});
        std::vector<int> steps(sl.begin(), sl.end());
        write_sweep_csv(
            multistep_sweep(net, data, steps, cfg.get_double("eps", 0.3), opt),
            out + "/multistep.csv");
        std::cout << "eval ok: sweep=multistep cells=" << steps.size() << "\n";
    } else if (sweep == "aai") {
        auto eps = cfg.get_list("eps_list", {0, 0.1, 0.2, 0.3});
        write_sweep_csv(
            aai_sweep(net, data, eps, cfg.get_double("lambda", 10.0), {}, opt),
            out + "/aai.csv");
        std::cout << "eval ok: sweep=aai cells=" << eps.size() << "\n";
    } else if (sweep == "prop1") {
        DecileTable t =
            prop1_deciles(net, data, (std::size_t)cfg.get_int("n_success", 200),
                          cfg.get_double("eps", 0.3), opt);
        CsvWriter csv(out + "/prop1.csv", {"decile", "discrepancy", "margin"});
        for (int k = 0; k < 10; ++k)
            csv.row({std::to_string((k + 1) * 10),
                     CsvWriter::num(t.discrepancy[k]),
                     CsvWriter::num(t.margin[k])});
        csv.close();
        std::cout << "eval ok: sweep=prop1 successes=" << t.successes
                  << " violations=" << t.violations
                  << " median_ratio=" << t.median_ratio << "\n";
    } else if (sweep == "nds") {
        std::vector<NdsRow> rows = {
            {"l1-1class", {ClassSet::one(0), Norm::L1, {}}},
            {"l1-2class", {ClassSet::two(0, 1), Norm::L1, {}}}};
        SweepResult r = nds_table(net, data, rows, cfg.get_double("tau", 0.1),
                                  cfg.get_double("lambda_hi", 100.0), opt,
                                  (int)cfg.get_int("isa_steps", 100));
        r.axis = "measure";
        write_sweep_csv(r, out + "/nds.csv");
        std::cout << "eval ok: sweep=nds rows=" << rows.size() << "\n";
    } else if (sweep == "gamma") {
        TrainConfig tc = train_config(cfg, seed, out);
        tc.metrics_csv.clear();
        tc.checkpoint_every = 0;
        auto gammas = cfg.get_list("gamma_list", {0, 0.005, 0.01});
        write_sweep_csv(gamma_sweep(data, data, gammas, tc,
                                    cfg.get_double("eps", 0.3), opt),
                        out + "/gamma.csv");
        std::cout << "eval ok: sweep=gamma cells=" << gammas.size() << "\n";
    } else {
        throw ConfigError("config: unknown sweep '" + sweep + "'");
    }
    return 0;
}

int cmd_visualize(const Config& cfg, std::uint64_t seed,
                  const std::string& out) {
    Network net = load_checkpoint(cfg.get("checkpoint"));
    Dataset data = load_dataset(cfg, seed);
    std::size_t index = (std::size_t)cfg.get_int("index", 0);
    std::size_t channel = (std::size_t)cfg.get_int("channel", 0);
    Tensor seed_img = data.image(index % data.size());
    double before = channel_activation(net, seed_img, channel);
    Tensor img = visualize_features(net, seed_img, channel,
                                    (int)cfg.get_int("steps", 100),
                                    cfg.get_double("step_size", 0.1));
    double after = channel_activation(net, img, channel);
    write_pgm(out + "/feature-" + std::to_string(channel) + ".pgm",
              img.shape[2], img.shape[3], img.data, 1.0);
    std::cout << "visualize ok: channel=" << channel << " activation " << before
              << " -> " << after << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"interpretability-aware robustness experiments"};
    std::string config_path, out_dir = ".";
    std::uint64_t seed = 0;
    int threads = 0;
    app.add_option("--config", config_path, "configuration file")->required();
    app.add_option("--seed", seed, "RNG seed");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--threads", threads, "worker threads (0 = all cores)");
    app.require_subcommand(1);
    auto* sub_train = app.add_subcommand("train", "train a model");
    auto* sub_attack = app.add_subcommand("attack", "run attacks");
    auto* sub_eval = app.add_subcommand("eval", "run a sweep");
    auto* sub_vis = app.add_subcommand("visualize", "feature visualization");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    if (threads > 0) kernels::set_num_threads(threads);

    try {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec) {
            std::cerr << "error: cannot create output dir: " << ec.message()
                      << "\n";
            return 2;
        }
        const std::set<std::string>* keys = &kTrainKeys;
        if (sub_attack->parsed()) keys = &kAttackKeys;
        if (sub_eval->parsed()) keys = &kEvalKeys;
        if (sub_vis->parsed()) keys = &kVisKeys;
        Config cfg = Config::parse_file(config_path, *keys);
        if (sub_train->parsed()) return cmd_train(cfg, seed, out_dir);
        if (sub_attack->parsed()) return cmd_attack(cfg, seed, out_dir);
        if (sub_eval->parsed()) return cmd_eval(cfg, seed, out_dir);
        return cmd_visualize(cfg, seed, out_dir);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::ios_base::failure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
