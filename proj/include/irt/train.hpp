#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "irt/data.hpp"
#include "irt/network.hpp"

namespace irt {

enum class TrainMethod { Normal, Adv, Int, IntAdv, Int2, Int2Adv, IntOneClass };

std::string method_name(TrainMethod m);
TrainMethod method_from_name(const std::string& s);

struct TrainConfig {
    TrainMethod method = TrainMethod::Normal;
    double gamma = 0.01;
    double eps_final = 0.3;
    int warmup_steps = 0;  // eps stays 0, then rises linearly to eps_final
    int inner_steps = 40;
    double inner_step_size = 0.01;
    int epochs = 15;
    int batch_size = 50;
    double lr = 1e-4;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;              // steps; 0 = off
    std::string checkpoint_prefix;         // path prefix for periodic saves
    std::string metrics_csv;               // empty = no CSV
};

struct MetricRow {
    int step = 0;
    int epoch = 0;
    double eps = 0.0;
    double loss = 0.0;
    double clean_acc = 0.0;
};

struct TrainState {
    Network net;
    std::vector<Tensor> adam_m, adam_v;
    long long step = 0;
    std::vector<MetricRow> history;
};

// Scheduled radius at a given optimizer step (0-based), for a run of
// total_steps steps: 0 through the warmup, then linear so the final
// step sits exactly at eps_final.
double eps_at(const TrainConfig& cfg, long long step, long long total_steps);

TrainState train(Network net, const Dataset& data, const TrainConfig& cfg);

// Inner maximizations (sign-PGD in the eps-ball intersected with [0,1]).
// x is a batch [N,C,H,W]; a single example is N = 1.
Tensor inner_max_discrepancy(const Network& net, const Tensor& x,
                             const std::vector<int>& y, double eps, int steps,
                             double step_size, bool one_class = false);
Tensor inner_max_loss(const Network& net, const Tensor& x,
                      const std::vector<int>& y, double eps, int steps,
                      double step_size);

double clean_accuracy(const Network& net, const Dataset& data,
                      std::size_t limit = 0);

}  // namespace irt
