#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "irt/attack.hpp"
#include "irt/data.hpp"
#include "irt/train.hpp"

namespace irt {

// One table: an axis column plus named metric columns, one row per axis
// value. Serialized verbatim by the CSV writer.
struct SweepResult {
    std::string axis;
    std::vector<double> values;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> cells;  // [row][column]
    std::size_t samples = 0;
    std::uint64_t seed = 0;
};

struct DecileTable {
    std::array<double, 10> discrepancy{};  // 10th..100th percentile
    std::array<double, 10> margin{};
    std::size_t successes = 0;
    std::size_t violations = 0;   // Prop. 1 bound failures (expected 0)
    double median_ratio = 0.0;    // median of D / (margin/2)
};

struct EvalOptions {
    std::size_t n_samples = 200;
    std::uint64_t seed = 0;
    int attack_steps = 100;
    double attack_step_size = 0.01;
};

// Accuracy under untargeted PGD, one cell per radius; eps = 0 is clean
// accuracy on the same sample.
SweepResult ata_sweep(const Network& net, const Dataset& data,
                      const std::vector<double>& eps_list,
                      const EvalOptions& opt = {});

SweepResult multistep_sweep(const Network& net, const Dataset& data,
                            const std::vector<int>& step_list, double eps,
                            const EvalOptions& opt = {});

// Mean Kendall tau between benign and post-attack CAM maps of the true
// class, over cleanly-correct samples.
SweepResult aai_sweep(const Network& net, const Dataset& data,
                      const std::vector<double>& eps_list, double lambda,
                      const AaiObjective& obj = {}, const EvalOptions& opt = {});

DecileTable prop1_deciles(const Network& net, const Dataset& data,
                          std::size_t n_success_target, double eps,
                          const EvalOptions& opt = {});

struct NdsRow {
    std::string name;
    DiscrepancySpec spec;
};

// Per measure: ISA at the per-example minimal radius and at 1.6x it,
// averaged into mean NDS and the normalized slope between the two.
SweepResult nds_table(const Network& net, const Dataset& data,
                      const std::vector<NdsRow>& specs, double tau,
                      double lambda_hi, const EvalOptions& opt = {},
                      int isa_steps = 100, int isa_rounds = 10);

SweepResult gamma_sweep(const Dataset& train_data, const Dataset& eval_data,
                        const std::vector<double>& gamma_list,
                        const TrainConfig& base, double ata_eps,
                        const EvalOptions& opt = {});

// Activation maximization on one penultimate channel; plain gradient
// ascent with backtracking so activation never decreases.
Tensor visualize_features(const Network& net, const Tensor& seed_image,
                          std::size_t neuron_index, int steps,
                          double step_size);

double channel_activation(const Network& net, const Tensor& x,
                          std::size_t channel);

void write_sweep_csv(const SweepResult& r, const std::string& path);

}  // namespace irt
