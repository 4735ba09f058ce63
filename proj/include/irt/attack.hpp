#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "irt/discrepancy.hpp"
#include "irt/network.hpp"

namespace irt {

struct AttackConfig {
    double eps = 0.3;
    int steps = 40;
    double step_size = 0.01;
    std::optional<int> targeted;  // target label; empty = untargeted
    bool rand_init = false;
    std::uint64_t seed = 0;
};

struct AttackOutcome {
    Tensor x_adv;
    bool success = false;
    // untargeted: f_y - max_{j!=y} f_j; targeted: max_{j!=t} f_j - f_t
    double margin = 0.0;
    std::optional<double> discrepancy;
    std::optional<double> lambda_used;
    std::vector<double> loss_trace;
};

// Projected l-inf sign ascent on cross-entropy (descent when targeted).
AttackOutcome pgd(const Network& net, const Tensor& x, int y,
                  const AttackConfig& cfg);

// Interpretability-sneaking attack: targeted misclassification with the
// two-class l1 CAM discrepancy held down. Minimizes
//   lambda * max{max_{j!=t} f_j - f_t, -tau} + D(x, x+delta)
// over the eps-ball; success means the margin term sits at -tau at the
// final iterate.
// dspec selects the discrepancy term; null means the two-class l1 CAM
// measure. Only CAM-family interpreters can ride the attack tape.
AttackOutcome isa(const Network& net, const Tensor& x, int y, int target,
                  double eps, double tau, double lambda,
                  int steps = 200, double step_size = -1.0 /* eps/10 */,
                  const DiscrepancySpec* dspec = nullptr);

// Smallest lambda still succeeding, by bisection over [lo, hi].
AttackOutcome isa_bisect(const Network& net, const Tensor& x, int y, int target,
                         double eps, double tau, double lambda_lo,
                         double lambda_hi, int rounds = 10, int steps = 200,
                         double step_size = -1.0,
                         const DiscrepancySpec* dspec = nullptr);

struct AaiObjective {
    enum Kind { L1OneClass, TopK } kind = L1OneClass;
    int k = 8;
};

// Attack against interpretability: keep the predicted label while
// pushing the true-class map away from the benign one.
AttackOutcome aai(const Network& net, const Tensor& x, int y, double eps,
                  double lambda, const AaiObjective& obj = {}, int steps = 200,
                  double step_size = 0.01);

// Smallest eps (within tol) where untargeted PGD under cfg flips the
// label; cfg.eps is the upper bracket.
double min_eps(const Network& net, const Tensor& x, int y,
               const AttackConfig& cfg, double tol = 1e-3);

}  // namespace irt
