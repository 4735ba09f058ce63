#pragma once

#include "irt/interpret.hpp"
#include "irt/network.hpp"

namespace irt {

enum class Norm { L1, L2 };

struct ClassSet {
    enum Kind { OneClass, TwoClass, AllClass, SoftmaxWeighted } kind = OneClass;
    int y = -1;   // true label (OneClass/TwoClass/SoftmaxWeighted)
    int y2 = -1;  // target label (TwoClass)

    static ClassSet one(int y) { return {OneClass, y, -1}; }
    static ClassSet two(int y, int y2) { return {TwoClass, y, y2}; }
    static ClassSet all() { return {AllClass, -1, -1}; }
    static ClassSet softmax_weighted(int y) { return {SoftmaxWeighted, y, -1}; }
};

struct DiscrepancySpec {
    ClassSet class_set;
    Norm norm = Norm::L1;
    InterpreterSpec interp;
};

// D = (1/|C|) sum_{i in C} ||I(x,i) - I(x',i)||_p. Repr is class-free
// and is evaluated once with |C| = 1 under the two-class reporting
// convention; class-dependent sets reject it.
double generic_discrepancy(const DiscrepancySpec& spec, const Network& net,
                           const Tensor& x, const Tensor& xp);

double two_class_l1(const Network& net, const Tensor& x, const Tensor& xp, int y,
                    int yp, const InterpreterSpec& interp = {});

// (1/2)||dI_y||_1 + (1/2) sum_{i != y} softmax(f(x'))_i ||dI_i||_1.
// Asymmetric in (x, x') by construction.
double softmax_weighted_discrepancy(const Network& net, const Tensor& x,
                                    const Tensor& xp, int y,
                                    const InterpreterSpec& interp = {});

struct BoundCheck {
    double discrepancy = 0.0;
    double half_margin = 0.0;  // (f_y(x) - f_{y'}(x)) / 2, pre-bias logits
    bool holds = false;        // discrepancy >= half_margin - 1e-5
};

// Lower bound on the two-class l1 CAM discrepancy for a successful
// attack; requires x predicted y and x' predicted y'.
BoundCheck check_prop1(const Network& net, const Tensor& x, const Tensor& xp,
                       int y, int yp);

struct NdsResult {
    double value = 0.0;
    int degenerate_classes = 0;  // benign maps with zero range, counted as 0
};

NdsResult nds(const DiscrepancySpec& spec, const Network& net, const Tensor& x,
              const Tensor& xp);

double nsl(double nds_low, double nds_high, double eps_low, double eps_high);

struct TauResult {
    double tau = 0.0;
    bool degenerate = false;  // either map constant; tau defined as 0
};

// Tau-b (tie corrected); maps routinely contain tied zeros.
TauResult kendall_tau(const std::vector<float>& a, const std::vector<float>& b);

// Pre-bias logits f(x) - b, the classification score used by every
// completeness statement.
Tensor prebias_logits(const Network& net, const Tensor& x);

// --- tape-level builders for the training objective ---

// Class weights (1/2)·onehot_y + (1/2)·softmax(logits)·(1 - onehot_y)
// as a [N,C] node; gradients flow through the softmax.
Var dtilde_weights(Graph& g, Var logits, const std::vector<int>& labels);

// Softmax-weighted CAM discrepancy between two traces of the same
// parameters, as a scalar node (batch mean). `weights` is [N,C]; pass
// either dtilde_weights(...) or a constant to cut its gradient path.
Var dtilde(Graph& g, const NetTrace& tx, const NetTrace& txp, Var weights);

}  // namespace irt
