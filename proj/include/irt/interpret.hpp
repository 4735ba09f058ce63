#pragma once

#include <string>
#include <vector>

#include "irt/network.hpp"

namespace irt {

enum class Interpreter { CAM, GradCAM, GradCAMpp, IG, Repr };

std::string interpreter_name(Interpreter k);
Interpreter interpreter_from_name(const std::string& s);

// Per-class importance map. Length u for the CAM family, d (input
// pixels) for IG, K*u for Repr. Values are signed; clamping is a
// display concern.
struct InterpMap {
    std::vector<float> values;
    Interpreter kind = Interpreter::CAM;
    int class_label = -1;  // -1 for Repr
};

InterpMap cam(const Network& net, const Tensor& x, int c);
InterpMap gradcam(const Network& net, const Tensor& x, int c);
InterpMap gradcampp(const Network& net, const Tensor& x, int c);
InterpMap ig(const Network& net, const Tensor& x, int c, const Tensor& baseline,
             int steps);
InterpMap repr(const Network& net, const Tensor& x);

struct InterpreterSpec {
    Interpreter kind = Interpreter::CAM;
    int ig_steps = 32;  // evaluation default; training-adjacent uses pass 5
    // IG baseline is the all-zeros image unless a tensor is supplied
    // via make_map's baseline handling.
};

InterpMap make_map(const InterpreterSpec& spec, const Network& net,
                   const Tensor& x, int c);

// GradCAM channel weights (1/u) sum_i df_c/dA_{k,i}, one per channel.
std::vector<float> gradcam_weights(const Network& net, const Tensor& x, int c);

// Gradient of logit c w.r.t. the input pixels (the IG integrand).
Tensor input_gradient(const Network& net, const Tensor& x, int c);

// CAM for all classes as a graph node: [N,C,u] = (1/u) W * A. Used by
// the discrepancy terms that must stay differentiable.
Var cam_all_classes(Graph& g, const NetTrace& t);

}  // namespace irt
