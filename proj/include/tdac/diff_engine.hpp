#pragma once

#include <functional>

#include "tdac/evolution.hpp"

namespace tdac {

/// Adjoints of the loss with respect to the evolution inputs.
struct GradientBundle {
    Field d_lambda1;
    Field d_lambda2;
    Field d_phi0;
};

struct FiniteDiffReport {
    double max_rel_error = 0.0;
    double phi0_error = 0.0;
    double lambda1_error = 0.0;
    double lambda2_error = 0.0;
    int probes = 0;
};

/// Reverse-mode adjoints of the composed map (phi0, lambda1, lambda2) -> phi_L
/// as implemented by evolution_step. Walks the trace backwards; the lambda
/// adjoints accumulate across all steps. Exact for our forward definitions
/// (clamped denominators pass zero gradient when the floor is active).
GradientBundle backprop_evolution(const EvolutionTrace& trace, const Field& intensity,
                                  const ParameterMaps& maps, const Field& d_phi_final);

/// Scalar loss of phi_L together with its gradient field.
using LossFn = std::function<double(const Field& phi_final, Field* d_phi_final)>;

/// Perturbs randomly chosen entries of phi0/lambda1/lambda2, re-runs the full
/// forward evolution, and compares the central-difference quotient against the
/// analytic adjoint. Relative error uses max(|analytic|, |numeric|, 1e-6) as
/// the denominator (gradients below 1e-6 are under the finite-difference
/// noise floor at the default step). Deterministic for a fixed seed.
FiniteDiffReport finite_diff_check(const Field& intensity, const Field& phi0,
                                   const ParameterMaps& maps, const EvolutionConfig& cfg,
                                   const LossFn& loss, int probes, double step, uint64_t seed);

}  // namespace tdac
