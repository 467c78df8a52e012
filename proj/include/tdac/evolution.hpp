#pragma once

#include "tdac/field.hpp"
#include "tdac/field_ops.hpp"

namespace tdac {

/// Knobs of the contour evolution PDE and its explicit Euler discretization.
struct EvolutionConfig {
    double mu = 0.2;       // length-penalty weight
    double epsilon = 1.0;  // Heaviside smoothing width, pixel units
    double dt = 0.1;       // time step
    int steps = 60;        // number of explicit Euler steps (L)
    int window = 5;        // local-statistics window half-width (f); full width 2f+1
    double eta = 1e-8;     // numerical floor for vanishing gradients / empty windows
    double nu = 0.1;       // distance-regularization weight
    // Apply the Dirac factor to the data term a second time (the inner delta
    // of the variational derivative). Off by default; kept for comparison.
    bool double_dirac = false;

    void validate() const {
        if (mu < 0) throw Error(Error::Code::BadValue, "EvolutionConfig: mu must be >= 0");
        if (epsilon <= 0) throw Error(Error::Code::BadValue, "EvolutionConfig: epsilon must be > 0");
        if (dt <= 0) throw Error(Error::Code::BadValue, "EvolutionConfig: dt must be > 0");
        if (steps < 1) throw Error(Error::Code::BadValue, "EvolutionConfig: steps must be >= 1");
        if (window < 1) throw Error(Error::Code::BadValue, "EvolutionConfig: window must be >= 1");
        if (eta <= 0 || eta > 1e-6) throw Error(Error::Code::BadValue, "EvolutionConfig: eta must be in (0, 1e-6]");
        if (nu < 0) throw Error(Error::Code::BadValue, "EvolutionConfig: nu must be >= 0");
    }
};

/// Per-step intermediates kept for the reverse pass. Derivative stencils of
/// phi are cheap and recomputed on demand instead of being stored.
struct StepCache {
    Field h;          // H(phi)
    Field delta;      // dirac(phi)
    Field m1, m2;     // windowed interior/exterior means
    Field mass1;      // box_sum(H), raw (pre-floor)
    Field mass2;      // box_sum(1-H), raw
    Field curvature;  // kappa(phi)
};

/// Forward evolution record: phi_0 ... phi_L plus the cache of every step.
struct EvolutionTrace {
    std::vector<Field> steps;       // L+1 snapshots
    std::vector<StepCache> caches;  // L entries; caches[t] belongs to phi_t -> phi_{t+1}
    EvolutionConfig config;

    int num_steps() const { return int(caches.size()); }
};

/// Mean curvature of the level sets,
/// kappa = (phi_xx phi_y^2 - 2 phi_xy phi_x phi_y + phi_yy phi_x^2) / (phi_x^2 + phi_y^2 + eta)^{3/2}.
/// For a field positive inside a disk, kappa < 0 (documented sign convention:
/// kappa = div(grad phi / |grad phi|)).
Field curvature(const Field& phi, double eta);

/// Windowed interior/exterior intensity means:
///   m1 = box_sum(H*I, f) / max(box_sum(H, f), eta)
///   m2 = box_sum((1-H)*I, f) / max(box_sum(1-H, f), eta)
void local_means(const Field& intensity, const Field& h_phi, int f, double eta,
                 Field& m1, Field& m2);

/// Distance regularization R(phi) = lap(phi) - kappa * |grad phi|; zero for an
/// exact signed distance field, pushes |grad phi| toward 1 elsewhere.
Field distance_regularize(const Field& phi, double eta);

/// One explicit Euler step of
///   dphi/dt = delta(phi) [ mu kappa - lambda1 (I - m1)^2 + lambda2 (I - m2)^2 ] + nu R(phi).
/// Note the data-term signs are the energy-descent direction: pixels whose
/// intensity matches the local interior mean gain phi (move inward).
/// Throws on a non-finite result (time step too large), naming the pixel.
Field evolution_step(const Field& phi, const Field& intensity, const ParameterMaps& maps,
                     const EvolutionConfig& cfg, StepCache* cache);

/// Runs cfg.steps evolution steps recording the full trace.
EvolutionTrace evolve(const Field& phi0, const Field& intensity, const ParameterMaps& maps,
                      const EvolutionConfig& cfg);

/// Same dynamics without trace storage; for inference and timing.
Field evolve_last(const Field& phi0, const Field& intensity, const ParameterMaps& maps,
                  const EvolutionConfig& cfg);

/// Discrete localized contour energy, with the window entering through the
/// local means:
///   E = sum_p [ mu delta(phi_p) |grad phi|_p
///             + lambda1_p (I_p - m1_p)^2 H(phi_p)
///             + lambda2_p (I_p - m2_p)^2 (1 - H(phi_p)) ].
/// With the means frozen, the evolution force is exactly the negated
/// variation of this energy, so the flow descends it; the energy tests
/// assert that along a trace.
double contour_energy(const Field& phi, const Field& intensity, const ParameterMaps& maps,
                      const EvolutionConfig& cfg);

}  // namespace tdac
