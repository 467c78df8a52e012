#include "tdac/diff_engine.hpp"

#include <cmath>
#include <random>
#include <string>

namespace tdac {

namespace {

// Accumulates the adjoint of one evolution step into d_phi (overwritten with
// the adjoint w.r.t. the step input) and the lambda adjoints.
void step_backward(const Field& phi, const Field& intensity, const ParameterMaps& maps,
                   const EvolutionConfig& cfg, const StepCache& cache, const Field& d_out,
                   Field& d_phi_prev, Field& d_lambda1, Field& d_lambda2) {
    const int w = phi.width, h = phi.height;
    const size_t n = phi.size();
    const double dt = cfg.dt;

    SpatialDerivatives der = spatial_derivatives(phi);

    // Identity part of phi' = phi + dt * force.
    d_phi_prev = d_out;

    Field d_delta(w, h), d_kappa(w, h), d_h(w, h);
    Field d_m1(w, h), d_m2(w, h);
    Field d_dx(w, h), d_dy(w, h), d_dxx(w, h), d_dyy(w, h), d_dxy(w, h);

    // Pointwise force chain: force = delta*(mu*kappa + data) [+ nu*R].
    for (size_t i = 0; i < n; ++i) {
        const double g = dt * d_out.data[i];
        const double delta = cache.delta.data[i];
        const double r1 = intensity.data[i] - cache.m1.data[i];
        const double r2 = intensity.data[i] - cache.m2.data[i];
        const double l1 = maps.lambda1.data[i], l2 = maps.lambda2.data[i];
        const double data = -l1 * r1 * r1 + l2 * r2 * r2;

        double d_data;
        if (cfg.double_dirac) {
            // force = delta*mu*kappa + delta^2*data
            d_delta.data[i] = g * (cfg.mu * cache.curvature.data[i] + 2.0 * delta * data);
            d_data = g * delta * delta;
        } else {
            d_delta.data[i] = g * (cfg.mu * cache.curvature.data[i] + data);
            d_data = g * delta;
        }
        d_kappa.data[i] = g * delta * cfg.mu;

        d_lambda1.data[i] += d_data * (-r1 * r1);
        d_lambda2.data[i] += d_data * (r2 * r2);
        d_m1.data[i] = d_data * 2.0 * l1 * r1;   // d(-l1 r1^2)/dm1 = 2 l1 r1
        d_m2.data[i] = d_data * (-2.0 * l2 * r2);
    }

    // Regularizer chain: R = lap(phi) - kappa * G, G = sqrt(dx^2+dy^2+eta).
    if (cfg.nu > 0.0) {
        Field d_lap(w, h);
        for (size_t i = 0; i < n; ++i) {
            const double gR = cfg.nu * dt * d_out.data[i];
            const double px = der.dx.data[i], py = der.dy.data[i];
            const double G = std::sqrt(px * px + py * py + cfg.eta);
            d_lap.data[i] = gR;
            d_kappa.data[i] += -gR * G;
            const double dG = -gR * cache.curvature.data[i];
            d_dx.data[i] += dG * px / G;
            d_dy.data[i] += dG * py / G;
        }
        add_laplacian_adjoint(d_lap, d_phi_prev);
    }

    // Local means: m = s_num / max(s_den, eta); box_sum is self-adjoint.
    {
        Field d_s1num(w, h), d_s1den(w, h), d_s2num(w, h), d_s2den(w, h);
        for (size_t i = 0; i < n; ++i) {
            const double b1 = std::max(cache.mass1.data[i], cfg.eta);
            const double b2 = std::max(cache.mass2.data[i], cfg.eta);
            d_s1num.data[i] = d_m1.data[i] / b1;
            d_s1den.data[i] = cache.mass1.data[i] > cfg.eta ? -d_m1.data[i] * cache.m1.data[i] / b1 : 0.0;
            d_s2num.data[i] = d_m2.data[i] / b2;
            d_s2den.data[i] = cache.mass2.data[i] > cfg.eta ? -d_m2.data[i] * cache.m2.data[i] / b2 : 0.0;
        }
        Field bs1n = box_sum(d_s1num, cfg.window), bs1d = box_sum(d_s1den, cfg.window);
        Field bs2n = box_sum(d_s2num, cfg.window), bs2d = box_sum(d_s2den, cfg.window);
        for (size_t i = 0; i < n; ++i) {
            // num1 = H*I, den1 = H, num2 = (1-H)*I, den2 = 1-H
            d_h.data[i] = bs1n.data[i] * intensity.data[i] + bs1d.data[i] -
                          bs2n.data[i] * intensity.data[i] - bs2d.data[i];
        }
    }

    // Curvature: kappa = N / D with D = (dx^2+dy^2+eta)^{3/2}.
    for (size_t i = 0; i < n; ++i) {
        const double gk = d_kappa.data[i];
        if (gk == 0.0) continue;
        const double px = der.dx.data[i], py = der.dy.data[i];
        const double g2 = px * px + py * py + cfg.eta;
        const double sq = std::sqrt(g2);
        const double D = g2 * sq;
        const double dN = gk / D;
        const double dD = -gk * cache.curvature.data[i] / D;
        d_dxx.data[i] += dN * py * py;
        d_dyy.data[i] += dN * px * px;
        d_dxy.data[i] += -2.0 * dN * px * py;
        d_dx.data[i] += dN * (2.0 * der.dyy.data[i] * px - 2.0 * der.dxy.data[i] * py) + dD * 3.0 * px * sq;
        d_dy.data[i] += dN * (2.0 * der.dxx.data[i] * py - 2.0 * der.dxy.data[i] * px) + dD * 3.0 * py * sq;
    }

    // Pointwise nonlinearities of phi itself.
    for (size_t i = 0; i < n; ++i) {
        d_phi_prev.data[i] += d_h.data[i] * cache.delta.data[i] +
                              d_delta.data[i] * dirac_deriv_scalar(phi.data[i], cfg.epsilon);
    }

    // Derivative stencil transposes.
    add_dx_adjoint(d_dx, d_phi_prev);
    add_dy_adjoint(d_dy, d_phi_prev);
    add_dxx_adjoint(d_dxx, d_phi_prev);
    add_dyy_adjoint(d_dyy, d_phi_prev);
    add_dxy_adjoint(d_dxy, d_phi_prev);
}

}  // namespace

GradientBundle backprop_evolution(const EvolutionTrace& trace, const Field& intensity,
                                  const ParameterMaps& maps, const Field& d_phi_final) {
    const int L = trace.num_steps();
    if (L < 1 || int(trace.steps.size()) != L + 1)
        throw Error(Error::Code::BadValue, "backprop_evolution: incomplete trace");
    if (!d_phi_final.same_shape(trace.steps.back()))
        throw Error(Error::Code::BadDimensions, "backprop_evolution: gradient shape mismatch");
    for (double v : d_phi_final.data)
        if (!std::isfinite(v)) throw Error(Error::Code::NonFinite, "backprop_evolution: non-finite upstream gradient");

    const int w = d_phi_final.width, h = d_phi_final.height;
    GradientBundle out{Field(w, h), Field(w, h), Field(w, h)};
    Field d_phi = d_phi_final;
    Field d_prev(w, h);
    for (int t = L - 1; t >= 0; --t) {
        step_backward(trace.steps[t], intensity, maps, trace.config, trace.caches[t], d_phi,
                      d_prev, out.d_lambda1, out.d_lambda2);
        std::swap(d_phi, d_prev);
        for (double v : d_phi.data)
            if (!std::isfinite(v))
                throw Error(Error::Code::NonFinite,
                            "backprop_evolution: non-finite adjoint at step " + std::to_string(t));
    }
    out.d_phi0 = std::move(d_phi);
    return out;
}

FiniteDiffReport finite_diff_check(const Field& intensity, const Field& phi0,
                                   const ParameterMaps& maps, const EvolutionConfig& cfg,
                                   const LossFn& loss, int probes, double step, uint64_t seed) {
    if (probes < 1) throw Error(Error::Code::BadValue, "finite_diff_check: probes must be >= 1");
    if (step <= 0) throw Error(Error::Code::BadValue, "finite_diff_check: step must be > 0");

    EvolutionTrace trace = evolve(phi0, intensity, maps, cfg);
    Field d_final(phi0.width, phi0.height);
    loss(trace.steps.back(), &d_final);
    GradientBundle analytic = backprop_evolution(trace, intensity, maps, d_final);

    auto loss_at = [&](const Field& p0, const ParameterMaps& m) {
        Field last = evolve_last(p0, intensity, m, cfg);
        return loss(last, nullptr);
    };

    std::mt19937_64 rng(seed);
    FiniteDiffReport report;
    report.probes = probes;
    for (int k = 0; k < probes; ++k) {
        const int which = int(rng() % 3);
        const size_t idx = size_t(rng() % phi0.size());
        double analytic_g = 0.0, numeric_g = 0.0;
        Field p0 = phi0;
        ParameterMaps m = maps;
        double* slot = nullptr;
        if (which == 0) {
            slot = &p0.data[idx];
            analytic_g = analytic.d_phi0.data[idx];
        } else if (which == 1) {
            slot = &m.lambda1.data[idx];
            analytic_g = analytic.d_lambda1.data[idx];
        } else {
            slot = &m.lambda2.data[idx];
            analytic_g = analytic.d_lambda2.data[idx];
        }
        const double base = *slot;
        *slot = base + step;
        const double up = loss_at(p0, m);
        *slot = base - step;
        const double down = loss_at(p0, m);
        *slot = base;
        numeric_g = (up - down) / (2.0 * step);

        // Floor at 1e-6: central differences at step ~1e-5 carry ~1e-11 of
        // cancellation noise, so smaller gradients are below FD resolution.
        const double denom = std::max({std::abs(analytic_g), std::abs(numeric_g), 1e-6});
        const double rel = std::abs(analytic_g - numeric_g) / denom;
        report.max_rel_error = std::max(report.max_rel_error, rel);
        if (which == 0) report.phi0_error = std::max(report.phi0_error, rel);
        if (which == 1) report.lambda1_error = std::max(report.lambda1_error, rel);
        if (which == 2) report.lambda2_error = std::max(report.lambda2_error, rel);
    }
    return report;
}

}  // namespace tdac
