#include "tdac/evolution.hpp"

#include <cmath>
#include <string>

namespace tdac {

namespace {

void check_same(const Field& a, const Field& b, const char* what) {
    if (!a.same_shape(b)) throw Error(Error::Code::BadDimensions, std::string(what) + ": shape mismatch");
}

void check_positive_maps(const ParameterMaps& maps) {
    for (double v : maps.lambda1.data)
        if (!(v > 0.0)) throw Error(Error::Code::BadValue, "ParameterMaps: lambda1 not strictly positive");
    for (double v : maps.lambda2.data)
        if (!(v > 0.0)) throw Error(Error::Code::BadValue, "ParameterMaps: lambda2 not strictly positive");
}

}  // namespace

Field curvature(const Field& phi, double eta) {
    if (eta <= 0.0) throw Error(Error::Code::BadValue, "curvature: eta must be > 0");
    SpatialDerivatives d = spatial_derivatives(phi);
    Field out(phi.width, phi.height);
    for (size_t i = 0; i < phi.size(); ++i) {
        const double px = d.dx.data[i], py = d.dy.data[i];
        const double g2 = px * px + py * py + eta;
        const double num = d.dxx.data[i] * py * py - 2.0 * d.dxy.data[i] * px * py +
                           d.dyy.data[i] * px * px;
        out.data[i] = num / (g2 * std::sqrt(g2));
    }
    return out;
}

void local_means(const Field& intensity, const Field& h_phi, int f, double eta,
                 Field& m1, Field& m2) {
    check_same(intensity, h_phi, "local_means");
    const int w = intensity.width, h = intensity.height;
    Field hi(w, h), gi(w, h), g(w, h);
    for (size_t i = 0; i < intensity.size(); ++i) {
        hi.data[i] = h_phi.data[i] * intensity.data[i];
        g.data[i] = 1.0 - h_phi.data[i];
        gi.data[i] = g.data[i] * intensity.data[i];
    }
    Field sum_hi = box_sum(hi, f), sum_h = box_sum(h_phi, f);
    Field sum_gi = box_sum(gi, f), sum_g = box_sum(g, f);
    m1 = Field(w, h);
    m2 = Field(w, h);
    for (size_t i = 0; i < m1.size(); ++i) {
        m1.data[i] = sum_hi.data[i] / std::max(sum_h.data[i], eta);
        m2.data[i] = sum_gi.data[i] / std::max(sum_g.data[i], eta);
    }
}

Field distance_regularize(const Field& phi, double eta) {
    Field lap = laplacian(phi);
    Field kap = curvature(phi, eta);
    SpatialDerivatives d = spatial_derivatives(phi);
    Field out(phi.width, phi.height);
    for (size_t i = 0; i < phi.size(); ++i) {
        const double px = d.dx.data[i], py = d.dy.data[i];
        out.data[i] = lap.data[i] - kap.data[i] * std::sqrt(px * px + py * py + eta);
    }
    return out;
}

Field evolution_step(const Field& phi, const Field& intensity, const ParameterMaps& maps,
                     const EvolutionConfig& cfg, StepCache* cache) {
    cfg.validate();
    check_same(phi, intensity, "evolution_step");
    check_same(phi, maps.lambda1, "evolution_step");
    check_same(phi, maps.lambda2, "evolution_step");

    Field h = heaviside(phi, cfg.epsilon);
    Field delta = dirac(phi, cfg.epsilon);
    Field m1, m2;
    local_means(intensity, h, cfg.window, cfg.eta, m1, m2);
    Field kap = curvature(phi, cfg.eta);

    Field reg;
    if (cfg.nu > 0.0) reg = distance_regularize(phi, cfg.eta);

    Field next(phi.width, phi.height);
    for (size_t i = 0; i < phi.size(); ++i) {
        const double r1 = intensity.data[i] - m1.data[i];
        const double r2 = intensity.data[i] - m2.data[i];
        double data = -maps.lambda1.data[i] * r1 * r1 + maps.lambda2.data[i] * r2 * r2;
        if (cfg.double_dirac) data *= delta.data[i];
        double force = delta.data[i] * (cfg.mu * kap.data[i] + data);
        if (cfg.nu > 0.0) force += cfg.nu * reg.data[i];
        const double v = phi.data[i] + cfg.dt * force;
        if (!std::isfinite(v)) {
            const int y = int(i) / phi.width, x = int(i) % phi.width;
            throw Error(Error::Code::NonFinite,
                        "evolution_step: non-finite phi at pixel (" + std::to_string(x) + "," +
                            std::to_string(y) + "); time step too large?");
        }
        next.data[i] = v;
    }

    if (cache) {
        cache->h = std::move(h);
        cache->delta = std::move(delta);
        cache->m1 = std::move(m1);
        cache->m2 = std::move(m2);
        // Raw window masses, pre-floor; the reverse pass needs them for the
        // quotient rule and the clamp subgradient.
        Field g(phi.width, phi.height);
        for (size_t i = 0; i < g.size(); ++i) g.data[i] = 1.0 - cache->h.data[i];
        cache->mass1 = box_sum(cache->h, cfg.window);
        cache->mass2 = box_sum(g, cfg.window);
        cache->curvature = std::move(kap);
    }
    return next;
}

EvolutionTrace evolve(const Field& phi0, const Field& intensity, const ParameterMaps& maps,
                      const EvolutionConfig& cfg) {
    cfg.validate();
    check_positive_maps(maps);
    EvolutionTrace trace;
    trace.config = cfg;
    trace.steps.reserve(cfg.steps + 1);
    trace.caches.resize(cfg.steps);
    trace.steps.push_back(phi0);
    for (int t = 0; t < cfg.steps; ++t) {
        try {
            trace.steps.push_back(
                evolution_step(trace.steps.back(), intensity, maps, cfg, &trace.caches[t]));
        } catch (const Error& e) {
            throw Error(e.code(), "evolve: step " + std::to_string(t + 1) + ": " + e.what());
        }
    }
    return trace;
}

Field evolve_last(const Field& phi0, const Field& intensity, const ParameterMaps& maps,
                  const EvolutionConfig& cfg) {
    cfg.validate();
    check_positive_maps(maps);
    Field phi = phi0;
    for (int t = 0; t < cfg.steps; ++t) {
        try {
            phi = evolution_step(phi, intensity, maps, cfg, nullptr);
        } catch (const Error& e) {
            throw Error(e.code(), "evolve: step " + std::to_string(t + 1) + ": " + e.what());
        }
    }
    return phi;
}

double contour_energy(const Field& phi, const Field& intensity, const ParameterMaps& maps,
                      const EvolutionConfig& cfg) {
    check_same(phi, intensity, "contour_energy");
    Field hfield = heaviside(phi, cfg.epsilon);
    Field delta = dirac(phi, cfg.epsilon);
    Field m1, m2;
    local_means(intensity, hfield, cfg.window, cfg.eta, m1, m2);
    SpatialDerivatives d = spatial_derivatives(phi);

    double e = 0.0;
    for (size_t i = 0; i < phi.size(); ++i) {
        const double px = d.dx.data[i], py = d.dy.data[i];
        const double grad = std::sqrt(px * px + py * py);
        const double r1 = intensity.data[i] - m1.data[i];
        const double r2 = intensity.data[i] - m2.data[i];
        e += cfg.mu * delta.data[i] * grad + maps.lambda1.data[i] * r1 * r1 * hfield.data[i] +
             maps.lambda2.data[i] * r2 * r2 * (1.0 - hfield.data[i]);
    }
    return e;
}

}  // namespace tdac
