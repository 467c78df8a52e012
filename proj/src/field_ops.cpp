#include "tdac/field_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tdac {

namespace {
constexpr double kPi = 3.14159265358979323846;

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

void check_min_size(const Field& phi) {
    if (phi.width < 3 || phi.height < 3)
        throw Error(Error::Code::BadDimensions, "spatial_derivatives: field smaller than 3x3");
}
}  // namespace

SpatialDerivatives spatial_derivatives(const Field& phi) {
    check_min_size(phi);
    const int w = phi.width, h = phi.height;
    SpatialDerivatives d{Field(w, h), Field(w, h), Field(w, h), Field(w, h), Field(w, h)};
    for (int y = 0; y < h; ++y) {
        const int yu = clampi(y - 1, 0, h - 1), yd = clampi(y + 1, 0, h - 1);
        for (int x = 0; x < w; ++x) {
            const int xl = clampi(x - 1, 0, w - 1), xr = clampi(x + 1, 0, w - 1);
            const double c = phi.at(y, x);
            d.dx.at(y, x) = 0.5 * (phi.at(y, xr) - phi.at(y, xl));
            d.dy.at(y, x) = 0.5 * (phi.at(yd, x) - phi.at(yu, x));
            d.dxx.at(y, x) = phi.at(y, xr) - 2.0 * c + phi.at(y, xl);
            d.dyy.at(y, x) = phi.at(yd, x) - 2.0 * c + phi.at(yu, x);
            d.dxy.at(y, x) = 0.25 * (phi.at(yd, xr) - phi.at(yd, xl) - phi.at(yu, xr) + phi.at(yu, xl));
        }
    }
    return d;
}

Field laplacian(const Field& phi) {
    check_min_size(phi);
    const int w = phi.width, h = phi.height;
    Field out(w, h);
    for (int y = 0; y < h; ++y) {
        const int yu = clampi(y - 1, 0, h - 1), yd = clampi(y + 1, 0, h - 1);
        for (int x = 0; x < w; ++x) {
            const int xl = clampi(x - 1, 0, w - 1), xr = clampi(x + 1, 0, w - 1);
            out.at(y, x) = phi.at(y, xr) + phi.at(y, xl) + phi.at(yd, x) + phi.at(yu, x) -
                           4.0 * phi.at(y, x);
        }
    }
    return out;
}

void add_dx_adjoint(const Field& g, Field& d_phi) {
    const int w = g.width, h = g.height;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = 0.5 * g.at(y, x);
            d_phi.at(y, clampi(x + 1, 0, w - 1)) += v;
            d_phi.at(y, clampi(x - 1, 0, w - 1)) -= v;
        }
}

void add_dy_adjoint(const Field& g, Field& d_phi) {
    const int w = g.width, h = g.height;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = 0.5 * g.at(y, x);
            d_phi.at(clampi(y + 1, 0, h - 1), x) += v;
            d_phi.at(clampi(y - 1, 0, h - 1), x) -= v;
        }
}

void add_dxx_adjoint(const Field& g, Field& d_phi) {
    const int w = g.width, h = g.height;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = g.at(y, x);
            d_phi.at(y, clampi(x + 1, 0, w - 1)) += v;
            d_phi.at(y, clampi(x - 1, 0, w - 1)) += v;
            d_phi.at(y, x) -= 2.0 * v;
        }
}

void add_dyy_adjoint(const Field& g, Field& d_phi) {
    const int w = g.width, h = g.height;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = g.at(y, x);
            d_phi.at(clampi(y + 1, 0, h - 1), x) += v;
            d_phi.at(clampi(y - 1, 0, h - 1), x) += v;
            d_phi.at(y, x) -= 2.0 * v;
        }
}

void add_dxy_adjoint(const Field& g, Field& d_phi) {
    const int w = g.width, h = g.height;
    for (int y = 0; y < h; ++y) {
        const int yu = clampi(y - 1, 0, h - 1), yd = clampi(y + 1, 0, h - 1);
        for (int x = 0; x < w; ++x) {
            const int xl = clampi(x - 1, 0, w - 1), xr = clampi(x + 1, 0, w - 1);
            const double v = 0.25 * g.at(y, x);
            d_phi.at(yd, xr) += v;
            d_phi.at(yd, xl) -= v;
            d_phi.at(yu, xr) -= v;
            d_phi.at(yu, xl) += v;
        }
    }
}

void add_laplacian_adjoint(const Field& g, Field& d_phi) {
    const int w = g.width, h = g.height;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = g.at(y, x);
            d_phi.at(y, clampi(x + 1, 0, w - 1)) += v;
            d_phi.at(y, clampi(x - 1, 0, w - 1)) += v;
            d_phi.at(clampi(y + 1, 0, h - 1), x) += v;
            d_phi.at(clampi(y - 1, 0, h - 1), x) += v;
            d_phi.at(y, x) -= 4.0 * v;
        }
}

Field box_sum(const Field& field, int f) {
    if (f < 1) throw Error(Error::Code::BadValue, "box_sum: f must be >= 1");
    const int w = field.width, h = field.height;
    // Integral image with one row/column of zeros at the top/left.
    std::vector<double> integ(size_t(w + 1) * (h + 1), 0.0);
    auto I = [&](int y, int x) -> double& { return integ[size_t(y) * (w + 1) + x]; };
    for (int y = 1; y <= h; ++y) {
        double row = 0.0;
        for (int x = 1; x <= w; ++x) {
            row += field.at(y - 1, x - 1);
            I(y, x) = I(y - 1, x) + row;
        }
    }
    Field out(w, h);
    for (int y = 0; y < h; ++y) {
        const int y0 = std::max(0, y - f), y1 = std::min(h - 1, y + f);
        for (int x = 0; x < w; ++x) {
            const int x0 = std::max(0, x - f), x1 = std::min(w - 1, x + f);
            out.at(y, x) = I(y1 + 1, x1 + 1) - I(y0, x1 + 1) - I(y1 + 1, x0) + I(y0, x0);
        }
    }
    return out;
}

double heaviside_scalar(double phi, double epsilon) {
    return 0.5 + std::atan(phi / epsilon) / kPi;
}

double dirac_scalar(double phi, double epsilon) {
    return epsilon / (kPi * (epsilon * epsilon + phi * phi));
}

double dirac_deriv_scalar(double phi, double epsilon) {
    const double d = epsilon * epsilon + phi * phi;
    return -2.0 * epsilon * phi / (kPi * d * d);
}

Field heaviside(const Field& phi, double epsilon) {
    if (epsilon <= 0.0) throw Error(Error::Code::BadValue, "heaviside: epsilon must be > 0");
    Field out(phi.width, phi.height);
    for (size_t i = 0; i < phi.size(); ++i) out.data[i] = heaviside_scalar(phi.data[i], epsilon);
    return out;
}

Field dirac(const Field& phi, double epsilon) {
    if (epsilon <= 0.0) throw Error(Error::Code::BadValue, "dirac: epsilon must be > 0");
    Field out(phi.width, phi.height);
    for (size_t i = 0; i < phi.size(); ++i) out.data[i] = dirac_scalar(phi.data[i], epsilon);
    return out;
}

namespace {

// Felzenszwalb & Huttenlocher 1-D squared distance transform.
void dt1d(const std::vector<double>& f, std::vector<double>& out, int n,
          std::vector<int>& v, std::vector<double>& z) {
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        double s;
        while (true) {
            s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * (q - v[k]));
            if (s > z[k]) break;
            --k;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double d = q - v[k];
        out[q] = d * d + f[v[k]];
    }
}

}  // namespace

Field squared_distance_transform(const Mask& mask, bool seed_value) {
    const int w = mask.width, h = mask.height;
    const double inf = 1e18;
    Field d(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            d.at(y, x) = ((mask.at(y, x) != 0) == seed_value) ? 0.0 : inf;

    const int n = std::max(w, h);
    std::vector<double> f(n), out(n);
    std::vector<int> v(n);
    std::vector<double> z(n + 1);

    for (int x = 0; x < w; ++x) {  // columns
        for (int y = 0; y < h; ++y) f[y] = d.at(y, x);
        dt1d(f, out, h, v, z);
        for (int y = 0; y < h; ++y) d.at(y, x) = out[y];
    }
    for (int y = 0; y < h; ++y) {  // rows
        for (int x = 0; x < w; ++x) f[x] = d.at(y, x);
        dt1d(f, out, w, v, z);
        for (int x = 0; x < w; ++x) d.at(y, x) = out[x];
    }
    return d;
}

Field signed_distance_from_mask(const Mask& mask) {
    bool any_fg = false, any_bg = false;
    for (uint8_t m : mask.data) (m ? any_fg : any_bg) = true;
    if (!any_fg || !any_bg)
        throw Error(Error::Code::DegenerateMask, "signed_distance_from_mask: mask is all-ones or all-zeros");

    Field to_bg = squared_distance_transform(mask, false);
    Field to_fg = squared_distance_transform(mask, true);
    Field phi(mask.width, mask.height);
    for (size_t i = 0; i < phi.size(); ++i)
        phi.data[i] = mask.data[i] ? std::sqrt(to_bg.data[i]) : -std::sqrt(to_fg.data[i]);
    return phi;
}

}  // namespace tdac
