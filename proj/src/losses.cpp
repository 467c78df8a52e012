#include "tdac/losses.hpp"

#include <algorithm>
#include <cmath>

#include "tdac/field_ops.hpp"

namespace tdac {

namespace {
constexpr double kClamp = 1e-7;
}

double bce_dice_loss(const Field& x, const Mask& g, Field* d_x) {
    if (x.width != g.width || x.height != g.height)
        throw Error(Error::Code::BadDimensions, "bce_dice_loss: shape mismatch");
    const size_t n = x.size();
    const double inv_n = 1.0 / double(n);

    double bce = 0.0, sum_x = 0.0, sum_g = 0.0, sum_xg = 0.0;
    std::vector<double> xc(n);
    for (size_t i = 0; i < n; ++i) {
        xc[i] = std::clamp(x.data[i], kClamp, 1.0 - kClamp);
        const double gi = g.data[i] ? 1.0 : 0.0;
        bce -= gi * std::log(xc[i]) + (1.0 - gi) * std::log(1.0 - xc[i]);
        sum_x += xc[i];
        sum_g += gi;
        sum_xg += xc[i] * gi;
    }
    bce *= inv_n;
    const double denom = sum_x + sum_g;
    const double dice = 1.0 - 2.0 * sum_xg / denom;
    const double loss = bce + dice;

    if (d_x) {
        *d_x = Field(x.width, x.height);
        for (size_t i = 0; i < n; ++i) {
            if (x.data[i] <= kClamp || x.data[i] >= 1.0 - kClamp) {
                d_x->data[i] = 0.0;  // clamp active
                continue;
            }
            const double gi = g.data[i] ? 1.0 : 0.0;
            const double d_bce = inv_n * (-gi / xc[i] + (1.0 - gi) / (1.0 - xc[i]));
            // d/dx_i of -2*sum_xg/denom (quotient rule).
            const double d_dice = (-2.0 * gi * denom + 2.0 * sum_xg) / (denom * denom);
            d_x->data[i] = d_bce + d_dice;
        }
    }
    return loss;
}

double total_loss(const Field& phi_final, const Field& p, const Mask& g, double epsilon,
                  Field* d_phi_final, Field* d_p) {
    if (!phi_final.same_shape(p))
        throw Error(Error::Code::BadDimensions, "total_loss: shape mismatch");
    Field h = heaviside(phi_final, epsilon);
    Field d_h;
    const double acm = bce_dice_loss(h, g, d_phi_final ? &d_h : nullptr);
    const double cnn = bce_dice_loss(p, g, d_p);
    if (d_phi_final) {
        *d_phi_final = Field(phi_final.width, phi_final.height);
        for (size_t i = 0; i < h.size(); ++i)
            d_phi_final->data[i] = d_h.data[i] * dirac_scalar(phi_final.data[i], epsilon);
    }
    return acm + cnn;
}

}  // namespace tdac
