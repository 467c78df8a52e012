#pragma once

#include "tdac/field.hpp"

namespace tdac {

/// Combined binary cross-entropy + soft Dice loss of a prediction X in (0,1)
/// against a binary ground truth G:
///   loss = -(1/N) sum [G log X + (1-G) log(1-X)] + 1 - 2 sum(XG) / (sum X + sum G).
/// X is clamped to [1e-7, 1-1e-7] before the logs; the returned gradient is
/// the exact derivative of the returned scalar (zero through an active clamp).
double bce_dice_loss(const Field& x, const Mask& g, Field* d_x);

/// Total training loss: bce_dice applied to H_eps(phi_L) (the contour branch)
/// plus bce_dice applied to P (the prediction branch). Returns the gradients
/// of both branches; the phi gradient includes the Heaviside chain.
double total_loss(const Field& phi_final, const Field& p, const Mask& g, double epsilon,
                  Field* d_phi_final, Field* d_p);

}  // namespace tdac
