#pragma once

#include "tdac/field.hpp"

namespace tdac {

/// Central-difference spatial derivatives of a field, unit pixel spacing.
/// Borders use replicate padding (the virtual pixel outside the grid equals
/// the nearest interior pixel).
struct SpatialDerivatives {
    Field dx, dy, dxx, dyy, dxy;
};

SpatialDerivatives spatial_derivatives(const Field& phi);

/// 5-point Laplacian with replicate padding.
Field laplacian(const Field& phi);

/// Transposes of the derivative/Laplacian stencils: scatter-adds the adjoint
/// of each output back into d_phi. Needed because replicate padding makes the
/// stencils non-symmetric at borders.
void add_dx_adjoint(const Field& g, Field& d_phi);
void add_dy_adjoint(const Field& g, Field& d_phi);
void add_dxx_adjoint(const Field& g, Field& d_phi);
void add_dyy_adjoint(const Field& g, Field& d_phi);
void add_dxy_adjoint(const Field& g, Field& d_phi);
void add_laplacian_adjoint(const Field& g, Field& d_phi);

/// Windowed sum over the (2f+1)×(2f+1) neighborhood clipped to the grid;
/// pixels outside the image contribute nothing. O(HW) via an integral image.
/// The clipped window relation is symmetric, so box_sum is self-adjoint.
Field box_sum(const Field& field, int f);

/// Smoothed Heaviside H = 1/2 + (1/pi) atan(phi/epsilon), values in (0,1).
Field heaviside(const Field& phi, double epsilon);

/// Derivative of the smoothed Heaviside: delta = (1/pi) eps/(eps^2 + phi^2).
Field dirac(const Field& phi, double epsilon);

double heaviside_scalar(double phi, double epsilon);
double dirac_scalar(double phi, double epsilon);
/// d(dirac)/d(phi), used by the reverse pass.
double dirac_deriv_scalar(double phi, double epsilon);

/// Squared Euclidean distance to the nearest pixel whose truth value equals
/// seed_value (Felzenszwalb-Huttenlocher two-pass transform). Returns a very
/// large value everywhere when no such pixel exists.
Field squared_distance_transform(const Mask& mask, bool seed_value);

/// Signed Euclidean distance field of a binary mask. Convention: for a
/// foreground pixel, phi = +distance to the nearest background pixel; for a
/// background pixel, phi = -distance to the nearest foreground pixel. The
/// zero level set therefore lies between pixels and |phi| >= 1 everywhere.
/// Throws on all-ones or all-zeros masks.
Field signed_distance_from_mask(const Mask& mask);

}  // namespace tdac
