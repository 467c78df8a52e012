#pragma once

#include <vector>

#include "tdac/field.hpp"

namespace tdac {

struct MetricsReport {
    double dice = 0.0;
    double miou = 0.0;
    double wcov = 0.0;
    double boundf = 0.0;
};

/// 2|X∩G| / (|X|+|G|); 1 when both masks are empty.
double dice_score(const Mask& x, const Mask& g);

/// |X∩G| / |X∪G|; 1 when both masks are empty.
double iou_score(const Mask& x, const Mask& g);

/// 8-connected components. Labels start at 1 and are assigned in row-major
/// order of each component's first pixel; 0 is background.
struct LabeledRegions {
    int width = 0;
    int height = 0;
    int count = 0;
    std::vector<int> labels;
};
LabeledRegions connected_components(const Mask& mask);

/// Weighted coverage: for each ground-truth instance, the best IoU over
/// prediction instances, weighted by instance area and normalized by the
/// total ground-truth foreground pixel count (so WCov(G,G) = 1).
/// Returns 0 when G has no foreground.
double wcov_score(const Mask& x, const Mask& g);

/// Mean boundary F-score over matching tolerances of 1..5 pixels. Boundaries
/// are mask xor its one-pixel erosion; pixels outside the image are treated
/// as foreground, so the image border itself is not a boundary. Matching is
/// Euclidean via a distance transform. Both boundaries empty scores 1.
double boundf_score(const Mask& x, const Mask& g);

/// Threshold conventions used at evaluation time.
Mask threshold_phi(const Field& phi);  // phi > 0
Mask threshold_p(const Field& p);      // p > 0.5

}  // namespace tdac
