#include "tdac/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "tdac/field_ops.hpp"

namespace tdac {

namespace {

void check_same(const Mask& a, const Mask& b, const char* what) {
    if (a.width != b.width || a.height != b.height)
        throw Error(Error::Code::BadDimensions, std::string(what) + ": shape mismatch");
}

// 1-px boundary: mask xor its erosion by the 4-connected cross. Pixels
// outside the image count as foreground, so the image border alone does not
// create a boundary.
Mask boundary_of(const Mask& m) {
    const int w = m.width, h = m.height;
    Mask b(w, h, 0);
    auto fg = [&](int y, int x) {
        if (x < 0 || x >= w || y < 0 || y >= h) return true;
        return m.at(y, x) != 0;
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!m.at(y, x)) continue;
            if (!fg(y, x - 1) || !fg(y, x + 1) || !fg(y - 1, x) || !fg(y + 1, x))
                b.at(y, x) = 1;
        }
    return b;
}

}  // namespace

double dice_score(const Mask& x, const Mask& g) {
    check_same(x, g, "dice_score");
    size_t sx = 0, sg = 0, inter = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sx += x.data[i] != 0;
        sg += g.data[i] != 0;
        inter += (x.data[i] != 0) && (g.data[i] != 0);
    }
    if (sx + sg == 0) return 1.0;
    return 2.0 * double(inter) / double(sx + sg);
}

double iou_score(const Mask& x, const Mask& g) {
    check_same(x, g, "iou_score");
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        const bool a = x.data[i] != 0, b = g.data[i] != 0;
        inter += a && b;
        uni += a || b;
    }
    if (uni == 0) return 1.0;
    return double(inter) / double(uni);
}

LabeledRegions connected_components(const Mask& mask) {
    const int w = mask.width, h = mask.height;
    LabeledRegions out;
    out.width = w;
    out.height = h;
    out.labels.assign(size_t(w) * h, 0);
    int next = 0;
    std::deque<std::pair<int, int>> queue;
    for (int y0 = 0; y0 < h; ++y0)
        for (int x0 = 0; x0 < w; ++x0) {
            if (!mask.at(y0, x0) || out.labels[size_t(y0) * w + x0]) continue;
            ++next;
            out.labels[size_t(y0) * w + x0] = next;
            queue.push_back({y0, x0});
            while (!queue.empty()) {
                auto [y, x] = queue.front();
                queue.pop_front();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = y + dy, nx = x + dx;
                        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                        if (!mask.at(ny, nx) || out.labels[size_t(ny) * w + nx]) continue;
                        out.labels[size_t(ny) * w + nx] = next;
                        queue.push_back({ny, nx});
                    }
            }
        }
    out.count = next;
    return out;
}

double wcov_score(const Mask& x, const Mask& g) {
    check_same(x, g, "wcov_score");
    LabeledRegions lg = connected_components(g);
    LabeledRegions lx = connected_components(x);
    size_t total_fg = 0;
    for (uint8_t v : g.data) total_fg += v != 0;
    if (total_fg == 0) return 0.0;
    if (lg.count == 0) return 0.0;

    // Pairwise intersections and per-instance areas in one pass.
    std::vector<size_t> area_g(lg.count + 1, 0), area_x(lx.count + 1, 0);
    std::vector<std::vector<size_t>> inter(lg.count + 1, std::vector<size_t>(lx.count + 1, 0));
    for (size_t i = 0; i < g.size(); ++i) {
        const int jg = lg.labels[i], jx = lx.labels[i];
        if (jg) ++area_g[jg];
        if (jx) ++area_x[jx];
        if (jg && jx) ++inter[jg][jx];
    }

    double acc = 0.0;
    for (int j = 1; j <= lg.count; ++j) {
        double best = 0.0;
        for (int k = 1; k <= lx.count; ++k) {
            const double i = double(inter[j][k]);
            if (i == 0.0) continue;
            best = std::max(best, i / double(area_g[j] + area_x[k] - inter[j][k]));
        }
        acc += double(area_g[j]) * best;
    }
    return acc / double(total_fg);
}

double boundf_score(const Mask& x, const Mask& g) {
    check_same(x, g, "boundf_score");
    Mask bx = boundary_of(x), bg = boundary_of(g);
    size_t nx = 0, ng = 0;
    for (uint8_t v : bx.data) nx += v != 0;
    for (uint8_t v : bg.data) ng += v != 0;
    if (nx == 0 && ng == 0) return 1.0;
    if (nx == 0 || ng == 0) return 0.0;

    Field dist_to_g = squared_distance_transform(bg, true);
    Field dist_to_x = squared_distance_transform(bx, true);

    double total = 0.0;
    for (int theta = 1; theta <= 5; ++theta) {
        const double t2 = double(theta) * theta;
        size_t px = 0, rg = 0;
        for (size_t i = 0; i < bx.size(); ++i) {
            if (bx.data[i] && dist_to_g.data[i] <= t2) ++px;
            if (bg.data[i] && dist_to_x.data[i] <= t2) ++rg;
        }
        const double precision = double(px) / double(nx);
        const double recall = double(rg) / double(ng);
        total += (precision + recall > 0.0) ? 2.0 * precision * recall / (precision + recall) : 0.0;
    }
    return total / 5.0;
}

Mask threshold_phi(const Field& phi) {
    Mask m(phi.width, phi.height);
    for (size_t i = 0; i < phi.size(); ++i) m.data[i] = phi.data[i] > 0.0 ? 1 : 0;
    return m;
}

Mask threshold_p(const Field& p) {
    Mask m(p.width, p.height);
    for (size_t i = 0; i < p.size(); ++i) m.data[i] = p.data[i] > 0.5 ? 1 : 0;
    return m;
}

}  // namespace tdac
