// Acceptance harness. Runs the release gate end to end and prints one
// PASS/FAIL line per criterion. Usage: acceptance [core|training|sweep|all]
// (default core). Exit code 0 iff every executed criterion passed.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "tdac/dataset_io.hpp"
#include "tdac/diff_engine.hpp"
#include "tdac/losses.hpp"

using namespace tdac;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

Mask disk_mask(int n, double cx, double cy, double r) {
    Mask m(n, n, 0);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            m.at(y, x) = (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r ? 1 : 0;
    return m;
}

Field two_level_image(const Mask& m, double fg, double bg) {
    Field img(m.width, m.height, bg);
    for (size_t i = 0; i < m.size(); ++i)
        if (m.data[i]) img.data[i] = fg;
    return img;
}

double uniform01(std::mt19937_64& rng) { return std::ldexp(double(rng() >> 11), -53); }

// ---------------------------------------------------------------- criterion 1

bool criterion_gradients() {
    const auto t0 = Clock::now();
    EvolutionConfig cfg;
    cfg.steps = 5;
    cfg.window = 2;
    cfg.mu = 0.2;
    cfg.nu = 0.1;

    double worst = 0.0;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        std::mt19937_64 rng(seed * 101);
        const int n = 16;
        auto uni = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
        Mask gt = disk_mask(n, uni(6, 10), uni(6, 10), uni(3.5, 5.0));
        Field intensity(n, n);
        for (size_t i = 0; i < intensity.size(); ++i)
            intensity.data[i] = (gt.data[i] ? 0.7 : 0.3) + uni(-0.1, 0.1);
        Field phi0 = signed_distance_from_mask(disk_mask(n, 8, 8, uni(4.0, 6.0)));
        ParameterMaps maps{Field(n, n), Field(n, n)};
        for (size_t i = 0; i < maps.lambda1.size(); ++i) {
            maps.lambda1.data[i] = uni(0.7, 1.3);
            maps.lambda2.data[i] = uni(0.7, 1.3);
        }
        LossFn loss = [&](const Field& phi, Field* d) {
            Field h = heaviside(phi, cfg.epsilon);
            Field dh;
            const double l = bce_dice_loss(h, gt, d ? &dh : nullptr);
            if (d) {
                *d = Field(n, n);
                for (size_t i = 0; i < dh.size(); ++i)
                    d->data[i] = dh.data[i] * dirac_scalar(phi.data[i], cfg.epsilon);
            }
            return l;
        };
        FiniteDiffReport rep =
            finite_diff_check(intensity, phi0, maps, cfg, loss, 20, 1e-5, seed);
        worst = std::max(worst, rep.max_rel_error);
    }
    const double elapsed = seconds_since(t0);
    std::printf("  max relative error %.3g over 5 fixtures, %.1f s\n", worst, elapsed);
    return worst < 1e-3 && elapsed < 30.0;
}

// ---------------------------------------------------------------- criterion 2

bool criterion_energy_descent() {
    const int n = 48;
    Mask gt = disk_mask(n, 23.5, 23.5, 10.0);
    Field img = two_level_image(gt, 0.85, 0.15);
    Field phi0 = signed_distance_from_mask(disk_mask(n, 23.5, 23.5, 12.0));
    EvolutionConfig cfg;
    cfg.nu = 0.0;
    cfg.dt = 0.05;
    cfg.steps = 60;
    ParameterMaps maps{Field(n, n, 20.0), Field(n, n, 20.0)};
    EvolutionTrace trace = evolve(phi0, img, maps, cfg);
    double prev = contour_energy(trace.steps[0], img, maps, cfg);
    double worst = 0.0;
    for (size_t t = 1; t < trace.steps.size(); ++t) {
        const double e = contour_energy(trace.steps[t], img, maps, cfg);
        worst = std::max(worst, (e - prev) / std::abs(prev));
        prev = e;
    }
    std::printf("  worst per-step relative increase %.3g\n", worst);
    return worst < 1e-8;
}

// ---------------------------------------------------------------- criterion 3

bool criterion_forward_sanity() {
    const int n = 64;
    Mask gt = disk_mask(n, 31.5, 31.5, 14.0);
    Field img = two_level_image(gt, 1.0, 0.0);
    Field phi0 = signed_distance_from_mask(disk_mask(n, 31.5, 31.5, 16.0));
    EvolutionConfig cfg;
    cfg.mu = 0.2;
    cfg.steps = 60;
    cfg.dt = 2.0;  // the data force scales with dt; 60 coarse steps suffice
    ParameterMaps maps{Field(n, n, 1.0), Field(n, n, 1.0)};
    Field phi = evolve_last(phi0, img, maps, cfg);
    const double iou = iou_score(threshold_phi(phi), gt);
    std::printf("  disk IoU %.4f\n", iou);
    return iou >= 0.95;
}

// ---------------------------------------------------------------- criterion 4

bool criterion_multi_instance() {
    const int n = 64;
    Mask d1 = disk_mask(n, 20.0, 32.0, 9.0);
    Mask d2 = disk_mask(n, 44.0, 32.0, 10.0);
    Mask gt(n, n, 0);
    for (size_t i = 0; i < gt.size(); ++i) gt.data[i] = d1.data[i] | d2.data[i];
    Field img = two_level_image(gt, 1.0, 0.0);
    // Initialize with one component (the union dilated by 2 px, bridging the
    // gap); the evolution has to pinch it into two.
    Mask a = disk_mask(n, 20.0, 32.0, 11.0);
    Mask b = disk_mask(n, 44.0, 32.0, 12.0);
    Mask init(n, n, 0);
    for (size_t i = 0; i < init.size(); ++i) init.data[i] = a.data[i] | b.data[i];
    Field phi0 = signed_distance_from_mask(init);
    EvolutionConfig cfg;
    cfg.dt = 2.0;
    cfg.epsilon = 1.5;
    cfg.nu = 0.03;
    cfg.steps = 80;
    ParameterMaps maps{Field(n, n, 1.0), Field(n, n, 1.0)};
    Mask pred = threshold_phi(evolve_last(phi0, img, maps, cfg));

    LabeledRegions lr = connected_components(pred);
    double worst_iou = 0.0;
    if (lr.count == 2) {
        worst_iou = 1.0;
        for (const Mask* inst : {&d1, &d2}) {
            double best = 0.0;
            for (int label = 1; label <= 2; ++label) {
                size_t inter = 0, uni = 0;
                for (size_t i = 0; i < gt.size(); ++i) {
                    const bool a = inst->data[i] != 0, b = lr.labels[i] == label;
                    inter += a && b;
                    uni += a || b;
                }
                best = std::max(best, double(inter) / double(uni));
            }
            worst_iou = std::min(worst_iou, best);
        }
    }
    std::printf("  components %d, worst per-instance IoU %.4f\n", lr.count, worst_iou);
    return lr.count == 2 && worst_iou >= 0.9;
}

// ---------------------------------------------------------------- criterion 5

namespace oracle {

// Independent brute-force metric implementations used only as oracles.

std::vector<std::vector<size_t>> components(const Mask& m) {
    const int w = m.width, h = m.height;
    std::vector<int> label(m.size(), 0);
    std::vector<std::vector<size_t>> comps;
    for (int y0 = 0; y0 < h; ++y0)
        for (int x0 = 0; x0 < w; ++x0) {
            if (!m.at(y0, x0) || label[size_t(y0) * w + x0]) continue;
            comps.emplace_back();
            std::vector<std::pair<int, int>> stack{{y0, x0}};
            label[size_t(y0) * w + x0] = int(comps.size());
            while (!stack.empty()) {
                auto [y, x] = stack.back();
                stack.pop_back();
                comps.back().push_back(size_t(y) * w + x);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = y + dy, nx = x + dx;
                        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                        if (!m.at(ny, nx) || label[size_t(ny) * w + nx]) continue;
                        label[size_t(ny) * w + nx] = int(comps.size());
                        stack.push_back({ny, nx});
                    }
            }
        }
    return comps;
}

double wcov(const Mask& x, const Mask& g) {
    size_t total_fg = 0;
    for (uint8_t v : g.data) total_fg += v != 0;
    if (total_fg == 0) return 0.0;
    auto gc = components(g);
    auto xc = components(x);
    double acc = 0.0;
    for (const auto& gi : gc) {
        double best = 0.0;
        for (const auto& xi : xc) {
            size_t inter = 0;
            for (size_t a : gi)
                for (size_t b : xi) inter += a == b;
            if (inter == 0) continue;
            best = std::max(best, double(inter) / double(gi.size() + xi.size() - inter));
        }
        acc += double(gi.size()) * best;
    }
    return acc / double(total_fg);
}

std::vector<std::pair<int, int>> boundary(const Mask& m) {
    std::vector<std::pair<int, int>> pts;
    const int w = m.width, h = m.height;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!m.at(y, x)) continue;
            auto bg = [&](int v, int u) { return v >= 0 && v < h && u >= 0 && u < w && !m.at(v, u); };
            if (bg(y, x - 1) || bg(y, x + 1) || bg(y - 1, x) || bg(y + 1, x)) pts.push_back({y, x});
        }
    return pts;
}

double boundf(const Mask& x, const Mask& g) {
    auto bx = boundary(x), bg = boundary(g);
    if (bx.empty() && bg.empty()) return 1.0;
    if (bx.empty() || bg.empty()) return 0.0;
    auto count_within = [](const std::vector<std::pair<int, int>>& from,
                           const std::vector<std::pair<int, int>>& to, int t2) {
        size_t hits = 0;
        for (auto [y, x] : from) {
            bool near = false;
            for (auto [v, u] : to)
                if ((v - y) * (v - y) + (u - x) * (u - x) <= t2) {
                    near = true;
                    break;
                }
            hits += near;
        }
        return hits;
    };
    double total = 0.0;
    for (int theta = 1; theta <= 5; ++theta) {
        const double precision = double(count_within(bx, bg, theta * theta)) / double(bx.size());
        const double recall = double(count_within(bg, bx, theta * theta)) / double(bg.size());
        total += (precision + recall > 0.0) ? 2.0 * precision * recall / (precision + recall) : 0.0;
    }
    return total / 5.0;
}

}  // namespace oracle

bool criterion_metric_oracles() {
    std::mt19937_64 rng(404);
    int mismatches = 0;
    double worst_identity = 0.0;
    for (int t = 0; t < 100; ++t) {
        const int n = 32;
        Mask x(n, n), g(n, n);
        // Mix structured blobs and salt noise so components and boundaries
        // are non-trivial.
        for (auto& v : x.data) v = (rng() % 6) == 0 ? 1 : 0;
        for (auto& v : g.data) v = (rng() % 6) == 0 ? 1 : 0;
        for (int b = 0; b < 2; ++b) {
            const int cx = int(rng() % n), cy = int(rng() % n), r = 3 + int(rng() % 6);
            for (int yy = 0; yy < n; ++yy)
                for (int xx = 0; xx < n; ++xx)
                    if ((xx - cx) * (xx - cx) + (yy - cy) * (yy - cy) <= r * r) {
                        if (b == 0)
                            x.at(yy, xx) = 1;
                        else
                            g.at(yy, xx) = 1;
                    }
        }

        size_t inter = 0, uni = 0, sx = 0, sg = 0;
        for (size_t i = 0; i < x.size(); ++i) {
            inter += x.data[i] && g.data[i];
            uni += x.data[i] || g.data[i];
            sx += x.data[i] != 0;
            sg += g.data[i] != 0;
        }
        const double want_iou = uni == 0 ? 1.0 : double(inter) / double(uni);
        const double want_dice = sx + sg == 0 ? 1.0 : 2.0 * double(inter) / double(sx + sg);
        if (iou_score(x, g) != want_iou) ++mismatches;
        if (dice_score(x, g) != want_dice) ++mismatches;
        if (wcov_score(x, g) != oracle::wcov(x, g)) ++mismatches;
        if (boundf_score(x, g) != oracle::boundf(x, g)) ++mismatches;
        const double d = dice_score(x, g), i = iou_score(x, g);
        worst_identity = std::max(worst_identity, std::abs(d - 2.0 * i / (1.0 + i)));
    }
    std::printf("  mismatches %d / 400 checks, dice identity deviation %.3g\n", mismatches,
                worst_identity);
    return mismatches == 0 && worst_identity < 1e-12;
}

// ---------------------------------------------------------------- criterion 8

bool criterion_performance() {
    const int n = 512;
    Mask gt = disk_mask(n, 255.5, 255.5, 100.0);
    Field img = two_level_image(gt, 0.8, 0.2);
    Field phi0 = signed_distance_from_mask(disk_mask(n, 255.5, 255.5, 150.0));
    EvolutionConfig cfg;  // steps 60, window 5
    ParameterMaps maps{Field(n, n, 1.0), Field(n, n, 1.0)};
    const auto t0 = Clock::now();
    Field phi = evolve_last(phi0, img, maps, cfg);
    const double elapsed = seconds_since(t0);
    const double iou = iou_score(threshold_phi(phi), gt);
    std::printf("  512x512, L=60, f=5: %.2f s (IoU %.3f)\n", elapsed, iou);
    return elapsed <= 10.0;
}

// ---------------------------------------------------------------- criterion 9

bool criterion_determinism() {
    SyntheticConfig scfg;
    scfg.count = 12;
    scfg.size = 32;
    scfg.seed = 7;
    Dataset data = generate_synthetic(scfg);
    Dataset train_set(data.begin(), data.begin() + 9);
    Dataset test_set(data.begin() + 9, data.end());

    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.width_divisor = 8;
    cfg.evolution.steps = 10;
    cfg.eval_interval = 2;

    auto run = [&](const std::string& path) {
        Predictor net = make_predictor(cfg, 1);
        train(train_set, test_set, cfg, net);
        net.save_checkpoint(path);
        return eval_csv(evaluate(test_set, net, cfg.evolution));
    };
    const std::string csv_a = run("acceptance_det_a.tdac");
    const std::string csv_b = run("acceptance_det_b.tdac");

    auto bytes = [](const std::string& path) {
        std::FILE* f = std::fopen(path.c_str(), "rb");
        std::string out;
        char buf[4096];
        size_t got;
        while (f && (got = std::fread(buf, 1, sizeof(buf), f)) > 0) out.append(buf, got);
        if (f) std::fclose(f);
        return out;
    };
    const bool ckpt_same = bytes("acceptance_det_a.tdac") == bytes("acceptance_det_b.tdac");
    std::remove("acceptance_det_a.tdac");
    std::remove("acceptance_det_b.tdac");
    std::printf("  checkpoints identical: %s, metric CSVs identical: %s\n",
                ckpt_same ? "yes" : "no", csv_a == csv_b ? "yes" : "no");
    return ckpt_same && csv_a == csv_b;
}

// ---------------------------------------------------------------- criterion 6

struct ToySet {
    Dataset train_set, test_set;
};

ToySet make_toy_set() {
    SyntheticConfig scfg;
    scfg.count = 200;
    scfg.size = 64;
    scfg.seed = 1;
    scfg.style = SyntheticStyle::Rects;
    Dataset data = generate_synthetic(scfg);
    return {Dataset(data.begin(), data.begin() + 150), Dataset(data.begin() + 150, data.end())};
}

bool criterion_training() {
    const auto t0 = Clock::now();
    ToySet toy = make_toy_set();

    TrainConfig cfg;  // alpha0 1e-3, epochs 200, batch 2, width divisor 4
    Predictor full = make_predictor(cfg, 1);
    train(toy.train_set, {}, cfg, full);
    EvalResult full_eval = evaluate(toy.test_set, full, cfg.evolution);

    TrainConfig ccfg = cfg;
    ccfg.constant_lambda = true;
    Predictor constant = make_predictor(ccfg, 1);
    train(toy.train_set, {}, ccfg, constant);
    EvalResult const_eval = evaluate(toy.test_set, constant, ccfg.evolution);

    const double elapsed = seconds_since(t0);
    std::printf("  full: mIoU %.4f, BoundF %.4f | constant-lambda: mIoU %.4f, BoundF %.4f"
                " | %.0f s\n",
                full_eval.aggregate.miou, full_eval.aggregate.boundf, const_eval.aggregate.miou,
                const_eval.aggregate.boundf, elapsed);
    return full_eval.aggregate.miou >= 0.85 &&
           full_eval.aggregate.boundf >= const_eval.aggregate.boundf && elapsed < 7200.0;
}

// ---------------------------------------------------------------- criterion 7

bool criterion_sweeps() {
    ToySet toy = make_toy_set();
    SweepSpec spec;
    spec.base.epochs = 40;  // reduced-epoch runs keep the 8-model sweep tractable
    spec.base.eval_interval = 1000;

    spec.variable = "iterations";
    spec.values = {10, 30, 60, 90};
    std::vector<SweepRow> iters = run_sweep(spec, toy.train_set, toy.test_set);
    std::printf("  iterations:");
    for (const SweepRow& r : iters) std::printf(" L=%d %.4f", r.value, r.miou);
    std::printf("\n");
    const double plateau = std::abs(iters[3].miou - iters[2].miou);

    spec.variable = "filter_size";
    spec.values = {1, 3, 5, 9};
    std::vector<SweepRow> filters = run_sweep(spec, toy.train_set, toy.test_set);
    std::printf("  filter_size:");
    double best = 0.0, at5 = 0.0;
    for (const SweepRow& r : filters) {
        std::printf(" f=%d %.4f", r.value, r.miou);
        best = std::max(best, r.miou);
        if (r.value == 5) at5 = r.miou;
    }
    std::printf("\n  |mIoU(90)-mIoU(60)| = %.4f, f=5 gap to max = %.4f\n", plateau, best - at5);
    return plateau < 0.02 && best - at5 <= 0.02;
}

struct Criterion {
    int number;
    const char* title;
    const char* group;
    bool (*fn)();
};

const Criterion kCriteria[] = {
    {1, "gradient correctness", "core", criterion_gradients},
    {2, "energy descent", "core", criterion_energy_descent},
    {3, "forward segmentation sanity", "core", criterion_forward_sanity},
    {4, "multi-instance capability", "core", criterion_multi_instance},
    {5, "metric oracles", "core", criterion_metric_oracles},
    {6, "end-to-end toy training", "training", criterion_training},
    {7, "ablation sweep direction", "sweep", criterion_sweeps},
    {8, "performance budget", "core", criterion_performance},
    {9, "determinism", "core", criterion_determinism},
};

}  // namespace

int main(int argc, char** argv) {
    const std::string group = argc > 1 ? argv[1] : "core";
    int failures = 0, executed = 0;
    for (const Criterion& c : kCriteria) {
        if (group != "all" && group != c.group) continue;
        ++executed;
        bool ok = false;
        try {
            ok = c.fn();
        } catch (const std::exception& e) {
            std::printf("  exception: %s\n", e.what());
        }
        std::printf("criterion %d (%s): %s\n", c.number, c.title, ok ? "PASS" : "FAIL");
        std::fflush(stdout);
        failures += !ok;
    }
    if (executed == 0) {
        std::fprintf(stderr, "unknown group '%s' (use core|training|sweep|all)\n", group.c_str());
        return 2;
    }
    return failures == 0 ? 0 : 1;
}
