#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <random>

#include "doctest.h"
#include "tdac/predictor.hpp"

using namespace tdac;

namespace {

Image random_image(int n, uint64_t seed, int channels = 1) {
    std::mt19937_64 rng(seed);
    Image img(n, n, channels);
    for (double& v : img.data) v = std::ldexp(double(rng() >> 11), -53);
    return img;
}

PredictorDescriptor tiny_desc() {
    PredictorDescriptor d;
    d.width_divisor = 16;  // widths 1/2/4/8: big enough to exercise every path
    return d;
}

// Scalar probe loss over all four outputs with fixed coefficient fields, so
// the upstream gradients handed to backward() are just those coefficients.
struct ProbeLoss {
    Field a, b, c, d;

    explicit ProbeLoss(int n, uint64_t seed) : a(n, n), b(n, n), c(n, n), d(n, n) {
        std::mt19937_64 rng(seed);
        auto fill = [&](Field& f) {
            for (double& v : f.data) v = std::ldexp(double(rng() >> 11), -53) - 0.5;
        };
        fill(a);
        fill(b);
        fill(c);
        fill(d);
    }

    double value(const PredictorOutput& o) const {
        double s = 0.0;
        for (size_t i = 0; i < a.size(); ++i)
            s += a.data[i] * o.lambda1.data[i] + b.data[i] * o.lambda2.data[i] +
                 c.data[i] * o.phi0.data[i] + d.data[i] * o.p.data[i];
        return s;
    }

    PredictorGrad grad() const { return {a, b, c, d}; }
};

}  // namespace

TEST_CASE("uninitialized (all-zero) weights give the neutral outputs") {
    Predictor net(tiny_desc());
    Image img = random_image(16, 1);
    std::vector<PredictorOutput> outs = net.forward({img}, RunMode::Eval);
    REQUIRE(outs.size() == 1);
    const PredictorOutput& o = outs[0];
    CHECK(o.phi0.width == 16);
    CHECK(o.phi0.height == 16);
    const double neutral = std::log(2.0) + 1e-4;  // softplus(0) + floor
    for (size_t i = 0; i < o.phi0.size(); ++i) {
        CHECK(o.phi0.data[i] == 0.0);
        CHECK(o.p.data[i] == 0.5);
        CHECK(o.lambda1.data[i] == doctest::Approx(neutral).epsilon(1e-12));
        CHECK(o.lambda2.data[i] == doctest::Approx(neutral).epsilon(1e-12));
    }
}

TEST_CASE("outputs keep the input resolution; indivisible sizes are rejected") {
    Predictor net(tiny_desc());
    net.init_params(3);
    std::vector<PredictorOutput> outs = net.forward({random_image(24, 2)}, RunMode::Eval);
    CHECK(outs[0].lambda1.width == 24);
    CHECK(outs[0].p.height == 24);
    Image bad(20, 20, 1, 0.5);
    CHECK_THROWS_AS(net.forward({bad}, RunMode::Eval), Error);
    CHECK_THROWS_AS(net.forward({}, RunMode::Eval), Error);
}

TEST_CASE("lambda maps respect the positivity floor") {
    Predictor net(tiny_desc());
    net.init_params(7);
    std::vector<PredictorOutput> outs = net.forward({random_image(16, 5)}, RunMode::Eval);
    for (size_t i = 0; i < outs[0].lambda1.size(); ++i) {
        CHECK(outs[0].lambda1.data[i] >= 1e-4);
        CHECK(outs[0].lambda2.data[i] >= 1e-4);
        CHECK(outs[0].p.data[i] > 0.0);
        CHECK(outs[0].p.data[i] < 1.0);
    }
}

TEST_CASE("He initialization: documented spread, deterministic per seed") {
    PredictorDescriptor desc;  // full widths for a tight variance estimate
    desc.width_divisor = 1;
    Predictor net(desc);
    net.init_params(11);
    bool checked = false;
    for (ParamTensor* p : net.parameters()) {
        if (p->name != "e2.w") continue;
        // 3x3 kernel over 16 input channels: std = sqrt(2 / 144).
        double mean = 0.0, var = 0.0;
        for (double v : p->value) mean += v;
        mean /= double(p->count());
        for (double v : p->value) var += (v - mean) * (v - mean);
        var /= double(p->count());
        CHECK(std::abs(mean) < 0.01);
        CHECK(std::sqrt(var) == doctest::Approx(std::sqrt(2.0 / 144.0)).epsilon(0.1));
        checked = true;
    }
    CHECK(checked);

    Predictor net2(desc);
    net2.init_params(11);
    Predictor net3(desc);
    net3.init_params(12);
    auto pa = net.parameters(), pb = net2.parameters(), pc = net3.parameters();
    bool all_same = true, any_diff = false;
    for (size_t i = 0; i < pa.size(); ++i) {
        all_same = all_same && pa[i]->value == pb[i]->value;
        any_diff = any_diff || pa[i]->value != pc[i]->value;
    }
    CHECK(all_same);
    CHECK(any_diff);
}

TEST_CASE("parameter gradients match finite differences through the whole net") {
    Predictor net(tiny_desc());
    net.init_params(17);
    const int n = 8;
    std::vector<Image> batch = {random_image(n, 21), random_image(n, 22)};
    ProbeLoss probe(n, 23);

    auto batch_loss = [&]() {
        std::vector<PredictorOutput> outs = net.forward(batch, RunMode::Train);
        return probe.value(outs[0]) + probe.value(outs[1]);
    };

    batch_loss();
    net.zero_grad();
    net.backward({probe.grad(), probe.grad()});

    std::mt19937_64 rng(29);
    auto params = net.parameters();
    int tested = 0;
    for (int probe_i = 0; probe_i < 24; ++probe_i) {
        ParamTensor* p = params[rng() % params.size()];
        if (!p->trainable || p->count() == 0) continue;
        const size_t j = rng() % p->count();
        const double h = 1e-6;
        const double saved = p->value[j];
        p->value[j] = saved + h;
        const double lp = batch_loss();
        p->value[j] = saved - h;
        const double lm = batch_loss();
        p->value[j] = saved;
        const double fd = (lp - lm) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(p->grad[j]), 1e-5});
        INFO(p->name, "[", j, "] analytic ", p->grad[j], " vs fd ", fd);
        CHECK(std::abs(p->grad[j] - fd) / denom < 1e-4);
        ++tested;
    }
    CHECK(tested >= 16);
}

TEST_CASE("backward without a train-mode forward is rejected") {
    Predictor net(tiny_desc());
    net.init_params(31);
    const int n = 8;
    ProbeLoss probe(n, 5);
    net.forward({random_image(n, 6)}, RunMode::Eval);
    CHECK_THROWS_AS(net.backward({probe.grad()}), Error);
    // Batch-size mismatch against the cached forward also fails.
    net.forward({random_image(n, 6)}, RunMode::Train);
    CHECK_THROWS_AS(net.backward({probe.grad(), probe.grad()}), Error);
}

TEST_CASE("train and eval modes disagree until running stats converge") {
    Predictor net(tiny_desc());
    net.init_params(37);
    Image img = random_image(16, 41);
    Field train_phi0 = net.forward({img}, RunMode::Train)[0].phi0;
    Field eval_phi0 = net.forward({img}, RunMode::Eval)[0].phi0;
    double diff = 0.0;
    for (size_t i = 0; i < train_phi0.size(); ++i)
        diff = std::max(diff, std::abs(train_phi0.data[i] - eval_phi0.data[i]));
    CHECK(diff > 1e-8);  // fresh running stats differ from batch stats
}

TEST_CASE("constant-lambda mode broadcasts two scalars") {
    PredictorDescriptor desc = tiny_desc();
    desc.constant_lambda = true;
    Predictor net(desc);
    net.init_params(43);
    std::vector<PredictorOutput> outs = net.forward({random_image(16, 44)}, RunMode::Eval);
    const double l1 = outs[0].lambda1.data[0], l2 = outs[0].lambda2.data[0];
    for (size_t i = 0; i < outs[0].lambda1.size(); ++i) {
        CHECK(outs[0].lambda1.data[i] == l1);
        CHECK(outs[0].lambda2.data[i] == l2);
    }
    // Starts at lambda = softplus(ln(e-1)) + floor = 1 + 1e-4.
    CHECK(l1 == doctest::Approx(1.0 + 1e-4).epsilon(1e-12));
    CHECK(net.lambda_scalar_raw(0) == doctest::Approx(std::log(std::exp(1.0) - 1.0)).epsilon(1e-12));

    // The scalar gradient is the spatial sum of the per-pixel lambda adjoints
    // (times softplus', which is sigmoid(raw)).
    const int n = 8;
    ProbeLoss probe(n, 45);
    net.forward({random_image(n, 46)}, RunMode::Train);
    net.zero_grad();
    net.backward({probe.grad()});
    double sum_a = 0.0;
    for (double v : probe.a.data) sum_a += v;
    const double sp_prime = 1.0 / (1.0 + std::exp(-net.lambda_scalar_raw(0)));
    for (ParamTensor* p : net.parameters()) {
        if (p->name != "lambda_scalars") continue;
        CHECK(p->grad[0] == doctest::Approx(sum_a * sp_prime).epsilon(1e-9));
    }
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    PredictorDescriptor desc = tiny_desc();
    desc.input_channels = 3;
    Predictor net(desc);
    net.init_params(47);
    Image img = random_image(16, 48, 3);
    // Push a train step's worth of running-stats updates into the state.
    net.forward({img}, RunMode::Train);
    Field before = net.forward({img}, RunMode::Eval)[0].phi0;

    const std::string path = "predictor_roundtrip.tdac";
    net.save_checkpoint(path);
    Predictor loaded = Predictor::load_checkpoint(path);
    CHECK(loaded.descriptor() == desc);
    Field after = loaded.forward({img}, RunMode::Eval)[0].phi0;
    for (size_t i = 0; i < before.size(); ++i) CHECK(before.data[i] == after.data[i]);

    auto pa = net.parameters(), pb = loaded.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->name == pb[i]->name);
        CHECK(pa[i]->value == pb[i]->value);
    }
    std::remove(path.c_str());
}

TEST_CASE("corrupt checkpoints are rejected") {
    const std::string path = "predictor_corrupt.tdac";
    {
        std::FILE* f = std::fopen(path.c_str(), "wb");
        REQUIRE(f);
        std::fputs("definitely not a checkpoint", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(Predictor::load_checkpoint(path), Error);
    CHECK_THROWS_AS(Predictor::load_checkpoint("no_such_file.tdac"), Error);
    std::remove(path.c_str());
}
