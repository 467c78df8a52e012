#include "tdac/predictor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace tdac {

namespace {

constexpr double kLambdaFloor = 1e-4;
constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Seeded Box-Muller normal sampler; mt19937_64 plus this transform keeps
// initialization bit-identical across standard libraries.
class NormalSampler {
public:
    explicit NormalSampler(uint64_t seed) : gen_(seed) {}
    double operator()() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = std::ldexp(double(gen_() >> 11), -53);
        } while (u1 <= 0.0);
        u2 = std::ldexp(double(gen_() >> 11), -53);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

Batch zeros_like(const Batch& b) {
    Batch out;
    out.reserve(b.size());
    for (const Tensor& t : b) out.emplace_back(t.height, t.width, t.channels);
    return out;
}

void add_into(Batch& dst, const Batch& src) {
    for (size_t s = 0; s < dst.size(); ++s)
        for (size_t i = 0; i < dst[s].size(); ++i) dst[s].v[i] += src[s].v[i];
}

struct Conv {
    int k, cin, cout;
    ParamTensor w, b;
    Batch in_cache;

    Conv(int k_, int cin_, int cout_, const std::string& name) : k(k_), cin(cin_), cout(cout_) {
        w.name = name + ".w";
        w.shape = {k, k, cin, cout};
        w.value.assign(size_t(k) * k * cin * cout, 0.0);
        w.grad.assign(w.value.size(), 0.0);
        b.name = name + ".b";
        b.shape = {cout};
        b.value.assign(cout, 0.0);
        b.grad.assign(cout, 0.0);
    }

    Batch forward(const Batch& in, bool keep_cache) {
        if (keep_cache) in_cache = in;
        const int r = k / 2;
        Batch out;
        out.reserve(in.size());
        for (const Tensor& t : in) {
            Tensor o(t.height, t.width, cout);
            for (int y = 0; y < t.height; ++y)
                for (int x = 0; x < t.width; ++x) {
                    double* op = &o.at(y, x, 0);
                    for (int co = 0; co < cout; ++co) op[co] = b.value[co];
                    for (int ky = 0; ky < k; ++ky) {
                        const int yy = y + ky - r;
                        if (yy < 0 || yy >= t.height) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int xx = x + kx - r;
                            if (xx < 0 || xx >= t.width) continue;
                            const double* ip = &t.v[(size_t(yy) * t.width + xx) * t.channels];
                            const double* wp = &w.value[(size_t(ky) * k + kx) * cin * cout];
                            for (int ci = 0; ci < cin; ++ci) {
                                const double v = ip[ci];
                                const double* wc = wp + size_t(ci) * cout;
                                for (int co = 0; co < cout; ++co) op[co] += v * wc[co];
                            }
                        }
                    }
                }
            out.push_back(std::move(o));
        }
        return out;
    }

    Batch backward(const Batch& dout) {
        if (in_cache.size() != dout.size())
            throw Error(Error::Code::BadValue, "Conv::backward: stale cache");
        const int r = k / 2;
        Batch din = zeros_like(in_cache);
        for (size_t s = 0; s < dout.size(); ++s) {
            const Tensor& t = in_cache[s];
            const Tensor& g = dout[s];
            Tensor& di = din[s];
            for (int y = 0; y < t.height; ++y)
                for (int x = 0; x < t.width; ++x) {
                    const double* gp = &g.v[(size_t(y) * g.width + x) * g.channels];
                    for (int co = 0; co < cout; ++co) b.grad[co] += gp[co];
                    for (int ky = 0; ky < k; ++ky) {
                        const int yy = y + ky - r;
                        if (yy < 0 || yy >= t.height) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int xx = x + kx - r;
                            if (xx < 0 || xx >= t.width) continue;
                            const double* ip = &t.v[(size_t(yy) * t.width + xx) * t.channels];
                            double* dip = &di.v[(size_t(yy) * di.width + xx) * di.channels];
                            const size_t base = (size_t(ky) * k + kx) * cin * cout;
                            for (int ci = 0; ci < cin; ++ci) {
                                const double v = ip[ci];
                                const double* wc = &w.value[base + size_t(ci) * cout];
                                double* wg = &w.grad[base + size_t(ci) * cout];
                                double acc = 0.0;
                                for (int co = 0; co < cout; ++co) {
                                    wg[co] += v * gp[co];
                                    acc += wc[co] * gp[co];
                                }
                                dip[ci] += acc;
                            }
                        }
                    }
                }
        }
        return din;
    }
};

struct BatchNorm {
    int c;
    bool enabled;
    ParamTensor gamma, beta, run_mean, run_var;
    Batch xhat_cache;
    std::vector<double> inv_std_cache;
    bool train_cache = false;

    BatchNorm(int c_, bool enabled_, const std::string& name) : c(c_), enabled(enabled_) {
        auto init = [&](ParamTensor& p, const char* suffix, double fill, bool trainable) {
            p.name = name + suffix;
            p.shape = {c};
            p.value.assign(c, fill);
            p.grad.assign(c, 0.0);
            p.trainable = trainable;
        };
        init(gamma, ".gamma", 1.0, true);
        init(beta, ".beta", 0.0, true);
        init(run_mean, ".run_mean", 0.0, false);
        init(run_var, ".run_var", 1.0, false);
    }

    Batch forward(const Batch& in, bool train) {
        if (!enabled) {
            train_cache = train;
            return in;
        }
        Batch out = zeros_like(in);
        if (train) {
            size_t n = 0;
            for (const Tensor& t : in) n += size_t(t.height) * t.width;
            std::vector<double> mean(c, 0.0), var(c, 0.0);
            for (const Tensor& t : in)
                for (size_t i = 0; i < t.size(); i += c)
                    for (int ch = 0; ch < c; ++ch) mean[ch] += t.v[i + ch];
            for (int ch = 0; ch < c; ++ch) mean[ch] /= double(n);
            for (const Tensor& t : in)
                for (size_t i = 0; i < t.size(); i += c)
                    for (int ch = 0; ch < c; ++ch) {
                        const double d = t.v[i + ch] - mean[ch];
                        var[ch] += d * d;
                    }
            for (int ch = 0; ch < c; ++ch) var[ch] /= double(n);

            inv_std_cache.assign(c, 0.0);
            for (int ch = 0; ch < c; ++ch) inv_std_cache[ch] = 1.0 / std::sqrt(var[ch] + kBnEps);
            xhat_cache = zeros_like(in);
            for (size_t s = 0; s < in.size(); ++s)
                for (size_t i = 0; i < in[s].size(); i += c)
                    for (int ch = 0; ch < c; ++ch) {
                        const double xh = (in[s].v[i + ch] - mean[ch]) * inv_std_cache[ch];
                        xhat_cache[s].v[i + ch] = xh;
                        out[s].v[i + ch] = gamma.value[ch] * xh + beta.value[ch];
                    }
            for (int ch = 0; ch < c; ++ch) {
                run_mean.value[ch] = kBnMomentum * run_mean.value[ch] + (1.0 - kBnMomentum) * mean[ch];
                run_var.value[ch] = kBnMomentum * run_var.value[ch] + (1.0 - kBnMomentum) * var[ch];
            }
            train_cache = true;
        } else {
            for (size_t s = 0; s < in.size(); ++s)
                for (size_t i = 0; i < in[s].size(); i += c)
                    for (int ch = 0; ch < c; ++ch) {
                        const double xh = (in[s].v[i + ch] - run_mean.value[ch]) /
                                          std::sqrt(run_var.value[ch] + kBnEps);
                        out[s].v[i + ch] = gamma.value[ch] * xh + beta.value[ch];
                    }
            train_cache = false;
        }
        return out;
    }

    Batch backward(const Batch& dout) {
        if (!enabled) return dout;
        if (!train_cache || xhat_cache.size() != dout.size())
            throw Error(Error::Code::BadValue, "BatchNorm::backward: stale cache");
        size_t n = 0;
        for (const Tensor& t : dout) n += size_t(t.height) * t.width;
        std::vector<double> sum_dxhat(c, 0.0), sum_dxhat_xhat(c, 0.0);
        for (size_t s = 0; s < dout.size(); ++s)
            for (size_t i = 0; i < dout[s].size(); i += c)
                for (int ch = 0; ch < c; ++ch) {
                    const double g = dout[s].v[i + ch];
                    const double xh = xhat_cache[s].v[i + ch];
                    gamma.grad[ch] += g * xh;
                    beta.grad[ch] += g;
                    const double dxh = g * gamma.value[ch];
                    sum_dxhat[ch] += dxh;
                    sum_dxhat_xhat[ch] += dxh * xh;
                }
        Batch din = zeros_like(dout);
        const double inv_n = 1.0 / double(n);
        for (size_t s = 0; s < dout.size(); ++s)
            for (size_t i = 0; i < dout[s].size(); i += c)
                for (int ch = 0; ch < c; ++ch) {
                    const double dxh = dout[s].v[i + ch] * gamma.value[ch];
                    const double xh = xhat_cache[s].v[i + ch];
                    din[s].v[i + ch] = inv_std_cache[ch] *
                                       (dxh - inv_n * (sum_dxhat[ch] + xh * sum_dxhat_xhat[ch]));
                }
        return din;
    }
};

struct Relu {
    Batch out_cache;

    Batch forward(const Batch& in, bool keep_cache) {
        Batch out = in;
        for (Tensor& t : out)
            for (double& v : t.v) v = v > 0.0 ? v : 0.0;
        if (keep_cache) out_cache = out;
        return out;
    }

    Batch backward(const Batch& dout) {
        Batch din = dout;
        for (size_t s = 0; s < din.size(); ++s)
            for (size_t i = 0; i < din[s].size(); ++i)
                if (out_cache[s].v[i] <= 0.0) din[s].v[i] = 0.0;
        return din;
    }
};

// 2x2 max pooling, stride 2. Ties route the gradient to the first element in
// row-major window order.
struct MaxPool {
    std::vector<std::vector<int>> argmax;
    int in_h = 0, in_w = 0, c = 0;

    Batch forward(const Batch& in, bool keep_cache) {
        Batch out;
        out.reserve(in.size());
        if (keep_cache) argmax.assign(in.size(), {});
        for (size_t s = 0; s < in.size(); ++s) {
            const Tensor& t = in[s];
            in_h = t.height;
            in_w = t.width;
            c = t.channels;
            Tensor o(t.height / 2, t.width / 2, t.channels);
            if (keep_cache) argmax[s].assign(o.size(), 0);
            for (int y = 0; y < o.height; ++y)
                for (int x = 0; x < o.width; ++x)
                    for (int ch = 0; ch < c; ++ch) {
                        double best = -1e300;
                        int best_idx = 0;
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const int yy = 2 * y + dy, xx = 2 * x + dx;
                                const double v = t.at(yy, xx, ch);
                                if (v > best) {
                                    best = v;
                                    best_idx = int((size_t(yy) * t.width + xx) * c + ch);
                                }
                            }
                        o.at(y, x, ch) = best;
                        if (keep_cache) argmax[s][(size_t(y) * o.width + x) * c + ch] = best_idx;
                    }
            out.push_back(std::move(o));
        }
        return out;
    }

    Batch backward(const Batch& dout) {
        Batch din;
        din.reserve(dout.size());
        for (size_t s = 0; s < dout.size(); ++s) {
            Tensor di(in_h, in_w, c);
            for (size_t i = 0; i < dout[s].size(); ++i) di.v[argmax[s][i]] += dout[s].v[i];
            din.push_back(std::move(di));
        }
        return din;
    }
};

// Bilinear x2 upsampling, align_corners=false: output pixel (y,x) samples the
// input at (y/2 - 0.25, x/2 - 0.25) with edge clamping.
struct Upsample {
    int in_h = 0, in_w = 0, c = 0;

    static void weights(int out_i, int in_n, int& i0, int& i1, double& f) {
        const double src = 0.5 * out_i - 0.25;
        const int lo = int(std::floor(src));
        f = src - lo;
        i0 = std::clamp(lo, 0, in_n - 1);
        i1 = std::clamp(lo + 1, 0, in_n - 1);
    }

    Batch forward(const Batch& in) {
        Batch out;
        out.reserve(in.size());
        for (const Tensor& t : in) {
            in_h = t.height;
            in_w = t.width;
            c = t.channels;
            Tensor o(2 * t.height, 2 * t.width, t.channels);
            for (int y = 0; y < o.height; ++y) {
                int y0, y1;
                double fy;
                weights(y, t.height, y0, y1, fy);
                for (int x = 0; x < o.width; ++x) {
                    int x0, x1;
                    double fx;
                    weights(x, t.width, x0, x1, fx);
                    for (int ch = 0; ch < c; ++ch)
                        o.at(y, x, ch) = (1 - fy) * ((1 - fx) * t.at(y0, x0, ch) + fx * t.at(y0, x1, ch)) +
                                         fy * ((1 - fx) * t.at(y1, x0, ch) + fx * t.at(y1, x1, ch));
                }
            }
            out.push_back(std::move(o));
        }
        return out;
    }

    Batch backward(const Batch& dout) {
        Batch din;
        din.reserve(dout.size());
        for (const Tensor& g : dout) {
            Tensor di(in_h, in_w, c);
            for (int y = 0; y < g.height; ++y) {
                int y0, y1;
                double fy;
                weights(y, in_h, y0, y1, fy);
                for (int x = 0; x < g.width; ++x) {
                    int x0, x1;
                    double fx;
                    weights(x, in_w, x0, x1, fx);
                    for (int ch = 0; ch < c; ++ch) {
                        const double v = g.at(y, x, ch);
                        di.at(y0, x0, ch) += (1 - fy) * (1 - fx) * v;
                        di.at(y0, x1, ch) += (1 - fy) * fx * v;
                        di.at(y1, x0, ch) += fy * (1 - fx) * v;
                        di.at(y1, x1, ch) += fy * fx * v;
                    }
                }
            }
            din.push_back(std::move(di));
        }
        return din;
    }
};

// Conv -> ReLU -> BN unit, the repeated building block of Tables 1-2.
struct ConvBlock {
    Conv conv;
    Relu relu;
    BatchNorm bn;

    ConvBlock(int k, int cin, int cout, bool bn_enabled, const std::string& name)
        : conv(k, cin, cout, name), bn(cout, bn_enabled, name) {}

    Batch forward(const Batch& in, bool train) {
        return bn.forward(relu.forward(conv.forward(in, train), train), train);
    }
    Batch backward(const Batch& dout) { return conv.backward(relu.backward(bn.backward(dout))); }

    void collect(std::vector<ParamTensor*>& out) {
        out.push_back(&conv.w);
        out.push_back(&conv.b);
        out.push_back(&bn.gamma);
        out.push_back(&bn.beta);
        out.push_back(&bn.run_mean);
        out.push_back(&bn.run_var);
    }
};

}  // namespace

struct Predictor::Impl {
    PredictorDescriptor desc;
    int w1, w2, w3, w4;

    ConvBlock e1a, e1b, e2, r2a, r2b, e3, r3a, r3b, e4;
    ConvBlock br1a, br1b, br2a, br2b, br3a, br3b;
    ConvBlock d1a, d1b, d2a, d2b, d3a, d3b, d4;
    Conv head;
    ParamTensor lambda_scalars;

    MaxPool p1, p2, p3;
    Upsample u1, u2, u3;

    // Forward cache for the backward pass.
    bool have_train_cache = false;
    Batch raw_cache;  // head output

    static int scaled(int base, int divisor) { return std::max(1, base / divisor); }

    explicit Impl(const PredictorDescriptor& d)
        : desc(d),
          w1(scaled(16, d.width_divisor)),
          w2(scaled(32, d.width_divisor)),
          w3(scaled(64, d.width_divisor)),
          w4(scaled(128, d.width_divisor)),
          e1a(3, d.input_channels, w1, d.batch_norm, "e1a"),
          e1b(3, w1, w1, d.batch_norm, "e1b"),
          e2(3, w1, w2, d.batch_norm, "e2"),
          r2a(3, w2, w2, d.batch_norm, "r2a"),
          r2b(3, w2, w2, d.batch_norm, "r2b"),
          e3(3, w2, w3, d.batch_norm, "e3"),
          r3a(3, w3, w3, d.batch_norm, "r3a"),
          r3b(3, w3, w3, d.batch_norm, "r3b"),
          e4(3, w3, w4, d.batch_norm, "e4"),
          br1a(3, w4, w4, d.batch_norm, "br1a"),
          br1b(3, w4, w4, d.batch_norm, "br1b"),
          br2a(3, w4, w4, d.batch_norm, "br2a"),
          br2b(3, w4, w4, d.batch_norm, "br2b"),
          br3a(3, w4, w4, d.batch_norm, "br3a"),
          br3b(3, w4, w4, d.batch_norm, "br3b"),
          d1a(3, w4, w3, d.batch_norm, "d1a"),
          d1b(3, w3, w3, d.batch_norm, "d1b"),
          d2a(3, w3, w2, d.batch_norm, "d2a"),
          d2b(3, w2, w2, d.batch_norm, "d2b"),
          d3a(3, w2, w1, d.batch_norm, "d3a"),
          d3b(3, w1, w1, d.batch_norm, "d3b"),
          d4(3, w1, w1, d.batch_norm, "d4"),
          head(1, w1, 3, "head") {
        lambda_scalars.name = "lambda_scalars";
        lambda_scalars.shape = {2};
        // softplus(x) + floor == 1 at x = ln(e - 1); constant-lambda runs
        // start from lambda = 1.
        lambda_scalars.value.assign(2, std::log(std::exp(1.0) - 1.0));
        lambda_scalars.grad.assign(2, 0.0);
    }

    std::vector<ConvBlock*> blocks() {
        return {&e1a, &e1b, &e2, &r2a, &r2b, &e3, &r3a, &r3b, &e4,
                &br1a, &br1b, &br2a, &br2b, &br3a, &br3b,
                &d1a, &d1b, &d2a, &d2b, &d3a, &d3b, &d4};
    }

    std::vector<ParamTensor*> parameters() {
        std::vector<ParamTensor*> out;
        for (ConvBlock* b : blocks()) b->collect(out);
        out.push_back(&head.w);
        out.push_back(&head.b);
        out.push_back(&lambda_scalars);
        return out;
    }
};

Predictor::Predictor(const PredictorDescriptor& desc) : impl_(std::make_unique<Impl>(desc)) {
    if (desc.width_divisor < 1 || (desc.input_channels != 1 && desc.input_channels != 3))
        throw Error(Error::Code::BadValue, "Predictor: bad descriptor");
}
Predictor::~Predictor() = default;
Predictor::Predictor(Predictor&&) noexcept = default;
Predictor& Predictor::operator=(Predictor&&) noexcept = default;

const PredictorDescriptor& Predictor::descriptor() const { return impl_->desc; }

void Predictor::init_params(uint64_t seed) {
    NormalSampler normal(seed);
    for (ConvBlock* b : impl_->blocks()) {
        const double std_dev = std::sqrt(2.0 / double(b->conv.k * b->conv.k * b->conv.cin));
        for (double& v : b->conv.w.value) v = std_dev * normal();
        std::fill(b->conv.b.value.begin(), b->conv.b.value.end(), 0.0);
        std::fill(b->bn.gamma.value.begin(), b->bn.gamma.value.end(), 1.0);
        std::fill(b->bn.beta.value.begin(), b->bn.beta.value.end(), 0.0);
        std::fill(b->bn.run_mean.value.begin(), b->bn.run_mean.value.end(), 0.0);
        std::fill(b->bn.run_var.value.begin(), b->bn.run_var.value.end(), 1.0);
    }
    // The head feeds saturating maps (H(phi), sigmoid, softplus); a damped
    // initialization keeps phi0 near zero and lambda near softplus(0), where
    // all three output branches still carry gradient.
    const double head_std = 0.1 * std::sqrt(2.0 / double(impl_->head.cin));
    for (double& v : impl_->head.w.value) v = head_std * normal();
    std::fill(impl_->head.b.value.begin(), impl_->head.b.value.end(), 0.0);
    impl_->lambda_scalars.value.assign(2, std::log(std::exp(1.0) - 1.0));
}

std::vector<PredictorOutput> Predictor::forward(const std::vector<Image>& images, RunMode mode) {
    Impl& m = *impl_;
    if (images.empty()) throw Error(Error::Code::BadValue, "Predictor::forward: empty batch");
    Batch in;
    in.reserve(images.size());
    for (const Image& img : images) {
        if (img.channels != m.desc.input_channels)
            throw Error(Error::Code::BadDimensions, "Predictor::forward: channel mismatch");
        if (img.width % 8 != 0 || img.height % 8 != 0)
            throw Error(Error::Code::BadDimensions,
                        "Predictor::forward: image dimensions must be divisible by 8");
        Tensor t(img.height, img.width, img.channels);
        t.v.assign(img.data.begin(), img.data.end());
        in.push_back(std::move(t));
    }
    const bool train = mode == RunMode::Train;

    Batch s1 = m.e1b.forward(m.e1a.forward(in, train), train);
    Batch s2 = m.e2.forward(m.p1.forward(s1, train), train);
    Batch r2 = m.r2b.forward(m.r2a.forward(s2, train), train);
    add_into(r2, s2);
    Batch s3 = m.e3.forward(m.p2.forward(r2, train), train);
    Batch r3 = m.r3b.forward(m.r3a.forward(s3, train), train);
    add_into(r3, s3);
    Batch g = m.e4.forward(m.p3.forward(r3, train), train);

    Batch t = m.br1b.forward(m.br1a.forward(g, train), train);
    add_into(t, g);
    Batch t2 = m.br2b.forward(m.br2a.forward(t, train), train);
    add_into(t2, t);
    Batch t3 = m.br3b.forward(m.br3a.forward(t2, train), train);
    add_into(t3, t2);

    Batch h1 = m.d1b.forward(m.d1a.forward(m.u1.forward(t3), train), train);
    add_into(h1, s3);
    Batch h2 = m.d2b.forward(m.d2a.forward(m.u2.forward(h1), train), train);
    add_into(h2, s2);
    Batch h3 = m.d3b.forward(m.d3a.forward(m.u3.forward(h2), train), train);
    add_into(h3, s1);
    Batch h4 = m.d4.forward(h3, train);
    Batch raw = m.head.forward(h4, train);

    m.have_train_cache = train;
    m.raw_cache = raw;

    const double l1_const = softplus(m.lambda_scalars.value[0]) + kLambdaFloor;
    const double l2_const = softplus(m.lambda_scalars.value[1]) + kLambdaFloor;

    std::vector<PredictorOutput> outputs;
    outputs.reserve(raw.size());
    for (const Tensor& r : raw) {
        PredictorOutput o;
        o.lambda1_raw = Field(r.width, r.height);
        o.lambda2_raw = Field(r.width, r.height);
        o.phi0 = Field(r.width, r.height);
        o.lambda1 = Field(r.width, r.height);
        o.lambda2 = Field(r.width, r.height);
        o.p = Field(r.width, r.height);
        for (int y = 0; y < r.height; ++y)
            for (int x = 0; x < r.width; ++x) {
                o.lambda1_raw.at(y, x) = r.at(y, x, 0);
                o.lambda2_raw.at(y, x) = r.at(y, x, 1);
                o.phi0.at(y, x) = r.at(y, x, 2);
                o.p.at(y, x) = sigmoid(r.at(y, x, 2));
                if (m.desc.constant_lambda) {
                    o.lambda1.at(y, x) = l1_const;
                    o.lambda2.at(y, x) = l2_const;
                } else {
                    o.lambda1.at(y, x) = softplus(r.at(y, x, 0)) + kLambdaFloor;
                    o.lambda2.at(y, x) = softplus(r.at(y, x, 1)) + kLambdaFloor;
                }
            }
        outputs.push_back(std::move(o));
    }
    return outputs;
}

void Predictor::backward(const std::vector<PredictorGrad>& grads) {
    Impl& m = *impl_;
    if (!m.have_train_cache || grads.size() != m.raw_cache.size())
        throw Error(Error::Code::BadValue, "Predictor::backward: stale or missing forward cache");

    Batch dout = zeros_like(m.raw_cache);
    for (size_t s = 0; s < grads.size(); ++s) {
        const Tensor& raw = m.raw_cache[s];
        const PredictorGrad& g = grads[s];
        for (int y = 0; y < raw.height; ++y)
            for (int x = 0; x < raw.width; ++x) {
                if (m.desc.constant_lambda) {
                    // Broadcast scalar: gradient is the spatial sum of the
                    // per-pixel lambda adjoints times softplus'.
                    m.lambda_scalars.grad[0] += g.d_lambda1.at(y, x) * sigmoid(m.lambda_scalars.value[0]);
                    m.lambda_scalars.grad[1] += g.d_lambda2.at(y, x) * sigmoid(m.lambda_scalars.value[1]);
                } else {
                    dout[s].at(y, x, 0) = g.d_lambda1.at(y, x) * sigmoid(raw.at(y, x, 0));
                    dout[s].at(y, x, 1) = g.d_lambda2.at(y, x) * sigmoid(raw.at(y, x, 1));
                }
                const double p = sigmoid(raw.at(y, x, 2));
                dout[s].at(y, x, 2) = g.d_phi0.at(y, x) + g.d_p.at(y, x) * p * (1.0 - p);
            }
    }

    Batch dh4 = m.head.backward(dout);
    Batch dh3 = m.d4.backward(dh4);
    Batch ds1 = dh3;  // skip branch
    Batch dh2 = m.u3.backward(m.d3a.backward(m.d3b.backward(dh3)));
    Batch ds2 = dh2;
    Batch dh1 = m.u2.backward(m.d2a.backward(m.d2b.backward(dh2)));
    Batch ds3 = dh1;
    Batch dt3 = m.u1.backward(m.d1a.backward(m.d1b.backward(dh1)));

    Batch dt2 = m.br3a.backward(m.br3b.backward(dt3));
    add_into(dt2, dt3);
    Batch dt1 = m.br2a.backward(m.br2b.backward(dt2));
    add_into(dt1, dt2);
    Batch dg = m.br1a.backward(m.br1b.backward(dt1));
    add_into(dg, dt1);

    Batch dr3 = m.p3.backward(m.e4.backward(dg));
    add_into(ds3, dr3);
    {
        Batch via = m.r3a.backward(m.r3b.backward(dr3));
        add_into(ds3, via);
    }
    Batch dr2 = m.p2.backward(m.e3.backward(ds3));
    add_into(ds2, dr2);
    {
        Batch via = m.r2a.backward(m.r2b.backward(dr2));
        add_into(ds2, via);
    }
    Batch dp1 = m.p1.backward(m.e2.backward(ds2));
    add_into(ds1, dp1);
    m.e1a.backward(m.e1b.backward(ds1));

    m.have_train_cache = false;
}

std::vector<ParamTensor*> Predictor::parameters() { return impl_->parameters(); }

void Predictor::zero_grad() {
    for (ParamTensor* p : impl_->parameters()) p->zero_grad();
}

double Predictor::lambda_scalar_raw(int which) const { return impl_->lambda_scalars.value[which]; }

namespace {
constexpr char kMagic[8] = {'T', 'D', 'A', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_pod(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}
}  // namespace

void Predictor::save_checkpoint(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(Error::Code::Io, "save_checkpoint: cannot open " + path);
    f.write(kMagic, 8);
    write_pod<uint32_t>(f, 1);  // version
    write_pod<uint32_t>(f, uint32_t(impl_->desc.input_channels));
    write_pod<uint32_t>(f, uint32_t(impl_->desc.width_divisor));
    uint32_t flags = (impl_->desc.batch_norm ? 1u : 0u) | (impl_->desc.constant_lambda ? 2u : 0u);
    write_pod<uint32_t>(f, flags);
    auto params = const_cast<Predictor*>(this)->parameters();
    write_pod<uint32_t>(f, uint32_t(params.size()));
    for (const ParamTensor* p : params) {
        write_pod<uint32_t>(f, uint32_t(p->shape.size()));
        for (int d : p->shape) write_pod<uint32_t>(f, uint32_t(d));
        for (double v : p->value) write_pod<double>(f, v);
    }
    if (!f) throw Error(Error::Code::Io, "save_checkpoint: write failed for " + path);
}

Predictor Predictor::load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(Error::Code::Io, "load_checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw Error(Error::Code::Io, "load_checkpoint: bad magic in " + path);
    const uint32_t version = read_pod<uint32_t>(f);
    if (version != 1) throw Error(Error::Code::Io, "load_checkpoint: unsupported version");
    PredictorDescriptor desc;
    desc.input_channels = int(read_pod<uint32_t>(f));
    desc.width_divisor = int(read_pod<uint32_t>(f));
    const uint32_t flags = read_pod<uint32_t>(f);
    desc.batch_norm = (flags & 1u) != 0;
    desc.constant_lambda = (flags & 2u) != 0;

    Predictor net(desc);
    auto params = net.parameters();
    const uint32_t count = read_pod<uint32_t>(f);
    if (count != params.size()) throw Error(Error::Code::Io, "load_checkpoint: tensor count mismatch");
    for (ParamTensor* p : params) {
        const uint32_t ndim = read_pod<uint32_t>(f);
        if (ndim != p->shape.size()) throw Error(Error::Code::Io, "load_checkpoint: rank mismatch");
        for (int d : p->shape)
            if (read_pod<uint32_t>(f) != uint32_t(d))
                throw Error(Error::Code::Io, "load_checkpoint: shape mismatch for " + p->name);
        for (double& v : p->value) v = read_pod<double>(f);
    }
    if (!f) throw Error(Error::Code::Io, "load_checkpoint: truncated file " + path);
    return net;
}

}  // namespace tdac
