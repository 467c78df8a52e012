#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tdac/field.hpp"

namespace tdac {

/// H×W×C activation tensor, row-major with channels innermost.
struct Tensor {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c), v(size_t(h) * w * c, fill) {}

    double& at(int y, int x, int c) { return v[(size_t(y) * width + x) * channels + c]; }
    double at(int y, int x, int c) const { return v[(size_t(y) * width + x) * channels + c]; }
    size_t size() const { return v.size(); }
};

using Batch = std::vector<Tensor>;

/// One learnable (or tracked) tensor with its gradient accumulator.
struct ParamTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool trainable = true;

    size_t count() const { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

/// Backbone shape knobs. Channel widths are the full-scale values (16, 32,
/// 64, 128) divided by width_divisor; topology is unchanged.
struct PredictorDescriptor {
    int input_channels = 1;
    int width_divisor = 4;
    bool batch_norm = true;
    bool constant_lambda = false;

    bool operator==(const PredictorDescriptor&) const = default;
};

/// Per-image outputs of the backbone.
struct PredictorOutput {
    Field lambda1_raw, lambda2_raw, phi0;
    Field lambda1, lambda2;  // softplus(raw) + 1e-4
    Field p;                 // sigmoid(phi0)
};

/// Upstream gradients fed to the backward pass. d_lambda1/d_lambda2 are with
/// respect to the positive (softplus-mapped) maps; d_phi0 is the adjoint
/// arriving through the contour evolution; d_p comes from the CNN loss branch.
struct PredictorGrad {
    Field d_lambda1, d_lambda2, d_phi0, d_p;
};

enum class RunMode { Train, Eval };

/// Encoder-decoder backbone: three pooled encoder stages with residual
/// blocks, three bridging residual blocks, a bilinear-upsampling decoder with
/// additive skip connections at every stage, and a 1x1 three-channel head.
/// Convolutions use 3x3 kernels, zero same-padding, conv -> ReLU -> BN order.
class Predictor {
public:
    explicit Predictor(const PredictorDescriptor& desc);
    ~Predictor();
    Predictor(Predictor&&) noexcept;
    Predictor& operator=(Predictor&&) noexcept;
    Predictor(const Predictor&) = delete;

    const PredictorDescriptor& descriptor() const;

    /// He fan-in initialization for conv kernels, zero biases, unit scales /
    /// zero shifts for normalization. Deterministic per seed.
    void init_params(uint64_t seed);

    /// Runs the backbone on a batch. Train mode normalizes with batch
    /// statistics (and updates running stats); eval mode uses running stats.
    /// Image dimensions must be divisible by 8.
    std::vector<PredictorOutput> forward(const std::vector<Image>& images, RunMode mode);

    /// Exact reverse-mode gradients for every parameter, accumulated into the
    /// parameter grad buffers. Requires the cache of a preceding train-mode
    /// forward on the same batch size; throws a stale-cache error otherwise.
    void backward(const std::vector<PredictorGrad>& grads);

    /// All parameters in declaration order (the checkpoint order).
    std::vector<ParamTensor*> parameters();
    void zero_grad();

    /// Constant-lambda scalars (raw, pre-softplus); only meaningful when
    /// descriptor().constant_lambda is set.
    double lambda_scalar_raw(int which) const;

    void save_checkpoint(const std::string& path) const;
    static Predictor load_checkpoint(const std::string& path);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace tdac
