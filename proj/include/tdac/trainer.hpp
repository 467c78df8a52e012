#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdac/evolution.hpp"
#include "tdac/metrics.hpp"
#include "tdac/predictor.hpp"

namespace tdac {

struct Sample {
    std::string id;
    Image image;
    Mask mask;
};

using Dataset = std::vector<Sample>;

struct TrainConfig {
    double alpha0 = 0.001;  // initial learning rate
    int epochs = 200;
    int batch_size = 2;
    uint64_t seed = 1;
    EvolutionConfig evolution;
    int width_divisor = 4;
    bool constant_lambda = false;
    bool batch_norm = true;
    bool augment_flips = true;
    int eval_interval = 10;     // validation cadence, epochs
    int early_stop_patience = 0;  // 0 disables early stopping
    // Per-sample L2 cap on the joint contour-branch gradient (d_phi0 and the
    // lambda maps together). The unrolled evolution can amplify its adjoint by
    // orders of magnitude, drowning the direct prediction branch; clipping
    // keeps both branches trainable. 0 disables.
    double grad_clip = 0.05;

    void validate() const {
        if (alpha0 <= 0) throw Error(Error::Code::BadValue, "TrainConfig: alpha0 must be > 0");
        if (epochs < 1) throw Error(Error::Code::BadValue, "TrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw Error(Error::Code::BadValue, "TrainConfig: batch size must be >= 1");
        if (grad_clip < 0) throw Error(Error::Code::BadValue, "TrainConfig: grad_clip must be >= 0");
        evolution.validate();
    }
};

/// Polynomial decay: alpha = alpha0 * (1 - e/N_e)^0.9.
double lr_schedule(double alpha0, int epoch, int total_epochs);

/// Standard bias-corrected Adam over the predictor's trainable parameters.
class AdamOptimizer {
public:
    AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    /// Applies one update from the accumulated gradients. Throws on a
    /// non-finite gradient, naming the parameter.
    void step(std::vector<ParamTensor*>& params, double lr);

    int64_t steps_taken() const { return step_count_; }

private:
    double beta1_, beta2_, eps_;
    int64_t step_count_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_miou = 0.0;
    double val_boundf = 0.0;
    bool has_val = false;
};

struct TrainResult {
    std::vector<EpochLog> log;
};

struct PerImageMetrics {
    std::string id;
    MetricsReport metrics;
};

struct EvalResult {
    std::vector<PerImageMetrics> per_image;
    MetricsReport aggregate;  // means over images
};

/// End-to-end training loop: predictor forward, contour evolution, combined
/// loss, full backward through both, Adam update with polynomial decay.
/// Deterministic for a fixed seed (single worker). `net` must match the
/// config's descriptor knobs; use make_predictor to construct it.
TrainResult train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  Predictor& net);

Predictor make_predictor(const TrainConfig& cfg, int input_channels);

/// Runs predictor + evolution per image, thresholds phi_L > 0, and computes
/// all four metrics per image plus their means.
EvalResult evaluate(const Dataset& dataset, Predictor& net, const EvolutionConfig& cfg);

/// Serializes an EvalResult as CSV: one row per image plus an aggregate row.
std::string eval_csv(const EvalResult& result);

/// Serializes a training log as CSV (epoch, lr, train_loss, val_miou, val_boundf).
std::string train_log_csv(const TrainResult& result);

}  // namespace tdac
