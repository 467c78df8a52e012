#include "tdac/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "tdac/diff_engine.hpp"
#include "tdac/losses.hpp"

namespace tdac {

double lr_schedule(double alpha0, int epoch, int total_epochs) {
    if (epoch < 0 || epoch > total_epochs)
        throw Error(Error::Code::BadValue, "lr_schedule: epoch out of range");
    return alpha0 * std::pow(1.0 - double(epoch) / double(total_epochs), 0.9);
}

AdamOptimizer::AdamOptimizer(double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamOptimizer::step(std::vector<ParamTensor*>& params, double lr) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i]->count(), 0.0);
            v_[i].assign(params[i]->count(), 0.0);
        }
    }
    if (m_.size() != params.size())
        throw Error(Error::Code::BadValue, "AdamOptimizer: parameter set changed");

    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, double(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, double(step_count_));
    for (size_t i = 0; i < params.size(); ++i) {
        ParamTensor& p = *params[i];
        if (!p.trainable) continue;
        for (size_t j = 0; j < p.count(); ++j) {
            const double g = p.grad[j];
            if (!std::isfinite(g))
                throw Error(Error::Code::NonFinite, "AdamOptimizer: non-finite gradient in " + p.name);
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
            v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            p.value[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

namespace {

Image flip_image(const Image& img, bool horizontal, bool vertical) {
    Image out(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                out.at(y, x, c) = img.at(vertical ? img.height - 1 - y : y,
                                         horizontal ? img.width - 1 - x : x, c);
    return out;
}

Mask flip_mask(const Mask& m, bool horizontal, bool vertical) {
    Mask out(m.width, m.height);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            out.at(y, x) = m.at(vertical ? m.height - 1 - y : y, horizontal ? m.width - 1 - x : x);
    return out;
}

// Fisher-Yates with the raw engine; std::shuffle's draw pattern is not
// pinned by the standard, this one is.
void shuffle_indices(std::vector<size_t>& idx, std::mt19937_64& rng) {
    for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

Predictor make_predictor(const TrainConfig& cfg, int input_channels) {
    PredictorDescriptor desc;
    desc.input_channels = input_channels;
    desc.width_divisor = cfg.width_divisor;
    desc.batch_norm = cfg.batch_norm;
    desc.constant_lambda = cfg.constant_lambda;
    Predictor net(desc);
    net.init_params(cfg.seed);
    return net;
}

TrainResult train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  Predictor& net) {
    cfg.validate();
    if (train_set.empty()) throw Error(Error::Code::BadValue, "train: empty training set");

    std::mt19937_64 rng(cfg.seed);
    AdamOptimizer adam;
    auto params = net.parameters();

    TrainResult result;
    double best_val = -1.0;
    int since_best = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_schedule(cfg.alpha0, epoch, cfg.epochs);
        std::vector<size_t> order(train_set.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_indices(order, rng);

        double epoch_loss = 0.0;
        size_t seen = 0;
        for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + size_t(cfg.batch_size));
            const size_t b = end - start;

            std::vector<Image> images;
            std::vector<Mask> masks;
            images.reserve(b);
            masks.reserve(b);
            for (size_t i = start; i < end; ++i) {
                const Sample& s = train_set[order[i]];
                bool fh = false, fv = false;
                if (cfg.augment_flips) {
                    fh = (rng() & 1) != 0;
                    fv = (rng() & 1) != 0;
                }
                images.push_back(flip_image(s.image, fh, fv));
                masks.push_back(flip_mask(s.mask, fh, fv));
            }

            std::vector<PredictorOutput> outs;
            std::vector<PredictorGrad> grads(b);
            try {
                outs = net.forward(images, RunMode::Train);
                for (size_t i = 0; i < b; ++i) {
                    const Field intensity = luminance(images[i]);
                    ParameterMaps maps{outs[i].lambda1, outs[i].lambda2};
                    EvolutionTrace trace = evolve(outs[i].phi0, intensity, maps, cfg.evolution);
                    Field d_phi_final, d_p;
                    const double loss = total_loss(trace.steps.back(), outs[i].p, masks[i],
                                                   cfg.evolution.epsilon, &d_phi_final, &d_p);
                    epoch_loss += loss;
                    GradientBundle bundle = backprop_evolution(trace, intensity, maps, d_phi_final);
                    // Clip the contour-branch adjoint (see TrainConfig::grad_clip).
                    double clip_scale = 1.0;
                    if (cfg.grad_clip > 0.0) {
                        double n2 = 0.0;
                        for (double v : bundle.d_phi0.data) n2 += v * v;
                        for (double v : bundle.d_lambda1.data) n2 += v * v;
                        for (double v : bundle.d_lambda2.data) n2 += v * v;
                        const double norm = std::sqrt(n2);
                        if (norm > cfg.grad_clip) clip_scale = cfg.grad_clip / norm;
                    }
                    // Minibatch gradient = mean over samples.
                    const double scale = 1.0 / double(b);
                    auto scaled = [&](Field f) {
                        for (double& v : f.data) v *= scale;
                        return f;
                    };
                    auto clipped = [&](Field f) {
                        for (double& v : f.data) v *= scale * clip_scale;
                        return f;
                    };
                    grads[i].d_lambda1 = clipped(std::move(bundle.d_lambda1));
                    grads[i].d_lambda2 = clipped(std::move(bundle.d_lambda2));
                    grads[i].d_phi0 = clipped(std::move(bundle.d_phi0));
                    grads[i].d_p = scaled(std::move(d_p));
                }
            } catch (const Error& e) {
                throw Error(e.code(), "train: sample '" + train_set[order[start]].id +
                                          "' batch at epoch " + std::to_string(epoch) + ": " + e.what());
            }
            seen += b;
            net.zero_grad();
            net.backward(grads);
            adam.step(params, lr);
        }

        EpochLog log;
        log.epoch = epoch;
        log.lr = lr;
        log.train_loss = epoch_loss / double(seen);
        const bool last = epoch == cfg.epochs - 1;
        if (!val_set.empty() && (last || (epoch % std::max(1, cfg.eval_interval)) == 0)) {
            EvalResult ev = evaluate(val_set, net, cfg.evolution);
            log.val_miou = ev.aggregate.miou;
            log.val_boundf = ev.aggregate.boundf;
            log.has_val = true;
            if (cfg.early_stop_patience > 0) {
                if (log.val_miou > best_val + 1e-6) {
                    best_val = log.val_miou;
                    since_best = 0;
                } else if (++since_best >= cfg.early_stop_patience) {
                    result.log.push_back(log);
                    break;
                }
            }
        }
        result.log.push_back(log);
    }
    return result;
}

EvalResult evaluate(const Dataset& dataset, Predictor& net, const EvolutionConfig& cfg) {
    if (dataset.empty()) throw Error(Error::Code::BadValue, "evaluate: empty dataset");
    EvalResult result;
    result.per_image.reserve(dataset.size());
    for (const Sample& s : dataset) {
        std::vector<PredictorOutput> outs = net.forward({s.image}, RunMode::Eval);
        const Field intensity = luminance(s.image);
        ParameterMaps maps{outs[0].lambda1, outs[0].lambda2};
        Field phi_final = evolve_last(outs[0].phi0, intensity, maps, cfg);
        Mask pred = threshold_phi(phi_final);

        PerImageMetrics pm;
        pm.id = s.id;
        pm.metrics.dice = dice_score(pred, s.mask);
        pm.metrics.miou = iou_score(pred, s.mask);
        pm.metrics.wcov = wcov_score(pred, s.mask);
        pm.metrics.boundf = boundf_score(pred, s.mask);
        result.aggregate.dice += pm.metrics.dice;
        result.aggregate.miou += pm.metrics.miou;
        result.aggregate.wcov += pm.metrics.wcov;
        result.aggregate.boundf += pm.metrics.boundf;
        result.per_image.push_back(std::move(pm));
    }
    const double n = double(result.per_image.size());
    result.aggregate.dice /= n;
    result.aggregate.miou /= n;
    result.aggregate.wcov /= n;
    result.aggregate.boundf /= n;
    return result;
}

std::string eval_csv(const EvalResult& result) {
    std::string out = "image_id,dice,miou,wcov,boundf\n";
    for (const PerImageMetrics& pm : result.per_image) {
        out += pm.id + "," + fmt_double(pm.metrics.dice) + "," + fmt_double(pm.metrics.miou) + "," +
               fmt_double(pm.metrics.wcov) + "," + fmt_double(pm.metrics.boundf) + "\n";
    }
    out += "aggregate," + fmt_double(result.aggregate.dice) + "," + fmt_double(result.aggregate.miou) +
           "," + fmt_double(result.aggregate.wcov) + "," + fmt_double(result.aggregate.boundf) + "\n";
    return out;
}

std::string train_log_csv(const TrainResult& result) {
    std::string out = "epoch,lr,train_loss,val_miou,val_boundf\n";
    for (const EpochLog& l : result.log) {
        out += std::to_string(l.epoch) + "," + fmt_double(l.lr) + "," + fmt_double(l.train_loss) + ",";
        if (l.has_val)
            out += fmt_double(l.val_miou) + "," + fmt_double(l.val_boundf);
        else
            out += ",";
        out += "\n";
    }
    return out;
}

}  // namespace tdac
