// tdac command-line tool: synthetic data generation, training, single-image
// segmentation, dataset evaluation, ablation sweeps, and gradient checking.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error (I/O, bad data,
// numerical failure, or a failed gradient check).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tdac/dataset_io.hpp"
#include "tdac/diff_engine.hpp"
#include "tdac/losses.hpp"

namespace fs = std::filesystem;
using namespace tdac;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw Error(Error::Code::Io, "cannot write " + path);
    f << text;
}

struct EvolutionFlags {
    CLI::Option *mu, *epsilon, *dt, *steps, *window, *eta, *nu, *double_dirac;
    double mu_v = 0.2, epsilon_v = 1.0, dt_v = 0.1, eta_v = 1e-8, nu_v = 0.1;
    int steps_v = 60, window_v = 5;
    bool double_dirac_v = false;

    void add(CLI::App* cmd) {
        mu = cmd->add_option("--mu", mu_v, "Length-penalty weight");
        epsilon = cmd->add_option("--epsilon", epsilon_v, "Heaviside smoothing width");
        dt = cmd->add_option("--dt", dt_v, "Euler time step");
        steps = cmd->add_option("--steps", steps_v, "Number of evolution steps L");
        window = cmd->add_option("--window", window_v, "Local-statistics window half-width f");
        eta = cmd->add_option("--eta", eta_v, "Numerical floor");
        nu = cmd->add_option("--nu", nu_v, "Distance-regularization weight");
        double_dirac = cmd->add_flag("--double-dirac", double_dirac_v,
                                     "Apply the Dirac factor to the data term twice");
    }

    // Overrides cfg only with flags the user actually passed, so config-file
    // values survive unless explicitly overridden.
    void apply(EvolutionConfig& cfg) const {
        if (mu->count()) cfg.mu = mu_v;
        if (epsilon->count()) cfg.epsilon = epsilon_v;
        if (dt->count()) cfg.dt = dt_v;
        if (steps->count()) cfg.steps = steps_v;
        if (window->count()) cfg.window = window_v;
        if (eta->count()) cfg.eta = eta_v;
        if (nu->count()) cfg.nu = nu_v;
        if (double_dirac->count()) cfg.double_dirac = double_dirac_v;
    }
};

struct TrainFlags {
    EvolutionFlags evo;
    CLI::Option *alpha0, *epochs, *batch_size, *seed, *width_divisor, *constant_lambda,
        *no_batch_norm, *no_augment, *eval_interval, *early_stop, *grad_clip, *config;
    double alpha0_v = 0.001, grad_clip_v = 0.05;
    int epochs_v = 200, batch_size_v = 2, width_divisor_v = 4, eval_interval_v = 10,
        early_stop_v = 0;
    uint64_t seed_v = 1;
    bool constant_lambda_v = false, no_batch_norm_v = false, no_augment_v = false;
    std::string config_path;

    void add(CLI::App* cmd) {
        config = cmd->add_option("--config", config_path,
                                 "key=value config file (flags override file values)");
        alpha0 = cmd->add_option("--alpha0", alpha0_v, "Initial learning rate");
        epochs = cmd->add_option("--epochs", epochs_v, "Training epochs N_e");
        batch_size = cmd->add_option("--batch-size", batch_size_v, "Minibatch size");
        seed = cmd->add_option("--seed", seed_v, "RNG seed (init, shuffling, augmentation)");
        width_divisor = cmd->add_option("--width-divisor", width_divisor_v,
                                        "Backbone channel-width divisor");
        constant_lambda = cmd->add_flag("--constant-lambda", constant_lambda_v,
                                        "Two trainable scalars instead of lambda maps");
        no_batch_norm = cmd->add_flag("--no-batch-norm", no_batch_norm_v,
                                      "Disable batch normalization");
        no_augment = cmd->add_flag("--no-augment", no_augment_v, "Disable flip augmentation");
        eval_interval = cmd->add_option("--eval-interval", eval_interval_v,
                                        "Validation cadence in epochs");
        early_stop = cmd->add_option("--early-stop", early_stop_v,
                                     "Early-stopping patience in validations (0 = off)");
        grad_clip = cmd->add_option("--grad-clip", grad_clip_v,
                                    "Per-sample L2 cap on the contour-branch gradient (0 = off)");
        evo.add(cmd);
    }

    TrainConfig build() const {
        TrainConfig cfg;
        if (config->count()) apply_config(cfg, read_config_file(config_path));
        if (alpha0->count()) cfg.alpha0 = alpha0_v;
        if (epochs->count()) cfg.epochs = epochs_v;
        if (batch_size->count()) cfg.batch_size = batch_size_v;
        if (seed->count()) cfg.seed = seed_v;
        if (width_divisor->count()) cfg.width_divisor = width_divisor_v;
        if (constant_lambda->count()) cfg.constant_lambda = constant_lambda_v;
        if (no_batch_norm->count()) cfg.batch_norm = !no_batch_norm_v;
        if (no_augment->count()) cfg.augment_flips = !no_augment_v;
        if (eval_interval->count()) cfg.eval_interval = eval_interval_v;
        if (early_stop->count()) cfg.early_stop_patience = early_stop_v;
        if (grad_clip->count()) cfg.grad_clip = grad_clip_v;
        evo.apply(cfg.evolution);
        cfg.validate();
        return cfg;
    }
};

int run(int argc, char** argv) {
    CLI::App app{"Trainable deep active contours: level-set segmentation with a "
                 "learned initialization and per-pixel parameter maps"};
    app.require_subcommand(1);

    // --- synth ---
    auto* synth = app.add_subcommand("synth", "Generate a synthetic PNG dataset + manifest");
    std::string synth_out, synth_style = "rects";
    int synth_count = 200, synth_size = 64;
    uint64_t synth_seed = 1;
    double synth_train_fraction = 0.75;
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--count", synth_count, "Number of images");
    synth->add_option("--size", synth_size, "Image side length (divisible by 8)");
    synth->add_option("--seed", synth_seed, "RNG seed");
    synth->add_option("--style", synth_style, "disks | rects | huts");
    synth->add_option("--train-fraction", synth_train_fraction, "Fraction written as train split");

    // --- train ---
    auto* train_cmd = app.add_subcommand("train", "Train end to end on a manifest dataset");
    std::string train_manifest, train_out;
    train_cmd->add_option("--manifest", train_manifest, "Dataset manifest CSV")->required();
    train_cmd->add_option("--out", train_out, "Output directory")->required();
    TrainFlags train_flags;
    train_flags.add(train_cmd);

    // --- segment ---
    auto* segment = app.add_subcommand(
        "segment", "Segment one image; writes mask.png, phi0.png, lambda1.png, lambda2.png");
    std::string seg_image, seg_ckpt, seg_out;
    segment->add_option("--image", seg_image, "Input PNG")->required();
    segment->add_option("--checkpoint", seg_ckpt, "Trained checkpoint")->required();
    segment->add_option("--out", seg_out, "Output directory")->required();
    EvolutionFlags seg_evo;
    seg_evo.add(segment);

    // --- eval ---
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
    std::string eval_manifest, eval_ckpt, eval_out, eval_split = "test";
    eval_cmd->add_option("--manifest", eval_manifest, "Dataset manifest CSV")->required();
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Trained checkpoint")->required();
    eval_cmd->add_option("--out", eval_out, "Output directory")->required();
    eval_cmd->add_option("--split", eval_split, "Manifest split to evaluate (train | test)");
    EvolutionFlags eval_evo;
    eval_evo.add(eval_cmd);

    // --- sweep ---
    auto* sweep = app.add_subcommand("sweep", "Train once per value of one evolution variable");
    std::string sweep_manifest, sweep_out, sweep_variable;
    std::vector<int> sweep_values;
    sweep->add_option("--manifest", sweep_manifest, "Dataset manifest CSV")->required();
    sweep->add_option("--out", sweep_out, "Output directory")->required();
    sweep->add_option("--variable", sweep_variable, "filter_size | iterations")->required();
    sweep->add_option("--values", sweep_values, "Values to sweep")->required()->delimiter(',');
    TrainFlags sweep_flags;
    sweep_flags.add(sweep);

    // --- gradcheck ---
    auto* gradcheck = app.add_subcommand(
        "gradcheck", "Finite-difference check of the evolution adjoints; exit 0 iff it passes");
    int gc_size = 16, gc_probes = 24;
    uint64_t gc_seed = 1;
    double gc_step = 1e-5, gc_tol = 1e-3;
    gradcheck->add_option("--size", gc_size, "Fixture side length");
    gradcheck->add_option("--probes", gc_probes, "Perturbed entries");
    gradcheck->add_option("--seed", gc_seed, "Fixture seed");
    gradcheck->add_option("--step", gc_step, "Finite-difference step");
    gradcheck->add_option("--tol", gc_tol, "Pass threshold on max relative error");
    EvolutionFlags gc_evo;
    gc_evo.add(gradcheck);
    gc_evo.steps_v = 5;
    gc_evo.window_v = 2;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints help or the parse error
        return e.get_exit_code() == 0 ? 0 : 1;
    }

    if (synth->parsed()) {
        SyntheticConfig cfg;
        cfg.count = synth_count;
        cfg.size = synth_size;
        cfg.seed = synth_seed;
        cfg.style = parse_style(synth_style);
        const std::string manifest = write_synthetic(cfg, synth_out, synth_train_fraction);
        std::printf("wrote %d images, manifest %s\n", cfg.count, manifest.c_str());
        return 0;
    }

    if (train_cmd->parsed()) {
        const TrainConfig cfg = train_flags.build();
        Dataset train_set = load_split(train_manifest, "train");
        Dataset val_set = load_split(train_manifest, "test");
        if (train_set.empty())
            throw Error(Error::Code::BadValue, "manifest has no train samples: " + train_manifest);
        Predictor net = make_predictor(cfg, train_set.front().image.channels);
        TrainResult result = train(train_set, val_set, cfg, net);
        fs::create_directories(train_out);
        const std::string ckpt = (fs::path(train_out) / "checkpoint.tdac").string();
        net.save_checkpoint(ckpt);
        write_text((fs::path(train_out) / "train_log.csv").string(), train_log_csv(result));
        const EpochLog& last = result.log.back();
        std::printf("trained %zu epochs, final loss %.6g", result.log.size(), last.train_loss);
        if (last.has_val) std::printf(", val mIoU %.6g", last.val_miou);
        std::printf("\ncheckpoint %s\n", ckpt.c_str());
        return 0;
    }

    if (segment->parsed()) {
        EvolutionConfig evo;
        seg_evo.apply(evo);
        evo.validate();
        Predictor net = Predictor::load_checkpoint(seg_ckpt);
        const Image image = load_image(seg_image);
        std::vector<PredictorOutput> outs = net.forward({image}, RunMode::Eval);
        const Field intensity = luminance(image);
        ParameterMaps maps{outs[0].lambda1, outs[0].lambda2};
        Field phi_final = evolve_last(outs[0].phi0, intensity, maps, evo);
        fs::create_directories(seg_out);
        save_mask((fs::path(seg_out) / "mask.png").string(), threshold_phi(phi_final));
        save_field_normalized((fs::path(seg_out) / "phi0.png").string(), outs[0].phi0);
        save_field_normalized((fs::path(seg_out) / "lambda1.png").string(), outs[0].lambda1);
        save_field_normalized((fs::path(seg_out) / "lambda2.png").string(), outs[0].lambda2);
        std::printf("wrote %s/mask.png (+ phi0, lambda1, lambda2)\n", seg_out.c_str());
        return 0;
    }

    if (eval_cmd->parsed()) {
        EvolutionConfig evo;
        eval_evo.apply(evo);
        evo.validate();
        Predictor net = Predictor::load_checkpoint(eval_ckpt);
        Dataset data = load_split(eval_manifest, eval_split);
        EvalResult result = evaluate(data, net, evo);
        fs::create_directories(eval_out);
        write_text((fs::path(eval_out) / "metrics.csv").string(), eval_csv(result));
        std::printf("%zu images: dice %.4f  miou %.4f  wcov %.4f  boundf %.4f\n",
                    result.per_image.size(), result.aggregate.dice, result.aggregate.miou,
                    result.aggregate.wcov, result.aggregate.boundf);
        return 0;
    }

    if (sweep->parsed()) {
        SweepSpec spec;
        spec.variable = sweep_variable;
        spec.values = sweep_values;
        spec.base = sweep_flags.build();
        Dataset train_set = load_split(sweep_manifest, "train");
        Dataset test_set = load_split(sweep_manifest, "test");
        if (train_set.empty() || test_set.empty())
            throw Error(Error::Code::BadValue, "sweep needs both train and test splits");
        std::vector<SweepRow> rows = run_sweep(spec, train_set, test_set);
        fs::create_directories(sweep_out);
        const std::string csv = sweep_csv(spec.variable, rows);
        write_text((fs::path(sweep_out) / "sweep.csv").string(), csv);
        std::fputs(csv.c_str(), stdout);
        return 0;
    }

    // gradcheck: random smooth fixture, disk-based phi0, near-unit lambda maps.
    EvolutionConfig evo;
    evo.steps = 5;
    evo.window = 2;
    gc_evo.apply(evo);
    evo.validate();

    std::mt19937_64 rng(gc_seed);
    auto uniform = [&](double lo, double hi) {
        return lo + (hi - lo) * std::ldexp(double(rng() >> 11), -53);
    };
    const int n = gc_size;
    Field intensity(n, n);
    for (double& v : intensity.data) v = uniform(0.0, 1.0);
    intensity = box_sum(intensity, 1);  // mild smoothing keeps the fixture image-like
    for (double& v : intensity.data) v /= 9.0;

    Mask disk(n, n, 0);
    const double cx = uniform(n * 0.35, n * 0.65), cy = uniform(n * 0.35, n * 0.65);
    const double r = uniform(n * 0.2, n * 0.3);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            disk.at(y, x) = (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r ? 1 : 0;
    Field phi0 = signed_distance_from_mask(disk);

    ParameterMaps maps{Field(n, n), Field(n, n)};
    for (size_t i = 0; i < maps.lambda1.size(); ++i) {
        maps.lambda1.data[i] = uniform(0.8, 1.2);
        maps.lambda2.data[i] = uniform(0.8, 1.2);
    }

    LossFn loss = [&](const Field& phi_final, Field* d_phi) {
        Field h = heaviside(phi_final, evo.epsilon);
        Field d_h;
        const double l = bce_dice_loss(h, disk, d_phi ? &d_h : nullptr);
        if (d_phi) {
            *d_phi = Field(n, n);
            for (size_t i = 0; i < d_h.size(); ++i)
                d_phi->data[i] = d_h.data[i] * dirac_scalar(phi_final.data[i], evo.epsilon);
        }
        return l;
    };
    FiniteDiffReport report =
        finite_diff_check(intensity, phi0, maps, evo, loss, gc_probes, gc_step, gc_seed);
    std::printf("max_rel_error %.6g (phi0 %.3g, lambda1 %.3g, lambda2 %.3g, %d probes)\n",
                report.max_rel_error, report.phi0_error, report.lambda1_error,
                report.lambda2_error, report.probes);
    if (report.max_rel_error < gc_tol) {
        std::printf("gradcheck PASS\n");
        return 0;
    }
    std::printf("gradcheck FAIL (tolerance %.3g)\n", gc_tol);
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const tdac::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
