#include "tdac/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

namespace fs = std::filesystem;

namespace tdac {

namespace {

cv::Mat read_png_8bit(const std::string& path) {
    if (!fs::exists(path)) throw Error(Error::Code::Io, "file not found: " + path);
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw Error(Error::Code::Io, "unreadable image: " + path);
    if (m.depth() != CV_8U)
        throw Error(Error::Code::Io, "unsupported bit depth (want 8-bit): " + path);
    return m;
}

double uniform01(std::mt19937_64& rng) { return std::ldexp(double(rng() >> 11), -53); }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Box-Muller; keeps synthetic data bit-identical across standard libraries.
double normal(std::mt19937_64& rng) {
    double u1;
    do {
        u1 = uniform01(rng);
    } while (u1 <= 0.0);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

Image load_image(const std::string& path) {
    cv::Mat m = read_png_8bit(path);
    if (m.channels() != 1 && m.channels() != 3)
        throw Error(Error::Code::Io, "unsupported channel count: " + path);
    Image img(m.cols, m.rows, m.channels());
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
            if (m.channels() == 1) {
                img.at(y, x) = m.at<uint8_t>(y, x) / 255.0;
            } else {
                const cv::Vec3b px = m.at<cv::Vec3b>(y, x);  // BGR
                img.at(y, x, 0) = px[2] / 255.0;
                img.at(y, x, 1) = px[1] / 255.0;
                img.at(y, x, 2) = px[0] / 255.0;
            }
        }
    return img;
}

Mask load_mask(const std::string& path) {
    cv::Mat m = read_png_8bit(path);
    if (m.channels() != 1) throw Error(Error::Code::Io, "mask must be grayscale: " + path);
    Mask mask(m.cols, m.rows);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) mask.at(y, x) = m.at<uint8_t>(y, x) >= 128 ? 1 : 0;
    return mask;
}

void save_image(const std::string& path, const Image& img) {
    cv::Mat m(img.height, img.width, img.channels == 1 ? CV_8UC1 : CV_8UC3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            auto q = [&](double v) {
                return uint8_t(std::clamp(std::lround(v * 255.0), 0l, 255l));
            };
            if (img.channels == 1)
                m.at<uint8_t>(y, x) = q(img.at(y, x));
            else
                m.at<cv::Vec3b>(y, x) = {q(img.at(y, x, 2)), q(img.at(y, x, 1)), q(img.at(y, x, 0))};
        }
    if (!cv::imwrite(path, m)) throw Error(Error::Code::Io, "cannot write " + path);
}

void save_mask(const std::string& path, const Mask& mask) {
    cv::Mat m(mask.height, mask.width, CV_8UC1);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) m.at<uint8_t>(y, x) = mask.at(y, x) ? 255 : 0;
    if (!cv::imwrite(path, m)) throw Error(Error::Code::Io, "cannot write " + path);
}

void save_field_normalized(const std::string& path, const Field& field) {
    double lo = field.data[0], hi = field.data[0];
    for (double v : field.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi - lo > 0 ? hi - lo : 1.0;
    Image img(field.width, field.height, 1);
    for (size_t i = 0; i < field.size(); ++i) img.data[i] = (field.data[i] - lo) / span;
    save_image(path, img);
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(Error::Code::Io, "cannot open manifest: " + path);
    const fs::path root = fs::path(path).parent_path();
    std::vector<ManifestEntry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        ManifestEntry e;
        std::string img, msk;
        if (!std::getline(ss, e.split, ',') || !std::getline(ss, img, ',') || !std::getline(ss, msk))
            throw Error(Error::Code::Io,
                        "manifest parse error at line " + std::to_string(lineno) + " of " + path);
        e.split = trim(e.split);
        if (e.split != "train" && e.split != "test")
            throw Error(Error::Code::Io, "manifest: unknown split '" + e.split + "' at line " +
                                             std::to_string(lineno));
        e.image_path = (root / trim(img)).string();
        e.mask_path = (root / trim(msk)).string();
        entries.push_back(std::move(e));
    }
    return entries;
}

Dataset load_split(const std::string& manifest_path, const std::string& split) {
    Dataset out;
    for (const ManifestEntry& e : read_manifest(manifest_path)) {
        if (e.split != split) continue;
        Sample s;
        s.id = fs::path(e.image_path).stem().string();
        s.image = load_image(e.image_path);
        s.mask = load_mask(e.mask_path);
        if (s.image.width != s.mask.width || s.image.height != s.mask.height)
            throw Error(Error::Code::BadDimensions,
                        "image/mask dimension mismatch for " + e.image_path);
        out.push_back(std::move(s));
    }
    return out;
}

SyntheticStyle parse_style(const std::string& name) {
    if (name == "disks") return SyntheticStyle::Disks;
    if (name == "rects") return SyntheticStyle::Rects;
    if (name == "huts") return SyntheticStyle::Huts;
    throw Error(Error::Code::BadValue, "unknown synthetic style: " + name);
}

Dataset generate_synthetic(const SyntheticConfig& cfg) {
    if (cfg.size % 8 != 0)
        throw Error(Error::Code::BadValue, "generate_synthetic: size must be divisible by 8");
    if (cfg.count < 1) throw Error(Error::Code::BadValue, "generate_synthetic: count must be >= 1");

    std::mt19937_64 rng(cfg.seed);
    const int n = cfg.size;
    Dataset out;
    out.reserve(cfg.count);

    for (int k = 0; k < cfg.count; ++k) {
        Image img(n, n, 1);
        Mask mask(n, n, 0);
        const bool huts = cfg.style == SyntheticStyle::Huts;
        const double bg = huts ? uniform(rng, 0.3, 0.5) : uniform(rng, 0.15, 0.4);
        for (double& v : img.data) v = bg;

        const int shapes = 1 + int(rng() % 4);
        int placed = 0;
        for (int s = 0; s < shapes; ++s) {
            bool ok = false;
            for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
                const double delta = huts ? 0.15 + uniform(rng, -0.01, 0.01)
                                          : uniform(rng, 0.25, 0.5);
                if (cfg.style == SyntheticStyle::Disks) {
                    const int r = int(uniform(rng, n / 10.0, n / 5.0));
                    const int cx = 2 + r + int(rng() % std::max(1, n - 2 * (r + 2)));
                    const int cy = 2 + r + int(rng() % std::max(1, n - 2 * (r + 2)));
                    bool clear = true;
                    for (int y = std::max(0, cy - r - 2); y <= std::min(n - 1, cy + r + 2) && clear; ++y)
                        for (int x = std::max(0, cx - r - 2); x <= std::min(n - 1, cx + r + 2); ++x)
                            if (mask.at(y, x)) {
                                clear = false;
                                break;
                            }
                    if (!clear) continue;
                    for (int y = cy - r; y <= cy + r; ++y)
                        for (int x = cx - r; x <= cx + r; ++x)
                            if (double(x - cx) * (x - cx) + double(y - cy) * (y - cy) <= double(r) * r) {
                                mask.at(y, x) = 1;
                                img.at(y, x) = bg + delta;
                            }
                } else {
                    const int lo = huts ? n / 10 : n / 8;
                    const int hi = huts ? n / 5 : n / 3;
                    const int w = lo + int(rng() % std::max(1, hi - lo));
                    const int h = lo + int(rng() % std::max(1, hi - lo));
                    const int x0 = 1 + int(rng() % std::max(1, n - w - 2));
                    const int y0 = 1 + int(rng() % std::max(1, n - h - 2));
                    bool clear = true;
                    for (int y = std::max(0, y0 - 2); y < std::min(n, y0 + h + 2) && clear; ++y)
                        for (int x = std::max(0, x0 - 2); x < std::min(n, x0 + w + 2); ++x)
                            if (mask.at(y, x)) {
                                clear = false;
                                break;
                            }
                    if (!clear) continue;
                    for (int y = y0; y < y0 + h; ++y)
                        for (int x = x0; x < x0 + w; ++x) {
                            mask.at(y, x) = 1;
                            img.at(y, x) = bg + delta;
                        }
                }
                ok = true;
                ++placed;
            }
        }
        if (placed == 0)
            throw Error(Error::Code::BadValue, "generate_synthetic: shape placement retry limit exceeded");

        const double sigma = huts ? 0.05 : 0.02;
        for (double& v : img.data) v = std::clamp(v + sigma * normal(rng), 0.0, 1.0);

        Sample sample;
        char id[16];
        std::snprintf(id, sizeof(id), "%04d", k);
        sample.id = id;
        sample.image = std::move(img);
        sample.mask = std::move(mask);
        out.push_back(std::move(sample));
    }
    return out;
}

std::string write_synthetic(const SyntheticConfig& cfg, const std::string& out_dir,
                            double train_fraction) {
    Dataset data = generate_synthetic(cfg);
    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "masks");
    const std::string manifest_path = (fs::path(out_dir) / "manifest.csv").string();
    std::ofstream manifest(manifest_path);
    if (!manifest) throw Error(Error::Code::Io, "cannot write " + manifest_path);
    manifest << "# split,image,mask\n";
    const size_t train_count = size_t(std::llround(train_fraction * double(data.size())));
    for (size_t i = 0; i < data.size(); ++i) {
        const std::string img_rel = "images/" + data[i].id + ".png";
        const std::string msk_rel = "masks/" + data[i].id + ".png";
        save_image((fs::path(out_dir) / img_rel).string(), data[i].image);
        save_mask((fs::path(out_dir) / msk_rel).string(), data[i].mask);
        manifest << (i < train_count ? "train" : "test") << "," << img_rel << "," << msk_rel << "\n";
    }
    return manifest_path;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(Error::Code::Io, "cannot open config: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(Error::Code::Io, "config parse error (want key=value) at line " +
                                             std::to_string(lineno) + " of " + path);
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

void apply_config(TrainConfig& cfg, const std::map<std::string, std::string>& kv) {
    for (const auto& [key, value] : kv) {
        try {
            if (key == "alpha0") cfg.alpha0 = std::stod(value);
            else if (key == "epochs") cfg.epochs = std::stoi(value);
            else if (key == "batch_size") cfg.batch_size = std::stoi(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "width_divisor") cfg.width_divisor = std::stoi(value);
            else if (key == "constant_lambda") cfg.constant_lambda = value == "1" || value == "true";
            else if (key == "batch_norm") cfg.batch_norm = value == "1" || value == "true";
            else if (key == "augment_flips") cfg.augment_flips = value == "1" || value == "true";
            else if (key == "eval_interval") cfg.eval_interval = std::stoi(value);
            else if (key == "early_stop_patience") cfg.early_stop_patience = std::stoi(value);
            else if (key == "grad_clip") cfg.grad_clip = std::stod(value);
            else if (key == "mu") cfg.evolution.mu = std::stod(value);
            else if (key == "epsilon") cfg.evolution.epsilon = std::stod(value);
            else if (key == "dt") cfg.evolution.dt = std::stod(value);
            else if (key == "steps") cfg.evolution.steps = std::stoi(value);
            else if (key == "window") cfg.evolution.window = std::stoi(value);
            else if (key == "eta") cfg.evolution.eta = std::stod(value);
            else if (key == "nu") cfg.evolution.nu = std::stod(value);
            else if (key == "double_dirac") cfg.evolution.double_dirac = value == "1" || value == "true";
            else throw Error(Error::Code::BadValue, "unknown config key: " + key);
        } catch (const std::invalid_argument&) {
            throw Error(Error::Code::BadValue, "bad value for config key " + key + ": " + value);
        }
    }
}

std::vector<SweepRow> run_sweep(const SweepSpec& spec, const Dataset& train_set,
                                const Dataset& test_set) {
    if (spec.values.empty()) throw Error(Error::Code::BadValue, "run_sweep: empty value list");
    if (spec.variable != "filter_size" && spec.variable != "iterations")
        throw Error(Error::Code::BadValue, "run_sweep: unknown variable " + spec.variable);

    std::vector<SweepRow> rows;
    for (int value : spec.values) {
        TrainConfig cfg = spec.base;
        if (spec.variable == "filter_size")
            cfg.evolution.window = value;
        else
            cfg.evolution.steps = value;
        Predictor net = make_predictor(cfg, train_set.front().image.channels);
        train(train_set, Dataset{}, cfg, net);
        EvalResult ev = evaluate(test_set, net, cfg.evolution);
        rows.push_back({value, ev.aggregate.miou});
    }
    return rows;
}

std::string sweep_csv(const std::string& variable, const std::vector<SweepRow>& rows) {
    std::string out = variable + ",miou\n";
    for (const SweepRow& r : rows) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%d,%.9g\n", r.value, r.miou);
        out += buf;
    }
    return out;
}

}  // namespace tdac
