#pragma once

#include <map>
#include <string>
#include <vector>

#include "tdac/trainer.hpp"

namespace tdac {

/// Loads an 8-bit grayscale or RGB PNG; intensities scaled to [0,1].
Image load_image(const std::string& path);

/// Loads an 8-bit grayscale PNG mask; binarized at 128.
Mask load_mask(const std::string& path);

void save_image(const std::string& path, const Image& img);
void save_mask(const std::string& path, const Mask& mask);

/// Writes a field as an 8-bit grayscale PNG after per-image min-max
/// normalization (used for the phi/lambda visualization panels).
void save_field_normalized(const std::string& path, const Field& field);

/// Dataset manifest: a UTF-8 text file with one `split,image,mask` line per
/// sample (paths relative to the manifest's directory, `#` comments allowed).
struct ManifestEntry {
    std::string split;  // "train" or "test"
    std::string image_path;
    std::string mask_path;
};

std::vector<ManifestEntry> read_manifest(const std::string& path);

/// Loads every referenced pair, verifying existence and matching dimensions.
Dataset load_split(const std::string& manifest_path, const std::string& split);

enum class SyntheticStyle { Disks, Rects, Huts };
SyntheticStyle parse_style(const std::string& name);

struct SyntheticConfig {
    int count = 100;
    int size = 64;
    uint64_t seed = 1;
    SyntheticStyle style = SyntheticStyle::Rects;
};

/// Generates an in-memory synthetic dataset: 1-4 non-overlapping shapes per
/// image with randomized contrast and additive Gaussian noise; exact masks.
/// Deterministic per seed (own Box-Muller over mt19937_64).
Dataset generate_synthetic(const SyntheticConfig& cfg);

/// Same, written to disk as PNG pairs plus a manifest.csv with the given
/// train fraction. Returns the manifest path.
std::string write_synthetic(const SyntheticConfig& cfg, const std::string& out_dir,
                            double train_fraction);

/// UTF-8 key=value configuration file (# comments, blank lines ignored).
std::map<std::string, std::string> read_config_file(const std::string& path);

/// Applies key=value pairs onto a TrainConfig; unknown keys throw.
void apply_config(TrainConfig& cfg, const std::map<std::string, std::string>& kv);

/// Sweep harness over a single variable of the evolution (Fig.-5-style).
struct SweepSpec {
    std::string variable;  // "filter_size" or "iterations"
    std::vector<int> values;
    TrainConfig base;
};

struct SweepRow {
    int value = 0;
    double miou = 0.0;
};

/// Trains and evaluates once per value; returns value -> test mIoU rows.
std::vector<SweepRow> run_sweep(const SweepSpec& spec, const Dataset& train_set,
                                const Dataset& test_set);

std::string sweep_csv(const std::string& variable, const std::vector<SweepRow>& rows);

}  // namespace tdac
