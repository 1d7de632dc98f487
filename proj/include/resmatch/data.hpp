#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "resmatch/tensor.hpp"

namespace resmatch {

// Per-channel normalization applied to a dataset; kept with the data so
// exports can de-normalize exactly.
struct Normalization {
    std::vector<float> mean;
    std::vector<float> stddev;
    bool identity() const;
    static Normalization identity_for(int channels);
};

struct LabeledDataset {
    Tensor images;  // [N,C,H,W], normalized, full32
    std::vector<int> labels;
    int num_classes = 0;
    std::string split;  // "train" or "test"
    Normalization norm;
    std::string source_id;

    int64_t size() const { return images.defined() && images.ndim() == 4 ? images.dim(0) : 0; }
    std::vector<int> class_indices(int cls) const;
    std::string digest() const;
};

struct DatasetPair {
    LabeledDataset train;
    LabeledDataset test;
};

Normalization compute_normalization(const Tensor& images);
void apply_normalization(Tensor& images, const Normalization& norm);

// ---------------------------------------------------------------------------
// Built-in synthetic dataset: procedurally drawn shape/color classes on
// cluttered backgrounds, 80/20 train/test split with seed-stable assignment.

struct SyntheticSpec {
    int num_classes = 8;
    int per_class = 200;
    int size = 32;
};

DatasetPair gen_synthetic(uint64_t seed, const SyntheticSpec& spec);

// ---------------------------------------------------------------------------
// CIFAR binary ingestion.

enum class CifarVariant { cifar10, cifar100 };

// One binary batch file as-is: pixels scaled to [0,1], fine labels for
// cifar100. No normalization applied.
struct CifarRaw {
    Tensor images;  // [N,3,32,32]
    std::vector<int> labels;
};
CifarRaw load_cifar_file(const std::filesystem::path& path, CifarVariant variant);

// Single-file convenience: loads, self-normalizes, tags as a train split.
LabeledDataset load_cifar(const std::filesystem::path& path, CifarVariant variant);

// Full assembly: train files define the normalization, the test file
// inherits it.
DatasetPair load_cifar(const std::vector<std::filesystem::path>& train_files,
                       const std::vector<std::filesystem::path>& test_files, CifarVariant variant);

// ---------------------------------------------------------------------------
// Dataset directory (manifest.json + one fdrt per split).

void save_dataset(const DatasetPair& data, const std::filesystem::path& dir);
DatasetPair load_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// PPM export of a single [C,H,W] image (C must be 3): de-normalize, clamp
// to [0,1], quantize to 8 bits, write binary P6.

void export_ppm(const Tensor& image, const Normalization& norm, const std::filesystem::path& path);
Tensor load_ppm(const std::filesystem::path& path);  // [3,H,W], values byte/255

// ---------------------------------------------------------------------------
// Augmentation primitives (operate on one [C,H,W] image).

Tensor random_crop_pad(const Tensor& image, int pad, std::mt19937_64& rng);
Tensor random_resized_crop(const Tensor& image, float min_scale, std::mt19937_64& rng);
Tensor hflip(const Tensor& image);

// Copy sample `src_index` of a [N,C,H,W] tensor into row `dst_index` of
// another; used by training loops to assemble (augmented) batches.
Tensor take_sample(const Tensor& images, int index);          // -> [C,H,W]
void put_sample(Tensor& batch, int row, const Tensor& image);  // [C,H,W] -> row

}  // namespace resmatch
