#pragma once

#include "qrlab/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace qrlab {

enum class Split { Train, Val, Test };

struct Dataset {
    Tensor features;              // N x d
    std::vector<int> labels;      // class ids, in [0, classes)
    int classes = 2;
    Split split = Split::Train;

    int64_t size() const { return features.shape[0]; }
    int64_t dim() const { return features.shape[1]; }

    Tensor example(int64_t i) const;
    Tensor batch_features(const std::vector<int64_t>& ids) const;
    Tensor batch_onehot(const std::vector<int64_t>& ids) const;
};

// Splits a dataset into train/val/test by the given fractions (test gets the
// remainder). Order is preserved; shuffle before calling if needed.
struct DatasetSplits {
    Dataset train, val, test;
};
DatasetSplits split_dataset(const Dataset& d, double train_frac, double val_frac);

// Two interleaved half-circles, balanced classes, deterministic per seed.
Dataset gen_two_moons(int64_t n, double noise_sd, uint64_t seed);

// Two interleaved spiral arms with `turns` revolutions.
Dataset gen_spirals(int64_t n, double turns, double noise_sd, uint64_t seed);

// IDX ingestion (big-endian magic 0x00000803 images / 0x00000801 labels).
// Pixels are scaled to [0, 1]. subset_size 0 means all examples.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 int64_t subset_size);

void save_dataset_csv(const std::string& path, const Dataset& d);
Dataset load_dataset_csv(const std::string& path);

}  // namespace qrlab
