#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fitq/tensor.hpp"

namespace fitq {

struct Dataset {
    Tensor inputs;                 // [N, C, H, W]
    std::vector<int64_t> labels;   // in [0, num_classes)
    int64_t num_classes = 0;
    std::string split;             // "train" or "test"

    int64_t size() const { return inputs.rank() == 4 ? inputs.dim(0) : 0; }
    Tensor example(int64_t i) const;
    Tensor batch(const std::vector<int64_t>& indices) const;
    std::vector<int64_t> batch_labels(const std::vector<int64_t>& indices) const;
    void validate() const;
};

// Class-conditional geometric templates plus Gaussian pixel noise and a small
// random shift. Classes are assigned round-robin, so counts are exactly
// balanced whenever num_samples divides evenly.
Dataset make_synthetic_digits(int64_t num_samples, int64_t num_classes, int64_t image_size, uint64_t seed,
                              std::string split = "train", double noise_stddev = 0.2);

// Disjoint train/test pair drawn from independent substreams of `seed`.
std::pair<Dataset, Dataset> make_synthetic_split(int64_t n_train, int64_t n_test, int64_t num_classes,
                                                 int64_t image_size, uint64_t seed, double noise_stddev = 0.2);

// IDX-format loaders (the MNIST container format). Pixels scaled to [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::string split,
                 int64_t limit = -1);

}  // namespace fitq
