#pragma once

#include "fitq/train.hpp"

namespace fitq {

struct Ranges {
    std::map<std::string, Range> weight;  // per quantizable block, exact min/max
    std::map<std::string, Range> act;     // per activation site, EMA-calibrated
    double ema_decay = 0.9;
};

// Weight ranges are exact extrema per block; activation ranges are EMA of
// per-batch extrema over one pass in dataset order.
Ranges track_ranges(const Model& model, const Dataset& calibration, int64_t batch_size = 32, double ema_decay = 0.9);

struct QatResult {
    Model model;
    std::vector<double> epoch_loss;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    Ranges final_ranges;
};

// Fake-quantized fine-tuning from a full-precision checkpoint. Activation
// ranges start from `calibrated` and keep EMA-updating during training;
// weight ranges are recomputed from the live weights every step.
QatResult qat_finetune(const Model& fp_model, const BitConfig& bits, const Dataset& train_data,
                       const Dataset& test_data, const TrainConfig& cfg, const Ranges& calibrated);

}  // namespace fitq
