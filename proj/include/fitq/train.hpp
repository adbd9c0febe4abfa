#pragma once

#include "fitq/data.hpp"
#include "fitq/model.hpp"

namespace fitq {

enum class OptimizerKind { sgd, adam };
enum class ScheduleKind { constant, cosine };

struct TrainConfig {
    int64_t epochs = 50;
    double lr = 0.01;
    ScheduleKind schedule = ScheduleKind::cosine;
    int64_t batch_size = 32;
    uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::adam;

    void validate() const;
};

struct TrainResult {
    std::vector<double> epoch_loss;  // one entry per epoch
};

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

// Mutable QAT state threaded through the training loop: activation range
// trackers are EMA-updated from each batch's pre-quantizer site values.
struct QatTraining {
    const BitConfig* bits = nullptr;
    std::map<std::string, RangeTracker>* act_trackers = nullptr;
};

TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg, QatTraining* qat = nullptr);

EvalResult evaluate(const Model& model, const Dataset& data, const QatForward* qat = nullptr);

// Epoch learning rate under the configured schedule.
double scheduled_lr(const TrainConfig& cfg, int64_t epoch);

std::map<std::string, Range> tracker_ranges(const std::map<std::string, RangeTracker>& trackers);

}  // namespace fitq
